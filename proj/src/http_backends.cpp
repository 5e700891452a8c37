#include "psydef/http_backends.hpp"

#include <cstdlib>
#include <mutex>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace psydef {

using nlohmann::json;

namespace {

std::atomic<std::int64_t> g_attempts{0};

/// Bounded in-flight requests per gateway.
class InFlightLimiter {
public:
    explicit InFlightLimiter(int max) : max_(max > 0 ? max : 1) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return active_ < max_; });
        ++active_;
    }
    void release() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            --active_;
        }
        cv_.notify_one();
    }

private:
    int max_;
    int active_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_;
};

struct InFlightGuard {
    InFlightLimiter& limiter;
    explicit InFlightGuard(InFlightLimiter& l) : limiter(l) { limiter.acquire(); }
    ~InFlightGuard() { limiter.release(); }
};

class HttpGateway {
public:
    HttpGateway(HttpEndpoint endpoint, HttpBackendOptions options)
        : endpoint_(std::move(endpoint)),
          options_(std::move(options)),
          limiter_(options_.max_in_flight) {}

    json post_json(const std::string& path, const json& body, const std::string& what) {
        return with_retries(options_.retry, &g_attempts, what, [&] {
            InFlightGuard guard(limiter_);
            httplib::Client client(endpoint_.endpoint);
            client.set_connection_timeout(endpoint_.timeout_s, 0);
            client.set_read_timeout(endpoint_.timeout_s, 0);
            httplib::Headers headers;
            if (const char* key = std::getenv("PSYDEF_API_KEY")) {
                headers.emplace("Authorization", std::string("Bearer ") + key);
            }
            auto res = client.Post(path, headers, body.dump(), "application/json");
            if (!res) {
                throw std::runtime_error("transport error: " + httplib::to_string(res.error()));
            }
            if (res->status < 200 || res->status >= 300) {
                throw std::runtime_error("http status " + std::to_string(res->status));
            }
            return json::parse(res->body);
        });
    }

    const HttpEndpoint& endpoint() const { return endpoint_; }

private:
    HttpEndpoint endpoint_;
    HttpBackendOptions options_;
    InFlightLimiter limiter_;
};

class HttpGenerationBackend : public GenerationBackend {
public:
    HttpGenerationBackend(HttpEndpoint e, HttpBackendOptions o)
        : gateway_(std::move(e), std::move(o)) {}

    std::string complete(const std::string& prompt, const GenerationParams& params) override {
        if (trim(prompt).empty()) throw ValidationError("prompt must be non-empty");
        json body = {{"model", gateway_.endpoint().model},
                     {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                     {"max_tokens", params.max_tokens},
                     {"temperature", params.temperature}};
        if (params.seed) body["seed"] = *params.seed;
        json reply = gateway_.post_json("/v1/chat/completions", body, "generation request");
        try {
            std::string text = reply.at("choices").at(0).at("message").at("content");
            if (trim(text).empty()) throw std::runtime_error("empty completion");
            return text;
        } catch (const json::exception& e) {
            throw BackendError(std::string("malformed completion response: ") + e.what());
        }
    }

private:
    HttpGateway gateway_;
};

class HttpNliBackend : public NliBackend {
public:
    HttpNliBackend(HttpEndpoint e, HttpBackendOptions o)
        : gateway_(std::move(e), std::move(o)) {}

    double entail(const std::string& premise, const std::string& hypothesis) override {
        json body = {{"model", gateway_.endpoint().model},
                     {"premise", premise},
                     {"hypothesis", hypothesis}};
        json reply = gateway_.post_json("/v1/nli", body, "nli request");
        double v = reply.at("entailment").get<double>();
        if (v < 0.0 || v > 1.0) throw BackendError("nli service returned value outside [0,1]");
        return v;
    }

private:
    HttpGateway gateway_;
};

class HttpEmotionBackend : public EmotionBackend {
public:
    HttpEmotionBackend(HttpEndpoint e, HttpBackendOptions o)
        : gateway_(std::move(e), std::move(o)) {}

    EmotionResult score(const std::string& text) override {
        json body = {{"model", gateway_.endpoint().model}, {"text", text}};
        json reply = gateway_.post_json("/v1/emotion", body, "emotion request");
        EmotionResult r;
        r.label = reply.at("label").get<std::string>();
        r.confidence = reply.at("confidence").get<double>();
        r.is_neutral = reply.value("is_neutral", r.label == "neutral");
        if (r.confidence < 0.0 || r.confidence > 1.0)
            throw BackendError("emotion confidence outside [0,1]");
        return r;
    }

private:
    HttpGateway gateway_;
};

class HttpEncoderBackend : public TextEncoderBackend {
public:
    HttpEncoderBackend(HttpEndpoint e, HttpBackendOptions o)
        : gateway_(std::move(e), std::move(o)) {}

    std::vector<double> encode(const std::string& text) override {
        json body = {{"model", gateway_.endpoint().model}, {"text", text}};
        json reply = gateway_.post_json("/v1/encode", body, "encode request");
        std::vector<double> emb = reply.at("embedding").get<std::vector<double>>();
        if (emb.size() != kEmbeddingDim) {
            throw BackendError("encoder returned " + std::to_string(emb.size()) +
                               " dims, expected " + std::to_string(kEmbeddingDim));
        }
        return emb;
    }

private:
    HttpGateway gateway_;
};

}  // namespace

std::shared_ptr<GenerationBackend> make_http_generation_backend(HttpEndpoint endpoint,
                                                                HttpBackendOptions options) {
    return std::make_shared<HttpGenerationBackend>(std::move(endpoint), std::move(options));
}

std::shared_ptr<NliBackend> make_http_nli_backend(HttpEndpoint endpoint,
                                                  HttpBackendOptions options) {
    return std::make_shared<HttpNliBackend>(std::move(endpoint), std::move(options));
}

std::shared_ptr<EmotionBackend> make_http_emotion_backend(HttpEndpoint endpoint,
                                                          HttpBackendOptions options) {
    return std::make_shared<HttpEmotionBackend>(std::move(endpoint), std::move(options));
}

std::shared_ptr<TextEncoderBackend> make_http_encoder_backend(HttpEndpoint endpoint,
                                                              HttpBackendOptions options) {
    return std::make_shared<HttpEncoderBackend>(std::move(endpoint), std::move(options));
}

std::int64_t http_attempt_count() { return g_attempts.load(); }

}  // namespace psydef
