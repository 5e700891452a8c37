#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psydef/common.hpp"

namespace psydef {

struct GenerationParams {
    int max_tokens = 256;
    double temperature = 0.7;
    std::optional<std::uint64_t> seed;
};

struct EmotionResult {
    std::string label;
    double confidence = 0.0;  // in [0,1]
    bool is_neutral = true;
};

/// Retry policy for transient transport faults. The sleeper hook exists so
/// tests can count backoffs instead of waiting through them.
struct RetryPolicy {
    int attempts = 3;
    int initial_backoff_ms = 1000;
    double backoff_multiplier = 2.0;
    std::function<void(int /*ms*/)> sleeper;  // default: actually sleep

    void sleep_for(int ms) const;
};

/// Runs `call` up to policy.attempts times, backing off between attempts.
/// Rethrows the last failure as BackendError carrying the attempt count.
/// `attempt_counter`, when given, accumulates total attempts made.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, std::atomic<std::int64_t>* attempt_counter,
                  const std::string& what, Fn&& call) -> decltype(call()) {
    int backoff = policy.initial_backoff_ms;
    std::string last_error = "unknown failure";
    for (int attempt = 1; attempt <= policy.attempts; ++attempt) {
        if (attempt_counter) attempt_counter->fetch_add(1);
        try {
            return call();
        } catch (const std::exception& e) {
            last_error = e.what();
        }
        if (attempt < policy.attempts) {
            policy.sleep_for(backoff);
            backoff = static_cast<int>(static_cast<double>(backoff) * policy.backoff_multiplier);
        }
    }
    throw BackendError(what + " failed after " + std::to_string(policy.attempts) +
                           " attempts: " + last_error,
                       policy.attempts);
}

// ---------------------------------------------------------------------
// Gateway interfaces. Four narrow contracts rather than one model
// interface, so QC, feature extraction, and the classifier can mix stub
// and live backends independently. All are safe for concurrent calls.
// ---------------------------------------------------------------------

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;
    /// Generated text for a non-empty prompt.
    virtual std::string complete(const std::string& prompt, const GenerationParams& params) = 0;
};

class NliBackend {
public:
    virtual ~NliBackend() = default;
    /// Entailment probability P(premise => hypothesis), in [0,1].
    virtual double entail(const std::string& premise, const std::string& hypothesis) = 0;
    /// One probability per hypothesis, order-aligned with the input.
    virtual std::vector<double> entail_many(const std::string& premise,
                                            std::span<const std::string> hypotheses);
};

class EmotionBackend {
public:
    virtual ~EmotionBackend() = default;
    virtual EmotionResult score(const std::string& text) = 0;
};

inline constexpr std::size_t kEmbeddingDim = 768;

/// Trainable view of a text encoder: flat parameter/gradient storage plus
/// forward/backward so the fusion trainer can fine-tune it end-to-end
/// under its own learning rate.
class TrainableEncoder {
public:
    virtual ~TrainableEncoder() = default;
    virtual std::size_t param_count() const = 0;
    virtual std::span<double> params() = 0;
    virtual std::span<double> grads() = 0;
    virtual void zero_grads() = 0;
    virtual std::vector<double> forward(const std::string& text) = 0;
    virtual void backward(const std::string& text, std::span<const double> grad_embedding) = 0;
};

class TextEncoderBackend {
public:
    virtual ~TextEncoderBackend() = default;
    /// Fixed 768-dim embedding for a non-empty text.
    virtual std::vector<double> encode(const std::string& text) = 0;
    /// Non-null when the backend supports gradient updates.
    virtual TrainableEncoder* trainable() { return nullptr; }
};

/// The four gateways a pipeline run needs, bundled for plumbing.
struct BackendSet {
    std::shared_ptr<GenerationBackend> generation;
    std::shared_ptr<NliBackend> nli;
    std::shared_ptr<EmotionBackend> emotion;
    std::shared_ptr<TextEncoderBackend> encoder;
};

}  // namespace psydef
