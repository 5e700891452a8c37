#pragma once

#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include "psydef/backends.hpp"

namespace psydef {

/// Shared content-word filter used by the stub NLI scorer and the stub
/// generator's vocabulary extraction.
bool is_stopword(const std::string& token);

/// Deterministic generator double. Replies are a pure function of
/// (prompt, seed). The stub understands the two prompt shapes the
/// pipeline issues: stressor-identification prompts get a well-formed
/// two-line reply, generation prompts get a synthetic seeker utterance
/// stitched from the prompt's own few-shot exemplar vocabulary (so the
/// text carries the target mechanism's wording, the way a cooperative
/// instruction-following model would echo its references). Anything else
/// gets a generic deterministic sentence.
class StubGenerationBackend : public GenerationBackend {
public:
    std::string complete(const std::string& prompt, const GenerationParams& params) override;
};

/// Calibrated lexical-overlap entailment score: coverage of the
/// hypothesis' content tokens by the premise, mapped into (0.02, 0.98).
/// Self-entailment lands at 0.98, disjoint vocabulary at 0.02.
class StubNliBackend : public NliBackend {
public:
    double entail(const std::string& premise, const std::string& hypothesis) override;

private:
    const std::unordered_set<std::string>& content_tokens(const std::string& text);

    std::mutex mutex_;
    std::unordered_map<std::string, std::unordered_set<std::string>> cache_;
};

/// Small-lexicon emotion scorer. Texts without any emotion-lexicon hit are
/// neutral; otherwise the dominant category wins with confidence scaled by
/// hit count.
class StubEmotionBackend : public EmotionBackend {
public:
    EmotionResult score(const std::string& text) override;
};

/// Hashed bag-of-tokens encoder with a trainable linear projection to 768
/// dims. The projection is the encoder's fine-tunable parameter block, so
/// desk-scale end-to-end training exercises the same two-group optimizer
/// path as a production encoder.
class StubTextEncoder : public TextEncoderBackend, public TrainableEncoder {
public:
    static constexpr std::size_t kFeatureDim = 256;

    explicit StubTextEncoder(std::uint64_t seed = 0x5eed);

    std::vector<double> encode(const std::string& text) override;
    TrainableEncoder* trainable() override { return this; }

    std::size_t param_count() const override { return params_.size(); }
    std::span<double> params() override { return params_; }
    std::span<double> grads() override { return grads_; }
    void zero_grads() override;
    std::vector<double> forward(const std::string& text) override { return encode(text); }
    void backward(const std::string& text, std::span<const double> grad_embedding) override;

private:
    using SparseVec = std::vector<std::pair<std::size_t, double>>;
    const SparseVec& features(const std::string& text);

    // Row-major projection weights [768 x kFeatureDim] followed by bias [768].
    std::vector<double> params_;
    std::vector<double> grads_;
    std::mutex mutex_;
    std::unordered_map<std::string, SparseVec> feature_cache_;
};

BackendSet make_stub_backends(std::uint64_t encoder_seed = 0x5eed);

}  // namespace psydef
