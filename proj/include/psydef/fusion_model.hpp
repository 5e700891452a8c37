#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "psydef/backends.hpp"
#include "psydef/features.hpp"
#include "psydef/nn.hpp"

namespace psydef {

struct FusionConfig {
    int text_dim = 768;
    int heur_dim = 7;
    int dmrs_dim = 30;
    int branch_hidden = 64;
    int branch_out = 32;
    double branch_dropout = 0.3;
    int fused_dim = 832;
    std::vector<int> head_dims = {256, 128};
    double head_dropout = 0.4;
    int num_labels = 9;
    double encoder_lr = 1e-6;
    double head_lr = 1e-4;
    double weight_decay = 1e-2;
    int batch_size = 16;
    int max_epochs = 20;
    double label_smoothing = 0.1;
    int patience = 5;
    std::uint64_t seed = 42;

    void validate() const;  // fused_dim arithmetic, 9-way head
};

struct TrainingHistory {
    struct Epoch {
        int epoch = 0;  // 1-based
        double train_loss = 0.0;
        double dev_accuracy = 0.0;
        double dev_macro_f1 = 0.0;
    };
    std::vector<Epoch> epochs;
    int best_epoch = 0;  // 1-based; maximizes dev macro-F1
};

/// Late-fusion classifier: a 768-dim text embedding plus two MLP-encoded
/// feature branches (7->64->norm->ReLU->dropout->32 and the same from 30),
/// concatenated to 832 dims and classified by a 256->128 head with a
/// 9-way linear output.
class FusionModel {
public:
    FusionModel(FusionConfig config, std::uint64_t seed);

    const FusionConfig& config() const { return config_; }

    /// Probability distributions, one row per input row. inference=true
    /// disables dropout and freezes normalization statistics.
    nn::Matrix forward(const nn::Matrix& emb, const nn::Matrix& heur, const nn::Matrix& dmrs,
                       bool inference);

    /// Training-path logits with caches retained for backward().
    nn::Matrix forward_logits(const nn::Matrix& emb, const nn::Matrix& heur,
                              const nn::Matrix& dmrs, nn::Mode mode, bool cache);

    /// Backpropagate from d(loss)/d(logits); returns d(loss)/d(embedding)
    /// for encoder fine-tuning.
    nn::Matrix backward(const nn::Matrix& grad_logits);

    std::vector<nn::ParamView> params();
    std::size_t parameter_count();
    void zero_grads();

    /// Trainable parameters plus batch-norm running statistics; the full
    /// state a checkpoint needs.
    std::vector<double> state_vector();
    void load_state_vector(std::span<const double> state);

private:
    FusionConfig config_;
    std::unique_ptr<SplitMix64> dropout_rng_;
    nn::Sequential branch_heur_;
    nn::Sequential branch_dmrs_;
    nn::Sequential head_;
    std::vector<nn::BatchNorm*> norms_;
    std::size_t cached_batch_ = 0;
};

FusionModel init_model(const FusionConfig& config, std::uint64_t seed);

struct Prediction {
    int label = 0;
    std::array<double, 9> distribution{};
};

/// Argmax predictions (ties break toward the lowest label id) with full
/// distributions. Deterministic: inference mode throughout.
std::vector<Prediction> predict(FusionModel& model, std::span<const FeatureRow> rows,
                                TextEncoderBackend& encoder);

struct TrainResult {
    FusionModel model;
    TrainingHistory history;
};

/// AdamW with two parameter groups (encoder vs branches+head), smoothed
/// cross entropy, early stopping on dev macro-F1, best-epoch weights
/// restored (encoder weights included when the backend is trainable).
TrainResult train(const std::vector<FeatureRow>& train_rows,
                  const std::vector<FeatureRow>& dev_rows, const FusionConfig& config,
                  TextEncoderBackend& encoder);

struct CheckpointMeta {
    FusionConfig config;
    std::string catalog_fingerprint;  // hex
    std::string encoder_kind;         // "trainable" | "frozen"
    std::size_t encoder_param_count = 0;
};

struct LoadedCheckpoint {
    FusionModel model;
    CheckpointMeta meta;
    std::vector<std::string> warnings;
};

void save_checkpoint(FusionModel& model, TextEncoderBackend& encoder,
                     const std::string& directory, const std::string& catalog_fingerprint,
                     const TrainingHistory* history = nullptr);

/// Loads model state; restores encoder parameters into `encoder` when
/// shapes line up. Mismatched catalog fingerprints produce a warning, not
/// an error. Truncated or foreign files fail with IoError.
LoadedCheckpoint load_checkpoint(const std::string& directory, TextEncoderBackend& encoder,
                                 const std::string& expected_catalog_fingerprint = "");

}  // namespace psydef
