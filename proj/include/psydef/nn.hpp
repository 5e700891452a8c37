#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "psydef/common.hpp"

namespace psydef::nn {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

/// A trainable parameter block paired with its gradient accumulator.
struct ParamView {
    double* value = nullptr;
    double* grad = nullptr;
    std::size_t size = 0;
};

enum class Mode { Train, Eval };

class Layer {
public:
    virtual ~Layer() = default;
    /// With cache=false no member state is written, so eval-mode forward
    /// is safe to call concurrently on a shared model.
    virtual Matrix forward(const Matrix& x, Mode mode, bool cache) = 0;
    virtual Matrix backward(const Matrix& grad_out) = 0;
    virtual void append_params(std::vector<ParamView>& out) {}
    virtual void zero_grads() {}
};

class Linear : public Layer {
public:
    Linear(std::size_t in_dim, std::size_t out_dim, SplitMix64& rng);

    Matrix forward(const Matrix& x, Mode mode, bool cache) override;
    Matrix backward(const Matrix& grad_out) override;
    void append_params(std::vector<ParamView>& out) override;
    void zero_grads() override;

    std::size_t in_dim() const { return in_dim_; }
    std::size_t out_dim() const { return out_dim_; }

private:
    std::size_t in_dim_;
    std::size_t out_dim_;
    std::vector<double> weight_;  // [out x in]
    std::vector<double> bias_;
    std::vector<double> grad_weight_;
    std::vector<double> grad_bias_;
    Matrix cached_input_;
};

/// Batch normalization over the feature axis with running statistics
/// (momentum 0.1). Eval mode normalizes with the running estimates; its
/// backward treats them as constants, which is what a frozen-norm
/// gradient check needs.
class BatchNorm : public Layer {
public:
    explicit BatchNorm(std::size_t dim, double momentum = 0.1, double eps = 1e-5);

    Matrix forward(const Matrix& x, Mode mode, bool cache) override;
    Matrix backward(const Matrix& grad_out) override;
    void append_params(std::vector<ParamView>& out) override;
    void zero_grads() override;

    std::span<double> running_state();  // mean then var, for checkpoints

private:
    std::size_t dim_;
    double momentum_;
    double eps_;
    std::vector<double> gamma_, beta_;
    std::vector<double> grad_gamma_, grad_beta_;
    std::vector<double> running_;  // mean [0,dim) then var [dim,2dim)

    Matrix cached_xhat_;
    std::vector<double> cached_invstd_;
    Mode cached_mode_ = Mode::Eval;
};

class ReLU : public Layer {
public:
    Matrix forward(const Matrix& x, Mode mode, bool cache) override;
    Matrix backward(const Matrix& grad_out) override;

private:
    Matrix cached_mask_;
};

/// Inverted dropout; identity in eval mode.
class Dropout : public Layer {
public:
    Dropout(double p, SplitMix64* rng) : p_(p), rng_(rng) {}

    Matrix forward(const Matrix& x, Mode mode, bool cache) override;
    Matrix backward(const Matrix& grad_out) override;

private:
    double p_;
    SplitMix64* rng_;
    Matrix cached_mask_;
};

/// A plain layer pipeline.
class Sequential {
public:
    void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

    Matrix forward(const Matrix& x, Mode mode, bool cache);
    Matrix backward(const Matrix& grad_out);
    void append_params(std::vector<ParamView>& out);
    void zero_grads();

    std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// Decoupled weight decay Adam over one or more parameter groups.
class AdamW {
public:
    struct Group {
        std::vector<ParamView> params;
        double lr = 1e-3;
        double weight_decay = 0.0;
    };

    AdamW(std::vector<Group> groups, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);

    void step();
    const std::vector<Group>& groups() const { return groups_; }

private:
    std::vector<Group> groups_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

/// Numerically stable row-wise softmax.
Matrix softmax(const Matrix& logits);

/// Label-smoothed cross entropy, mean over the batch. Returns the loss
/// and writes d(loss)/d(logits) into grad_logits.
double smoothed_cross_entropy(const Matrix& logits, std::span<const int> labels,
                              double epsilon, int num_labels, Matrix* grad_logits);

/// The loss value at p == q: the entropy of the smoothed target. No
/// model can do better under label smoothing.
double smoothed_target_entropy(double epsilon, int num_labels);

std::size_t total_param_count(const std::vector<ParamView>& views);
std::vector<double> snapshot_params(const std::vector<ParamView>& views);
void restore_params(const std::vector<ParamView>& views, std::span<const double> snapshot);

}  // namespace psydef::nn
