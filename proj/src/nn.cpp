#include "psydef/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace psydef::nn {

Linear::Linear(std::size_t in_dim, std::size_t out_dim, SplitMix64& rng)
    : in_dim_(in_dim),
      out_dim_(out_dim),
      weight_(in_dim * out_dim),
      bias_(out_dim, 0.0),
      grad_weight_(in_dim * out_dim, 0.0),
      grad_bias_(out_dim, 0.0) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_dim));
    for (double& w : weight_) w = std_dev * rng.next_gaussian();
}

Matrix Linear::forward(const Matrix& x, Mode, bool cache) {
    Matrix y(x.rows, out_dim_);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* xin = x.data.data() + r * in_dim_;
        double* yout = y.data.data() + r * out_dim_;
        for (std::size_t o = 0; o < out_dim_; ++o) {
            const double* w = weight_.data() + o * in_dim_;
            double acc = bias_[o];
            for (std::size_t i = 0; i < in_dim_; ++i) acc += w[i] * xin[i];
            yout[o] = acc;
        }
    }
    if (cache) cached_input_ = x;
    return y;
}

Matrix Linear::backward(const Matrix& grad_out) {
    const Matrix& x = cached_input_;
    Matrix grad_in(x.rows, in_dim_);
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* gy = grad_out.data.data() + r * out_dim_;
        const double* xin = x.data.data() + r * in_dim_;
        double* gx = grad_in.data.data() + r * in_dim_;
        for (std::size_t o = 0; o < out_dim_; ++o) {
            const double g = gy[o];
            if (g == 0.0) continue;
            const double* w = weight_.data() + o * in_dim_;
            double* gw = grad_weight_.data() + o * in_dim_;
            for (std::size_t i = 0; i < in_dim_; ++i) {
                gx[i] += g * w[i];
                gw[i] += g * xin[i];
            }
            grad_bias_[o] += g;
        }
    }
    return grad_in;
}

void Linear::append_params(std::vector<ParamView>& out) {
    out.push_back({weight_.data(), grad_weight_.data(), weight_.size()});
    out.push_back({bias_.data(), grad_bias_.data(), bias_.size()});
}

void Linear::zero_grads() {
    std::fill(grad_weight_.begin(), grad_weight_.end(), 0.0);
    std::fill(grad_bias_.begin(), grad_bias_.end(), 0.0);
}

BatchNorm::BatchNorm(std::size_t dim, double momentum, double eps)
    : dim_(dim),
      momentum_(momentum),
      eps_(eps),
      gamma_(dim, 1.0),
      beta_(dim, 0.0),
      grad_gamma_(dim, 0.0),
      grad_beta_(dim, 0.0),
      running_(2 * dim, 0.0) {
    for (std::size_t i = dim_; i < 2 * dim_; ++i) running_[i] = 1.0;  // var starts at 1
}

Matrix BatchNorm::forward(const Matrix& x, Mode mode, bool cache) {
    const std::size_t n = x.rows;
    Matrix y(n, dim_);
    Matrix xhat(n, dim_);
    std::vector<double> invstd(dim_);

    if (mode == Mode::Train) {
        for (std::size_t c = 0; c < dim_; ++c) {
            double mean = 0.0;
            for (std::size_t r = 0; r < n; ++r) mean += x.at(r, c);
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const double d = x.at(r, c) - mean;
                var += d * d;
            }
            var /= static_cast<double>(n);
            invstd[c] = 1.0 / std::sqrt(var + eps_);
            for (std::size_t r = 0; r < n; ++r) {
                xhat.at(r, c) = (x.at(r, c) - mean) * invstd[c];
            }
            // running estimates use the unbiased variance when possible
            const double unbiased =
                n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1) : var;
            running_[c] = (1.0 - momentum_) * running_[c] + momentum_ * mean;
            running_[dim_ + c] = (1.0 - momentum_) * running_[dim_ + c] + momentum_ * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < dim_; ++c) {
            invstd[c] = 1.0 / std::sqrt(running_[dim_ + c] + eps_);
            for (std::size_t r = 0; r < n; ++r) {
                xhat.at(r, c) = (x.at(r, c) - running_[c]) * invstd[c];
            }
        }
    }
    for (std::size_t c = 0; c < dim_; ++c) {
        for (std::size_t r = 0; r < n; ++r) {
            y.at(r, c) = gamma_[c] * xhat.at(r, c) + beta_[c];
        }
    }
    if (cache) {
        cached_xhat_ = std::move(xhat);
        cached_invstd_ = std::move(invstd);
        cached_mode_ = mode;
    }
    return y;
}

Matrix BatchNorm::backward(const Matrix& grad_out) {
    const std::size_t n = grad_out.rows;
    Matrix grad_in(n, dim_);
    for (std::size_t c = 0; c < dim_; ++c) {
        double sum_gy = 0.0;
        double sum_gy_xhat = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double gy = grad_out.at(r, c);
            sum_gy += gy;
            sum_gy_xhat += gy * cached_xhat_.at(r, c);
        }
        grad_gamma_[c] += sum_gy_xhat;
        grad_beta_[c] += sum_gy;

        if (cached_mode_ == Mode::Train) {
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r) {
                const double gxhat = grad_out.at(r, c) * gamma_[c];
                grad_in.at(r, c) =
                    cached_invstd_[c] *
                    (gxhat - inv_n * sum_gy * gamma_[c] -
                     inv_n * cached_xhat_.at(r, c) * sum_gy_xhat * gamma_[c]);
            }
        } else {
            // frozen statistics are constants
            for (std::size_t r = 0; r < n; ++r) {
                grad_in.at(r, c) = grad_out.at(r, c) * gamma_[c] * cached_invstd_[c];
            }
        }
    }
    return grad_in;
}

void BatchNorm::append_params(std::vector<ParamView>& out) {
    out.push_back({gamma_.data(), grad_gamma_.data(), gamma_.size()});
    out.push_back({beta_.data(), grad_beta_.data(), beta_.size()});
}

void BatchNorm::zero_grads() {
    std::fill(grad_gamma_.begin(), grad_gamma_.end(), 0.0);
    std::fill(grad_beta_.begin(), grad_beta_.end(), 0.0);
}

std::span<double> BatchNorm::running_state() { return running_; }

Matrix ReLU::forward(const Matrix& x, Mode, bool cache) {
    Matrix y(x.rows, x.cols);
    Matrix mask(x.rows, x.cols);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const bool on = x.data[i] > 0.0;
        y.data[i] = on ? x.data[i] : 0.0;
        mask.data[i] = on ? 1.0 : 0.0;
    }
    if (cache) cached_mask_ = std::move(mask);
    return y;
}

Matrix ReLU::backward(const Matrix& grad_out) {
    Matrix grad_in(grad_out.rows, grad_out.cols);
    for (std::size_t i = 0; i < grad_out.data.size(); ++i) {
        grad_in.data[i] = grad_out.data[i] * cached_mask_.data[i];
    }
    return grad_in;
}

Matrix Dropout::forward(const Matrix& x, Mode mode, bool cache) {
    if (mode != Mode::Train || p_ <= 0.0) {
        if (cache) {
            cached_mask_ = Matrix(x.rows, x.cols);
            std::fill(cached_mask_.data.begin(), cached_mask_.data.end(), 1.0);
        }
        return x;
    }
    const double keep = 1.0 - p_;
    Matrix y(x.rows, x.cols);
    Matrix mask(x.rows, x.cols);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double m = rng_->next_unit() < keep ? 1.0 / keep : 0.0;
        mask.data[i] = m;
        y.data[i] = x.data[i] * m;
    }
    if (cache) cached_mask_ = std::move(mask);
    return y;
}

Matrix Dropout::backward(const Matrix& grad_out) {
    Matrix grad_in(grad_out.rows, grad_out.cols);
    for (std::size_t i = 0; i < grad_out.data.size(); ++i) {
        grad_in.data[i] = grad_out.data[i] * cached_mask_.data[i];
    }
    return grad_in;
}

Matrix Sequential::forward(const Matrix& x, Mode mode, bool cache) {
    Matrix current = x;
    for (auto& layer : layers_) current = layer->forward(current, mode, cache);
    return current;
}

Matrix Sequential::backward(const Matrix& grad_out) {
    Matrix current = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        current = (*it)->backward(current);
    }
    return current;
}

void Sequential::append_params(std::vector<ParamView>& out) {
    for (auto& layer : layers_) layer->append_params(out);
}

void Sequential::zero_grads() {
    for (auto& layer : layers_) layer->zero_grads();
}

AdamW::AdamW(std::vector<Group> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Group& g : groups_) {
        std::size_t total = total_param_count(g.params);
        m_.emplace_back(total, 0.0);
        v_.emplace_back(total, 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
        Group& group = groups_[gi];
        std::size_t offset = 0;
        for (const ParamView& view : group.params) {
            for (std::size_t i = 0; i < view.size; ++i) {
                const double g = view.grad[i];
                double& m = m_[gi][offset + i];
                double& v = v_[gi][offset + i];
                m = beta1_ * m + (1.0 - beta1_) * g;
                v = beta2_ * v + (1.0 - beta2_) * g * g;
                const double m_hat = m / bias1;
                const double v_hat = v / bias2;
                // decoupled decay: applied directly to the weights
                view.value[i] -= group.lr * (m_hat / (std::sqrt(v_hat) + eps_) +
                                             group.weight_decay * view.value[i]);
            }
            offset += view.size;
        }
    }
}

Matrix softmax(const Matrix& logits) {
    Matrix probs(logits.rows, logits.cols);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        double maxv = logits.at(r, 0);
        for (std::size_t c = 1; c < logits.cols; ++c) maxv = std::max(maxv, logits.at(r, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) {
            const double e = std::exp(logits.at(r, c) - maxv);
            probs.at(r, c) = e;
            sum += e;
        }
        for (std::size_t c = 0; c < logits.cols; ++c) probs.at(r, c) /= sum;
    }
    return probs;
}

double smoothed_cross_entropy(const Matrix& logits, std::span<const int> labels,
                              double epsilon, int num_labels, Matrix* grad_logits) {
    if (labels.size() != logits.rows)
        throw ValidationError("label count does not match batch size");
    const double k = static_cast<double>(num_labels);
    const double off_target = epsilon / k;
    const double on_target = 1.0 - epsilon + off_target;
    const Matrix probs = softmax(logits);
    const double inv_n = 1.0 / static_cast<double>(logits.rows);

    if (grad_logits) *grad_logits = Matrix(logits.rows, logits.cols);
    double loss = 0.0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const auto y = static_cast<std::size_t>(labels[r]);
        for (std::size_t c = 0; c < logits.cols; ++c) {
            const double q = (c == y) ? on_target : off_target;
            loss -= q * std::log(std::max(probs.at(r, c), 1e-300));
            if (grad_logits) grad_logits->at(r, c) = (probs.at(r, c) - q) * inv_n;
        }
    }
    return loss * inv_n;
}

double smoothed_target_entropy(double epsilon, int num_labels) {
    const double k = static_cast<double>(num_labels);
    const double off_target = epsilon / k;
    const double on_target = 1.0 - epsilon + off_target;
    double h = -on_target * std::log(on_target);
    h -= (k - 1.0) * off_target * std::log(off_target);
    return h;
}

std::size_t total_param_count(const std::vector<ParamView>& views) {
    std::size_t total = 0;
    for (const ParamView& v : views) total += v.size;
    return total;
}

std::vector<double> snapshot_params(const std::vector<ParamView>& views) {
    std::vector<double> out;
    out.reserve(total_param_count(views));
    for (const ParamView& v : views) out.insert(out.end(), v.value, v.value + v.size);
    return out;
}

void restore_params(const std::vector<ParamView>& views, std::span<const double> snapshot) {
    if (snapshot.size() != total_param_count(views))
        throw ValidationError("parameter snapshot size mismatch");
    std::size_t offset = 0;
    for (const ParamView& v : views) {
        std::copy(snapshot.begin() + static_cast<std::ptrdiff_t>(offset),
                  snapshot.begin() + static_cast<std::ptrdiff_t>(offset + v.size), v.value);
        offset += v.size;
    }
}

}  // namespace psydef::nn
