#include "psydef/fusion_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "psydef/evaluation.hpp"

namespace psydef {

using nlohmann::json;

void FusionConfig::validate() const {
    if (num_labels != 9)
        throw ValidationError("this classifier is 9-way; num_labels must be 9");
    if (fused_dim != text_dim + 2 * branch_out)
        throw ValidationError("fused_dim must equal text_dim + 2*branch_out (" +
                              std::to_string(text_dim + 2 * branch_out) + "), got " +
                              std::to_string(fused_dim));
    if (head_dims.size() != 2) throw ValidationError("head_dims must have two entries");
    if (batch_size < 1 || max_epochs < 1 || patience < 1)
        throw ValidationError("batch_size, max_epochs and patience must be >= 1");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
        throw ValidationError("label smoothing must lie in [0,1)");
    if (branch_dropout < 0.0 || branch_dropout >= 1.0 || head_dropout < 0.0 ||
        head_dropout >= 1.0)
        throw ValidationError("dropout rates must lie in [0,1)");
}

namespace {

void build_branch(nn::Sequential& branch, int in_dim, const FusionConfig& cfg,
                  SplitMix64& init_rng, SplitMix64* dropout_rng,
                  std::vector<nn::BatchNorm*>& norms) {
    branch.add(std::make_unique<nn::Linear>(static_cast<std::size_t>(in_dim),
                                            static_cast<std::size_t>(cfg.branch_hidden),
                                            init_rng));
    auto norm = std::make_unique<nn::BatchNorm>(static_cast<std::size_t>(cfg.branch_hidden));
    norms.push_back(norm.get());
    branch.add(std::move(norm));
    branch.add(std::make_unique<nn::ReLU>());
    branch.add(std::make_unique<nn::Dropout>(cfg.branch_dropout, dropout_rng));
    branch.add(std::make_unique<nn::Linear>(static_cast<std::size_t>(cfg.branch_hidden),
                                            static_cast<std::size_t>(cfg.branch_out),
                                            init_rng));
}

}  // namespace

FusionModel::FusionModel(FusionConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    SplitMix64 init_rng(seed);
    dropout_rng_ = std::make_unique<SplitMix64>(seed ^ 0xd00d5eedULL);

    build_branch(branch_heur_, config_.heur_dim, config_, init_rng, dropout_rng_.get(), norms_);
    build_branch(branch_dmrs_, config_.dmrs_dim, config_, init_rng, dropout_rng_.get(), norms_);

    head_.add(std::make_unique<nn::Linear>(static_cast<std::size_t>(config_.fused_dim),
                                           static_cast<std::size_t>(config_.head_dims[0]),
                                           init_rng));
    head_.add(std::make_unique<nn::ReLU>());
    head_.add(std::make_unique<nn::Dropout>(config_.head_dropout, dropout_rng_.get()));
    head_.add(std::make_unique<nn::Linear>(static_cast<std::size_t>(config_.head_dims[0]),
                                           static_cast<std::size_t>(config_.head_dims[1]),
                                           init_rng));
    head_.add(std::make_unique<nn::ReLU>());
    head_.add(std::make_unique<nn::Dropout>(config_.head_dropout, dropout_rng_.get()));
    head_.add(std::make_unique<nn::Linear>(static_cast<std::size_t>(config_.head_dims[1]),
                                           static_cast<std::size_t>(config_.num_labels),
                                           init_rng));
}

nn::Matrix FusionModel::forward_logits(const nn::Matrix& emb, const nn::Matrix& heur,
                                       const nn::Matrix& dmrs, nn::Mode mode, bool cache) {
    if (emb.rows != heur.rows || emb.rows != dmrs.rows)
        throw ValidationError("batch size mismatch across fusion inputs");
    if (emb.cols != static_cast<std::size_t>(config_.text_dim) ||
        heur.cols != static_cast<std::size_t>(config_.heur_dim) ||
        dmrs.cols != static_cast<std::size_t>(config_.dmrs_dim))
        throw ValidationError("fusion input width mismatch");

    nn::Matrix h = branch_heur_.forward(heur, mode, cache);
    nn::Matrix d = branch_dmrs_.forward(dmrs, mode, cache);

    nn::Matrix fused(emb.rows, static_cast<std::size_t>(config_.fused_dim));
    const auto text_dim = static_cast<std::size_t>(config_.text_dim);
    const auto branch_out = static_cast<std::size_t>(config_.branch_out);
    for (std::size_t r = 0; r < emb.rows; ++r) {
        double* out = fused.data.data() + r * fused.cols;
        std::memcpy(out, emb.data.data() + r * emb.cols, text_dim * sizeof(double));
        std::memcpy(out + text_dim, h.data.data() + r * h.cols, branch_out * sizeof(double));
        std::memcpy(out + text_dim + branch_out, d.data.data() + r * d.cols,
                    branch_out * sizeof(double));
    }
    if (cache) cached_batch_ = emb.rows;
    return head_.forward(fused, mode, cache);
}

nn::Matrix FusionModel::forward(const nn::Matrix& emb, const nn::Matrix& heur,
                                const nn::Matrix& dmrs, bool inference) {
    nn::Matrix logits = forward_logits(emb, heur, dmrs,
                                       inference ? nn::Mode::Eval : nn::Mode::Train,
                                       !inference);
    return nn::softmax(logits);
}

nn::Matrix FusionModel::backward(const nn::Matrix& grad_logits) {
    nn::Matrix grad_fused = head_.backward(grad_logits);
    const auto text_dim = static_cast<std::size_t>(config_.text_dim);
    const auto branch_out = static_cast<std::size_t>(config_.branch_out);
    const std::size_t n = grad_fused.rows;

    nn::Matrix grad_emb(n, text_dim);
    nn::Matrix grad_h(n, branch_out);
    nn::Matrix grad_d(n, branch_out);
    for (std::size_t r = 0; r < n; ++r) {
        const double* in = grad_fused.data.data() + r * grad_fused.cols;
        std::memcpy(grad_emb.data.data() + r * text_dim, in, text_dim * sizeof(double));
        std::memcpy(grad_h.data.data() + r * branch_out, in + text_dim,
                    branch_out * sizeof(double));
        std::memcpy(grad_d.data.data() + r * branch_out, in + text_dim + branch_out,
                    branch_out * sizeof(double));
    }
    branch_heur_.backward(grad_h);
    branch_dmrs_.backward(grad_d);
    return grad_emb;
}

std::vector<nn::ParamView> FusionModel::params() {
    std::vector<nn::ParamView> views;
    branch_heur_.append_params(views);
    branch_dmrs_.append_params(views);
    head_.append_params(views);
    return views;
}

std::size_t FusionModel::parameter_count() { return nn::total_param_count(params()); }

void FusionModel::zero_grads() {
    branch_heur_.zero_grads();
    branch_dmrs_.zero_grads();
    head_.zero_grads();
}

std::vector<double> FusionModel::state_vector() {
    std::vector<double> state = nn::snapshot_params(params());
    for (nn::BatchNorm* norm : norms_) {
        auto running = norm->running_state();
        state.insert(state.end(), running.begin(), running.end());
    }
    return state;
}

void FusionModel::load_state_vector(std::span<const double> state) {
    auto views = params();
    const std::size_t trainable = nn::total_param_count(views);
    std::size_t running_total = 0;
    for (nn::BatchNorm* norm : norms_) running_total += norm->running_state().size();
    if (state.size() != trainable + running_total)
        throw ValidationError("model state size mismatch: expected " +
                              std::to_string(trainable + running_total) + ", got " +
                              std::to_string(state.size()));
    nn::restore_params(views, state.subspan(0, trainable));
    std::size_t offset = trainable;
    for (nn::BatchNorm* norm : norms_) {
        auto running = norm->running_state();
        std::copy(state.begin() + static_cast<std::ptrdiff_t>(offset),
                  state.begin() + static_cast<std::ptrdiff_t>(offset + running.size()),
                  running.begin());
        offset += running.size();
    }
}

FusionModel init_model(const FusionConfig& config, std::uint64_t seed) {
    return FusionModel(config, seed);
}

namespace {

nn::Matrix rows_to_matrix_heur(std::span<const FeatureRow> rows) {
    nn::Matrix m(rows.size(), kHeuristicDim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy(rows[r].heuristics.values.begin(), rows[r].heuristics.values.end(),
                  m.data.begin() + static_cast<std::ptrdiff_t>(r * kHeuristicDim));
    }
    return m;
}

nn::Matrix rows_to_matrix_dmrs(std::span<const FeatureRow> rows) {
    nn::Matrix m(rows.size(), kProfileDim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy(rows[r].profile.scores.begin(), rows[r].profile.scores.end(),
                  m.data.begin() + static_cast<std::ptrdiff_t>(r * kProfileDim));
    }
    return m;
}

nn::Matrix embed_rows(std::span<const FeatureRow> rows, TextEncoderBackend& encoder) {
    nn::Matrix m(rows.size(), kEmbeddingDim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::vector<double> emb = encoder.encode(rows[r].input_text);
        if (emb.size() != kEmbeddingDim)
            throw BackendError("encoder returned wrong embedding width");
        std::copy(emb.begin(), emb.end(),
                  m.data.begin() + static_cast<std::ptrdiff_t>(r * kEmbeddingDim));
    }
    return m;
}

}  // namespace

std::vector<Prediction> predict(FusionModel& model, std::span<const FeatureRow> rows,
                                TextEncoderBackend& encoder) {
    std::vector<Prediction> out;
    if (rows.empty()) return out;
    nn::Matrix probs = model.forward(embed_rows(rows, encoder), rows_to_matrix_heur(rows),
                                     rows_to_matrix_dmrs(rows), /*inference=*/true);
    out.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        int best = 0;
        for (int c = 1; c < 9; ++c) {
            if (probs.at(r, static_cast<std::size_t>(c)) >
                probs.at(r, static_cast<std::size_t>(best))) {
                best = c;
            }
        }
        out[r].label = best;
        for (int c = 0; c < 9; ++c) {
            out[r].distribution[static_cast<std::size_t>(c)] =
                probs.at(r, static_cast<std::size_t>(c));
        }
    }
    return out;
}

TrainResult train(const std::vector<FeatureRow>& train_rows,
                  const std::vector<FeatureRow>& dev_rows, const FusionConfig& config,
                  TextEncoderBackend& encoder) {
    config.validate();
    if (train_rows.empty()) throw ValidationError("training set is empty");
    if (dev_rows.empty()) throw ValidationError("dev set is empty");
    for (const FeatureRow& row : train_rows) {
        if (!row.label) throw ValidationError("training rows must be labeled");
    }
    std::vector<int> dev_golds;
    for (const FeatureRow& row : dev_rows) {
        if (!row.label) throw ValidationError("dev rows must be labeled");
        dev_golds.push_back(*row.label);
    }

    TrainResult result{FusionModel(config, config.seed), TrainingHistory{}};
    FusionModel& model = result.model;
    TrainableEncoder* trainable = encoder.trainable();

    std::vector<nn::AdamW::Group> groups;
    {
        nn::AdamW::Group fusion_group;
        fusion_group.params = model.params();
        fusion_group.lr = config.head_lr;
        fusion_group.weight_decay = config.weight_decay;
        groups.push_back(std::move(fusion_group));
        if (trainable) {
            nn::AdamW::Group encoder_group;
            encoder_group.params.push_back({trainable->params().data(),
                                            trainable->grads().data(),
                                            trainable->param_count()});
            encoder_group.lr = config.encoder_lr;
            encoder_group.weight_decay = config.weight_decay;
            groups.push_back(std::move(encoder_group));
        }
    }
    nn::AdamW optimizer(std::move(groups), 0.9, 0.999, 1e-8);

    // frozen-encoder embeddings never change; compute them once
    std::optional<nn::Matrix> frozen_train_emb;
    if (!trainable) frozen_train_emb = embed_rows(train_rows, encoder);

    const nn::Matrix train_heur = rows_to_matrix_heur(train_rows);
    const nn::Matrix train_dmrs = rows_to_matrix_dmrs(train_rows);

    auto snapshot_all = [&] {
        std::vector<double> snap = model.state_vector();
        if (trainable) {
            auto p = trainable->params();
            snap.insert(snap.end(), p.begin(), p.end());
        }
        return snap;
    };
    auto restore_all = [&](const std::vector<double>& snap) {
        std::size_t model_size = model.state_vector().size();
        model.load_state_vector(std::span<const double>(snap).subspan(0, model_size));
        if (trainable) {
            auto p = trainable->params();
            std::copy(snap.begin() + static_cast<std::ptrdiff_t>(model_size), snap.end(),
                      p.begin());
        }
    };

    SplitMix64 shuffle_rng(config.seed ^ 0x51c0ffeeULL);
    std::vector<std::size_t> order(train_rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_f1 = -1.0;
    std::vector<double> best_state;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        deterministic_shuffle(order, shuffle_rng);
        double loss_sum = 0.0;
        std::size_t batch_count = 0;

        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::size_t n = end - start;

            nn::Matrix emb(n, kEmbeddingDim);
            nn::Matrix heur(n, kHeuristicDim);
            nn::Matrix dmrs(n, kProfileDim);
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t idx = order[start + i];
                labels[i] = *train_rows[idx].label;
                std::copy(train_heur.row(idx).begin(), train_heur.row(idx).end(),
                          heur.row(i).begin());
                std::copy(train_dmrs.row(idx).begin(), train_dmrs.row(idx).end(),
                          dmrs.row(i).begin());
                if (trainable) {
                    std::vector<double> e = trainable->forward(train_rows[idx].input_text);
                    std::copy(e.begin(), e.end(), emb.row(i).begin());
                } else {
                    std::copy(frozen_train_emb->row(idx).begin(),
                              frozen_train_emb->row(idx).end(), emb.row(i).begin());
                }
            }

            model.zero_grads();
            if (trainable) trainable->zero_grads();

            nn::Matrix logits = model.forward_logits(emb, heur, dmrs, nn::Mode::Train, true);
            nn::Matrix grad_logits;
            const double loss = nn::smoothed_cross_entropy(
                logits, labels, config.label_smoothing, config.num_labels, &grad_logits);
            if (!std::isfinite(loss))
                throw ValidationError("non-finite training loss at epoch " +
                                      std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_count));
            loss_sum += loss;
            ++batch_count;

            nn::Matrix grad_emb = model.backward(grad_logits);
            if (trainable) {
                for (std::size_t i = 0; i < n; ++i) {
                    trainable->backward(train_rows[order[start + i]].input_text,
                                        grad_emb.row(i));
                }
            }
            optimizer.step();
        }

        std::vector<Prediction> dev_preds = predict(model, dev_rows, encoder);
        std::vector<int> pred_labels;
        pred_labels.reserve(dev_preds.size());
        for (const Prediction& p : dev_preds) pred_labels.push_back(p.label);
        MetricsReport dev_metrics = evaluate(pred_labels, dev_golds);

        TrainingHistory::Epoch record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, batch_count));
        record.dev_accuracy = dev_metrics.accuracy;
        record.dev_macro_f1 = dev_metrics.macro_f1;
        result.history.epochs.push_back(record);

        if (dev_metrics.macro_f1 > best_f1) {
            best_f1 = dev_metrics.macro_f1;
            result.history.best_epoch = epoch;
            best_state = snapshot_all();
        } else if (epoch - result.history.best_epoch >= config.patience) {
            spdlog::info("early stop at epoch {} (best dev macro-F1 {:.4f} at epoch {})",
                         epoch, best_f1, result.history.best_epoch);
            break;
        }
    }

    if (!best_state.empty()) restore_all(best_state);
    return result;
}

// ---------------------------------------------------------------------
// Checkpointing: params.bin (magic + sized double blocks) + meta.json.
// ---------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'S', 'Y', 'D', 'E', 'F', 'W', '1'};

json config_to_json(const FusionConfig& c) {
    return json{{"text_dim", c.text_dim},
                {"heur_dim", c.heur_dim},
                {"dmrs_dim", c.dmrs_dim},
                {"branch_hidden", c.branch_hidden},
                {"branch_out", c.branch_out},
                {"branch_dropout", c.branch_dropout},
                {"fused_dim", c.fused_dim},
                {"head_dims", c.head_dims},
                {"head_dropout", c.head_dropout},
                {"num_labels", c.num_labels},
                {"encoder_lr", c.encoder_lr},
                {"head_lr", c.head_lr},
                {"weight_decay", c.weight_decay},
                {"batch_size", c.batch_size},
                {"max_epochs", c.max_epochs},
                {"label_smoothing", c.label_smoothing},
                {"patience", c.patience},
                {"seed", c.seed}};
}

FusionConfig config_from_json(const json& j) {
    FusionConfig c;
    c.text_dim = j.at("text_dim");
    c.heur_dim = j.at("heur_dim");
    c.dmrs_dim = j.at("dmrs_dim");
    c.branch_hidden = j.at("branch_hidden");
    c.branch_out = j.at("branch_out");
    c.branch_dropout = j.at("branch_dropout");
    c.fused_dim = j.at("fused_dim");
    c.head_dims = j.at("head_dims").get<std::vector<int>>();
    c.head_dropout = j.at("head_dropout");
    c.num_labels = j.at("num_labels");
    c.encoder_lr = j.at("encoder_lr");
    c.head_lr = j.at("head_lr");
    c.weight_decay = j.at("weight_decay");
    c.batch_size = j.at("batch_size");
    c.max_epochs = j.at("max_epochs");
    c.label_smoothing = j.at("label_smoothing");
    c.patience = j.at("patience");
    c.seed = j.at("seed");
    return c;
}

void write_block(std::ofstream& out, std::span<const double> block) {
    const std::uint64_t count = block.size();
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    out.write(reinterpret_cast<const char*>(block.data()),
              static_cast<std::streamsize>(block.size() * sizeof(double)));
}

std::vector<double> read_block(std::ifstream& in, const std::string& path) {
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!in) throw IoError("corrupt checkpoint (truncated block header): " + path);
    if (count > (1ULL << 32)) throw IoError("corrupt checkpoint (absurd block size): " + path);
    std::vector<double> block(count);
    in.read(reinterpret_cast<char*>(block.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw IoError("corrupt checkpoint (truncated block): " + path);
    return block;
}

}  // namespace

void save_checkpoint(FusionModel& model, TextEncoderBackend& encoder,
                     const std::string& directory, const std::string& catalog_fingerprint,
                     const TrainingHistory* history) {
    std::filesystem::create_directories(directory);
    const std::string params_path = directory + "/params.bin";
    const std::string meta_path = directory + "/meta.json";

    TrainableEncoder* trainable = encoder.trainable();

    std::ofstream out(params_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + params_path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    std::vector<double> model_state = model.state_vector();
    write_block(out, model_state);
    if (trainable) {
        write_block(out, trainable->params());
    } else {
        write_block(out, {});
    }
    if (!out) throw IoError("short write: " + params_path);
    out.close();

    json meta;
    meta["format_version"] = 1;
    meta["config"] = config_to_json(model.config());
    meta["catalog_fingerprint"] = catalog_fingerprint;
    meta["encoder_kind"] = trainable ? "trainable" : "frozen";
    meta["encoder_param_count"] = trainable ? trainable->param_count() : 0;
    if (history) {
        json epochs = json::array();
        for (const auto& e : history->epochs) {
            epochs.push_back({{"epoch", e.epoch},
                              {"train_loss", e.train_loss},
                              {"dev_accuracy", e.dev_accuracy},
                              {"dev_macro_f1", e.dev_macro_f1}});
        }
        meta["history"] = {{"epochs", epochs}, {"best_epoch", history->best_epoch}};
    }
    write_text_file(meta_path, meta.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::string& directory, TextEncoderBackend& encoder,
                                 const std::string& expected_catalog_fingerprint) {
    const std::string params_path = directory + "/params.bin";
    const std::string meta_path = directory + "/meta.json";

    json meta;
    try {
        meta = json::parse(read_text_file(meta_path));
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint meta: " + std::string(e.what()));
    }
    if (meta.value("format_version", 0) != 1)
        throw IoError("unsupported checkpoint format version in " + meta_path);

    FusionConfig config = config_from_json(meta.at("config"));
    LoadedCheckpoint loaded{FusionModel(config, config.seed), {}, {}};
    loaded.meta.config = config;
    loaded.meta.catalog_fingerprint = meta.value("catalog_fingerprint", "");
    loaded.meta.encoder_kind = meta.value("encoder_kind", "frozen");
    loaded.meta.encoder_param_count = meta.value("encoder_param_count", std::size_t{0});

    std::ifstream in(params_path, std::ios::binary);
    if (!in) throw IoError("checkpoint params not found: " + params_path);
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw IoError("corrupt checkpoint (bad magic): " + params_path);

    std::vector<double> model_state = read_block(in, params_path);
    loaded.model.load_state_vector(model_state);

    std::vector<double> encoder_state = read_block(in, params_path);
    TrainableEncoder* trainable = encoder.trainable();
    if (!encoder_state.empty()) {
        if (trainable && trainable->param_count() == encoder_state.size()) {
            auto p = trainable->params();
            std::copy(encoder_state.begin(), encoder_state.end(), p.begin());
        } else {
            loaded.warnings.push_back(
                "checkpoint carries encoder parameters that do not fit the supplied encoder; "
                "encoder left untouched");
        }
    }

    if (!expected_catalog_fingerprint.empty() &&
        loaded.meta.catalog_fingerprint != expected_catalog_fingerprint) {
        loaded.warnings.push_back("catalog fingerprint mismatch: checkpoint was built with \"" +
                                  loaded.meta.catalog_fingerprint + "\", current is \"" +
                                  expected_catalog_fingerprint +
                                  "\"; profiles may be misaligned");
    }
    for (const std::string& w : loaded.warnings) spdlog::warn("{}", w);
    return loaded;
}

}  // namespace psydef
