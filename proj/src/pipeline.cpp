#include "psydef/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "psydef/evaluation.hpp"
#include "psydef/quality.hpp"
#include "psydef/reports.hpp"
#include "psydef/stub_backends.hpp"

namespace psydef {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------

void PipelineConfig::validate() const {
    auto require_file = [](const std::string& path, const std::string& what) {
        if (path.empty()) throw ValidationError(what + " path is not configured");
        if (!fs::exists(path)) throw ValidationError(what + " not found: " + path);
    };
    require_file(corpus_path, "corpus");
    require_file(catalog_path, "DMRS catalog");
    require_file(supplementary_path, "supplementary definitions");
    if (output_root.empty()) throw ValidationError("output_root is not configured");
    if (!prompts_dir.empty() && !fs::exists(prompts_dir))
        throw ValidationError("prompts_dir not found: " + prompts_dir);
    if (kappa_threshold < -1.0 || kappa_threshold > 1.0)
        throw ValidationError("kappa threshold must lie in [-1,1]");
    if (qc_batch_min < 1) throw ValidationError("qc batch_min must be >= 1");
    if (round_size < 1) throw ValidationError("augment round_size must be >= 1");
    if (overgen_budget < 1.0) throw ValidationError("overgen_budget must be >= 1");
    if (backends.kind != "stub" && backends.kind != "http")
        throw ValidationError("backends.kind must be \"stub\" or \"http\"");
    fusion.validate();
}

namespace {

std::string resolve_path(const std::string& base_dir, const std::string& path) {
    if (path.empty() || base_dir.empty()) return path;
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(base_dir) / p).lexically_normal().string();
}

HttpEndpoint endpoint_from_json(const json& j) {
    HttpEndpoint e;
    e.endpoint = j.value("endpoint", std::string{});
    e.model = j.value("model", std::string{});
    e.timeout_s = j.value("timeout_s", 60);
    return e;
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text,
                                     const std::string& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("pipeline config is not valid JSON: ") + e.what());
    }
    PipelineConfig cfg;
    try {
        const json& paths = doc.at("paths");
        cfg.corpus_path = resolve_path(base_dir, paths.at("corpus").get<std::string>());
        cfg.catalog_path = resolve_path(base_dir, paths.at("catalog").get<std::string>());
        cfg.supplementary_path =
            resolve_path(base_dir, paths.at("supplementary").get<std::string>());
        cfg.output_root = resolve_path(base_dir, paths.at("output_root").get<std::string>());
        cfg.prompts_dir =
            resolve_path(base_dir, paths.value("prompts_dir", std::string{}));

        if (doc.contains("backends")) {
            const json& b = doc["backends"];
            cfg.backends.kind = b.value("kind", std::string("stub"));
            cfg.backends.encoder_seed = b.value("encoder_seed", cfg.backends.encoder_seed);
            cfg.backends.max_in_flight = b.value("max_in_flight", 4);
            if (b.contains("retry")) {
                cfg.backends.retry.attempts = b["retry"].value("attempts", 3);
                cfg.backends.retry.initial_backoff_ms =
                    b["retry"].value("initial_backoff_ms", 1000);
            }
            if (b.contains("generation"))
                cfg.backends.generation = endpoint_from_json(b["generation"]);
            if (b.contains("nli")) cfg.backends.nli = endpoint_from_json(b["nli"]);
            if (b.contains("emotion")) cfg.backends.emotion = endpoint_from_json(b["emotion"]);
            if (b.contains("encoder")) cfg.backends.encoder = endpoint_from_json(b["encoder"]);
        }

        if (doc.contains("split")) {
            cfg.split_ratios.train = doc["split"].value("train", 0.8);
            cfg.split_ratios.dev = doc["split"].value("dev", 0.2);
            cfg.split_seed = doc["split"].value("seed", std::uint64_t{13});
        }

        if (doc.contains("stressor")) {
            const json& s = doc["stressor"];
            cfg.stressor.history_turns = s.value("history_turns", 12);
            cfg.stressor.parse_retries = s.value("parse_retries", 2);
            cfg.stressor.params.max_tokens = s.value("max_tokens", 128);
            cfg.stressor.params.temperature = s.value("temperature", 0.3);
            cfg.stressor_seed = s.value("seed", std::uint64_t{101});
        }
        cfg.stressor.params.seed = cfg.stressor_seed;

        if (doc.contains("augment")) {
            const json& a = doc["augment"];
            cfg.strategy = AugmentationStrategy::parse(a.value("strategy", std::string("x2")));
            const std::string basis = a.value("cap_basis", std::string("total"));
            if (basis == "total") cfg.cap_basis = CapBasis::Total;
            else if (basis == "synthetic") cfg.cap_basis = CapBasis::Synthetic;
            else throw ValidationError("cap_basis must be \"total\" or \"synthetic\"");
            cfg.overgen_budget = a.value("overgen_budget", 1.5);
            cfg.round_size = a.value("round_size", 50);
            cfg.generation_params.max_tokens = a.value("max_tokens", 96);
            cfg.generation_params.temperature = a.value("temperature", 0.8);
            cfg.generation_seed = a.value("seed", std::uint64_t{202});
        }
        cfg.generation_params.seed = cfg.generation_seed;

        if (doc.contains("qc")) {
            const json& q = doc["qc"];
            cfg.kappa_threshold = q.value("kappa_threshold", kDefaultKappaThreshold);
            cfg.qc_batch_min = q.value("batch_min", 20);
            const std::string on_reject = q.value("on_reject", std::string("halt"));
            if (on_reject == "halt") cfg.on_reject = OnReject::Halt;
            else if (on_reject == "continue") cfg.on_reject = OnReject::Continue;
            else throw ValidationError("qc.on_reject must be \"halt\" or \"continue\"");
            const std::string annotator = q.value("annotator", std::string("trained"));
            if (annotator == "trained") cfg.annotator = AnnotatorKind::Trained;
            else if (annotator == "level_map") cfg.annotator = AnnotatorKind::LevelMap;
            else throw ValidationError("qc.annotator must be \"trained\" or \"level_map\"");
            cfg.adherence_hypothesis_template =
                q.value("adherence_hypothesis_template", std::string{});
        }

        if (doc.contains("features")) {
            const json& f = doc["features"];
            cfg.heuristics.theta_insight = f.value("theta_insight", 0.08);
            cfg.heuristics.theta_pronoun = f.value("theta_pronoun", 0.06);
            cfg.heuristics.mature_min_tokens = f.value("mature_min_tokens", 12);
            cfg.heuristics.phatic_max_tokens = f.value("phatic_max_tokens", 3);
            if (f.contains("insight_lexicon"))
                cfg.heuristics.insight_lexicon =
                    f["insight_lexicon"].get<std::vector<std::string>>();
        }

        if (doc.contains("fusion")) {
            const json& m = doc["fusion"];
            FusionConfig& fc = cfg.fusion;
            fc.branch_hidden = m.value("branch_hidden", fc.branch_hidden);
            fc.branch_out = m.value("branch_out", fc.branch_out);
            fc.branch_dropout = m.value("branch_dropout", fc.branch_dropout);
            fc.fused_dim = fc.text_dim + 2 * fc.branch_out;
            if (m.contains("head_dims")) fc.head_dims = m["head_dims"].get<std::vector<int>>();
            fc.head_dropout = m.value("head_dropout", fc.head_dropout);
            fc.encoder_lr = m.value("encoder_lr", fc.encoder_lr);
            fc.head_lr = m.value("head_lr", fc.head_lr);
            fc.weight_decay = m.value("weight_decay", fc.weight_decay);
            fc.batch_size = m.value("batch_size", fc.batch_size);
            fc.max_epochs = m.value("max_epochs", fc.max_epochs);
            fc.label_smoothing = m.value("label_smoothing", fc.label_smoothing);
            fc.patience = m.value("patience", fc.patience);
            fc.seed = m.value("seed", fc.seed);
        }

        if (doc.contains("analysis")) {
            cfg.opening_threshold_z = doc["analysis"].value("opening_threshold_z", 0.5);
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("pipeline config field error: ") + e.what());
    }
    return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
    const std::string base_dir = fs::path(path).parent_path().string();
    return parse_pipeline_config(read_text_file(path), base_dir);
}

BackendSet make_backends(const BackendConfig& config) {
    if (config.kind == "stub") return make_stub_backends(config.encoder_seed);
    HttpBackendOptions options;
    options.retry = config.retry;
    options.max_in_flight = config.max_in_flight;
    BackendSet set;
    set.generation = make_http_generation_backend(config.generation, options);
    set.nli = make_http_nli_backend(config.nli, options);
    set.emotion = make_http_emotion_backend(config.emotion, options);
    set.encoder = make_http_encoder_backend(config.encoder, options);
    return set;
}

// ---------------------------------------------------------------------
// Stage manifests
// ---------------------------------------------------------------------

namespace {

struct StageIo {
    std::map<std::string, std::string> inputs;  // logical name -> fingerprint hex
    std::string config_fp;
    std::vector<std::string> outputs;  // paths relative to the stage dir
};

std::string stage_dir(const PipelineConfig& cfg, const std::string& stage) {
    return cfg.output_root + "/" + stage;
}

bool manifest_matches(const PipelineConfig& cfg, const std::string& stage,
                      const StageIo& io) {
    const std::string dir = stage_dir(cfg, stage);
    const std::string manifest_path = dir + "/manifest.json";
    if (!fs::exists(manifest_path)) return false;
    json manifest;
    try {
        manifest = json::parse(read_text_file(manifest_path));
    } catch (const std::exception&) {
        return false;
    }
    if (manifest.value("config_fingerprint", std::string{}) != io.config_fp) return false;
    json inputs = manifest.value("inputs", json::object());
    if (inputs.size() != io.inputs.size()) return false;
    for (const auto& [name, fp] : io.inputs) {
        if (!inputs.contains(name) || inputs[name].get<std::string>() != fp) return false;
    }
    for (const std::string& out : io.outputs) {
        if (!fs::exists(dir + "/" + out)) return false;
    }
    return true;
}

void write_manifest(const PipelineConfig& cfg, const std::string& stage, const StageIo& io) {
    json manifest;
    manifest["stage"] = stage;
    json inputs = json::object();
    for (const auto& [name, fp] : io.inputs) inputs[name] = fp;
    manifest["inputs"] = inputs;
    manifest["config_fingerprint"] = io.config_fp;
    manifest["outputs"] = io.outputs;
    write_text_file(stage_dir(cfg, stage) + "/manifest.json", manifest.dump(2) + "\n");
}

std::string file_fp(const std::string& path, const std::string& what) {
    if (!fs::exists(path))
        throw ValidationError("missing upstream artifact for " + what + ": " + path);
    return fingerprint_hex(fingerprint_file(path));
}

std::string backends_slice(const PipelineConfig& cfg) {
    json j = {{"kind", cfg.backends.kind},
              {"encoder_seed", cfg.backends.encoder_seed},
              {"generation", {{"endpoint", cfg.backends.generation.endpoint},
                              {"model", cfg.backends.generation.model}}},
              {"nli", {{"endpoint", cfg.backends.nli.endpoint},
                       {"model", cfg.backends.nli.model}}},
              {"emotion", {{"endpoint", cfg.backends.emotion.endpoint},
                           {"model", cfg.backends.emotion.model}}},
              {"encoder", {{"endpoint", cfg.backends.encoder.endpoint},
                           {"model", cfg.backends.encoder.model}}}};
    return j.dump();
}

std::string slice_fp(const json& slice) { return fingerprint_hex(fingerprint(slice.dump())); }

// ---------------------------------------------------------------------
// Shared stage helpers
// ---------------------------------------------------------------------

struct PipelineContext {
    const PipelineConfig& cfg;
    BackendSet backends;
    DmrsCatalog catalog;
    SupplementaryDefinitions supplementary;
};

std::map<std::pair<std::string, int>, StressorRecord> stressor_index(
    const std::vector<StressorRecord>& records) {
    std::map<std::pair<std::string, int>, StressorRecord> index;
    for (const StressorRecord& r : records) index[{r.dialogue_id, r.turn_index}] = r;
    return index;
}

StressorRecord stressor_or_fallback(
    const std::map<std::pair<std::string, int>, StressorRecord>& index,
    const std::string& dialogue_id, int turn_index) {
    auto it = index.find({dialogue_id, turn_index});
    if (it != index.end()) return it->second;
    StressorRecord fallback;
    fallback.category = "Unspecified";
    fallback.dialogue_id = dialogue_id;
    fallback.turn_index = turn_index;
    return fallback;
}

/// Multinomial logistic regression on the 37-dim handcrafted features,
/// trained on real rows only. Deterministic full-batch gradient descent.
class TrainedAnnotator {
public:
    static constexpr std::size_t kDim = kHeuristicDim + kProfileDim;

    void fit(const std::vector<FeatureRow>& rows) {
        if (rows.empty()) throw ValidationError("annotator needs training rows");
        const std::size_t n = rows.size();
        std::vector<std::array<double, kDim>> x(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = flatten(rows[i]);
            if (!rows[i].label) throw ValidationError("annotator training rows must be labeled");
            y[i] = *rows[i].label;
        }
        standardize_fit(x);
        for (auto& row : x) standardize_apply(row);

        weights_.assign(9 * kDim, 0.0);
        bias_.assign(9, 0.0);
        const double lr = 0.5;
        const double l2 = 1e-4;
        const int iterations = 300;
        std::vector<double> probs(9);
        std::vector<double> grad_w(9 * kDim);
        std::vector<double> grad_b(9);
        for (int it = 0; it < iterations; ++it) {
            std::fill(grad_w.begin(), grad_w.end(), 0.0);
            std::fill(grad_b.begin(), grad_b.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                logits(x[i], probs);
                softmax_inplace(probs);
                for (int c = 0; c < 9; ++c) {
                    const double g = probs[static_cast<std::size_t>(c)] - (y[i] == c ? 1.0 : 0.0);
                    grad_b[static_cast<std::size_t>(c)] += g;
                    for (std::size_t d = 0; d < kDim; ++d) {
                        grad_w[static_cast<std::size_t>(c) * kDim + d] += g * x[i][d];
                    }
                }
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t k = 0; k < weights_.size(); ++k) {
                weights_[k] -= lr * (grad_w[k] * inv_n + l2 * weights_[k]);
            }
            for (int c = 0; c < 9; ++c) {
                bias_[static_cast<std::size_t>(c)] -=
                    lr * grad_b[static_cast<std::size_t>(c)] * inv_n;
            }
        }
    }

    int label_for(const FeatureRow& row) const {
        std::array<double, kDim> x = flatten(row);
        standardize_apply(x);
        std::vector<double> scores(9);
        logits(x, scores);
        int best = 0;
        for (int c = 1; c < 9; ++c) {
            if (scores[static_cast<std::size_t>(c)] > scores[static_cast<std::size_t>(best)])
                best = c;
        }
        return best;
    }

private:
    static std::array<double, kDim> flatten(const FeatureRow& row) {
        std::array<double, kDim> x{};
        std::copy(row.heuristics.values.begin(), row.heuristics.values.end(), x.begin());
        std::copy(row.profile.scores.begin(), row.profile.scores.end(),
                  x.begin() + kHeuristicDim);
        return x;
    }

    void standardize_fit(const std::vector<std::array<double, kDim>>& x) {
        mean_.assign(kDim, 0.0);
        std_.assign(kDim, 1.0);
        for (const auto& row : x) {
            for (std::size_t d = 0; d < kDim; ++d) mean_[d] += row[d];
        }
        for (double& m : mean_) m /= static_cast<double>(x.size());
        std::vector<double> var(kDim, 0.0);
        for (const auto& row : x) {
            for (std::size_t d = 0; d < kDim; ++d) {
                var[d] += (row[d] - mean_[d]) * (row[d] - mean_[d]);
            }
        }
        for (std::size_t d = 0; d < kDim; ++d) {
            const double sd = std::sqrt(var[d] / static_cast<double>(x.size()));
            std_[d] = sd > 1e-9 ? sd : 1.0;
        }
    }

    void standardize_apply(std::array<double, kDim>& x) const {
        for (std::size_t d = 0; d < kDim; ++d) x[d] = (x[d] - mean_[d]) / std_[d];
    }

    void logits(const std::array<double, kDim>& x, std::vector<double>& out) const {
        for (int c = 0; c < 9; ++c) {
            double acc = bias_[static_cast<std::size_t>(c)];
            const double* w = weights_.data() + static_cast<std::size_t>(c) * kDim;
            for (std::size_t d = 0; d < kDim; ++d) acc += w[d] * x[d];
            out[static_cast<std::size_t>(c)] = acc;
        }
    }

    static void softmax_inplace(std::vector<double>& v) {
        double maxv = *std::max_element(v.begin(), v.end());
        double sum = 0.0;
        for (double& e : v) {
            e = std::exp(e - maxv);
            sum += e;
        }
        for (double& e : v) e /= sum;
    }

    std::vector<double> weights_;
    std::vector<double> bias_;
    std::vector<double> mean_;
    std::vector<double> std_;
};

// ---------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------

StageIo ingest_io(const PipelineConfig& cfg) {
    StageIo io;
    io.inputs["corpus"] = file_fp(cfg.corpus_path, "ingest");
    io.config_fp = slice_fp(json{{"train", cfg.split_ratios.train},
                                 {"dev", cfg.split_ratios.dev},
                                 {"seed", cfg.split_seed}});
    io.outputs = {"train.jsonl", "dev.jsonl", "summary.json"};
    return io;
}

void run_ingest(const PipelineContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    const std::string dir = stage_dir(cfg, "ingest");
    fs::create_directories(dir);
    std::vector<Dialogue> dialogues = load_corpus(cfg.corpus_path);
    if (dialogues.empty()) throw ValidationError("corpus is empty: " + cfg.corpus_path);
    CorpusSplit split = split_corpus(dialogues, cfg.split_ratios, cfg.split_seed);
    save_corpus(split.train, dir + "/train.jsonl");
    save_corpus(split.dev, dir + "/dev.jsonl");

    json summary;
    summary["dialogues"] = {{"total", dialogues.size()},
                            {"train", split.train.size()},
                            {"dev", split.dev.size()}};
    auto counts_json = [](const ClassCounts& c) {
        json j = json::object();
        for (int label = 0; label < kNumLabels; ++label)
            j[std::to_string(label)] = c.at(label);
        return j;
    };
    summary["class_distribution"] = {{"train", counts_json(class_distribution(split.train))},
                                     {"dev", counts_json(class_distribution(split.dev))}};
    write_text_file(dir + "/summary.json", summary.dump(2) + "\n");
}

StageIo stressor_io(const PipelineConfig& cfg) {
    StageIo io;
    io.inputs["train"] = file_fp(stage_dir(cfg, "ingest") + "/train.jsonl", "stressor");
    io.inputs["dev"] = file_fp(stage_dir(cfg, "ingest") + "/dev.jsonl", "stressor");
    io.inputs["template"] = fingerprint_hex(fingerprint(stressor_prompt_template()));
    io.config_fp = slice_fp(json{{"history_turns", cfg.stressor.history_turns},
                                 {"parse_retries", cfg.stressor.parse_retries},
                                 {"max_tokens", cfg.stressor.params.max_tokens},
                                 {"temperature", cfg.stressor.params.temperature},
                                 {"seed", cfg.stressor_seed},
                                 {"backends", backends_slice(cfg)}});
    io.outputs = {"stressors.jsonl"};
    return io;
}

void run_stressor(const PipelineContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    const std::string dir = stage_dir(cfg, "stressor");
    fs::create_directories(dir);
    std::vector<StressorRecord> records;
    for (const char* part : {"/train.jsonl", "/dev.jsonl"}) {
        std::vector<Dialogue> dialogues = load_corpus(stage_dir(cfg, "ingest") + part);
        for (const Dialogue& d : dialogues) {
            for (const Turn& t : d.turns) {
                if (t.speaker != Speaker::Seeker || trim(t.text).empty()) continue;
                records.push_back(
                    identify_stressor(d, t.index, *ctx.backends.generation, cfg.stressor));
            }
        }
    }
    save_stressor_records(records, dir + "/stressors.jsonl");
}

StageIo augment_io(const PipelineConfig& cfg) {
    StageIo io;
    io.inputs["train"] = file_fp(stage_dir(cfg, "ingest") + "/train.jsonl", "augment");
    io.inputs["stressors"] =
        file_fp(stage_dir(cfg, "stressor") + "/stressors.jsonl", "augment");
    io.inputs["catalog"] = file_fp(cfg.catalog_path, "augment");
    io.inputs["supplementary"] = file_fp(cfg.supplementary_path, "augment");
    io.inputs["template"] = fingerprint_hex(fingerprint(generation_prompt_template()));
    io.config_fp = slice_fp(json{{"strategy", cfg.strategy.to_string()},
                                 {"cap_basis", cfg.cap_basis == CapBasis::Total ? "total"
                                                                                : "synthetic"},
                                 {"overgen_budget", cfg.overgen_budget},
                                 {"round_size", cfg.round_size},
                                 {"max_tokens", cfg.generation_params.max_tokens},
                                 {"temperature", cfg.generation_params.temperature},
                                 {"seed", cfg.generation_seed},
                                 {"backends", backends_slice(cfg)}});
    io.outputs = {"synthetic.jsonl", "plan.json"};
    return io;
}

void run_augment(const PipelineContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    const std::string dir = stage_dir(cfg, "augment");
    fs::create_directories(dir);

    std::vector<Dialogue> train = load_corpus(stage_dir(cfg, "ingest") + "/train.jsonl");
    auto stressors =
        stressor_index(load_stressor_records(stage_dir(cfg, "stressor") + "/stressors.jsonl"));

    ClassCounts counts = class_distribution(train);
    AugmentationPlan plan = plan_augmentation(counts, cfg.strategy, cfg.cap_basis);

    std::vector<SeedInstance> seeds;
    for (const Dialogue& d : train) {
        for (const Turn& t : d.turns) {
            if (t.speaker != Speaker::Seeker || !t.label) continue;
            SeedInstance seed;
            seed.stressor = stressor_or_fallback(stressors, d.id, t.index);
            seed.history = render_history(d, t.index, cfg.stressor.history_turns);
            seed.source_dialogue_id = d.id;
            seeds.push_back(std::move(seed));
        }
    }

    std::vector<SyntheticSample> all_samples;
    json plan_json;
    plan_json["strategy"] = cfg.strategy.to_string();
    json targets = json::object();
    for (int label = 0; label < kNumLabels; ++label) {
        const std::int64_t target = plan.target_for(label);
        targets[std::to_string(label)] = {{"original", counts.at(label)},
                                          {"synthetic_target", target}};
        if (target == 0) continue;
        if (seeds.empty())
            throw ValidationError("no labeled seeker turns available as generation seeds");
        std::int64_t remaining = target;
        int round = 0;
        while (remaining > 0) {
            const std::int64_t this_round =
                std::min<std::int64_t>(remaining, cfg.round_size);
            GenerationOptions options;
            options.params = cfg.generation_params;
            options.params.seed =
                cfg.generation_seed + static_cast<std::uint64_t>(label) * 1000003ULL +
                static_cast<std::uint64_t>(round) * 7919ULL;
            options.overgen_budget = cfg.overgen_budget;
            options.round = round;
            std::vector<SyntheticSample> batch = generate_class_batch(
                label, this_round, seeds, ctx.catalog, ctx.supplementary,
                *ctx.backends.generation, options);
            all_samples.insert(all_samples.end(), batch.begin(), batch.end());
            remaining -= this_round;
            ++round;
        }
    }
    save_synthetic_samples(all_samples, dir + "/synthetic.jsonl");
    plan_json["per_class"] = targets;
    plan_json["generated"] = all_samples.size();
    write_text_file(dir + "/plan.json", plan_json.dump(2) + "\n");
}

StageIo qc_io(const PipelineConfig& cfg) {
    StageIo io;
    io.inputs["synthetic"] = file_fp(stage_dir(cfg, "augment") + "/synthetic.jsonl", "qc");
    io.inputs["train"] = file_fp(stage_dir(cfg, "ingest") + "/train.jsonl", "qc");
    io.inputs["stressors"] = file_fp(stage_dir(cfg, "stressor") + "/stressors.jsonl", "qc");
    io.inputs["catalog"] = file_fp(cfg.catalog_path, "qc");
    io.inputs["supplementary"] = file_fp(cfg.supplementary_path, "qc");
    io.config_fp = slice_fp(json{
        {"kappa_threshold", cfg.kappa_threshold},
        {"batch_min", cfg.qc_batch_min},
        {"on_reject", cfg.on_reject == OnReject::Halt ? "halt" : "continue"},
        {"annotator", cfg.annotator == AnnotatorKind::Trained ? "trained" : "level_map"},
        {"adherence_template", cfg.adherence_hypothesis_template},
        {"theta_insight", cfg.heuristics.theta_insight},
        {"theta_pronoun", cfg.heuristics.theta_pronoun},
        {"backends", backends_slice(cfg)}});
    io.outputs = {"qc_report.json", "qc_report.txt", "accepted.jsonl", "rejected.jsonl"};
    return io;
}

/// Mean over samples of the best entailment against any of the label's
/// mechanism definitions ("does the text adhere to any mechanism of the
/// intended level").
double batch_adherence(const PipelineContext& ctx, const std::vector<SyntheticSample>& batch,
                       int label, const std::string& hypothesis_template) {
    std::size_t variants = 1;
    if (label >= 1 && label <= 7)
        variants = ctx.catalog.mechanism_ids_for_level(label).size();
    double sum = 0.0;
    for (const SyntheticSample& sample : batch) {
        double best = 0.0;
        for (std::size_t v = 0; v < variants; ++v) {
            DefenseDefinition def =
                defense_definition_for(ctx.catalog, ctx.supplementary, label, v);
            const std::string hypothesis = hypothesis_template.empty()
                                               ? render_adherence_hypothesis(def)
                                               : render_adherence_hypothesis(
                                                     def, hypothesis_template);
            best = std::max(best, ctx.backends.nli->entail(sample.text, hypothesis));
        }
        sum += best;
    }
    return sum / static_cast<double>(batch.size());
}

bool run_qc(const PipelineContext& ctx) {  // returns false on QC halt
    const PipelineConfig& cfg = ctx.cfg;
    const std::string dir = stage_dir(cfg, "qc");
    fs::create_directories(dir);

    std::vector<SyntheticSample> samples =
        load_synthetic_samples(stage_dir(cfg, "augment") + "/synthetic.jsonl");

    // batches: one per (class, round), undersized rounds merged forward
    std::map<int, std::map<int, std::vector<SyntheticSample>>> by_label_round;
    for (SyntheticSample& s : samples) {
        by_label_round[s.intended_label][s.round].push_back(std::move(s));
    }
    struct Batch {
        int label;
        int round;
        std::vector<SyntheticSample> samples;
    };
    std::vector<Batch> batches;
    for (auto& [label, rounds] : by_label_round) {
        std::vector<SyntheticSample> pending;
        int pending_round = -1;
        for (auto& [round, group] : rounds) {
            if (pending.empty()) pending_round = round;
            pending.insert(pending.end(), group.begin(), group.end());
            if (pending.size() >= static_cast<std::size_t>(cfg.qc_batch_min)) {
                batches.push_back({label, pending_round, std::move(pending)});
                pending.clear();
            }
        }
        if (!pending.empty()) {
            if (!batches.empty() && batches.back().label == label) {
                auto& last = batches.back().samples;
                last.insert(last.end(), pending.begin(), pending.end());
            } else {
                batches.push_back({label, pending_round, std::move(pending)});
            }
        }
    }

    // annotator
    Annotator annotator;
    TrainedAnnotator trained;
    auto features_for = [&](const SyntheticSample& s) {
        return build_feature_row_text(s.text, s.intended_label, s.stressor, ctx.catalog,
                                      *ctx.backends.nli, *ctx.backends.emotion,
                                      cfg.heuristics);
    };
    if (cfg.annotator == AnnotatorKind::Trained) {
        std::vector<Dialogue> train = load_corpus(stage_dir(cfg, "ingest") + "/train.jsonl");
        auto stressors = stressor_index(
            load_stressor_records(stage_dir(cfg, "stressor") + "/stressors.jsonl"));
        std::vector<FeatureRow> real_rows;
        for (const Dialogue& d : train) {
            for (const Turn& t : d.turns) {
                if (t.speaker != Speaker::Seeker || !t.label) continue;
                real_rows.push_back(build_feature_row(
                    t, stressor_or_fallback(stressors, d.id, t.index), ctx.catalog,
                    *ctx.backends.nli, *ctx.backends.emotion, cfg.heuristics));
            }
        }
        trained.fit(real_rows);
        annotator = [&](const SyntheticSample& s) -> std::optional<int> {
            return trained.label_for(features_for(s));
        };
    } else {
        annotator = [&](const SyntheticSample& s) -> std::optional<int> {
            std::vector<double> scores =
                score_indicators(s.text, ctx.catalog, *ctx.backends.nli);
            DefenseProfile profile = aggregate_mechanisms(scores, ctx.catalog);
            return dmrs_level(profile, ctx.catalog);
        };
    }

    std::vector<QcBatchRow> rows;
    std::vector<SyntheticSample> accepted;
    std::vector<SyntheticSample> rejected;
    bool any_rejection = false;
    for (Batch& batch : batches) {
        std::vector<std::string> texts;
        texts.reserve(batch.samples.size());
        for (const SyntheticSample& s : batch.samples) texts.push_back(s.text);

        std::optional<double> sb;
        if (texts.size() >= 2) sb = self_bleu(texts);
        const double sa =
            batch_adherence(ctx, batch.samples, batch.label, cfg.adherence_hypothesis_template);

        GateResult gate = kappa_gate(batch.samples, annotator, cfg.kappa_threshold,
                                     sb.value_or(0.0), sa);

        QcBatchRow row;
        row.label = batch.label;
        row.round = batch.round;
        row.size = batch.samples.size();
        row.self_bleu = sb;
        row.semantic_adherence = sa;
        row.kappa = gate.status == GateStatus::Unevaluable ? 0.0 : gate.verdict.kappa;
        switch (gate.status) {
            case GateStatus::Accepted:
                row.status = "accepted";
                accepted.insert(accepted.end(), batch.samples.begin(), batch.samples.end());
                break;
            case GateStatus::Rejected:
                row.status = "rejected";
                any_rejection = true;
                rejected.insert(rejected.end(), batch.samples.begin(), batch.samples.end());
                break;
            case GateStatus::Unevaluable:
                row.status = "unevaluable";
                any_rejection = true;
                rejected.insert(rejected.end(), batch.samples.begin(), batch.samples.end());
                break;
        }
        rows.push_back(std::move(row));
    }

    QcReport report = summarize_qc(rows, cfg.kappa_threshold);
    emit_qc_report(report, dir);
    save_synthetic_samples(accepted, dir + "/accepted.jsonl");
    save_synthetic_samples(rejected, dir + "/rejected.jsonl");

    if (any_rejection && cfg.on_reject == OnReject::Halt) {
        spdlog::error("QC rejected at least one batch and on_reject=halt");
        return false;
    }
    return true;
}

StageIo features_io(const PipelineConfig& cfg) {
    StageIo io;
    io.inputs["train"] = file_fp(stage_dir(cfg, "ingest") + "/train.jsonl", "features");
    io.inputs["dev"] = file_fp(stage_dir(cfg, "ingest") + "/dev.jsonl", "features");
    io.inputs["stressors"] =
        file_fp(stage_dir(cfg, "stressor") + "/stressors.jsonl", "features");
    io.inputs["accepted"] = file_fp(stage_dir(cfg, "qc") + "/accepted.jsonl", "features");
    io.inputs["catalog"] = file_fp(cfg.catalog_path, "features");
    io.config_fp = slice_fp(json{{"theta_insight", cfg.heuristics.theta_insight},
                                 {"theta_pronoun", cfg.heuristics.theta_pronoun},
                                 {"mature_min_tokens", cfg.heuristics.mature_min_tokens},
                                 {"phatic_max_tokens", cfg.heuristics.phatic_max_tokens},
                                 {"insight_lexicon", cfg.heuristics.insight_lexicon},
                                 {"backends", backends_slice(cfg)}});
    io.outputs = {"train_rows.jsonl", "dev_rows.jsonl"};
    return io;
}

void run_features(const PipelineContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    const std::string dir = stage_dir(cfg, "features");
    fs::create_directories(dir);
    auto stressors = stressor_index(
        load_stressor_records(stage_dir(cfg, "stressor") + "/stressors.jsonl"));

    auto rows_for = [&](const std::vector<Dialogue>& dialogues) {
        std::vector<FeatureRow> rows;
        for (const Dialogue& d : dialogues) {
            for (const Turn& t : d.turns) {
                if (t.speaker != Speaker::Seeker || !t.label) continue;
                rows.push_back(build_feature_row(
                    t, stressor_or_fallback(stressors, d.id, t.index), ctx.catalog,
                    *ctx.backends.nli, *ctx.backends.emotion, cfg.heuristics));
            }
        }
        return rows;
    };

    std::vector<FeatureRow> train_rows =
        rows_for(load_corpus(stage_dir(cfg, "ingest") + "/train.jsonl"));
    for (const SyntheticSample& s :
         load_synthetic_samples(stage_dir(cfg, "qc") + "/accepted.jsonl")) {
        train_rows.push_back(build_feature_row_text(s.text, s.intended_label, s.stressor,
                                                    ctx.catalog, *ctx.backends.nli,
                                                    *ctx.backends.emotion, cfg.heuristics));
    }
    std::vector<FeatureRow> dev_rows =
        rows_for(load_corpus(stage_dir(cfg, "ingest") + "/dev.jsonl"));

    save_feature_rows(train_rows, dir + "/train_rows.jsonl");
    save_feature_rows(dev_rows, dir + "/dev_rows.jsonl");
}

StageIo train_io(const PipelineConfig& cfg) {
    StageIo io;
    io.inputs["train_rows"] =
        file_fp(stage_dir(cfg, "features") + "/train_rows.jsonl", "train");
    io.inputs["dev_rows"] = file_fp(stage_dir(cfg, "features") + "/dev_rows.jsonl", "train");
    io.inputs["catalog"] = file_fp(cfg.catalog_path, "train");
    json fusion_slice = {{"branch_hidden", cfg.fusion.branch_hidden},
                         {"branch_out", cfg.fusion.branch_out},
                         {"branch_dropout", cfg.fusion.branch_dropout},
                         {"head_dims", cfg.fusion.head_dims},
                         {"head_dropout", cfg.fusion.head_dropout},
                         {"encoder_lr", cfg.fusion.encoder_lr},
                         {"head_lr", cfg.fusion.head_lr},
                         {"weight_decay", cfg.fusion.weight_decay},
                         {"batch_size", cfg.fusion.batch_size},
                         {"max_epochs", cfg.fusion.max_epochs},
                         {"label_smoothing", cfg.fusion.label_smoothing},
                         {"patience", cfg.fusion.patience},
                         {"seed", cfg.fusion.seed},
                         {"backends", backends_slice(cfg)}};
    io.config_fp = slice_fp(fusion_slice);
    io.outputs = {"checkpoint/params.bin", "checkpoint/meta.json"};
    return io;
}

void run_train(const PipelineContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    const std::string dir = stage_dir(cfg, "train");
    fs::create_directories(dir);
    std::vector<FeatureRow> train_rows =
        load_feature_rows(stage_dir(cfg, "features") + "/train_rows.jsonl");
    std::vector<FeatureRow> dev_rows =
        load_feature_rows(stage_dir(cfg, "features") + "/dev_rows.jsonl");

    TrainResult result = train(train_rows, dev_rows, cfg.fusion, *ctx.backends.encoder);
    save_checkpoint(result.model, *ctx.backends.encoder, dir + "/checkpoint",
                    fingerprint_hex(ctx.catalog.fingerprint()), &result.history);
}

StageIo eval_io(const PipelineConfig& cfg) {
    StageIo io;
    io.inputs["params"] = file_fp(stage_dir(cfg, "train") + "/checkpoint/params.bin", "eval");
    io.inputs["meta"] = file_fp(stage_dir(cfg, "train") + "/checkpoint/meta.json", "eval");
    io.inputs["dev_rows"] = file_fp(stage_dir(cfg, "features") + "/dev_rows.jsonl", "eval");
    io.config_fp = slice_fp(json{{"backends", backends_slice(cfg)}});
    io.outputs = {"predictions.jsonl", "report.json", "per_class_metrics.csv",
                  "confusion.csv", "confusion_row_norm.csv", "offdiag_counts.csv",
                  "sink_analysis.json", "sink_analysis.csv"};
    return io;
}

void run_eval(const PipelineContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    const std::string dir = stage_dir(cfg, "eval");
    fs::create_directories(dir);

    LoadedCheckpoint loaded =
        load_checkpoint(stage_dir(cfg, "train") + "/checkpoint", *ctx.backends.encoder,
                        fingerprint_hex(ctx.catalog.fingerprint()));
    std::vector<FeatureRow> dev_rows =
        load_feature_rows(stage_dir(cfg, "features") + "/dev_rows.jsonl");
    if (dev_rows.empty()) throw ValidationError("dev rows are empty; nothing to evaluate");

    std::vector<Prediction> preds = predict(loaded.model, dev_rows, *ctx.backends.encoder);
    std::vector<int> pred_labels;
    std::vector<int> gold_labels;
    std::ostringstream pred_lines;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!dev_rows[i].label) continue;
        pred_labels.push_back(preds[i].label);
        gold_labels.push_back(*dev_rows[i].label);
        json record = {{"index", i},
                       {"label", preds[i].label},
                       {"gold", *dev_rows[i].label},
                       {"distribution", preds[i].distribution}};
        pred_lines << record.dump() << '\n';
    }
    write_text_file(dir + "/predictions.jsonl", pred_lines.str());

    MetricsReport report = evaluate(pred_labels, gold_labels);
    emit_report(report, dir);
    emit_report(sink_analysis(report.confusion, 7), dir);
}

StageIo analyze_io(const PipelineConfig& cfg) {
    StageIo io;
    io.inputs["corpus"] = file_fp(cfg.corpus_path, "analyze");
    io.inputs["catalog"] = file_fp(cfg.catalog_path, "analyze");
    io.config_fp = slice_fp(json{{"opening_threshold_z", cfg.opening_threshold_z},
                                 {"backends", backends_slice(cfg)}});
    io.outputs = {"class_distribution.csv", "trajectories.csv",    "magnitude_speed.csv",
                  "transition_stats.json",  "cdi_curve.csv",       "opening_up_turns.csv",
                  "latency_by_label.csv",   "turns_per_dialogue.csv",
                  "tokens_per_dialogue.csv", "mechanism_activations.csv"};
    return io;
}

void run_analyze(const PipelineContext& ctx) {
    const PipelineConfig& cfg = ctx.cfg;
    const std::string dir = stage_dir(cfg, "analyze");
    fs::create_directories(dir);
    std::vector<Dialogue> dialogues = load_corpus(cfg.corpus_path);

    CorpusAnalytics analytics =
        compute_corpus_analytics(dialogues, *ctx.backends.emotion, cfg.opening_threshold_z);
    emit_report(analytics, dir);

    std::vector<FeatureRow> labeled_rows;
    StressorRecord unspecified;
    unspecified.category = "Unspecified";
    for (const Dialogue& d : dialogues) {
        for (const Turn& t : d.turns) {
            if (t.speaker != Speaker::Seeker || !t.label) continue;
            labeled_rows.push_back(build_feature_row(t, unspecified, ctx.catalog,
                                                     *ctx.backends.nli, *ctx.backends.emotion,
                                                     cfg.heuristics));
        }
    }
    emit_mechanism_activations(mechanism_activations(labeled_rows, ctx.catalog), dir);
}

}  // namespace

PipelineResult run_pipeline(const PipelineConfig& config, const std::set<std::string>& stages) {
    PipelineResult result;
    try {
        config.validate();
        if (!config.prompts_dir.empty()) {
            const std::string stressor_tmpl =
                config.prompts_dir + "/stressor_identification.txt";
            const std::string generation_tmpl = config.prompts_dir + "/generation.txt";
            if (fs::exists(stressor_tmpl)) load_stressor_prompt_template(stressor_tmpl);
            if (fs::exists(generation_tmpl)) load_generation_prompt_template(generation_tmpl);
        }

        for (const std::string& name : stages) {
            if (std::find(pipeline_stage_names().begin(), pipeline_stage_names().end(), name) ==
                pipeline_stage_names().end())
                throw ValidationError("unknown stage \"" + name + "\"");
        }
        auto requested = [&](const std::string& name) {
            return stages.empty() || stages.count(name) > 0;
        };

        PipelineContext ctx{config, make_backends(config.backends),
                            load_dmrs_catalog(config.catalog_path),
                            load_supplementary_definitions(config.supplementary_path)};

        struct StageSpec {
            std::string name;
            std::function<StageIo(const PipelineConfig&)> io;
            std::function<bool(const PipelineContext&)> run;  // false => QC halt
        };
        const std::vector<StageSpec> specs = {
            {"ingest", ingest_io, [](const PipelineContext& c) { run_ingest(c); return true; }},
            {"stressor", stressor_io,
             [](const PipelineContext& c) { run_stressor(c); return true; }},
            {"augment", augment_io,
             [](const PipelineContext& c) { run_augment(c); return true; }},
            {"qc", qc_io, [](const PipelineContext& c) { return run_qc(c); }},
            {"features", features_io,
             [](const PipelineContext& c) { run_features(c); return true; }},
            {"train", train_io, [](const PipelineContext& c) { run_train(c); return true; }},
            {"eval", eval_io, [](const PipelineContext& c) { run_eval(c); return true; }},
            {"analyze", analyze_io,
             [](const PipelineContext& c) { run_analyze(c); return true; }},
        };

        for (const StageSpec& spec : specs) {
            if (!requested(spec.name)) continue;
            StageIo io = spec.io(config);
            if (manifest_matches(config, spec.name, io)) {
                spdlog::info("stage {} up to date; skipping", spec.name);
                result.stages[spec.name] = StageOutcome::Skipped;
                continue;
            }
            spdlog::info("running stage {}", spec.name);
            if (!spec.run(ctx)) {
                result.exit_code = 3;
                result.message = "QC rejected one or more batches (on_reject=halt)";
                result.stages[spec.name] = StageOutcome::Ran;
                // the QC report is on disk; no manifest so the stage reruns
                return result;
            }
            // input fingerprints may be cheaper to reuse, but re-deriving
            // them after the run catches stages that mutate their inputs
            StageIo final_io = spec.io(config);
            write_manifest(config, spec.name, final_io);
            result.stages[spec.name] = StageOutcome::Ran;
        }
        result.message = "ok";
        return result;
    } catch (const BackendError& e) {
        result.exit_code = 2;
        result.message = e.what();
        return result;
    } catch (const ValidationError& e) {
        result.exit_code = 1;
        result.message = e.what();
        return result;
    } catch (const IoError& e) {
        result.exit_code = 1;
        result.message = e.what();
        return result;
    }
}

}  // namespace psydef
