#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "psydef/pipeline.hpp"
#include "psydef/quality.hpp"
#include "psydef/reports.hpp"

namespace {

using namespace psydef;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitBackend = 2;
constexpr int kExitQcHalt = 3;

int guard(const std::function<int()>& body) {
    try {
        return body();
    } catch (const BackendError& e) {
        spdlog::error("{}", e.what());
        return kExitBackend;
    } catch (const ValidationError& e) {
        spdlog::error("{}", e.what());
        return kExitValidation;
    } catch (const IoError& e) {
        spdlog::error("{}", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        spdlog::error("unexpected failure: {}", e.what());
        return kExitValidation;
    }
}

PipelineConfig config_or_default(const std::string& config_path) {
    if (!config_path.empty()) return load_pipeline_config(config_path);
    PipelineConfig cfg;  // stub backends, defaults everywhere
    return cfg;
}

/// Labels from a JSONL file: either flat records carrying "label" or
/// dialogue records, whose labeled seeker turns contribute in order.
std::vector<int> read_label_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("label file not found: " + path);
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (record.contains("turns")) {
            Dialogue d = parse_dialogue_record(line);
            for (const Turn& t : d.turns) {
                if (t.speaker == Speaker::Seeker && t.label) labels.push_back(*t.label);
            }
        } else if (record.contains("label") && !record["label"].is_null()) {
            labels.push_back(record["label"].get<int>());
        } else {
            throw ValidationError(path + ":" + std::to_string(line_no) +
                                  ": record has neither \"label\" nor \"turns\"");
        }
    }
    return labels;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_pattern("[%l] %v");
    CLI::App app{"psydef: defense-mechanism classification pipeline"};
    app.require_subcommand(1);

    // --- run -----------------------------------------------------------
    auto* run_cmd = app.add_subcommand("run", "run pipeline stages from a config file");
    std::string run_config;
    std::string run_stages = "all";
    std::string run_strategy_override;
    run_cmd->add_option("--config", run_config, "pipeline config (JSON)")->required();
    run_cmd->add_option("--stages", run_stages, "comma-separated stage list or \"all\"");
    run_cmd->add_option("--strategy", run_strategy_override,
                        "override augmentation strategy (xK or cap:N)");

    // --- stressor ------------------------------------------------------
    auto* stressor_cmd =
        app.add_subcommand("stressor", "identify stressors for every seeker turn");
    std::string stressor_in, stressor_out, stressor_config;
    stressor_cmd->add_option("--in", stressor_in, "corpus JSONL")->required();
    stressor_cmd->add_option("--out", stressor_out, "output stressor JSONL")->required();
    stressor_cmd->add_option("--config", stressor_config, "pipeline config (for backends)");

    // --- augment -------------------------------------------------------
    auto* augment_cmd = app.add_subcommand("augment", "generate synthetic minority samples");
    std::string aug_in, aug_stressors, aug_catalog, aug_supplementary, aug_out, aug_strategy,
        aug_config;
    augment_cmd->add_option("--in", aug_in, "corpus JSONL (seed dialogues)")->required();
    augment_cmd->add_option("--stressors", aug_stressors, "stressor JSONL")->required();
    augment_cmd->add_option("--catalog", aug_catalog, "DMRS catalog JSON")->required();
    augment_cmd->add_option("--supplementary", aug_supplementary,
                            "supplementary definitions JSON")->required();
    augment_cmd->add_option("--strategy", aug_strategy, "xK or cap:N")->required();
    augment_cmd->add_option("--out", aug_out, "output synthetic JSONL")->required();
    augment_cmd->add_option("--config", aug_config, "pipeline config (for backends)");

    // --- train ---------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train the fusion classifier");
    std::string train_config, train_rows_path, dev_rows_path, train_out, train_catalog;
    train_cmd->add_option("--config", train_config, "pipeline config");
    train_cmd->add_option("--train", train_rows_path, "training feature rows JSONL")
        ->required();
    train_cmd->add_option("--dev", dev_rows_path, "dev feature rows JSONL")->required();
    train_cmd->add_option("--catalog", train_catalog, "DMRS catalog JSON (for fingerprint)");
    train_cmd->add_option("--out", train_out, "checkpoint directory")->required();

    // --- eval ----------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "score predictions against gold labels");
    std::string eval_preds, eval_gold, eval_out;
    int eval_sink = 7;
    eval_cmd->add_option("--preds", eval_preds, "predictions JSONL")->required();
    eval_cmd->add_option("--gold", eval_gold, "gold JSONL")->required();
    eval_cmd->add_option("--out", eval_out, "report directory")->required();
    eval_cmd->add_option("--sink", eval_sink, "sink label for absorption analysis");

    // --- analyze -------------------------------------------------------
    auto* analyze_cmd = app.add_subcommand("analyze", "corpus analytics and plot data");
    std::string analyze_in, analyze_out, analyze_catalog, analyze_config;
    analyze_cmd->add_option("--in", analyze_in, "corpus JSONL")->required();
    analyze_cmd->add_option("--out", analyze_out, "output directory")->required();
    analyze_cmd->add_option("--catalog", analyze_catalog,
                            "DMRS catalog JSON (adds mechanism activations)");
    analyze_cmd->add_option("--config", analyze_config, "pipeline config (for backends)");

    CLI11_PARSE(app, argc, argv);

    if (run_cmd->parsed()) {
        return guard([&] {
            PipelineConfig cfg = load_pipeline_config(run_config);
            if (!run_strategy_override.empty())
                cfg.strategy = AugmentationStrategy::parse(run_strategy_override);
            std::set<std::string> stages;
            if (run_stages != "all") {
                std::stringstream ss(run_stages);
                std::string stage;
                while (std::getline(ss, stage, ',')) {
                    if (!trim(stage).empty()) stages.insert(trim(stage));
                }
            }
            PipelineResult result = run_pipeline(cfg, stages);
            if (result.exit_code != 0) spdlog::error("{}", result.message);
            for (const auto& [stage, outcome] : result.stages) {
                spdlog::info("stage {}: {}", stage,
                             outcome == StageOutcome::Skipped ? "skipped" : "ran");
            }
            return result.exit_code;
        });
    }

    if (stressor_cmd->parsed()) {
        return guard([&] {
            PipelineConfig cfg = config_or_default(stressor_config);
            BackendSet backends = make_backends(cfg.backends);
            cfg.stressor.params.seed = cfg.stressor_seed;
            std::vector<StressorRecord> records;
            for (const Dialogue& d : load_corpus(stressor_in)) {
                for (const Turn& t : d.turns) {
                    if (t.speaker != Speaker::Seeker || trim(t.text).empty()) continue;
                    records.push_back(
                        identify_stressor(d, t.index, *backends.generation, cfg.stressor));
                }
            }
            save_stressor_records(records, stressor_out);
            spdlog::info("wrote {} stressor records to {}", records.size(), stressor_out);
            return kExitOk;
        });
    }

    if (augment_cmd->parsed()) {
        return guard([&] {
            PipelineConfig cfg = config_or_default(aug_config);
            BackendSet backends = make_backends(cfg.backends);
            DmrsCatalog catalog = load_dmrs_catalog(aug_catalog);
            SupplementaryDefinitions supplementary =
                load_supplementary_definitions(aug_supplementary);
            std::vector<Dialogue> dialogues = load_corpus(aug_in);
            auto records = load_stressor_records(aug_stressors);
            std::map<std::pair<std::string, int>, StressorRecord> index;
            for (const auto& r : records) index[{r.dialogue_id, r.turn_index}] = r;

            std::vector<SeedInstance> seeds;
            for (const Dialogue& d : dialogues) {
                for (const Turn& t : d.turns) {
                    if (t.speaker != Speaker::Seeker || !t.label) continue;
                    SeedInstance seed;
                    auto it = index.find({d.id, t.index});
                    if (it != index.end()) {
                        seed.stressor = it->second;
                    } else {
                        seed.stressor.category = "Unspecified";
                        seed.stressor.dialogue_id = d.id;
                        seed.stressor.turn_index = t.index;
                    }
                    seed.history = render_history(d, t.index, cfg.stressor.history_turns);
                    seed.source_dialogue_id = d.id;
                    seeds.push_back(std::move(seed));
                }
            }

            AugmentationPlan plan = plan_augmentation(
                class_distribution(dialogues), AugmentationStrategy::parse(aug_strategy),
                cfg.cap_basis);
            std::vector<SyntheticSample> samples;
            for (int label = 0; label < kNumLabels; ++label) {
                const std::int64_t target = plan.target_for(label);
                if (target == 0) continue;
                GenerationOptions options;
                options.params = cfg.generation_params;
                options.params.seed =
                    cfg.generation_seed + static_cast<std::uint64_t>(label) * 1000003ULL;
                options.overgen_budget = cfg.overgen_budget;
                std::vector<SyntheticSample> batch =
                    generate_class_batch(label, target, seeds, catalog, supplementary,
                                         *backends.generation, options);
                samples.insert(samples.end(), batch.begin(), batch.end());
            }
            save_synthetic_samples(samples, aug_out);
            spdlog::info("wrote {} synthetic samples to {}", samples.size(), aug_out);
            return kExitOk;
        });
    }

    if (train_cmd->parsed()) {
        return guard([&] {
            PipelineConfig cfg = config_or_default(train_config);
            BackendSet backends = make_backends(cfg.backends);
            std::vector<FeatureRow> train_rows = load_feature_rows(train_rows_path);
            std::vector<FeatureRow> dev_rows = load_feature_rows(dev_rows_path);
            TrainResult result = train(train_rows, dev_rows, cfg.fusion, *backends.encoder);
            std::string catalog_fp;
            if (!train_catalog.empty())
                catalog_fp = fingerprint_hex(load_dmrs_catalog(train_catalog).fingerprint());
            save_checkpoint(result.model, *backends.encoder, train_out, catalog_fp,
                            &result.history);
            spdlog::info("checkpoint saved to {} (best epoch {})", train_out,
                         result.history.best_epoch);
            return kExitOk;
        });
    }

    if (eval_cmd->parsed()) {
        return guard([&] {
            std::vector<int> preds = read_label_file(eval_preds);
            std::vector<int> golds = read_label_file(eval_gold);
            MetricsReport report = evaluate(preds, golds);
            emit_report(report, eval_out);
            emit_report(sink_analysis(report.confusion, eval_sink), eval_out);
            std::cout << "accuracy " << report.accuracy << "  macro-F1 " << report.macro_f1
                      << '\n';
            return kExitOk;
        });
    }

    if (analyze_cmd->parsed()) {
        return guard([&] {
            PipelineConfig cfg = config_or_default(analyze_config);
            BackendSet backends = make_backends(cfg.backends);
            std::vector<Dialogue> dialogues = load_corpus(analyze_in);
            CorpusAnalytics analytics = compute_corpus_analytics(
                dialogues, *backends.emotion, cfg.opening_threshold_z);
            emit_report(analytics, analyze_out);
            if (!analyze_catalog.empty()) {
                DmrsCatalog catalog = load_dmrs_catalog(analyze_catalog);
                std::vector<FeatureRow> rows;
                StressorRecord unspecified;
                unspecified.category = "Unspecified";
                for (const Dialogue& d : dialogues) {
                    for (const Turn& t : d.turns) {
                        if (t.speaker != Speaker::Seeker || !t.label) continue;
                        rows.push_back(build_feature_row(t, unspecified, catalog,
                                                         *backends.nli, *backends.emotion,
                                                         cfg.heuristics));
                    }
                }
                emit_mechanism_activations(mechanism_activations(rows, catalog), analyze_out);
            }
            spdlog::info("analytics written to {}", analyze_out);
            return kExitOk;
        });
    }

    return kExitValidation;
}
