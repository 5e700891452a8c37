#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "psydef/pipeline.hpp"
#include "psydef/quality.hpp"
#include "psydef/reports.hpp"
#include "support.hpp"

using namespace psydef;
using nlohmann::json;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

PipelineConfig smoke_config(const TempDir& dir) {
    PipelineConfig cfg;
    cfg.corpus_path = testsupport::data_path("fixtures/smoke_corpus.jsonl");
    cfg.catalog_path = testsupport::data_path("dmrs_catalog.json");
    cfg.supplementary_path = testsupport::data_path("supplementary_defenses.json");
    cfg.output_root = dir.file("out");
    cfg.backends.kind = "stub";
    cfg.strategy = AugmentationStrategy::parse("x2");
    cfg.on_reject = OnReject::Continue;
    cfg.fusion.max_epochs = 4;  // smoke scale
    cfg.fusion.patience = 4;
    return cfg;
}

std::map<std::string, std::string> snapshot_tree(const std::string& root) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), root).string();
        if (rel.find("manifest.json") != std::string::npos) continue;  // has timestamps? no, but skip anyway
        files[rel] = read_text_file(entry.path().string());
    }
    return files;
}

}  // namespace

TEST_CASE("pipeline config: parsing, defaults, and validation") {
    TempDir dir("cfg");
    PipelineConfig cfg = load_pipeline_config(testsupport::data_path("pipeline.example.json"));
    CHECK(cfg.backends.kind == "stub");
    CHECK(cfg.strategy.to_string() == "x2");
    CHECK(cfg.kappa_threshold == doctest::Approx(0.6));
    CHECK(cfg.fusion.batch_size == 16);
    CHECK(cfg.fusion.encoder_lr == doctest::Approx(1e-6));
    CHECK(cfg.on_reject == OnReject::Continue);
    // example config paths resolve relative to the config file
    CHECK(fs::exists(cfg.corpus_path));
    CHECK(fs::exists(cfg.catalog_path));

    PipelineConfig bad = cfg;
    bad.kappa_threshold = 1.5;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = cfg;
    bad.corpus_path = "/missing/corpus.jsonl";
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("run_pipeline: full smoke run, rerun no-op, selective invalidation") {
    TempDir dir("smoke");
    PipelineConfig cfg = smoke_config(dir);

    PipelineResult first = run_pipeline(cfg);
    REQUIRE_MESSAGE(first.exit_code == 0, first.message);
    for (const auto& stage : pipeline_stage_names()) {
        REQUIRE(first.stages.count(stage) == 1);
        CHECK(first.stages.at(stage) == StageOutcome::Ran);
    }

    // every advertised artifact exists
    for (const char* artifact :
         {"ingest/train.jsonl", "ingest/dev.jsonl", "ingest/summary.json",
          "stressor/stressors.jsonl", "augment/synthetic.jsonl", "augment/plan.json",
          "qc/qc_report.json", "qc/qc_report.txt", "qc/accepted.jsonl", "qc/rejected.jsonl",
          "features/train_rows.jsonl", "features/dev_rows.jsonl",
          "train/checkpoint/params.bin", "train/checkpoint/meta.json",
          "eval/predictions.jsonl", "eval/report.json", "eval/per_class_metrics.csv",
          "eval/sink_analysis.json", "analyze/class_distribution.csv",
          "analyze/cdi_curve.csv", "analyze/mechanism_activations.csv",
          "analyze/latency_by_label.csv"}) {
        CHECK_MESSAGE(fs::exists(cfg.output_root + "/" + artifact), artifact);
    }

    // QC report carries the table-shaped per-class rows
    json qc = json::parse(read_text_file(cfg.output_root + "/qc/qc_report.json"));
    REQUIRE(qc.contains("classes"));
    REQUIRE(!qc["classes"].empty());
    for (const auto& row : qc["classes"]) {
        CHECK(row.contains("class"));
        CHECK(row.contains("label"));
        CHECK(row.contains("n"));
        CHECK(row.contains("self_bleu"));
        CHECK(row.contains("semantic_adherence"));
    }

    // eval report carries the full metrics block
    json report = json::parse(read_text_file(cfg.output_root + "/eval/report.json"));
    for (const char* field : {"accuracy", "macro_precision", "macro_recall", "macro_f1",
                              "per_class", "confusion", "confusion_row_norm"}) {
        CHECK(report.contains(field));
    }

    SUBCASE("rerun is a complete no-op") {
        PipelineResult second = run_pipeline(cfg);
        REQUIRE(second.exit_code == 0);
        for (const auto& [stage, outcome] : second.stages) {
            CHECK_MESSAGE(outcome == StageOutcome::Skipped, stage);
        }
    }

    SUBCASE("editing the catalog re-executes the stages that consume it") {
        // byte-level tweak that keeps the catalog valid
        std::string catalog_text = read_text_file(cfg.catalog_path);
        std::string edited = catalog_text;
        auto pos = edited.find("impulsive actions");
        REQUIRE(pos != std::string::npos);
        edited.replace(pos, 17, "impulsive moves  ");
        const std::string new_catalog = dir.file("catalog_edited.json");
        write_text_file(new_catalog, edited);
        PipelineConfig edited_cfg = cfg;
        edited_cfg.catalog_path = new_catalog;

        PipelineResult rerun = run_pipeline(edited_cfg);
        REQUIRE_MESSAGE(rerun.exit_code == 0, rerun.message);
        CHECK(rerun.stages.at("ingest") == StageOutcome::Skipped);
        CHECK(rerun.stages.at("stressor") == StageOutcome::Skipped);
        // the catalog feeds generation prompts, profiles, training and
        // reporting, so everything from augment onward re-executes
        for (const char* stage : {"augment", "qc", "features", "train", "eval", "analyze"}) {
            CHECK_MESSAGE(rerun.stages.at(stage) == StageOutcome::Ran, stage);
        }
    }

    SUBCASE("two clean runs produce byte-identical artifacts") {
        TempDir other("smoke_b");
        PipelineConfig cfg_b = smoke_config(other);
        PipelineResult run_b = run_pipeline(cfg_b);
        REQUIRE(run_b.exit_code == 0);
        auto tree_a = snapshot_tree(cfg.output_root);
        auto tree_b = snapshot_tree(cfg_b.output_root);
        REQUIRE(tree_a.size() == tree_b.size());
        for (const auto& [rel, content] : tree_a) {
            REQUIRE_MESSAGE(tree_b.count(rel) == 1, rel);
            CHECK_MESSAGE(tree_b.at(rel) == content, rel);
        }
    }
}

TEST_CASE("run_pipeline: requesting a stage without upstream artifacts fails cleanly") {
    TempDir dir("missing");
    PipelineConfig cfg = smoke_config(dir);
    PipelineResult result = run_pipeline(cfg, {"train"});
    CHECK(result.exit_code == 1);
    CHECK(result.message.find("missing upstream artifact") != std::string::npos);
}

TEST_CASE("run_pipeline: unknown stage name is a validation failure") {
    TempDir dir("unknown");
    PipelineConfig cfg = smoke_config(dir);
    PipelineResult result = run_pipeline(cfg, {"frobnicate"});
    CHECK(result.exit_code == 1);
}

TEST_CASE("run_pipeline: qc halt stops the pipeline with exit code 3") {
    TempDir dir("halt");
    PipelineConfig cfg = smoke_config(dir);
    cfg.on_reject = OnReject::Halt;
    // an impossible agreement bar guarantees rejection regardless of the
    // annotator's quality
    cfg.kappa_threshold = 0.999999;
    PipelineResult result = run_pipeline(cfg);
    CHECK(result.exit_code == 3);
    CHECK(fs::exists(cfg.output_root + "/qc/qc_report.json"));
    CHECK_FALSE(fs::exists(cfg.output_root + "/features/train_rows.jsonl"));
}

TEST_CASE("summarize_qc: per-class roll-up and averages") {
    std::vector<QcBatchRow> batches;
    QcBatchRow a{3, 0, 20, 0.4, 0.6, 0.8, "accepted"};
    QcBatchRow b{3, 1, 20, 0.5, 0.7, 0.9, "accepted"};
    QcBatchRow c{5, 0, 10, std::nullopt, 0.5, 0.2, "rejected"};
    batches = {a, b, c};
    QcReport report = summarize_qc(batches, 0.6);
    REQUIRE(report.classes.size() == 2);
    CHECK(report.classes[0].label == 3);
    CHECK(report.classes[0].n == 40);
    CHECK(*report.classes[0].self_bleu == doctest::Approx(0.45));
    CHECK(*report.classes[0].semantic_adherence == doctest::Approx(0.65));
    CHECK(report.classes[1].label == 5);
    CHECK_FALSE(report.classes[1].self_bleu.has_value());
    REQUIRE(report.avg_self_bleu.has_value());
    CHECK(*report.avg_self_bleu == doctest::Approx(0.45));  // only class 3 has SB
    CHECK(*report.avg_semantic_adherence == doctest::Approx((0.65 + 0.5) / 2.0));
}
