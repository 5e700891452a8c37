#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "psydef/augmentor.hpp"
#include "psydef/backends.hpp"
#include "psydef/corpus.hpp"
#include "psydef/features.hpp"
#include "psydef/fusion_model.hpp"
#include "psydef/http_backends.hpp"

namespace psydef {

enum class OnReject { Halt, Continue };
enum class AnnotatorKind { Trained, LevelMap };

struct BackendConfig {
    std::string kind = "stub";  // stub | http
    std::uint64_t encoder_seed = 0x5eed;
    int max_in_flight = 4;
    RetryPolicy retry;
    HttpEndpoint generation, nli, emotion, encoder;
};

struct PipelineConfig {
    // paths
    std::string corpus_path;
    std::string catalog_path;
    std::string supplementary_path;
    std::string output_root;
    std::string prompts_dir;  // optional override directory

    BackendConfig backends;

    SplitRatios split_ratios;
    std::uint64_t split_seed = 13;

    StressorOptions stressor;
    std::uint64_t stressor_seed = 101;

    AugmentationStrategy strategy{AugmentationStrategy::Kind::TimesK, 2};
    CapBasis cap_basis = CapBasis::Total;
    double overgen_budget = 1.5;
    int round_size = 50;
    GenerationParams generation_params;
    std::uint64_t generation_seed = 202;

    double kappa_threshold = kDefaultKappaThreshold;
    int qc_batch_min = 20;
    OnReject on_reject = OnReject::Halt;
    AnnotatorKind annotator = AnnotatorKind::Trained;

    HeuristicConfig heuristics;
    std::string adherence_hypothesis_template;  // empty = default

    FusionConfig fusion;

    double opening_threshold_z = 0.5;

    /// Checks path existence and value ranges. Called before any stage
    /// runs.
    void validate() const;
};

PipelineConfig parse_pipeline_config(const std::string& json_text,
                                     const std::string& base_dir = "");
PipelineConfig load_pipeline_config(const std::string& path);

BackendSet make_backends(const BackendConfig& config);

inline const std::vector<std::string>& pipeline_stage_names() {
    static const std::vector<std::string> names = {"ingest", "stressor", "augment", "qc",
                                                   "features", "train", "eval", "analyze"};
    return names;
}

enum class StageOutcome { Ran, Skipped };

struct PipelineResult {
    int exit_code = 0;  // 0 ok, 1 validation, 2 backend exhaustion, 3 qc halt
    std::string message;
    std::map<std::string, StageOutcome> stages;
};

/// Runs the requested stages (or all of them) in dependency order. Each
/// stage writes a manifest of input fingerprints and its config slice;
/// stages whose manifests still match are skipped.
PipelineResult run_pipeline(const PipelineConfig& config,
                            const std::set<std::string>& stages = {});

}  // namespace psydef
