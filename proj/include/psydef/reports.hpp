#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "psydef/dmrs_catalog.hpp"
#include "psydef/evaluation.hpp"
#include "psydef/features.hpp"
#include "psydef/quality.hpp"

namespace psydef {

/// Corpus-level analytics backing the dataset-analysis figures: class
/// distribution, per-dialogue trajectories, transition magnitude/speed,
/// disclosure curves, opening-up turns, latency by label, and corpus
/// shape histograms.
struct CorpusAnalytics {
    ClassCounts distribution;
    std::vector<std::pair<std::string, std::vector<TrajectoryPoint>>> trajectories;
    TransitionStats transitions;
    std::vector<std::pair<std::string, std::vector<CdiPoint>>> cdi_curves;
    std::vector<std::pair<std::string, std::optional<int>>> opening_up;
    std::map<int, std::vector<double>> latency;
    std::vector<std::pair<std::string, std::size_t>> turns_per_dialogue;
    std::vector<std::pair<std::string, std::size_t>> tokens_per_dialogue;
};

CorpusAnalytics compute_corpus_analytics(const std::vector<Dialogue>& dialogues,
                                         EmotionBackend& emotion,
                                         double opening_threshold_z = 0.5);

/// Mean mechanism activation per gold class, raw and log scales.
struct MechanismActivationRow {
    int label = 0;
    std::string mechanism;
    double mean_raw = 0.0;
    double mean_log = 0.0;  // mean of ln(score), scores clamped away from 0
};

std::vector<MechanismActivationRow> mechanism_activations(
    const std::vector<FeatureRow>& rows, const DmrsCatalog& catalog);

/// Writes report.json plus per_class_metrics.csv, confusion.csv,
/// confusion_row_norm.csv and offdiag_counts.csv under `directory`.
void emit_report(const MetricsReport& report, const std::string& directory);

/// Writes sink_analysis.json and sink_analysis.csv.
void emit_report(const SinkAnalysis& sink, const std::string& directory);

/// Writes magnitude_speed.csv (magnitude, speed, turn_gap columns).
void emit_report(const TransitionStats& stats, const std::string& directory);

/// Writes the full corpus-analytics plot-data file set.
void emit_report(const CorpusAnalytics& analytics, const std::string& directory);

void emit_mechanism_activations(const std::vector<MechanismActivationRow>& rows,
                                const std::string& directory);

/// One QC batch as gated: intended class, round, size, scores, verdict.
struct QcBatchRow {
    int label = 0;
    int round = 0;
    std::size_t size = 0;
    std::optional<double> self_bleu;  // absent for single-text batches
    double semantic_adherence = 0.0;
    double kappa = 0.0;
    std::string status;  // accepted | rejected | unevaluable
};

/// Per-class roll-up mirroring the synthetic-quality table: class name,
/// label, N, SB, SA, plus an average row and per-batch verdicts.
struct QcReport {
    struct ClassRow {
        int label = 0;
        std::string class_name;
        std::size_t n = 0;
        std::optional<double> self_bleu;
        std::optional<double> semantic_adherence;
    };
    std::vector<ClassRow> classes;
    std::optional<double> avg_self_bleu;
    std::optional<double> avg_semantic_adherence;
    std::vector<QcBatchRow> batches;
    double kappa_threshold = kDefaultKappaThreshold;
};

QcReport summarize_qc(const std::vector<QcBatchRow>& batches, double kappa_threshold);

/// qc_report.json plus a fixed-width plain-text table (qc_report.txt).
void emit_qc_report(const QcReport& report, const std::string& directory);

}  // namespace psydef
