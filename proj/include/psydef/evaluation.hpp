#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psydef/backends.hpp"
#include "psydef/corpus.hpp"

namespace psydef {

struct PerClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t support = 0;
};

using ConfusionMatrix = std::array<std::array<std::int64_t, kNumLabels>, kNumLabels>;

struct MetricsReport {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::array<PerClassMetrics, kNumLabels> per_class{};
    ConfusionMatrix confusion{};                                 // [gold][pred]
    std::array<std::array<double, kNumLabels>, kNumLabels> confusion_row_norm{};
    std::int64_t total = 0;
};

/// Accuracy, macro P/R/F1 (unweighted mean over all 9 labels, absent
/// classes contributing zero), per-class metrics with the 0-convention,
/// raw and row-normalized confusion matrices.
MetricsReport evaluate(std::span<const int> preds, std::span<const int> golds);

struct SinkAnalysis {
    int sink_label = 7;
    std::array<std::int64_t, kNumLabels> absorbed{};   // true class -> count in sink column
    std::array<double, kNumLabels> absorbed_rate{};    // absorbed / class support
    std::int64_t absorbed_total = 0;
    std::int64_t offdiagonal_total = 0;
    double sink_error_share = 0.0;  // absorbed_total / offdiagonal_total
};

/// How much of each class's error mass lands in the sink column.
SinkAnalysis sink_analysis(const ConfusionMatrix& confusion, int sink_label);

struct TrajectoryPoint {
    int turn_index = 0;
    int label = 0;
};

/// Labeled seeker turns of a dialogue, in turn order.
std::vector<TrajectoryPoint> defense_trajectory(const Dialogue& dialogue);

struct TransitionPair {
    double magnitude = 0.0;  // |delta level|, >= 1
    double speed = 0.0;      // levels per turn: magnitude / turn gap
    double turn_gap = 0.0;
};

struct TransitionStats {
    std::vector<TransitionPair> pairs;
    std::optional<double> pearson_r;  // absent with < 2 pairs or zero variance
};

/// Magnitude/speed pairs over consecutive distinct-label trajectory
/// points, plus their Pearson correlation.
TransitionStats transition_stats(const std::vector<std::vector<TrajectoryPoint>>& trajectories);

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

/// Per-seeker-turn inputs for the disclosure index.
struct CdiComponents {
    double token_count = 0.0;
    double i_pronoun_density = 0.0;
    double emotion_intensity = 0.0;
};

struct CdiPoint {
    int turn_index = 0;
    double progress = 0.0;  // in [0,1]
    double cdi = 0.0;       // mean of within-dialogue z-scores
};

/// Composite Disclosure Index per seeker turn: mean z-score (within the
/// dialogue) of token count, I-pronoun density, and emotion intensity.
/// Zero-variance components contribute zero.
std::vector<CdiPoint> cdi_curve(const Dialogue& dialogue,
                                std::span<const CdiComponents> components);

/// Convenience: compute the components with the shared tokenizer and an
/// emotion gateway.
std::vector<CdiPoint> cdi_curve(const Dialogue& dialogue, EmotionBackend& emotion);

/// First seeker turn whose CDI exceeds the threshold, if any.
std::optional<int> opening_up_turn(std::span<const CdiPoint> points, double threshold_z = 0.5);

/// Response-time samples grouped by gold label; labels without latency
/// data map to empty lists.
std::map<int, std::vector<double>> latency_by_label(const std::vector<Dialogue>& dialogues);

}  // namespace psydef
