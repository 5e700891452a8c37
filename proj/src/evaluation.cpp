#include "psydef/evaluation.hpp"

#include <cmath>

namespace psydef {

MetricsReport evaluate(std::span<const int> preds, std::span<const int> golds) {
    if (preds.empty()) throw ValidationError("evaluate needs non-empty label lists");
    if (preds.size() != golds.size())
        throw ValidationError("preds/golds length mismatch: " + std::to_string(preds.size()) +
                              " vs " + std::to_string(golds.size()));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || preds[i] >= kNumLabels || golds[i] < 0 || golds[i] >= kNumLabels)
            throw ValidationError("label out of range 0..8 at position " + std::to_string(i));
    }

    MetricsReport report;
    report.total = static_cast<std::int64_t>(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        report.confusion[static_cast<std::size_t>(golds[i])]
                        [static_cast<std::size_t>(preds[i])] += 1;
    }

    std::int64_t correct = 0;
    for (int c = 0; c < kNumLabels; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        std::int64_t tp = report.confusion[cc][cc];
        std::int64_t support = 0;
        std::int64_t predicted = 0;
        for (int k = 0; k < kNumLabels; ++k) {
            support += report.confusion[cc][static_cast<std::size_t>(k)];
            predicted += report.confusion[static_cast<std::size_t>(k)][cc];
        }
        correct += tp;

        PerClassMetrics& m = report.per_class[cc];
        m.support = support;
        m.precision = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted)
                                    : 0.0;
        m.recall = support > 0 ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;

        report.macro_precision += m.precision;
        report.macro_recall += m.recall;
        report.macro_f1 += m.f1;

        if (support > 0) {
            for (int k = 0; k < kNumLabels; ++k) {
                report.confusion_row_norm[cc][static_cast<std::size_t>(k)] =
                    static_cast<double>(report.confusion[cc][static_cast<std::size_t>(k)]) /
                    static_cast<double>(support);
            }
        }
    }
    report.macro_precision /= kNumLabels;
    report.macro_recall /= kNumLabels;
    report.macro_f1 /= kNumLabels;
    report.accuracy = static_cast<double>(correct) / static_cast<double>(report.total);
    return report;
}

SinkAnalysis sink_analysis(const ConfusionMatrix& confusion, int sink_label) {
    if (sink_label < 0 || sink_label >= kNumLabels)
        throw ValidationError("sink label out of range 0..8");
    SinkAnalysis out;
    out.sink_label = sink_label;
    const auto sink = static_cast<std::size_t>(sink_label);
    for (int c = 0; c < kNumLabels; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        std::int64_t support = 0;
        for (int k = 0; k < kNumLabels; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            support += confusion[cc][kk];
            if (k != c) out.offdiagonal_total += confusion[cc][kk];
        }
        if (c != sink_label) {
            out.absorbed[cc] = confusion[cc][sink];
            out.absorbed_total += confusion[cc][sink];
            out.absorbed_rate[cc] =
                support > 0 ? static_cast<double>(confusion[cc][sink]) /
                                  static_cast<double>(support)
                            : 0.0;
        }
    }
    out.sink_error_share = out.offdiagonal_total > 0
                               ? static_cast<double>(out.absorbed_total) /
                                     static_cast<double>(out.offdiagonal_total)
                               : 0.0;
    return out;
}

std::vector<TrajectoryPoint> defense_trajectory(const Dialogue& dialogue) {
    std::vector<TrajectoryPoint> points;
    for (const Turn& t : dialogue.turns) {
        if (t.speaker == Speaker::Seeker && t.label.has_value()) {
            points.push_back({t.index, *t.label});
        }
    }
    return points;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) return std::nullopt;
    const double n = static_cast<double>(x.size());
    double mean_x = 0.0, mean_y = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mean_x += x[i];
        mean_y += y[i];
    }
    mean_x /= n;
    mean_y /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mean_x;
        const double dy = y[i] - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

TransitionStats transition_stats(
    const std::vector<std::vector<TrajectoryPoint>>& trajectories) {
    TransitionStats stats;
    for (const auto& trajectory : trajectories) {
        for (std::size_t i = 1; i < trajectory.size(); ++i) {
            const TrajectoryPoint& prev = trajectory[i - 1];
            const TrajectoryPoint& curr = trajectory[i];
            if (curr.label == prev.label) continue;
            TransitionPair pair;
            pair.magnitude = std::abs(static_cast<double>(curr.label - prev.label));
            pair.turn_gap = static_cast<double>(curr.turn_index - prev.turn_index);
            if (pair.turn_gap <= 0.0) continue;  // malformed ordering, skip
            pair.speed = pair.magnitude / pair.turn_gap;
            stats.pairs.push_back(pair);
        }
    }
    std::vector<double> magnitudes, speeds;
    magnitudes.reserve(stats.pairs.size());
    speeds.reserve(stats.pairs.size());
    for (const TransitionPair& p : stats.pairs) {
        magnitudes.push_back(p.magnitude);
        speeds.push_back(p.speed);
    }
    stats.pearson_r = pearson(magnitudes, speeds);
    return stats;
}

std::vector<CdiPoint> cdi_curve(const Dialogue& dialogue,
                                std::span<const CdiComponents> components) {
    std::vector<int> seeker_turns = dialogue.seeker_turn_indices();
    if (seeker_turns.size() < 2)
        throw ValidationError("CDI needs at least 2 seeker turns (dialogue \"" + dialogue.id +
                              "\")");
    if (components.size() != seeker_turns.size())
        throw ValidationError("CDI components must align with seeker turns");

    const std::size_t m = components.size();
    auto z_scores = [m](auto getter, std::span<const CdiComponents> values) {
        std::vector<double> raw(m);
        double mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            raw[i] = getter(values[i]);
            mean += raw[i];
        }
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (double v : raw) var += (v - mean) * (v - mean);
        var /= static_cast<double>(m);
        const double sd = std::sqrt(var);
        std::vector<double> z(m, 0.0);
        // identical inputs leave sd at rounding-noise scale; treat that
        // as zero variance rather than dividing by it
        if (sd > 1e-12 * (1.0 + std::abs(mean))) {
            for (std::size_t i = 0; i < m; ++i) z[i] = (raw[i] - mean) / sd;
        }
        return z;
    };

    const auto z_tokens =
        z_scores([](const CdiComponents& c) { return c.token_count; }, components);
    const auto z_pronoun =
        z_scores([](const CdiComponents& c) { return c.i_pronoun_density; }, components);
    const auto z_emotion =
        z_scores([](const CdiComponents& c) { return c.emotion_intensity; }, components);

    std::vector<CdiPoint> points(m);
    for (std::size_t i = 0; i < m; ++i) {
        points[i].turn_index = seeker_turns[i];
        points[i].progress = static_cast<double>(i) / static_cast<double>(m - 1);
        points[i].cdi = (z_tokens[i] + z_pronoun[i] + z_emotion[i]) / 3.0;
    }
    return points;
}

std::vector<CdiPoint> cdi_curve(const Dialogue& dialogue, EmotionBackend& emotion) {
    std::vector<CdiComponents> components;
    for (const Turn& t : dialogue.turns) {
        if (t.speaker != Speaker::Seeker) continue;
        CdiComponents c;
        const std::vector<std::string> tokens = tokenize(t.text);
        c.token_count = static_cast<double>(tokens.size());
        double pronouns = 0.0;
        for (const std::string& tok : tokens) {
            if (tok == "i" || tok == "me" || tok == "my" || tok == "mine" ||
                tok == "myself" || tok == "im" || tok == "ive") {
                pronouns += 1.0;
            }
        }
        c.i_pronoun_density = tokens.empty() ? 0.0 : pronouns / c.token_count;
        if (!trim(t.text).empty()) {
            EmotionResult e = emotion.score(t.text);
            c.emotion_intensity = e.is_neutral ? 0.0 : e.confidence;
        }
        components.push_back(c);
    }
    return cdi_curve(dialogue, components);
}

std::optional<int> opening_up_turn(std::span<const CdiPoint> points, double threshold_z) {
    for (const CdiPoint& p : points) {
        if (p.cdi > threshold_z) return p.turn_index;
    }
    return std::nullopt;
}

std::map<int, std::vector<double>> latency_by_label(const std::vector<Dialogue>& dialogues) {
    std::map<int, std::vector<double>> out;
    for (int label = 0; label < kNumLabels; ++label) out[label] = {};
    for (const Dialogue& d : dialogues) {
        for (const Turn& t : d.turns) {
            if (t.speaker == Speaker::Seeker && t.label && t.response_time_s) {
                out[*t.label].push_back(*t.response_time_s);
            }
        }
    }
    return out;
}

}  // namespace psydef
