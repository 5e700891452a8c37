#include "psydef/reports.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

namespace psydef {

using nlohmann::json;

namespace {

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

std::string fmt(double v) {
    std::ostringstream out;
    out << std::setprecision(12) << v;
    return out.str();
}

void ensure_dir(const std::string& directory) {
    std::filesystem::create_directories(directory);
}

}  // namespace

CorpusAnalytics compute_corpus_analytics(const std::vector<Dialogue>& dialogues,
                                         EmotionBackend& emotion,
                                         double opening_threshold_z) {
    CorpusAnalytics out;
    out.distribution = class_distribution(dialogues);
    std::vector<std::vector<TrajectoryPoint>> all_trajectories;
    for (const Dialogue& d : dialogues) {
        std::vector<TrajectoryPoint> trajectory = defense_trajectory(d);
        all_trajectories.push_back(trajectory);
        out.trajectories.emplace_back(d.id, std::move(trajectory));

        if (d.seeker_turn_indices().size() >= 2) {
            std::vector<CdiPoint> curve = cdi_curve(d, emotion);
            out.opening_up.emplace_back(d.id, opening_up_turn(curve, opening_threshold_z));
            out.cdi_curves.emplace_back(d.id, std::move(curve));
        }

        std::size_t tokens = 0;
        for (const Turn& t : d.turns) tokens += tokenize(t.text).size();
        out.turns_per_dialogue.emplace_back(d.id, d.turns.size());
        out.tokens_per_dialogue.emplace_back(d.id, tokens);
    }
    out.transitions = transition_stats(all_trajectories);
    out.latency = latency_by_label(dialogues);
    return out;
}

std::vector<MechanismActivationRow> mechanism_activations(const std::vector<FeatureRow>& rows,
                                                          const DmrsCatalog& catalog) {
    // mean per (gold label, mechanism) over rows, raw and log scales
    std::array<std::array<double, kProfileDim>, kNumLabels> raw_sum{};
    std::array<std::array<double, kProfileDim>, kNumLabels> log_sum{};
    std::array<std::int64_t, kNumLabels> counts{};
    for (const FeatureRow& row : rows) {
        if (!row.label) continue;
        const auto l = static_cast<std::size_t>(*row.label);
        counts[l] += 1;
        for (std::size_t m = 0; m < kProfileDim; ++m) {
            raw_sum[l][m] += row.profile.scores[m];
            log_sum[l][m] += std::log(std::max(row.profile.scores[m], 1e-9));
        }
    }
    std::vector<MechanismActivationRow> out;
    for (int label = 0; label < kNumLabels; ++label) {
        const auto l = static_cast<std::size_t>(label);
        if (counts[l] == 0) continue;
        for (std::size_t m = 0; m < kProfileDim; ++m) {
            MechanismActivationRow row;
            row.label = label;
            row.mechanism = catalog.mechanisms[m].name;
            row.mean_raw = raw_sum[l][m] / static_cast<double>(counts[l]);
            row.mean_log = log_sum[l][m] / static_cast<double>(counts[l]);
            out.push_back(std::move(row));
        }
    }
    return out;
}

void emit_report(const MetricsReport& report, const std::string& directory) {
    ensure_dir(directory);

    json j;
    j["accuracy"] = report.accuracy;
    j["macro_precision"] = report.macro_precision;
    j["macro_recall"] = report.macro_recall;
    j["macro_f1"] = report.macro_f1;
    j["total"] = report.total;
    json per_class = json::object();
    for (int c = 0; c < kNumLabels; ++c) {
        const auto& m = report.per_class[static_cast<std::size_t>(c)];
        per_class[std::to_string(c)] = {{"precision", m.precision},
                                        {"recall", m.recall},
                                        {"f1", m.f1},
                                        {"support", m.support}};
    }
    j["per_class"] = per_class;
    j["confusion"] = report.confusion;
    j["confusion_row_norm"] = report.confusion_row_norm;
    write_text_file(directory + "/report.json", j.dump(2) + "\n");

    std::ostringstream per_class_csv;
    per_class_csv << "label,class,precision,recall,f1,support\n";
    for (int c = 0; c < kNumLabels; ++c) {
        const auto& m = report.per_class[static_cast<std::size_t>(c)];
        per_class_csv << c << ',' << csv_escape(label_class_name(c)) << ',' << fmt(m.precision)
                      << ',' << fmt(m.recall) << ',' << fmt(m.f1) << ',' << m.support << '\n';
    }
    write_text_file(directory + "/per_class_metrics.csv", per_class_csv.str());

    std::ostringstream confusion_csv;
    confusion_csv << "gold";
    for (int c = 0; c < kNumLabels; ++c) confusion_csv << ",pred_" << c;
    confusion_csv << '\n';
    for (int g = 0; g < kNumLabels; ++g) {
        confusion_csv << g;
        for (int p = 0; p < kNumLabels; ++p) {
            confusion_csv << ','
                          << report.confusion[static_cast<std::size_t>(g)]
                                             [static_cast<std::size_t>(p)];
        }
        confusion_csv << '\n';
    }
    write_text_file(directory + "/confusion.csv", confusion_csv.str());

    std::ostringstream norm_csv;
    norm_csv << "gold";
    for (int c = 0; c < kNumLabels; ++c) norm_csv << ",pred_" << c;
    norm_csv << '\n';
    for (int g = 0; g < kNumLabels; ++g) {
        norm_csv << g;
        for (int p = 0; p < kNumLabels; ++p) {
            norm_csv << ','
                     << fmt(report.confusion_row_norm[static_cast<std::size_t>(g)]
                                                     [static_cast<std::size_t>(p)]);
        }
        norm_csv << '\n';
    }
    write_text_file(directory + "/confusion_row_norm.csv", norm_csv.str());

    std::ostringstream offdiag_csv;
    offdiag_csv << "gold,pred,count\n";
    for (int g = 0; g < kNumLabels; ++g) {
        for (int p = 0; p < kNumLabels; ++p) {
            if (g == p) continue;
            const std::int64_t count =
                report.confusion[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
            if (count > 0) offdiag_csv << g << ',' << p << ',' << count << '\n';
        }
    }
    write_text_file(directory + "/offdiag_counts.csv", offdiag_csv.str());
}

void emit_report(const SinkAnalysis& sink, const std::string& directory) {
    ensure_dir(directory);
    json j;
    j["sink_label"] = sink.sink_label;
    j["absorbed_total"] = sink.absorbed_total;
    j["offdiagonal_total"] = sink.offdiagonal_total;
    j["sink_error_share"] = sink.sink_error_share;
    json per_class = json::object();
    for (int c = 0; c < kNumLabels; ++c) {
        if (c == sink.sink_label) continue;
        per_class[std::to_string(c)] = {
            {"absorbed", sink.absorbed[static_cast<std::size_t>(c)]},
            {"absorbed_rate", sink.absorbed_rate[static_cast<std::size_t>(c)]}};
    }
    j["per_class"] = per_class;
    write_text_file(directory + "/sink_analysis.json", j.dump(2) + "\n");

    std::ostringstream csv;
    csv << "true_class,absorbed_by_sink,absorbed_rate\n";
    for (int c = 0; c < kNumLabels; ++c) {
        if (c == sink.sink_label) continue;
        csv << c << ',' << sink.absorbed[static_cast<std::size_t>(c)] << ','
            << fmt(sink.absorbed_rate[static_cast<std::size_t>(c)]) << '\n';
    }
    write_text_file(directory + "/sink_analysis.csv", csv.str());
}

void emit_report(const TransitionStats& stats, const std::string& directory) {
    ensure_dir(directory);
    std::ostringstream csv;
    csv << "magnitude,speed,turn_gap\n";
    for (const TransitionPair& p : stats.pairs) {
        csv << fmt(p.magnitude) << ',' << fmt(p.speed) << ',' << fmt(p.turn_gap) << '\n';
    }
    write_text_file(directory + "/magnitude_speed.csv", csv.str());

    json j;
    j["pairs"] = stats.pairs.size();
    if (stats.pearson_r) {
        j["pearson_r"] = *stats.pearson_r;
    } else {
        j["pearson_r"] = nullptr;
    }
    write_text_file(directory + "/transition_stats.json", j.dump(2) + "\n");
}

void emit_report(const CorpusAnalytics& analytics, const std::string& directory) {
    ensure_dir(directory);

    std::ostringstream dist;
    dist << "label,class,count\n";
    for (int c = 0; c < kNumLabels; ++c) {
        dist << c << ',' << csv_escape(label_class_name(c)) << ','
             << analytics.distribution.at(c) << '\n';
    }
    write_text_file(directory + "/class_distribution.csv", dist.str());

    std::ostringstream traj;
    traj << "dialogue_id,turn_index,label\n";
    for (const auto& [id, points] : analytics.trajectories) {
        for (const TrajectoryPoint& p : points) {
            traj << csv_escape(id) << ',' << p.turn_index << ',' << p.label << '\n';
        }
    }
    write_text_file(directory + "/trajectories.csv", traj.str());

    emit_report(analytics.transitions, directory);

    std::ostringstream cdi;
    cdi << "dialogue_id,turn_index,progress,cdi\n";
    for (const auto& [id, points] : analytics.cdi_curves) {
        for (const CdiPoint& p : points) {
            cdi << csv_escape(id) << ',' << p.turn_index << ',' << fmt(p.progress) << ','
                << fmt(p.cdi) << '\n';
        }
    }
    write_text_file(directory + "/cdi_curve.csv", cdi.str());

    std::ostringstream opening;
    opening << "dialogue_id,opening_up_turn\n";
    for (const auto& [id, turn] : analytics.opening_up) {
        opening << csv_escape(id) << ',' << (turn ? std::to_string(*turn) : "") << '\n';
    }
    write_text_file(directory + "/opening_up_turns.csv", opening.str());

    std::ostringstream latency;
    latency << "label,response_time_s\n";
    for (const auto& [label, values] : analytics.latency) {
        for (double v : values) latency << label << ',' << fmt(v) << '\n';
    }
    write_text_file(directory + "/latency_by_label.csv", latency.str());

    std::ostringstream turns;
    turns << "dialogue_id,turns\n";
    for (const auto& [id, count] : analytics.turns_per_dialogue) {
        turns << csv_escape(id) << ',' << count << '\n';
    }
    write_text_file(directory + "/turns_per_dialogue.csv", turns.str());

    std::ostringstream tokens;
    tokens << "dialogue_id,tokens\n";
    for (const auto& [id, count] : analytics.tokens_per_dialogue) {
        tokens << csv_escape(id) << ',' << count << '\n';
    }
    write_text_file(directory + "/tokens_per_dialogue.csv", tokens.str());
}

void emit_mechanism_activations(const std::vector<MechanismActivationRow>& rows,
                                const std::string& directory) {
    ensure_dir(directory);
    std::ostringstream csv;
    csv << "label,mechanism,mean_raw,mean_log\n";
    for (const MechanismActivationRow& row : rows) {
        csv << row.label << ',' << csv_escape(row.mechanism) << ',' << fmt(row.mean_raw) << ','
            << fmt(row.mean_log) << '\n';
    }
    write_text_file(directory + "/mechanism_activations.csv", csv.str());
}

QcReport summarize_qc(const std::vector<QcBatchRow>& batches, double kappa_threshold) {
    QcReport report;
    report.kappa_threshold = kappa_threshold;
    report.batches = batches;

    std::map<int, std::vector<const QcBatchRow*>> by_label;
    for (const QcBatchRow& b : batches) by_label[b.label].push_back(&b);

    double sb_sum = 0.0, sa_sum = 0.0;
    std::size_t sb_classes = 0, sa_classes = 0;
    for (const auto& [label, rows] : by_label) {
        QcReport::ClassRow cls;
        cls.label = label;
        cls.class_name = label_class_name(label);
        double sb = 0.0, sa = 0.0;
        std::size_t sb_n = 0;
        for (const QcBatchRow* b : rows) {
            cls.n += b->size;
            sa += b->semantic_adherence * static_cast<double>(b->size);
            if (b->self_bleu) {
                sb += *b->self_bleu * static_cast<double>(b->size);
                sb_n += b->size;
            }
        }
        if (cls.n > 0) {
            cls.semantic_adherence = sa / static_cast<double>(cls.n);
            sa_sum += *cls.semantic_adherence;
            ++sa_classes;
        }
        if (sb_n > 0) {
            cls.self_bleu = sb / static_cast<double>(sb_n);
            sb_sum += *cls.self_bleu;
            ++sb_classes;
        }
        report.classes.push_back(std::move(cls));
    }
    if (sb_classes > 0) report.avg_self_bleu = sb_sum / static_cast<double>(sb_classes);
    if (sa_classes > 0) report.avg_semantic_adherence = sa_sum / static_cast<double>(sa_classes);
    return report;
}

void emit_qc_report(const QcReport& report, const std::string& directory) {
    ensure_dir(directory);

    json j;
    j["kappa_threshold"] = report.kappa_threshold;
    json classes = json::array();
    for (const auto& cls : report.classes) {
        json row = {{"label", cls.label}, {"class", cls.class_name}, {"n", cls.n}};
        row["self_bleu"] = cls.self_bleu ? json(*cls.self_bleu) : json(nullptr);
        row["semantic_adherence"] =
            cls.semantic_adherence ? json(*cls.semantic_adherence) : json(nullptr);
        classes.push_back(std::move(row));
    }
    j["classes"] = classes;
    j["avg_self_bleu"] = report.avg_self_bleu ? json(*report.avg_self_bleu) : json(nullptr);
    j["avg_semantic_adherence"] =
        report.avg_semantic_adherence ? json(*report.avg_semantic_adherence) : json(nullptr);
    json batches = json::array();
    for (const QcBatchRow& b : report.batches) {
        json row = {{"label", b.label},
                    {"round", b.round},
                    {"n", b.size},
                    {"semantic_adherence", b.semantic_adherence},
                    {"kappa", b.kappa},
                    {"status", b.status}};
        row["self_bleu"] = b.self_bleu ? json(*b.self_bleu) : json(nullptr);
        batches.push_back(std::move(row));
    }
    j["batches"] = batches;
    write_text_file(directory + "/qc_report.json", j.dump(2) + "\n");

    std::ostringstream txt;
    txt << "Synthetic data quality per class\n";
    txt << std::left << std::setw(16) << "Class" << std::right << std::setw(6) << "Label"
        << std::setw(8) << "N" << std::setw(9) << "SB" << std::setw(9) << "SA" << '\n';
    txt << std::string(48, '-') << '\n';
    auto num = [](std::optional<double> v) {
        if (!v) return std::string("-");
        std::ostringstream o;
        o << std::fixed << std::setprecision(3) << *v;
        return o.str();
    };
    for (const auto& cls : report.classes) {
        txt << std::left << std::setw(16) << cls.class_name << std::right << std::setw(6)
            << cls.label << std::setw(8) << cls.n << std::setw(9) << num(cls.self_bleu)
            << std::setw(9) << num(cls.semantic_adherence) << '\n';
    }
    txt << std::string(48, '-') << '\n';
    txt << std::left << std::setw(16) << "Avg." << std::right << std::setw(6) << ""
        << std::setw(8) << "" << std::setw(9) << num(report.avg_self_bleu) << std::setw(9)
        << num(report.avg_semantic_adherence) << '\n';
    txt << '\n';
    txt << "Batches (kappa gate, threshold " << std::fixed << std::setprecision(2)
        << report.kappa_threshold << ")\n";
    txt << std::left << std::setw(7) << "Label" << std::setw(7) << "Round" << std::setw(7)
        << "N" << std::setw(9) << "Kappa" << "Status\n";
    for (const QcBatchRow& b : report.batches) {
        std::ostringstream kappa;
        kappa << std::fixed << std::setprecision(3) << b.kappa;
        txt << std::left << std::setw(7) << b.label << std::setw(7) << b.round << std::setw(7)
            << b.size << std::setw(9) << kappa.str() << b.status << '\n';
    }
    write_text_file(directory + "/qc_report.txt", txt.str());
}

}  // namespace psydef
