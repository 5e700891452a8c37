#include "psydef/quality.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace psydef {

namespace {

using NgramCounts = std::unordered_map<std::string, int>;

NgramCounts ngram_counts(const std::vector<std::string>& tokens, int n) {
    NgramCounts counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
        std::string key;
        for (int k = 0; k < n; ++k) {
            if (k) key.push_back('\x1f');
            key += tokens[i + static_cast<std::size_t>(k)];
        }
        counts[key] += 1;
    }
    return counts;
}

/// BLEU of one hypothesis against a reference pool, corpus formula with
/// add-one smoothing on zero-count orders n >= 2.
double bleu_against(const std::vector<std::string>& hyp,
                    const std::vector<const std::vector<std::string>*>& refs, int max_n) {
    const auto hyp_len = static_cast<int>(hyp.size());
    if (hyp_len == 0) return 0.0;

    // closest reference length; ties resolved toward the shorter
    int best_ref_len = 0;
    long best_diff = -1;
    for (const auto* ref : refs) {
        const auto ref_len = static_cast<int>(ref->size());
        long diff = std::labs(static_cast<long>(ref_len) - hyp_len);
        if (best_diff < 0 || diff < best_diff || (diff == best_diff && ref_len < best_ref_len)) {
            best_diff = diff;
            best_ref_len = ref_len;
        }
    }

    double log_precision_sum = 0.0;
    int orders_used = 0;
    for (int n = 1; n <= max_n; ++n) {
        NgramCounts hyp_counts = ngram_counts(hyp, n);
        const int total = std::max(0, hyp_len - n + 1);
        if (total == 0) break;  // shorter hypotheses contribute fewer orders

        NgramCounts max_ref_counts;
        for (const auto* ref : refs) {
            for (const auto& [gram, count] : ngram_counts(*ref, n)) {
                auto& best = max_ref_counts[gram];
                best = std::max(best, count);
            }
        }
        long matched = 0;
        for (const auto& [gram, count] : hyp_counts) {
            auto it = max_ref_counts.find(gram);
            if (it != max_ref_counts.end()) matched += std::min(count, it->second);
        }

        double p;
        if (matched == 0 && n >= 2) {
            p = 1.0 / (static_cast<double>(total) + 1.0);  // add-one smoothing
        } else {
            p = static_cast<double>(matched) / static_cast<double>(total);
        }
        if (p <= 0.0) return 0.0;  // unigram miss: no lexical overlap at all
        log_precision_sum += std::log(p);
        ++orders_used;
    }
    if (orders_used == 0) return 0.0;

    double brevity = 1.0;
    if (hyp_len < best_ref_len) {
        brevity = std::exp(1.0 - static_cast<double>(best_ref_len) / hyp_len);
    }
    return brevity * std::exp(log_precision_sum / orders_used);
}

}  // namespace

double self_bleu(std::span<const std::string> texts, int max_n) {
    if (texts.size() < 2) throw ValidationError("self-BLEU needs at least 2 texts");
    if (max_n < 1) throw ValidationError("max_n must be >= 1");

    std::vector<std::vector<std::string>> tokenized;
    tokenized.reserve(texts.size());
    for (const std::string& t : texts) tokenized.push_back(tokenize(t));

    double sum = 0.0;
    for (std::size_t i = 0; i < tokenized.size(); ++i) {
        std::vector<const std::vector<std::string>*> refs;
        refs.reserve(tokenized.size() - 1);
        for (std::size_t j = 0; j < tokenized.size(); ++j) {
            if (j != i) refs.push_back(&tokenized[j]);
        }
        sum += bleu_against(tokenized[i], refs, max_n);
    }
    return sum / static_cast<double>(tokenized.size());
}

const char* kDefaultAdherenceHypothesisTemplate =
    "This message shows {mechanism_name} ({level_name}) defensive functioning: {definition}";

std::string render_adherence_hypothesis(const DefenseDefinition& def,
                                        const std::string& hypothesis_template) {
    if (trim(def.definition).empty())
        throw ValidationError("defense definition text is empty");
    std::string out = hypothesis_template;
    auto substitute = [&out](const std::string& slot, const std::string& value) {
        auto pos = out.find(slot);
        while (pos != std::string::npos) {
            out.replace(pos, slot.size(), value);
            pos = out.find(slot, pos + value.size());
        }
    };
    substitute("{mechanism_name}", def.mechanism_name);
    substitute("{level_name}", def.level_name);
    substitute("{definition}", def.definition);
    return out;
}

double semantic_adherence(std::span<const std::string> texts, const DefenseDefinition& def,
                          NliBackend& nli, const std::string& hypothesis_template) {
    if (texts.empty()) throw ValidationError("semantic adherence needs at least one text");
    const std::string hypothesis = render_adherence_hypothesis(def, hypothesis_template);
    double sum = 0.0;
    for (const std::string& text : texts) sum += nli.entail(text, hypothesis);
    return sum / static_cast<double>(texts.size());
}

double cohens_kappa(std::span<const int> a, std::span<const int> b) {
    if (a.empty()) throw ValidationError("kappa needs non-empty label lists");
    if (a.size() != b.size())
        throw ValidationError("kappa label lists differ in length: " + std::to_string(a.size()) +
                              " vs " + std::to_string(b.size()));

    const double n = static_cast<double>(a.size());
    std::map<int, double> marginal_a;
    std::map<int, double> marginal_b;
    double agreements = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        marginal_a[a[i]] += 1.0;
        marginal_b[b[i]] += 1.0;
        if (a[i] == b[i]) agreements += 1.0;
    }
    const double p_o = agreements / n;
    double p_e = 0.0;
    for (const auto& [label, count_a] : marginal_a) {
        auto it = marginal_b.find(label);
        if (it != marginal_b.end()) p_e += (count_a / n) * (it->second / n);
    }
    if (std::abs(1.0 - p_e) < 1e-12) {
        // both raters constant on the same label: perfect agreement
        return 1.0;
    }
    return (p_o - p_e) / (1.0 - p_e);
}

GateResult kappa_gate(std::vector<SyntheticSample>& batch, const Annotator& annotator,
                      double threshold, double self_bleu_score, double adherence_score) {
    if (batch.empty()) throw ValidationError("kappa gate needs a non-empty batch");

    GateResult result;
    std::vector<int> intended;
    std::vector<int> annotated;
    intended.reserve(batch.size());
    annotated.reserve(batch.size());
    for (const SyntheticSample& sample : batch) {
        std::optional<int> label;
        try {
            label = annotator(sample);
        } catch (const std::exception& e) {
            spdlog::warn("annotator failed on a sample (label {}): {}", sample.intended_label,
                         e.what());
            label = std::nullopt;
        }
        if (!label || *label < 0 || *label > 8) {
            result.status = GateStatus::Unevaluable;
            return result;
        }
        intended.push_back(sample.intended_label);
        annotated.push_back(*label);
    }

    QcVerdict verdict;
    verdict.self_bleu = self_bleu_score;
    verdict.semantic_adherence = adherence_score;
    verdict.kappa = cohens_kappa(intended, annotated);
    verdict.accepted = verdict.kappa >= threshold;

    for (SyntheticSample& sample : batch) sample.qc = verdict;
    result.status = verdict.accepted ? GateStatus::Accepted : GateStatus::Rejected;
    result.verdict = verdict;
    result.annotator_labels = std::move(annotated);
    return result;
}

std::string serialize_synthetic_sample(const SyntheticSample& sample) {
    nlohmann::json j = {{"text", sample.text},
                        {"intended_label", sample.intended_label},
                        {"stressor",
                         {{"category", sample.stressor.category},
                          {"description", sample.stressor.description},
                          {"dialogue_id", sample.stressor.dialogue_id},
                          {"turn_index", sample.stressor.turn_index}}},
                        {"source_dialogue_id", sample.source_dialogue_id},
                        {"round", sample.round}};
    if (sample.qc) {
        j["qc"] = {{"self_bleu", sample.qc->self_bleu},
                   {"semantic_adherence", sample.qc->semantic_adherence},
                   {"kappa", sample.qc->kappa},
                   {"accepted", sample.qc->accepted}};
    }
    return j.dump();
}

SyntheticSample parse_synthetic_sample(const std::string& json_line) {
    try {
        nlohmann::json j = nlohmann::json::parse(json_line);
        SyntheticSample s;
        s.text = j.at("text").get<std::string>();
        s.intended_label = j.at("intended_label").get<int>();
        const nlohmann::json& st = j.at("stressor");
        s.stressor.category = st.at("category").get<std::string>();
        s.stressor.description = st.value("description", std::string{});
        s.stressor.dialogue_id = st.value("dialogue_id", std::string{});
        s.stressor.turn_index = st.value("turn_index", 0);
        s.source_dialogue_id = j.value("source_dialogue_id", std::string{});
        s.round = j.value("round", 0);
        if (j.contains("qc") && !j["qc"].is_null()) {
            QcVerdict v;
            v.self_bleu = j["qc"].value("self_bleu", 0.0);
            v.semantic_adherence = j["qc"].value("semantic_adherence", 0.0);
            v.kappa = j["qc"].value("kappa", 0.0);
            v.accepted = j["qc"].value("accepted", false);
            s.qc = v;
        }
        if (s.text.empty()) throw ValidationError("synthetic sample has empty text");
        if (s.intended_label < 0 || s.intended_label > 8 || s.intended_label == 7)
            throw ValidationError("synthetic sample label must be 0..8 and never 7");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad synthetic sample record: ") + e.what());
    }
}

void save_synthetic_samples(const std::vector<SyntheticSample>& samples,
                            const std::string& path) {
    std::ostringstream out;
    for (const SyntheticSample& s : samples) out << serialize_synthetic_sample(s) << '\n';
    write_text_file(path, out.str());
}

std::vector<SyntheticSample> load_synthetic_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("synthetic samples file not found: " + path);
    std::vector<SyntheticSample> samples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            samples.push_back(parse_synthetic_sample(line));
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return samples;
}

}  // namespace psydef
