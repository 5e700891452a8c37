#include "psydef/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace psydef {

using nlohmann::json;

namespace {

const std::unordered_set<std::string>& first_person_tokens() {
    // post-tokenization forms: "I'm" -> "im", "I've" -> "ive"
    static const std::unordered_set<std::string> tokens = {"i",  "me",     "my", "mine",
                                                           "myself", "im", "ive"};
    return tokens;
}

const std::unordered_set<std::string>& filler_phrases() {
    static const std::unordered_set<std::string> phrases = {
        "ok",     "okay", "yeah",  "yes",   "no",   "sure",  "right", "fine",
        "thanks", "thank you",     "i see", "hmm",  "oh",    "mhm",   "good"};
    return phrases;
}

}  // namespace

HeuristicFeatures extract_heuristics(const std::string& text, const EmotionResult& emotion,
                                     const HeuristicConfig& config) {
    const std::vector<std::string> tokens = tokenize(text);
    const auto count = static_cast<double>(tokens.size());

    std::unordered_set<std::string> insight(config.insight_lexicon.begin(),
                                            config.insight_lexicon.end());
    double pronoun_hits = 0.0;
    double insight_hits = 0.0;
    for (const std::string& tok : tokens) {
        if (first_person_tokens().count(tok)) pronoun_hits += 1.0;
        if (insight.count(tok)) insight_hits += 1.0;
    }

    HeuristicFeatures f;
    f.values[0] = std::min(count, 64.0) / 64.0;
    f.values[1] = count > 0 ? pronoun_hits / count : 0.0;
    f.values[2] = count > 0 ? insight_hits / count : 0.0;

    std::string normalized = lowercase_ascii(normalize_whitespace(text));
    // strip trailing punctuation for whole-text filler matching
    while (!normalized.empty() &&
           std::ispunct(static_cast<unsigned char>(normalized.back()))) {
        normalized.pop_back();
    }
    const bool phatic = tokens.size() <= static_cast<std::size_t>(config.phatic_max_tokens) ||
                        filler_phrases().count(normalized) > 0;
    f.values[3] = phatic ? 1.0 : 0.0;

    const bool mature = static_cast<int>(tokens.size()) > config.mature_min_tokens &&
                        f.values[2] >= config.theta_insight &&
                        f.values[1] >= config.theta_pronoun;
    f.values[4] = mature ? 1.0 : 0.0;

    f.values[5] = emotion.is_neutral ? 0.0 : 1.0;
    f.values[6] = emotion.is_neutral ? 0.0 : std::clamp(emotion.confidence, 0.0, 1.0);
    return f;
}

double DefenseProfile::sum() const {
    return std::accumulate(scores.begin(), scores.end(), 0.0);
}

std::vector<double> score_indicators(const std::string& text, const DmrsCatalog& catalog,
                                     NliBackend& nli) {
    std::vector<std::string> hypotheses;
    hypotheses.reserve(catalog.indicators.size());
    for (const DmrsIndicator& ind : catalog.indicators) hypotheses.push_back(ind.statement);
    std::vector<double> scores = nli.entail_many(text, hypotheses);
    if (scores.size() != catalog.indicators.size())
        throw BackendError("nli returned " + std::to_string(scores.size()) +
                           " scores for " + std::to_string(catalog.indicators.size()) +
                           " indicators");
    return scores;
}

DefenseProfile aggregate_mechanisms(std::span<const double> indicator_scores,
                                    const DmrsCatalog& catalog) {
    if (indicator_scores.size() != catalog.indicators.size())
        throw ValidationError("indicator score vector length " +
                              std::to_string(indicator_scores.size()) +
                              " does not match catalog (" +
                              std::to_string(catalog.indicators.size()) + ")");
    const auto groups = catalog.indicators_by_mechanism();
    if (groups.size() != kProfileDim)
        throw ValidationError("catalog must define exactly 30 mechanisms");

    DefenseProfile profile;
    double total = 0.0;
    for (std::size_t m = 0; m < groups.size(); ++m) {
        double mean = 0.0;
        if (!groups[m].empty()) {
            for (std::size_t j : groups[m]) mean += indicator_scores[j];
            mean /= static_cast<double>(groups[m].size());
        }
        profile.scores[m] = mean;
        total += mean;
    }
    if (total <= 0.0) {
        profile.scores.fill(1.0 / static_cast<double>(kProfileDim));
    } else {
        for (double& s : profile.scores) s /= total;
    }
    return profile;
}

int dmrs_level(const DefenseProfile& profile, const DmrsCatalog& catalog) {
    std::array<double, kNumLevels + 1> level_mass{};  // index by level id 1..7
    for (std::size_t m = 0; m < catalog.mechanisms.size(); ++m) {
        level_mass[static_cast<std::size_t>(catalog.mechanisms[m].level_id)] +=
            profile.scores[m];
    }
    int best = 1;
    for (int level = 2; level <= kNumLevels; ++level) {
        if (level_mass[static_cast<std::size_t>(level)] >
            level_mass[static_cast<std::size_t>(best)]) {
            best = level;
        }
    }
    return best;
}

std::string format_input_text(const std::string& stressor_category,
                              const std::string& turn_text) {
    return "[Stressor:" + stressor_category + "|Turn:" + turn_text + "]";
}

FeatureRow build_feature_row_text(const std::string& text, std::optional<int> label,
                                  const StressorRecord& stressor, const DmrsCatalog& catalog,
                                  NliBackend& nli, EmotionBackend& emotion,
                                  const HeuristicConfig& config) {
    if (trim(stressor.category).empty())
        throw ValidationError("feature row needs a stressor category (use \"Unspecified\")");
    FeatureRow row;
    row.input_text = format_input_text(stressor.category, text);
    row.heuristics = extract_heuristics(text, emotion.score(text), config);
    row.profile = aggregate_mechanisms(score_indicators(text, catalog, nli), catalog);
    row.label = label;
    return row;
}

FeatureRow build_feature_row(const Turn& turn, const StressorRecord& stressor,
                             const DmrsCatalog& catalog, NliBackend& nli,
                             EmotionBackend& emotion, const HeuristicConfig& config) {
    return build_feature_row_text(turn.text, turn.label, stressor, catalog, nli, emotion,
                                  config);
}

std::string serialize_feature_row(const FeatureRow& row) {
    json record;
    record["input_text"] = row.input_text;
    record["heuristics"] = std::vector<double>(row.heuristics.values.begin(),
                                               row.heuristics.values.end());
    record["profile"] = std::vector<double>(row.profile.scores.begin(),
                                            row.profile.scores.end());
    if (row.label) record["label"] = *row.label;
    return record.dump();
}

FeatureRow parse_feature_row(const std::string& json_line) {
    json record;
    try {
        record = json::parse(json_line);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("feature row is not valid JSON: ") + e.what());
    }
    FeatureRow row;
    try {
        row.input_text = record.at("input_text").get<std::string>();
        auto heur = record.at("heuristics").get<std::vector<double>>();
        auto prof = record.at("profile").get<std::vector<double>>();
        if (heur.size() != kHeuristicDim)
            throw ValidationError("heuristics must have 7 entries");
        if (prof.size() != kProfileDim)
            throw ValidationError("profile must have 30 entries");
        std::copy(heur.begin(), heur.end(), row.heuristics.values.begin());
        std::copy(prof.begin(), prof.end(), row.profile.scores.begin());
        if (record.contains("label") && !record["label"].is_null())
            row.label = record["label"].get<int>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("feature row field error: ") + e.what());
    }
    return row;
}

void save_feature_rows(const std::vector<FeatureRow>& rows, const std::string& path) {
    std::ostringstream out;
    for (const FeatureRow& row : rows) out << serialize_feature_row(row) << '\n';
    write_text_file(path, out.str());
}

std::vector<FeatureRow> load_feature_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("feature rows file not found: " + path);
    std::vector<FeatureRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            rows.push_back(parse_feature_row(line));
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return rows;
}

}  // namespace psydef
