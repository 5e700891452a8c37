#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "psydef/backends.hpp"
#include "psydef/corpus.hpp"
#include "psydef/dmrs_catalog.hpp"
#include "psydef/stressor.hpp"

namespace psydef {

inline constexpr std::size_t kHeuristicDim = 7;
inline constexpr std::size_t kProfileDim = 30;

/// [length_norm, i_pronoun_density, insight_density, phatic_flag,
///  mature_coping_flag, emotion_nonneutral_flag, emotion_intensity]
struct HeuristicFeatures {
    std::array<double, kHeuristicDim> values{};

    double length_norm() const { return values[0]; }
    double i_pronoun_density() const { return values[1]; }
    double insight_density() const { return values[2]; }
    double phatic_flag() const { return values[3]; }
    double mature_coping_flag() const { return values[4]; }
    double emotion_nonneutral_flag() const { return values[5]; }
    double emotion_intensity() const { return values[6]; }
};

struct HeuristicConfig {
    double theta_insight = 0.08;   // insight density for the mature-coping flag
    double theta_pronoun = 0.06;   // I-pronoun density for the mature-coping flag
    int mature_min_tokens = 12;    // "length > 12"
    int phatic_max_tokens = 3;
    std::vector<std::string> insight_lexicon = {"realize", "understand", "reason",
                                                "because", "think",      "know",
                                                "learn",   "reflect",    "aware",
                                                "meant"};
};

HeuristicFeatures extract_heuristics(const std::string& text, const EmotionResult& emotion,
                                     const HeuristicConfig& config = {});

/// Mechanism-score vector aligned with catalog mechanism order, L1
/// normalized (uniform when the raw indicator mass is all zero).
struct DefenseProfile {
    std::array<double, kProfileDim> scores{};

    double sum() const;
};

/// One entailment probability per DMRS indicator, premise = text,
/// catalog indicator order.
std::vector<double> score_indicators(const std::string& text, const DmrsCatalog& catalog,
                                     NliBackend& nli);

/// Group indicator probabilities by mechanism (mean), then L1 normalize.
DefenseProfile aggregate_mechanisms(std::span<const double> indicator_scores,
                                    const DmrsCatalog& catalog);

/// Level whose mechanisms carry the most profile mass; ties break toward
/// the lowest level id.
int dmrs_level(const DefenseProfile& profile, const DmrsCatalog& catalog);

struct FeatureRow {
    std::string input_text;  // "[Stressor:S|Turn:T]"
    HeuristicFeatures heuristics;
    DefenseProfile profile;
    std::optional<int> label;
};

std::string format_input_text(const std::string& stressor_category, const std::string& turn_text);

FeatureRow build_feature_row(const Turn& turn, const StressorRecord& stressor,
                             const DmrsCatalog& catalog, NliBackend& nli,
                             EmotionBackend& emotion, const HeuristicConfig& config = {});

/// Row construction for a bare text (synthetic samples).
FeatureRow build_feature_row_text(const std::string& text, std::optional<int> label,
                                  const StressorRecord& stressor, const DmrsCatalog& catalog,
                                  NliBackend& nli, EmotionBackend& emotion,
                                  const HeuristicConfig& config = {});

std::string serialize_feature_row(const FeatureRow& row);
FeatureRow parse_feature_row(const std::string& json_line);
void save_feature_rows(const std::vector<FeatureRow>& rows, const std::string& path);
std::vector<FeatureRow> load_feature_rows(const std::string& path);

}  // namespace psydef
