#pragma once

#include <string>
#include <vector>

#include "psydef/common.hpp"

namespace psydef {

inline constexpr int kNumLevels = 7;
inline constexpr int kNumMechanisms = 30;
inline constexpr int kNumIndicators = 150;

struct DmrsLevel {
    int id = 0;  // 1..7
    std::string name;
};

struct DmrsMechanism {
    int id = 0;
    std::string name;
    int level_id = 0;
    std::string definition;
    std::string pattern_description;
    std::vector<std::string> exemplars;  // at least 3
};

struct DmrsIndicator {
    int id = 0;
    int mechanism_id = 0;
    std::string statement;
};

/// 150 indicators grouped into 30 mechanisms grouped into 7 levels.
/// Cardinalities and cross-references are enforced at load.
struct DmrsCatalog {
    std::vector<DmrsLevel> levels;
    std::vector<DmrsMechanism> mechanisms;
    std::vector<DmrsIndicator> indicators;

    const DmrsLevel& level_by_id(int id) const;
    const DmrsMechanism& mechanism_by_id(int id) const;
    /// Position of a mechanism id in catalog file order (profile axis).
    std::size_t mechanism_position(int mechanism_id) const;
    /// Indicator positions (catalog order) owned by each mechanism position.
    std::vector<std::vector<std::size_t>> indicators_by_mechanism() const;
    std::vector<int> mechanism_ids_for_level(int level_id) const;

    std::uint64_t fingerprint() const;
};

DmrsCatalog parse_dmrs_catalog(const std::string& json_text);
DmrsCatalog load_dmrs_catalog(const std::string& path);

/// The prompt-facing definition block for one target label. Levels 1..7
/// draw from the catalog; labels 0 and 8 carry no clinical defense items
/// and draw from the supplementary (non-clinical) definitions file.
struct DefenseDefinition {
    int label = 0;  // 0..8
    std::string level_name;
    std::string mechanism_name;
    std::string definition;
    std::string pattern_description;
    std::vector<std::string> exemplars;
};

/// Supplementary generation definitions for labels 0 and 8.
struct SupplementaryDefinitions {
    std::vector<DefenseDefinition> entries;

    const DefenseDefinition& for_label(int label) const;
};

SupplementaryDefinitions parse_supplementary_definitions(const std::string& json_text);
SupplementaryDefinitions load_supplementary_definitions(const std::string& path);

/// Definition block for (label, variant). For clinical levels the variant
/// rotates over the level's mechanisms so generation cycles through them.
DefenseDefinition defense_definition_for(const DmrsCatalog& catalog,
                                         const SupplementaryDefinitions& supplementary,
                                         int label, std::size_t variant = 0);

}  // namespace psydef
