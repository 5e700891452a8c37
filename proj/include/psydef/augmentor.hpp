#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "psydef/backends.hpp"
#include "psydef/corpus.hpp"
#include "psydef/dmrs_catalog.hpp"
#include "psydef/qc_verdict.hpp"
#include "psydef/stressor.hpp"

namespace psydef {

struct AugmentationStrategy {
    enum class Kind { TimesK, Cap };
    Kind kind = Kind::TimesK;
    int value = 1;  // k for TimesK, n for Cap

    /// Parse "x8" or "cap:500".
    static AugmentationStrategy parse(const std::string& text);
    std::string to_string() const;
};

/// Whether cap(n) bounds the class total (real plus synthetic) or the
/// synthetic count alone.
enum class CapBasis { Total, Synthetic };

struct AugmentationPlan {
    AugmentationStrategy strategy;
    std::array<std::int64_t, kNumLabels> synthetic_target{};

    std::int64_t target_for(int label) const;
};

/// Per-class synthetic targets. Class 7 is never augmented. TimesK brings
/// every other class total to k times its original size; Cap tops classes
/// up to n (on the configured basis).
AugmentationPlan plan_augmentation(const ClassCounts& counts, AugmentationStrategy strategy,
                                   CapBasis cap_basis = CapBasis::Total);

struct SyntheticSample {
    std::string text;
    int intended_label = 0;  // never 7
    StressorRecord stressor;
    std::string source_dialogue_id;
    int round = 0;
    std::optional<QcVerdict> qc;
};

/// The built-in generation template (few-shot, theory-driven). Slots:
/// {stressor}, {history}, {mechanism_name} (twice), {level}, {definition},
/// {pattern_description}, {example_1..3}.
const std::string& generation_prompt_template();
void set_generation_prompt_template(const std::string& template_text);
void load_generation_prompt_template(const std::string& path);

std::string build_generation_prompt(const StressorRecord& stressor, const std::string& history,
                                    const DefenseDefinition& def);

/// Reduce a raw model reply to one utterance: strip code fences, list
/// numbering, surrounding quotes, and whitespace; keep the first
/// non-empty line. Throws ParseError when nothing survives.
std::string parse_generation_reply(const std::string& reply);

/// A real-dialogue anchor for generation: the identified stressor plus the
/// rendered history leading up to it.
struct SeedInstance {
    StressorRecord stressor;
    std::string history;
    std::string source_dialogue_id;
};

struct GenerationOptions {
    GenerationParams params;
    double overgen_budget = 1.5;  // max gateway calls = ceil(budget * target)
    int round = 0;
};

/// Generate exactly `target_count` samples for one class, cycling over
/// seed instances and retrying unparseable replies within the
/// over-generation budget. Fails listing the shortfall when the budget
/// runs out first.
std::vector<SyntheticSample> generate_class_batch(int label, std::int64_t target_count,
                                                  const std::vector<SeedInstance>& seeds,
                                                  const DmrsCatalog& catalog,
                                                  const SupplementaryDefinitions& supplementary,
                                                  GenerationBackend& gateway,
                                                  const GenerationOptions& options = {});

}  // namespace psydef
