#include "psydef/augmentor.hpp"

#include <cmath>
#include <sstream>

#include <spdlog/spdlog.h>

namespace psydef {

AugmentationStrategy AugmentationStrategy::parse(const std::string& text) {
    AugmentationStrategy s;
    std::string t = trim(text);
    if (!t.empty() && (t[0] == 'x' || t[0] == 'X')) {
        s.kind = Kind::TimesK;
        try {
            s.value = std::stoi(t.substr(1));
        } catch (const std::exception&) {
            throw ValidationError("bad augmentation strategy \"" + text + "\"");
        }
    } else if (starts_with(t, "cap:")) {
        s.kind = Kind::Cap;
        try {
            s.value = std::stoi(t.substr(4));
        } catch (const std::exception&) {
            throw ValidationError("bad augmentation strategy \"" + text + "\"");
        }
    } else {
        throw ValidationError("bad augmentation strategy \"" + text +
                              "\" (expected xK or cap:N)");
    }
    if (s.value < 1) throw ValidationError("augmentation strategy value must be >= 1");
    return s;
}

std::string AugmentationStrategy::to_string() const {
    if (kind == Kind::TimesK) return "x" + std::to_string(value);
    return "cap:" + std::to_string(value);
}

std::int64_t AugmentationPlan::target_for(int label) const {
    if (label < 0 || label >= kNumLabels) throw ValidationError("label out of range 0..8");
    return synthetic_target[static_cast<std::size_t>(label)];
}

AugmentationPlan plan_augmentation(const ClassCounts& counts, AugmentationStrategy strategy,
                                   CapBasis cap_basis) {
    if (strategy.value < 1) throw ValidationError("augmentation strategy value must be >= 1");
    AugmentationPlan plan;
    plan.strategy = strategy;
    for (int label = 0; label < kNumLabels; ++label) {
        if (label == 7) continue;  // High-Adaptive is never augmented
        const std::int64_t original = counts.at(label);
        std::int64_t target = 0;
        if (strategy.kind == AugmentationStrategy::Kind::TimesK) {
            target = static_cast<std::int64_t>(strategy.value - 1) * original;
        } else if (cap_basis == CapBasis::Total) {
            target = std::max<std::int64_t>(0, strategy.value - original);
        } else {
            target = strategy.value;
        }
        plan.synthetic_target[static_cast<std::size_t>(label)] = target;
    }
    return plan;
}

namespace {

const char* kDefaultGenerationTemplate =
    R"(### TASK: Generate Synthetic Psychological Defense Examples
You are simulating a seeker in a mental health support chat.

### CONTEXTUAL GROUNDING:
STRESSOR: {stressor}
DIALOGUE HISTORY:
{history}

### DEFENSE TO SIMULATE:
Mechanism: {mechanism_name} (Level {level})
Definition: {definition}
Pattern: {pattern_description}

### REFERENCE STYLE (Few-Shot):
1. "{example_1}"
2. "{example_2}"
3. "{example_3}"

### GOAL:
Generate 5 NEW seeker utterances for the NEXT TURN using the {mechanism_name} defense.
Ensure they follow the history and react to the stressor.

### OUTPUT FORMAT:
1 string.
No explanation, no markdown, no code fences.
)";

std::string& mutable_generation_template() {
    static std::string tmpl = kDefaultGenerationTemplate;
    return tmpl;
}

std::string replace_all(std::string text, const std::string& slot, const std::string& value) {
    auto pos = text.find(slot);
    while (pos != std::string::npos) {
        text.replace(pos, slot.size(), value);
        pos = text.find(slot, pos + value.size());
    }
    return text;
}

std::string render_stressor_slot(const StressorRecord& stressor) {
    if (stressor.description.empty()) return stressor.category;
    return stressor.category + ": " + stressor.description;
}

}  // namespace

const std::string& generation_prompt_template() { return mutable_generation_template(); }

void set_generation_prompt_template(const std::string& template_text) {
    for (const char* slot :
         {"{stressor}", "{history}", "{mechanism_name}", "{level}", "{definition}",
          "{pattern_description}", "{example_1}", "{example_2}", "{example_3}"}) {
        if (template_text.find(slot) == std::string::npos)
            throw ValidationError(std::string("generation template missing slot ") + slot);
    }
    mutable_generation_template() = template_text;
}

void load_generation_prompt_template(const std::string& path) {
    set_generation_prompt_template(read_text_file(path));
}

std::string build_generation_prompt(const StressorRecord& stressor, const std::string& history,
                                    const DefenseDefinition& def) {
    if (def.exemplars.size() < 3)
        throw ValidationError("defense definition for \"" + def.mechanism_name +
                              "\" needs at least 3 exemplars, has " +
                              std::to_string(def.exemplars.size()));
    std::string prompt = mutable_generation_template();
    prompt = replace_all(prompt, "{stressor}", render_stressor_slot(stressor));
    prompt = replace_all(prompt, "{history}", history);
    prompt = replace_all(prompt, "{mechanism_name}", def.mechanism_name);
    prompt = replace_all(prompt, "{level}", std::to_string(def.label));
    prompt = replace_all(prompt, "{definition}", def.definition);
    prompt = replace_all(prompt, "{pattern_description}", def.pattern_description);
    prompt = replace_all(prompt, "{example_1}", def.exemplars[0]);
    prompt = replace_all(prompt, "{example_2}", def.exemplars[1]);
    prompt = replace_all(prompt, "{example_3}", def.exemplars[2]);
    return prompt;
}

std::string parse_generation_reply(const std::string& reply) {
    std::istringstream in(reply);
    std::string line;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty()) continue;
        if (starts_with(t, "```")) continue;  // fence lines carry no content
        // strip list numbering: "1." "12)" "-" "*"
        std::size_t i = 0;
        std::size_t digits = 0;
        while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i]))) {
            ++i;
            ++digits;
        }
        if (digits > 0 && i < t.size() && (t[i] == '.' || t[i] == ')')) {
            ++i;
        } else if (digits == 0 && i < t.size() && (t[i] == '-' || t[i] == '*')) {
            ++i;
        } else {
            i = 0;
        }
        std::string candidate = trim(t.substr(i));
        // strip one layer of symmetric quotes
        if (candidate.size() >= 2 && (candidate.front() == '"' || candidate.front() == '\'') &&
            candidate.back() == candidate.front()) {
            candidate = trim(candidate.substr(1, candidate.size() - 2));
        }
        if (!candidate.empty()) return candidate;
    }
    throw ParseError("no utterance text in generation reply", reply);
}

std::vector<SyntheticSample> generate_class_batch(int label, std::int64_t target_count,
                                                  const std::vector<SeedInstance>& seeds,
                                                  const DmrsCatalog& catalog,
                                                  const SupplementaryDefinitions& supplementary,
                                                  GenerationBackend& gateway,
                                                  const GenerationOptions& options) {
    if (label < 0 || label > 8) throw ValidationError("label out of range 0..8");
    if (target_count < 0) throw ValidationError("target count must be >= 0");
    if (target_count == 0) return {};
    if (label == 7)
        throw ValidationError("class 7 (High-Adaptive) is excluded from augmentation");
    if (seeds.empty()) throw ValidationError("generation needs at least one seed instance");

    const auto max_calls = static_cast<std::int64_t>(
        std::ceil(options.overgen_budget * static_cast<double>(target_count)));

    std::vector<SyntheticSample> samples;
    samples.reserve(static_cast<std::size_t>(target_count));
    std::int64_t calls = 0;
    std::int64_t parse_failures = 0;
    std::size_t variant = 0;

    while (static_cast<std::int64_t>(samples.size()) < target_count && calls < max_calls) {
        const SeedInstance& seed = seeds[static_cast<std::size_t>(calls) % seeds.size()];
        DefenseDefinition def = defense_definition_for(catalog, supplementary, label, variant);
        ++variant;
        std::string prompt = build_generation_prompt(seed.stressor, seed.history, def);

        GenerationParams params = options.params;
        if (params.seed) *params.seed += static_cast<std::uint64_t>(calls);
        ++calls;
        std::string reply = gateway.complete(prompt, params);
        try {
            SyntheticSample sample;
            sample.text = parse_generation_reply(reply);
            sample.intended_label = label;
            sample.stressor = seed.stressor;
            sample.source_dialogue_id = seed.source_dialogue_id;
            sample.round = options.round;
            samples.push_back(std::move(sample));
        } catch (const ParseError&) {
            ++parse_failures;
        }
    }

    if (static_cast<std::int64_t>(samples.size()) < target_count) {
        throw BackendError("generation budget exhausted for label " + std::to_string(label) +
                           ": produced " + std::to_string(samples.size()) + " of " +
                           std::to_string(target_count) + " after " + std::to_string(calls) +
                           " calls (" + std::to_string(parse_failures) + " unparseable)");
    }
    if (parse_failures > 0) {
        spdlog::info("label {}: {} unparseable replies absorbed by over-generation budget",
                     label, parse_failures);
    }
    return samples;
}

}  // namespace psydef
