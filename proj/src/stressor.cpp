#include "psydef/stressor.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace psydef {

namespace {

const char* kDefaultStressorTemplate =
    R"(### TASK: Clinical Stressor Identification
Identify the "Salient Stressor" causing psychological conflict in the Target Utterance.

### DIALOGUE CONTEXT:
{history}

### TARGET UTTERANCE:
"{target_turn}"

### OUTPUT FORMAT:
1. Stressor Category: (e.g., Interpersonal Conflict, Self-Esteem Threat, External Crisis)
2. Description: (One sentence explaining the threat)
)";

std::string& mutable_template() {
    static std::string tmpl = kDefaultStressorTemplate;
    return tmpl;
}

std::string replace_slot(std::string text, const std::string& slot, const std::string& value) {
    auto pos = text.find(slot);
    while (pos != std::string::npos) {
        text.replace(pos, slot.size(), value);
        pos = text.find(slot, pos + value.size());
    }
    return text;
}

/// Matches "<label>:" on a line, skipping leading whitespace, list
/// numbering ("1." / "2)") and markdown bullets. Returns text after the
/// colon, trimmed.
std::optional<std::string> labeled_line(const std::string& reply, const std::string& label) {
    std::istringstream in(reply);
    std::string line;
    while (std::getline(in, line)) {
        std::size_t i = 0;
        while (i < line.size() && (std::isspace(static_cast<unsigned char>(line[i])) ||
                                   line[i] == '-' || line[i] == '*')) {
            ++i;
        }
        while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
        if (i < line.size() && (line[i] == '.' || line[i] == ')')) ++i;
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (line.compare(i, label.size(), label) == 0) {
            std::size_t after = i + label.size();
            while (after < line.size() &&
                   std::isspace(static_cast<unsigned char>(line[after]))) {
                ++after;
            }
            if (after < line.size() && line[after] == ':') {
                return trim(line.substr(after + 1));
            }
        }
    }
    return std::nullopt;
}

}  // namespace

const std::string& stressor_prompt_template() { return mutable_template(); }

void set_stressor_prompt_template(const std::string& template_text) {
    if (template_text.find("{history}") == std::string::npos ||
        template_text.find("{target_turn}") == std::string::npos) {
        throw ValidationError("stressor template must contain {history} and {target_turn}");
    }
    mutable_template() = template_text;
}

void load_stressor_prompt_template(const std::string& path) {
    set_stressor_prompt_template(read_text_file(path));
}

std::string build_stressor_prompt(const std::string& history, const std::string& target_turn) {
    if (trim(target_turn).empty()) throw ValidationError("target turn must be non-empty");
    std::string prompt = replace_slot(mutable_template(), "{history}", history);
    return replace_slot(prompt, "{target_turn}", target_turn);
}

ParsedStressorReply parse_stressor_reply(const std::string& reply) {
    auto category = labeled_line(reply, "Stressor Category");
    auto description = labeled_line(reply, "Description");
    if (!category || trim(*category).empty()) {
        throw ParseError("no \"Stressor Category:\" line in reply", reply);
    }
    ParsedStressorReply parsed;
    parsed.category = *category;
    parsed.description = description.value_or("");
    return parsed;
}

std::string render_history(const Dialogue& dialogue, int turn_index, int max_turns) {
    if (turn_index < 0 || turn_index > static_cast<int>(dialogue.turns.size()))
        throw ValidationError("turn index out of range for dialogue \"" + dialogue.id + "\"");
    int first = std::max(0, turn_index - max_turns);
    std::ostringstream out;
    for (int i = first; i < turn_index; ++i) {
        const Turn& t = dialogue.turns[static_cast<std::size_t>(i)];
        if (i > first) out << '\n';
        out << (t.speaker == Speaker::Seeker ? "Seeker: " : "Supporter: ") << t.text;
    }
    return out.str();
}

StressorRecord identify_stressor(const Dialogue& dialogue, int turn_index,
                                 GenerationBackend& gateway, const StressorOptions& options) {
    if (turn_index < 0 || turn_index >= static_cast<int>(dialogue.turns.size()))
        throw ValidationError("turn index out of range for dialogue \"" + dialogue.id + "\"");
    const Turn& turn = dialogue.turns[static_cast<std::size_t>(turn_index)];
    if (turn.speaker != Speaker::Seeker)
        throw ValidationError("stressor target must be a seeker turn (dialogue \"" +
                              dialogue.id + "\" turn " + std::to_string(turn_index) + ")");

    const std::string history = render_history(dialogue, turn_index, options.history_turns);
    const std::string prompt = build_stressor_prompt(history, turn.text);

    StressorRecord record;
    record.dialogue_id = dialogue.id;
    record.turn_index = turn_index;

    GenerationParams params = options.params;
    for (int attempt = 0; attempt <= options.parse_retries; ++attempt) {
        std::string reply = gateway.complete(prompt, params);
        try {
            ParsedStressorReply parsed = parse_stressor_reply(reply);
            record.category = parsed.category;
            record.description = parsed.description;
            return record;
        } catch (const ParseError&) {
            // re-ask with a shifted seed; fall through to the fallback
            // when the budget is gone
            if (params.seed) *params.seed += 1;
        }
    }
    spdlog::warn("stressor reply unparseable for dialogue \"{}\" turn {}; using fallback",
                 dialogue.id, turn_index);
    record.category = "Unspecified";
    record.description = "";
    return record;
}

std::string serialize_stressor_record(const StressorRecord& record) {
    nlohmann::json j = {{"dialogue_id", record.dialogue_id},
                        {"turn_index", record.turn_index},
                        {"category", record.category},
                        {"description", record.description}};
    return j.dump();
}

StressorRecord parse_stressor_record(const std::string& json_line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_line);
        StressorRecord record;
        record.dialogue_id = j.at("dialogue_id").get<std::string>();
        record.turn_index = j.at("turn_index").get<int>();
        record.category = j.at("category").get<std::string>();
        record.description = j.value("description", std::string{});
        return record;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad stressor record: ") + e.what());
    }
}

void save_stressor_records(const std::vector<StressorRecord>& records,
                           const std::string& path) {
    std::ostringstream out;
    for (const StressorRecord& r : records) out << serialize_stressor_record(r) << '\n';
    write_text_file(path, out.str());
}

std::vector<StressorRecord> load_stressor_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("stressor records file not found: " + path);
    std::vector<StressorRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            records.push_back(parse_stressor_record(line));
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace psydef
