#pragma once

#include <optional>
#include <string>

#include "psydef/backends.hpp"
#include "psydef/corpus.hpp"

namespace psydef {

struct StressorRecord {
    std::string category;     // e.g. "Interpersonal Conflict"
    std::string description;  // one sentence
    std::string dialogue_id;
    int turn_index = 0;
};

/// The built-in stressor-identification template. `{history}` and
/// `{target_turn}` are the only slots.
const std::string& stressor_prompt_template();

/// Overrides the template from a text file (must contain both slots).
void set_stressor_prompt_template(const std::string& template_text);
void load_stressor_prompt_template(const std::string& path);

/// Renders the template with history and target substituted and nothing
/// else touched; quoting and unicode in the inputs pass through verbatim.
std::string build_stressor_prompt(const std::string& history, const std::string& target_turn);

/// Extracts (category, description) from a model reply by labeled-line
/// matching, tolerant to leading numbering and whitespace. Throws
/// ParseError (with the raw reply attached) when no category line exists.
struct ParsedStressorReply {
    std::string category;
    std::string description;
};
ParsedStressorReply parse_stressor_reply(const std::string& reply);

/// Renders "Seeker:"/"Supporter:" history lines, oldest first, capped at
/// the most recent `max_turns` turns before `turn_index`.
std::string render_history(const Dialogue& dialogue, int turn_index, int max_turns = 12);

struct StressorOptions {
    GenerationParams params;
    int parse_retries = 2;  // extra completions after an unparseable reply
    int history_turns = 12;
};

/// Identify the salient stressor for a seeker turn. Malformed model output
/// falls back to category "Unspecified" (never throws for that); gateway
/// exhaustion propagates as BackendError.
StressorRecord identify_stressor(const Dialogue& dialogue, int turn_index,
                                 GenerationBackend& gateway,
                                 const StressorOptions& options = {});

std::string serialize_stressor_record(const StressorRecord& record);
StressorRecord parse_stressor_record(const std::string& json_line);
void save_stressor_records(const std::vector<StressorRecord>& records,
                           const std::string& path);
std::vector<StressorRecord> load_stressor_records(const std::string& path);

}  // namespace psydef
