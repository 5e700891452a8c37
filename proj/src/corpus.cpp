#include "psydef/corpus.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace psydef {

using nlohmann::json;

std::string to_string(Speaker s) {
    return s == Speaker::Seeker ? "seeker" : "supporter";
}

Speaker speaker_from_string(const std::string& s) {
    if (s == "seeker") return Speaker::Seeker;
    if (s == "supporter") return Speaker::Supporter;
    throw ValidationError("unknown speaker role: \"" + s + "\"");
}

std::string label_class_name(int label) {
    switch (label) {
        case 0: return "No Defense";
        case 1: return "Action";
        case 2: return "Major Image";
        case 3: return "Disavowal";
        case 4: return "Minor Image";
        case 5: return "Neurotic";
        case 6: return "Obsessional";
        case 7: return "High-Adaptive";
        case 8: return "Needs Info";
        default: return "Unknown";
    }
}

std::vector<int> Dialogue::seeker_turn_indices() const {
    std::vector<int> out;
    for (const Turn& t : turns) {
        if (t.speaker == Speaker::Seeker) out.push_back(t.index);
    }
    return out;
}

std::int64_t ClassCounts::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::int64_t ClassCounts::at(int label) const {
    if (label < 0 || label >= kNumLabels) throw ValidationError("label out of range");
    return counts[static_cast<std::size_t>(label)];
}

namespace {

Turn parse_turn(const json& jt, const std::string& dialogue_id, std::size_t position) {
    auto where = [&](const std::string& field) {
        return "dialogue \"" + dialogue_id + "\" turn #" + std::to_string(position) +
               " field \"" + field + "\"";
    };
    Turn turn;
    if (!jt.contains("index") || !jt["index"].is_number_integer())
        throw ValidationError("missing or non-integer " + where("index"));
    turn.index = jt["index"].get<int>();

    if (!jt.contains("speaker") || !jt["speaker"].is_string())
        throw ValidationError("missing or non-string " + where("speaker"));
    turn.speaker = speaker_from_string(jt["speaker"].get<std::string>());

    if (!jt.contains("text") || !jt["text"].is_string())
        throw ValidationError("missing or non-string " + where("text"));
    turn.text = jt["text"].get<std::string>();

    if (jt.contains("label") && !jt["label"].is_null()) {
        if (!jt["label"].is_number_integer())
            throw ValidationError("non-integer " + where("label"));
        int label = jt["label"].get<int>();
        if (label < 0 || label >= kNumLabels)
            throw ValidationError(where("label") + " out of range 0..8: " +
                                  std::to_string(label));
        turn.label = label;
    }
    if (jt.contains("response_time_s") && !jt["response_time_s"].is_null()) {
        if (!jt["response_time_s"].is_number())
            throw ValidationError("non-numeric " + where("response_time_s"));
        double rt = jt["response_time_s"].get<double>();
        if (!(rt >= 0.0))
            throw ValidationError(where("response_time_s") + " must be >= 0");
        turn.response_time_s = rt;
    }
    return turn;
}

void validate_dialogue(const Dialogue& d) {
    if (d.id.empty()) throw ValidationError("dialogue id is empty");
    bool any_seeker = false;
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
        const Turn& t = d.turns[i];
        if (t.index != static_cast<int>(i))
            throw ValidationError("dialogue \"" + d.id + "\": turn indices must be contiguous from 0, turn #" +
                                  std::to_string(i) + " has index " + std::to_string(t.index));
        if (t.speaker == Speaker::Seeker) any_seeker = true;
        if (t.label.has_value()) {
            if (t.speaker != Speaker::Seeker)
                throw ValidationError("dialogue \"" + d.id + "\" turn " + std::to_string(t.index) +
                                      ": label present on a supporter turn");
            if (trim(t.text).empty())
                throw ValidationError("dialogue \"" + d.id + "\" turn " + std::to_string(t.index) +
                                      ": labeled turn has empty text");
        }
    }
    if (!any_seeker)
        throw ValidationError("dialogue \"" + d.id + "\" has no seeker turn");
}

}  // namespace

Dialogue parse_dialogue_record(const std::string& json_line) {
    json record;
    try {
        record = json::parse(json_line);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid JSON: ") + e.what());
    }
    if (!record.is_object()) throw ValidationError("record is not a JSON object");
    if (!record.contains("id") || !record["id"].is_string())
        throw ValidationError("missing or non-string field \"id\"");
    Dialogue d;
    d.id = record["id"].get<std::string>();
    if (!record.contains("turns") || !record["turns"].is_array())
        throw ValidationError("dialogue \"" + d.id + "\": missing or non-array field \"turns\"");
    std::size_t position = 0;
    for (const json& jt : record["turns"]) {
        d.turns.push_back(parse_turn(jt, d.id, position));
        ++position;
    }
    validate_dialogue(d);
    return d;
}

std::string serialize_dialogue_record(const Dialogue& dialogue) {
    json turns = json::array();
    for (const Turn& t : dialogue.turns) {
        json jt = {{"index", t.index},
                   {"speaker", to_string(t.speaker)},
                   {"text", t.text}};
        if (t.label.has_value()) jt["label"] = *t.label;
        if (t.response_time_s.has_value()) jt["response_time_s"] = *t.response_time_s;
        turns.push_back(std::move(jt));
    }
    json record = {{"id", dialogue.id}, {"turns", std::move(turns)}};
    return record.dump();
}

std::vector<Dialogue> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("corpus file not found: " + path);
    std::vector<Dialogue> dialogues;
    std::unordered_set<std::string> seen_ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        Dialogue d;
        try {
            d = parse_dialogue_record(line);
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!seen_ids.insert(d.id).second)
            throw ValidationError(path + ":" + std::to_string(line_no) +
                                  ": duplicate dialogue id \"" + d.id + "\"");
        dialogues.push_back(std::move(d));
    }
    return dialogues;
}

void save_corpus(const std::vector<Dialogue>& dialogues, const std::string& path) {
    std::ostringstream out;
    for (const Dialogue& d : dialogues) out << serialize_dialogue_record(d) << '\n';
    write_text_file(path, out.str());
}

ClassCounts class_distribution(const std::vector<Dialogue>& dialogues) {
    ClassCounts counts;
    for (const Dialogue& d : dialogues) {
        for (const Turn& t : d.turns) {
            if (t.speaker == Speaker::Seeker && t.label.has_value()) {
                counts.counts[static_cast<std::size_t>(*t.label)] += 1;
            }
        }
    }
    return counts;
}

CorpusSplit split_corpus(const std::vector<Dialogue>& dialogues, SplitRatios ratios,
                         std::uint64_t seed) {
    if (!(ratios.train > 0.0) || ratios.dev < 0.0 || ratios.train + ratios.dev > 1.0 + 1e-12)
        throw ValidationError("split ratios must be positive and sum to at most 1");
    const std::size_t n = dialogues.size();
    if (ratios.dev > 0.0 && n < 2)
        throw ValidationError("need at least 2 dialogues for a nonzero dev split");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(seed);
    deterministic_shuffle(order, rng);

    auto n_dev = static_cast<std::size_t>(std::floor(ratios.dev * static_cast<double>(n)));
    if (ratios.dev > 0.0 && n_dev == 0) n_dev = 1;

    CorpusSplit split;
    for (std::size_t i = 0; i < n; ++i) {
        const Dialogue& d = dialogues[order[i]];
        if (i < n - n_dev) {
            split.train.push_back(d);
        } else {
            split.dev.push_back(d);
        }
    }
    return split;
}

}  // namespace psydef
