#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "psydef/common.hpp"

namespace psydef {

inline constexpr int kNumLabels = 9;

enum class Speaker { Seeker, Supporter };

std::string to_string(Speaker s);
Speaker speaker_from_string(const std::string& s);

/// Human-readable class name for a defense label (Table-style naming).
std::string label_class_name(int label);

struct Turn {
    int index = 0;
    Speaker speaker = Speaker::Seeker;
    std::string text;
    std::optional<int> label;             // 0..8, seeker turns only
    std::optional<double> response_time_s;  // seconds since previous turn
};

struct Dialogue {
    std::string id;
    std::vector<Turn> turns;

    /// Indices of seeker turns, in turn order.
    std::vector<int> seeker_turn_indices() const;
};

/// Per-label counts over the full 0..8 label universe.
struct ClassCounts {
    std::array<std::int64_t, kNumLabels> counts{};

    std::int64_t total() const;
    std::int64_t at(int label) const;
};

/// Parse one dialogue record (one JSON object) and validate its invariants.
/// Throws ValidationError naming the offending field / turn.
Dialogue parse_dialogue_record(const std::string& json_line);

std::string serialize_dialogue_record(const Dialogue& dialogue);

/// Load a line-delimited corpus file. Malformed lines are reported with
/// their 1-based line number; duplicate dialogue ids are rejected.
std::vector<Dialogue> load_corpus(const std::string& path);

void save_corpus(const std::vector<Dialogue>& dialogues, const std::string& path);

/// Count labeled seeker turns per label. Unlabeled turns are ignored.
ClassCounts class_distribution(const std::vector<Dialogue>& dialogues);

struct SplitRatios {
    double train = 0.8;
    double dev = 0.2;
};

struct CorpusSplit {
    std::vector<Dialogue> train;
    std::vector<Dialogue> dev;
};

/// Deterministic dialogue-granularity split. The dev set receives
/// floor(dev_ratio * n) dialogues; everything else goes to train, so the
/// two sides always partition the input.
CorpusSplit split_corpus(const std::vector<Dialogue>& dialogues, SplitRatios ratios,
                         std::uint64_t seed);

}  // namespace psydef
