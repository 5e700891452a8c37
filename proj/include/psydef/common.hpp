#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace psydef {

/// Input data failed a contract (bad record, bad config, bad counts).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Structured model output could not be interpreted. Carries the raw reply.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::string raw_reply)
        : std::runtime_error(what), raw_reply_(std::move(raw_reply)) {}
    const std::string& raw_reply() const { return raw_reply_; }

private:
    std::string raw_reply_;
};

/// An inference gateway gave up (transport exhaustion, empty replies).
class BackendError : public std::runtime_error {
public:
    explicit BackendError(const std::string& what, int attempts = 0)
        : std::runtime_error(what), attempts_(attempts) {}
    int attempts() const { return attempts_; }

private:
    int attempts_ = 0;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------
// Text utilities shared by features, quality, and the stub backends.
// Tokenization contract: lowercase, strip punctuation, split on
// whitespace. All modules that count tokens use this one function.
// ---------------------------------------------------------------------

std::string lowercase_ascii(std::string_view text);

/// Lowercased tokens with ASCII punctuation removed. Non-ASCII bytes are
/// kept as token characters so unicode input degrades to opaque tokens
/// rather than errors.
std::vector<std::string> tokenize(std::string_view text);

/// Collapse whitespace runs to single spaces and trim the ends.
std::string normalize_whitespace(std::string_view text);

std::string trim(std::string_view text);

bool starts_with(std::string_view text, std::string_view prefix);

// ---------------------------------------------------------------------
// Content fingerprints for stage manifests and checkpoint metadata.
// FNV-1a 64-bit: stable across runs, not cryptographic.
// ---------------------------------------------------------------------

std::uint64_t fingerprint(std::string_view bytes);
std::uint64_t fingerprint_file(const std::string& path);
std::string fingerprint_hex(std::uint64_t fp);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

// ---------------------------------------------------------------------
// Deterministic RNG helpers. std::shuffle and the distribution classes
// are implementation-defined, so anything that must reproduce byte-for-
// byte goes through these.
// ---------------------------------------------------------------------

struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, bound). bound must be > 0.
    std::uint64_t next_below(std::uint64_t bound) {
        // Rejection sampling keeps the distribution exactly uniform.
        const std::uint64_t limit = ~0ULL - (~0ULL % bound);
        std::uint64_t v;
        do {
            v = next();
        } while (v >= limit);
        return v % bound;
    }

    /// Uniform real in [0, 1).
    double next_unit() { return double(next() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller, deterministic across platforms.
    double next_gaussian();

private:
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <typename T>
void deterministic_shuffle(std::vector<T>& items, SplitMix64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace psydef
