#include "psydef/stub_backends.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace psydef {

namespace {

const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words = {
        "a",    "an",    "the",   "this",  "that",  "these", "those", "i",     "im",
        "me",   "my",    "mine",  "myself", "you",  "your",  "we",    "our",   "us",
        "it",   "its",   "is",    "are",   "was",   "were",  "be",    "been",  "being",
        "am",   "do",    "does",  "did",   "to",    "of",    "in",    "on",    "at",
        "for",  "with",  "and",   "or",    "but",   "not",   "no",    "so",    "as",
        "if",   "then",  "than",  "too",   "very",  "just",  "about", "from",  "by",
        "have", "has",   "had",   "what",  "when",  "where", "who",   "how",   "why",
        "will", "would", "can",   "could", "should", "shall", "may",  "might", "there",
        "here", "he",    "she",   "they",  "them",  "his",   "her",   "their"};
    return words;
}

std::vector<std::string> content_token_list(const std::string& text) {
    std::vector<std::string> out;
    for (std::string& tok : tokenize(text)) {
        if (!is_stopword(tok)) out.push_back(std::move(tok));
    }
    return out;
}

/// First line after `marker` that is non-empty, trimmed.
std::string line_after(const std::string& prompt, const std::string& marker) {
    auto pos = prompt.find(marker);
    if (pos == std::string::npos) return {};
    pos = prompt.find('\n', pos);
    while (pos != std::string::npos) {
        auto end = prompt.find('\n', pos + 1);
        std::string line = trim(prompt.substr(pos + 1, end == std::string::npos
                                                           ? std::string::npos
                                                           : end - pos - 1));
        if (!line.empty()) return line;
        pos = end;
    }
    return {};
}

std::string rest_of_line(const std::string& prompt, const std::string& marker) {
    auto pos = prompt.find(marker);
    if (pos == std::string::npos) return {};
    auto end = prompt.find('\n', pos);
    return trim(prompt.substr(pos + marker.size(),
                              end == std::string::npos ? std::string::npos
                                                       : end - pos - marker.size()));
}

/// Quoted few-shot reference lines: 1. "..." / 2. "..." / 3. "...".
std::vector<std::string> quoted_examples(const std::string& prompt) {
    std::vector<std::string> out;
    std::istringstream in(prompt);
    std::string line;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.size() > 4 && t[0] >= '1' && t[0] <= '9' && t[1] == '.') {
            auto first = t.find('"');
            auto last = t.rfind('"');
            if (first != std::string::npos && last > first + 1) {
                out.push_back(t.substr(first + 1, last - first - 1));
            }
        }
    }
    return out;
}

SplitMix64 prompt_rng(const std::string& prompt, const GenerationParams& params) {
    std::uint64_t seed = params.seed.value_or(0);
    return SplitMix64(fingerprint(prompt) ^ (0x9e3779b97f4a7c15ULL * (seed + 1)));
}

std::string stressor_reply(const std::string& prompt, SplitMix64& rng) {
    static const std::vector<std::string> categories = {
        "Interpersonal Conflict", "Self-Esteem Threat", "External Crisis",
        "Job Loss",               "Health Anxiety",     "Social Rejection",
        "Family Conflict",        "Academic Pressure"};
    std::string target = rest_of_line(prompt, "### TARGET UTTERANCE:");
    if (target.empty()) target = line_after(prompt, "### TARGET UTTERANCE:");
    std::vector<std::string> tokens = content_token_list(target);
    const std::string& category = categories[rng.next_below(categories.size())];
    std::string anchor = tokens.empty() ? "the situation"
                                        : tokens[rng.next_below(tokens.size())];
    std::ostringstream out;
    out << "1. Stressor Category: " << category << "\n"
        << "2. Description: The seeker is under strain connected to " << anchor << ".";
    return out.str();
}

std::string generation_reply(const std::string& prompt, SplitMix64& rng) {
    static const std::vector<std::string> openers = {
        "I guess",      "Honestly,",     "I don't know,", "Lately",
        "To be fair,",  "Somehow",       "I suppose",     "Right now"};
    static const std::vector<std::string> glue = {"and", "because", "but", "even though",
                                                  "while", "so"};

    std::vector<std::string> vocab;
    for (const std::string& example : quoted_examples(prompt)) {
        for (std::string& tok : content_token_list(example)) vocab.push_back(std::move(tok));
    }
    // theory-driven slots steer a cooperative generator: mix in wording
    // from the definition and pattern lines, not only the few-shots
    std::vector<std::string> theory = content_token_list(rest_of_line(prompt, "Definition:"));
    for (std::string& tok : content_token_list(rest_of_line(prompt, "Pattern:"))) {
        theory.push_back(std::move(tok));
    }
    std::string stressor = rest_of_line(prompt, "STRESSOR:");
    std::vector<std::string> stressor_tokens = content_token_list(stressor);

    auto chunk_from = [&](const std::vector<std::string>& source, std::size_t max_len) {
        std::ostringstream piece;
        if (source.empty()) {
            piece << "it all";
            return piece.str();
        }
        std::size_t len = 1 + rng.next_below(std::min(max_len, source.size()));
        std::size_t start = rng.next_below(source.size() - len + 1);
        for (std::size_t i = 0; i < len; ++i) {
            if (i) piece << ' ';
            piece << source[start + i];
        }
        return piece.str();
    };

    std::ostringstream utterance;
    utterance << openers[rng.next_below(openers.size())] << ' '
              << chunk_from(vocab, 6) << ' ' << glue[rng.next_below(glue.size())] << ' '
              << chunk_from(theory.empty() ? vocab : theory, 4);
    if (rng.next_below(2) == 0) {
        utterance << ' ' << glue[rng.next_below(glue.size())] << ' ' << chunk_from(vocab, 4);
    }
    if (!stressor_tokens.empty() && rng.next_below(3) != 0) {
        utterance << " with " << stressor_tokens[rng.next_below(stressor_tokens.size())];
    }
    utterance << '.';

    // Mild format noise: quoted or list-numbered replies are common model
    // behavior and downstream parsing is expected to cope.
    std::string text = utterance.str();
    switch (rng.next_below(5)) {
        case 0: return "\"" + text + "\"";
        case 1: return "1. " + text;
        default: return text;
    }
}

std::string generic_reply(const std::string& prompt, SplitMix64& rng) {
    std::vector<std::string> tokens = content_token_list(prompt);
    std::ostringstream out;
    out << "reply";
    for (int i = 0; i < 6; ++i) {
        out << ' ';
        if (!tokens.empty() && rng.next_below(2) == 0) {
            out << tokens[rng.next_below(tokens.size())];
        } else {
            out << "w" << rng.next_below(1000);
        }
    }
    return out.str();
}

}  // namespace

bool is_stopword(const std::string& token) { return stopwords().count(token) > 0; }

std::string StubGenerationBackend::complete(const std::string& prompt,
                                            const GenerationParams& params) {
    if (trim(prompt).empty()) throw ValidationError("prompt must be non-empty");
    SplitMix64 rng = prompt_rng(prompt, params);
    if (prompt.find("Clinical Stressor Identification") != std::string::npos) {
        return stressor_reply(prompt, rng);
    }
    if (prompt.find("### DEFENSE TO SIMULATE:") != std::string::npos) {
        return generation_reply(prompt, rng);
    }
    return generic_reply(prompt, rng);
}

const std::unordered_set<std::string>& StubNliBackend::content_tokens(const std::string& text) {
    auto it = cache_.find(text);
    if (it != cache_.end()) return it->second;
    std::unordered_set<std::string> set;
    for (std::string& tok : tokenize(text)) {
        if (!is_stopword(tok)) set.insert(std::move(tok));
    }
    if (set.empty()) {
        for (std::string& tok : tokenize(text)) set.insert(std::move(tok));
    }
    return cache_.emplace(text, std::move(set)).first->second;
}

double StubNliBackend::entail(const std::string& premise, const std::string& hypothesis) {
    if (trim(premise).empty() || trim(hypothesis).empty())
        throw ValidationError("nli premise and hypothesis must be non-empty");
    std::lock_guard<std::mutex> lock(mutex_);
    // Insertions never invalidate value references in an unordered_map, so
    // evicting only here keeps both lookups below valid.
    if (cache_.size() > 200000) cache_.clear();
    const std::unordered_set<std::string>& p = content_tokens(premise);
    const std::unordered_set<std::string>& h = content_tokens(hypothesis);
    if (h.empty()) return 0.02;
    std::size_t covered = 0;
    for (const std::string& tok : h) covered += p.count(tok);
    double coverage = static_cast<double>(covered) / static_cast<double>(h.size());
    return 0.02 + 0.96 * std::min(1.0, 1.25 * coverage);
}

EmotionResult StubEmotionBackend::score(const std::string& text) {
    if (trim(text).empty()) throw ValidationError("emotion input must be non-empty");
    static const std::vector<std::pair<std::string, std::unordered_set<std::string>>> lexicons = {
        {"sadness",
         {"devastated", "heartbroken", "sad", "crying", "cried", "miserable", "hopeless",
          "depressed", "grief", "lonely", "empty", "awful", "terrible", "worthless"}},
        {"fear",
         {"terrified", "anxious", "anxiety", "scared", "afraid", "panicked", "panic",
          "worried", "dread", "nervous", "overwhelmed", "breaking"}},
        {"anger",
         {"furious", "angry", "mad", "resentful", "rage", "hate", "bitter", "frustrated",
          "annoyed", "unfair"}},
        {"joy",
         {"happy", "relieved", "grateful", "hopeful", "glad", "proud", "excited",
          "better", "stronger"}}};

    std::vector<std::string> tokens = tokenize(text);
    std::string best_label;
    int best_hits = 0;
    int total_hits = 0;
    for (const auto& [label, words] : lexicons) {
        int hits = 0;
        for (const std::string& tok : tokens) hits += static_cast<int>(words.count(tok));
        total_hits += hits;
        if (hits > best_hits) {
            best_hits = hits;
            best_label = label;
        }
    }
    EmotionResult result;
    if (total_hits == 0) {
        result.label = "neutral";
        result.confidence = 0.8;
        result.is_neutral = true;
    } else {
        result.label = best_label;
        result.confidence = std::min(0.95, 0.55 + 0.15 * best_hits);
        result.is_neutral = false;
    }
    return result;
}

StubTextEncoder::StubTextEncoder(std::uint64_t seed)
    : params_(kEmbeddingDim * kFeatureDim + kEmbeddingDim, 0.0),
      grads_(params_.size(), 0.0) {
    SplitMix64 rng(seed);
    const double scale = 0.5;
    for (std::size_t i = 0; i < kEmbeddingDim * kFeatureDim; ++i) {
        params_[i] = scale * rng.next_gaussian();
    }
    // bias stays zero
}

const StubTextEncoder::SparseVec& StubTextEncoder::features(const std::string& text) {
    auto it = feature_cache_.find(text);
    if (it != feature_cache_.end()) return it->second;
    std::unordered_map<std::size_t, double> buckets;
    std::vector<std::string> tokens = tokenize(text);
    for (const std::string& tok : tokens) {
        buckets[fingerprint(tok) % kFeatureDim] += 1.0;
    }
    double norm = 0.0;
    for (const auto& [idx, v] : buckets) norm += v * v;
    norm = std::sqrt(std::max(norm, 1.0));
    SparseVec sparse;
    sparse.reserve(buckets.size());
    for (const auto& [idx, v] : buckets) sparse.emplace_back(idx, v / norm);
    std::sort(sparse.begin(), sparse.end());
    return feature_cache_.emplace(text, std::move(sparse)).first->second;
}

std::vector<double> StubTextEncoder::encode(const std::string& text) {
    if (trim(text).empty()) throw ValidationError("encoder input must be non-empty");
    std::lock_guard<std::mutex> lock(mutex_);
    const SparseVec& phi = features(text);
    std::vector<double> emb(kEmbeddingDim, 0.0);
    const double* bias = params_.data() + kEmbeddingDim * kFeatureDim;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
        const double* row = params_.data() + i * kFeatureDim;
        double acc = bias[i];
        for (const auto& [j, v] : phi) acc += row[j] * v;
        emb[i] = acc;
    }
    return emb;
}

void StubTextEncoder::zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

void StubTextEncoder::backward(const std::string& text, std::span<const double> grad_embedding) {
    std::lock_guard<std::mutex> lock(mutex_);
    const SparseVec& phi = features(text);
    double* gbias = grads_.data() + kEmbeddingDim * kFeatureDim;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) {
        double g = grad_embedding[i];
        double* grow = grads_.data() + i * kFeatureDim;
        for (const auto& [j, v] : phi) grow[j] += g * v;
        gbias[i] += g;
    }
}

BackendSet make_stub_backends(std::uint64_t encoder_seed) {
    BackendSet set;
    set.generation = std::make_shared<StubGenerationBackend>();
    set.nli = std::make_shared<StubNliBackend>();
    set.emotion = std::make_shared<StubEmotionBackend>();
    set.encoder = std::make_shared<StubTextEncoder>(encoder_seed);
    return set;
}

}  // namespace psydef
