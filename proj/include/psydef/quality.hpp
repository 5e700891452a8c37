#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "psydef/augmentor.hpp"
#include "psydef/backends.hpp"
#include "psydef/dmrs_catalog.hpp"
#include "psydef/qc_verdict.hpp"

namespace psydef {

/// Mean corpus-style BLEU of each text against all the others as
/// references, n-gram orders 1..max_n, add-one smoothing on zero-count
/// higher-order n-grams. Lower means greater lexical diversity. Needs at
/// least two texts.
double self_bleu(std::span<const std::string> texts, int max_n = 4);

/// Hypothesis rendered for a defense definition when scoring adherence:
/// "This message shows {mechanism} ({level name}) defensive functioning:
/// {definition}". Config-exposed because the granularity choice
/// (mechanism vs level) is a judgment call.
extern const char* kDefaultAdherenceHypothesisTemplate;

std::string render_adherence_hypothesis(const DefenseDefinition& def,
                                        const std::string& hypothesis_template =
                                            kDefaultAdherenceHypothesisTemplate);

/// Mean NLI entailment of each text (premise) against the definition
/// hypothesis. Empty definitions are rejected.
double semantic_adherence(std::span<const std::string> texts, const DefenseDefinition& def,
                          NliBackend& nli,
                          const std::string& hypothesis_template =
                              kDefaultAdherenceHypothesisTemplate);

/// Cohen's kappa over the joint label set of the two sequences. The
/// degenerate single-shared-label case (chance agreement 1) returns 1
/// when the sequences agree exactly.
double cohens_kappa(std::span<const int> a, std::span<const int> b);

/// Maps a synthetic sample to a label, or nullopt on annotator failure.
using Annotator = std::function<std::optional<int>(const SyntheticSample&)>;

enum class GateStatus { Accepted, Rejected, Unevaluable };

struct GateResult {
    GateStatus status = GateStatus::Unevaluable;
    QcVerdict verdict;
    std::vector<int> annotator_labels;  // empty when unevaluable
};

/// Agreement gate over one batch: kappa between intended labels and the
/// machine annotator's labels, accepted iff kappa >= threshold
/// (inclusive). A failing annotator marks the batch unevaluable rather
/// than silently dropping it. The verdict (including the supplied
/// diversity and adherence scores) is attached to every sample.
GateResult kappa_gate(std::vector<SyntheticSample>& batch, const Annotator& annotator,
                      double threshold = kDefaultKappaThreshold, double self_bleu_score = 0.0,
                      double adherence_score = 0.0);

std::string serialize_synthetic_sample(const SyntheticSample& sample);
SyntheticSample parse_synthetic_sample(const std::string& json_line);
void save_synthetic_samples(const std::vector<SyntheticSample>& samples,
                            const std::string& path);
std::vector<SyntheticSample> load_synthetic_samples(const std::string& path);

}  // namespace psydef
