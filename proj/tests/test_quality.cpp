#include <doctest.h>

#include <algorithm>

#include "psydef/quality.hpp"
#include "psydef/stub_backends.hpp"
#include "support.hpp"

using namespace psydef;

TEST_CASE("self_bleu: identical texts score 1.0") {
    std::vector<std::string> texts = {"a b c d e", "a b c d e"};
    CHECK(self_bleu(texts) == doctest::Approx(1.0).epsilon(1e-6));
    texts.push_back("a b c d e");
    CHECK(self_bleu(texts) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("self_bleu: disjoint vocabularies score near zero") {
    // unigram precision is 0 for both directions, so BLEU collapses to 0
    std::vector<std::string> texts = {"alpha bravo charlie delta", "echo foxtrot golf hotel"};
    CHECK(self_bleu(texts) < 0.1);
}

TEST_CASE("self_bleu: hand-computed two-text case") {
    // hyp "a b c" vs ref "a b d":
    //   p1 = 2/3 (a, b match); p2: bigrams {ab, bc} vs {ab, bd} -> 1/2
    //   p3: trigram {abc} vs {abd} -> 0 matched, smoothing (0+1)/(1+1) = 1/2
    //   BP = 1 (equal lengths); BLEU = (2/3 * 1/2 * 1/2)^(1/3)
    // both directions are symmetric here, so self-BLEU equals that value
    const double expected = std::pow(2.0 / 3.0 * 0.5 * 0.5, 1.0 / 3.0);
    std::vector<std::string> texts = {"a b c", "a b d"};
    CHECK(self_bleu(texts) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("self_bleu: permutation invariance") {
    SplitMix64 rng(2024);
    std::vector<std::string> vocab = {"loss", "job",  "family", "worried", "sleep",
                                      "rent", "exam", "friend", "alone",   "better"};
    for (int round = 0; round < 20; ++round) {
        std::vector<std::string> texts;
        const std::size_t n = 3 + rng.next_below(5);
        for (std::size_t i = 0; i < n; ++i) {
            std::string text;
            const std::size_t len = 3 + rng.next_below(8);
            for (std::size_t k = 0; k < len; ++k) {
                if (k) text += ' ';
                text += vocab[rng.next_below(vocab.size())];
            }
            texts.push_back(text);
        }
        double base = self_bleu(texts);
        std::vector<std::string> shuffled = texts;
        deterministic_shuffle(shuffled, rng);
        CHECK(self_bleu(shuffled) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("self_bleu: appending an exact duplicate never decreases the score") {
    SplitMix64 rng(99);
    std::vector<std::string> vocab = {"one", "two", "three", "four", "five", "six"};
    for (int round = 0; round < 10; ++round) {
        std::vector<std::string> texts;
        const std::size_t n = 2 + rng.next_below(4);
        for (std::size_t i = 0; i < n; ++i) {
            std::string text;
            const std::size_t len = 2 + rng.next_below(6);
            for (std::size_t k = 0; k < len; ++k) {
                if (k) text += ' ';
                text += vocab[rng.next_below(vocab.size())];
            }
            texts.push_back(text);
        }
        const double before = self_bleu(texts);
        texts.push_back(texts[rng.next_below(texts.size())]);
        CHECK(self_bleu(texts) >= before - 1e-12);
    }
}

TEST_CASE("self_bleu: fewer than two texts is an error") {
    std::vector<std::string> one = {"just one"};
    CHECK_THROWS_AS(self_bleu(one), ValidationError);
}

TEST_CASE("semantic_adherence: stub overlap behaves directionally") {
    StubNliBackend nli;
    DefenseDefinition def = defense_definition_for(testsupport::shipped_catalog(),
                                                   testsupport::shipped_supplementary(), 6, 0);
    // def variant 0 of level 6 is Intellectualization
    REQUIRE(def.mechanism_name == "Intellectualization");

    SUBCASE("texts lexically matching the definition score high") {
        // built to cover the hypothesis' content vocabulary
        std::string matching =
            "this message shows intellectualization obsessional defensive functioning "
            "engaging in abstract thinking and generalizations to control or minimize "
            "disturbing feelings";
        std::vector<std::string> texts = {matching, matching};
        CHECK(semantic_adherence(texts, def, nli) >= 0.7);
    }
    SUBCASE("off-topic texts score low") {
        std::vector<std::string> texts = {"the weather turned sunny after lunch",
                                          "my cat chased a paper ball around"};
        CHECK(semantic_adherence(texts, def, nli) <= 0.2);
    }
    SUBCASE("empty definition is a precondition error") {
        DefenseDefinition empty = def;
        empty.definition = "";
        std::vector<std::string> texts = {"anything"};
        CHECK_THROWS_AS(semantic_adherence(texts, empty, nli), ValidationError);
    }
}

TEST_CASE("cohens_kappa: hand cases") {
    SUBCASE("perfect agreement with two distinct labels") {
        std::vector<int> a = {0, 1, 0, 1, 1};
        CHECK(cohens_kappa(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("perfect disagreement") {
        std::vector<int> a = {0, 0, 1, 1};
        std::vector<int> b = {1, 1, 0, 0};
        CHECK(cohens_kappa(a, b) == doctest::Approx(-1.0).epsilon(1e-12));
    }
    SUBCASE("hand formula: po=0.75, pe=0.5 -> 0.5") {
        std::vector<int> a = {0, 0, 0, 1};
        std::vector<int> b = {0, 0, 1, 1};
        CHECK(cohens_kappa(a, b) == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("constant annotator on a mixed batch: po == pe -> 0") {
        std::vector<int> a = {0, 1, 2, 3, 0, 1};
        std::vector<int> b(a.size(), 2);
        CHECK(cohens_kappa(a, b) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("degenerate single shared label") {
        std::vector<int> a = {4, 4, 4};
        CHECK(cohens_kappa(a, a) == doctest::Approx(1.0));
    }
    SUBCASE("errors") {
        std::vector<int> a = {1, 2};
        std::vector<int> b = {1};
        CHECK_THROWS_AS(cohens_kappa(a, b), ValidationError);
        std::vector<int> empty;
        CHECK_THROWS_AS(cohens_kappa(empty, empty), ValidationError);
    }
}

TEST_CASE("cohens_kappa: symmetry and self-agreement properties") {
    SplitMix64 rng(7);
    for (int round = 0; round < 25; ++round) {
        const std::size_t n = 2 + rng.next_below(40);
        std::vector<int> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<int>(rng.next_below(9));
            b[i] = static_cast<int>(rng.next_below(9));
        }
        CHECK(cohens_kappa(a, b) == doctest::Approx(cohens_kappa(b, a)).epsilon(1e-12));
        bool two_distinct =
            std::adjacent_find(a.begin(), a.end(), std::not_equal_to<>()) != a.end();
        if (two_distinct) {
            CHECK(cohens_kappa(a, a) == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

namespace {

std::vector<SyntheticSample> batch_from_labels(const std::vector<int>& labels) {
    std::vector<SyntheticSample> batch(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        batch[i].text = "sample text " + std::to_string(i);
        batch[i].intended_label = labels[i];
        batch[i].stressor = {"Unspecified", "", "d", 0};
    }
    return batch;
}

/// Balanced two-label batch with `flips` disagreements per side; with
/// equal marginals, kappa reduces to 2*po - 1 exactly.
std::pair<std::vector<int>, std::vector<int>> balanced_pair(int half, int flips) {
    std::vector<int> a, b;
    for (int i = 0; i < half; ++i) a.push_back(0);
    for (int i = 0; i < half; ++i) a.push_back(1);
    b = a;
    for (int i = 0; i < flips; ++i) b[static_cast<std::size_t>(i)] = 1;
    for (int i = 0; i < flips; ++i) b[static_cast<std::size_t>(half + i)] = 0;
    return {a, b};
}

}  // namespace

TEST_CASE("kappa_gate: identity annotator accepts with kappa 1") {
    auto batch = batch_from_labels({0, 1, 2, 3, 4, 5, 6, 8});
    auto gate = kappa_gate(
        batch, [](const SyntheticSample& s) { return std::optional<int>(s.intended_label); },
        0.6, 0.42, 0.55);
    CHECK(gate.status == GateStatus::Accepted);
    CHECK(gate.verdict.kappa == doctest::Approx(1.0));
    CHECK(gate.verdict.accepted);
    for (const auto& s : batch) {
        REQUIRE(s.qc.has_value());
        CHECK(s.qc->accepted);
        CHECK(s.qc->self_bleu == doctest::Approx(0.42));
        CHECK(s.qc->semantic_adherence == doctest::Approx(0.55));
    }
}

TEST_CASE("kappa_gate: constant annotator on mixed labels is rejected at kappa 0") {
    auto batch = batch_from_labels({0, 1, 2, 3, 0, 1});
    auto gate = kappa_gate(batch, [](const SyntheticSample&) { return std::optional<int>(2); });
    CHECK(gate.status == GateStatus::Rejected);
    CHECK(gate.verdict.kappa == doctest::Approx(0.0));
}

TEST_CASE("kappa_gate: threshold is inclusive at exactly 0.60 and excludes 0.599") {
    SUBCASE("kappa exactly 3/5 accepted") {
        auto [intended, annotated] = balanced_pair(500, 100);  // po = 0.8, pe = 0.5
        auto batch = batch_from_labels(intended);
        auto gate = kappa_gate(batch, [&](const SyntheticSample& s) {
            // recover the position from the text suffix
            std::size_t idx = std::stoul(s.text.substr(12));
            return std::optional<int>(annotated[idx]);
        });
        CHECK(gate.verdict.kappa == doctest::Approx(0.6));
        CHECK(gate.status == GateStatus::Accepted);
    }
    SUBCASE("kappa exactly 599/1000 rejected") {
        auto [intended, annotated] = balanced_pair(2000, 401);  // po = 0.7995, pe = 0.5
        auto batch = batch_from_labels(intended);
        auto gate = kappa_gate(batch, [&](const SyntheticSample& s) {
            std::size_t idx = std::stoul(s.text.substr(12));
            return std::optional<int>(annotated[idx]);
        });
        CHECK(gate.verdict.kappa == doctest::Approx(0.599));
        CHECK(gate.status == GateStatus::Rejected);
    }
}

TEST_CASE("kappa_gate: annotator failure marks the batch unevaluable") {
    auto batch = batch_from_labels({0, 1, 2});
    int calls = 0;
    auto gate = kappa_gate(batch, [&](const SyntheticSample&) -> std::optional<int> {
        if (++calls == 2) return std::nullopt;
        return 1;
    });
    CHECK(gate.status == GateStatus::Unevaluable);
    CHECK(gate.annotator_labels.empty());
    for (const auto& s : batch) CHECK_FALSE(s.qc.has_value());
}

TEST_CASE("synthetic samples round-trip with verdicts") {
    testsupport::TempDir dir("synth");
    auto batch = batch_from_labels({3, 3});
    QcVerdict verdict{0.4, 0.6, 0.85, true};
    batch[0].qc = verdict;
    save_synthetic_samples(batch, dir.file("s.jsonl"));
    auto reloaded = load_synthetic_samples(dir.file("s.jsonl"));
    REQUIRE(reloaded.size() == 2);
    REQUIRE(reloaded[0].qc.has_value());
    CHECK(reloaded[0].qc->kappa == doctest::Approx(0.85));
    CHECK(reloaded[0].qc->accepted);
    CHECK_FALSE(reloaded[1].qc.has_value());
}
