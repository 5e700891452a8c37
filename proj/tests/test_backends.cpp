#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>

#include "psydef/stub_backends.hpp"
#include "support.hpp"

using namespace psydef;

TEST_CASE("stub generation: same (prompt, seed) twice gives identical strings") {
    StubGenerationBackend gen;
    GenerationParams params;
    params.seed = 5;
    CHECK(gen.complete("some prompt about work stress", params) ==
          gen.complete("some prompt about work stress", params));
}

TEST_CASE("stub generation: seeds 0 vs 1 differ") {
    StubGenerationBackend gen;
    GenerationParams a, b;
    a.seed = 0;
    b.seed = 1;
    CHECK(gen.complete("some prompt about work stress", a) !=
          gen.complete("some prompt about work stress", b));
}

TEST_CASE("stub generation: rejects empty prompt") {
    StubGenerationBackend gen;
    CHECK_THROWS_AS(gen.complete("   ", {}), ValidationError);
}

namespace {

/// A transport that fails `failures` times before succeeding.
struct FlakyCall {
    int failures;
    int calls = 0;
    std::string operator()() {
        ++calls;
        if (calls <= failures) throw std::runtime_error("connection timed out");
        return "ok";
    }
};

}  // namespace

TEST_CASE("with_retries: timeout xN errors after N attempts, N from config") {
    RetryPolicy policy;
    policy.attempts = 3;
    policy.initial_backoff_ms = 100;
    std::vector<int> sleeps;
    policy.sleeper = [&](int ms) { sleeps.push_back(ms); };
    std::atomic<std::int64_t> attempts{0};

    FlakyCall always_fails{1000};
    CHECK_THROWS_WITH_AS(
        with_retries(policy, &attempts, "probe", [&] { return always_fails(); }),
        doctest::Contains("after 3 attempts"), BackendError);
    CHECK(attempts.load() == 3);
    // exponential backoff between attempts: 100ms then 200ms
    REQUIRE(sleeps.size() == 2);
    CHECK(sleeps[0] == 100);
    CHECK(sleeps[1] == 200);

    // recovery within the budget succeeds
    FlakyCall recovers{2};
    CHECK(with_retries(policy, &attempts, "probe", [&] { return recovers(); }) == "ok");
    CHECK(recovers.calls == 3);
}

TEST_CASE("stub nli: self-entailment is high, disjoint vocabulary is low") {
    StubNliBackend nli;
    const std::string text = "I feel abandoned since the divorce";
    CHECK(nli.entail(text, text) >= 0.9);
    CHECK(nli.entail("alpha bravo charlie", "zulu yankee xray") <= 0.1);
}

TEST_CASE("stub nli: batch of 150 hypotheses is order-aligned") {
    StubNliBackend nli;
    std::vector<std::string> hypotheses;
    for (int i = 0; i < 150; ++i) {
        hypotheses.push_back("hypothesis token" + std::to_string(i));
    }
    // make one hypothesis trivially entailed so order matters
    hypotheses[77] = "the premise mentions skiing holidays";
    auto scores = nli.entail_many("the premise mentions skiing holidays", hypotheses);
    REQUIRE(scores.size() == 150);
    for (double s : scores) {
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
    double best = *std::max_element(scores.begin(), scores.end());
    CHECK(scores[77] == doctest::Approx(best));
    CHECK(scores[77] >= 0.9);
}

TEST_CASE("stub emotion: lexicon verdicts") {
    StubEmotionBackend emotion;
    EmotionResult neutral = emotion.score("okay.");
    CHECK(neutral.is_neutral);
    EmotionResult sad = emotion.score("I am devastated");
    CHECK_FALSE(sad.is_neutral);
    CHECK(sad.confidence > 0.5);
    for (const char* text : {"okay.", "I am devastated", "what a day", "furious and bitter"}) {
        EmotionResult r = emotion.score(text);
        CHECK(r.confidence >= 0.0);
        CHECK(r.confidence <= 1.0);
    }
}

TEST_CASE("stub encoder: 768 dims, deterministic, distinguishes texts") {
    StubTextEncoder encoder(123);
    auto a = encoder.encode("I am worried about the rent increase");
    auto b = encoder.encode("I am worried about the rent increase");
    auto c = encoder.encode("we laughed about the silly weather");
    REQUIRE(a.size() == 768);
    CHECK(a == b);

    double dot = 0.0, na = 0.0, nc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * c[i];
        na += a[i] * a[i];
        nc += c[i] * c[i];
    }
    CHECK(dot / std::sqrt(na * nc) < 0.99);
}

TEST_CASE("stub encoder: gradient flows into the trainable projection") {
    StubTextEncoder encoder(7);
    TrainableEncoder* trainable = encoder.trainable();
    REQUIRE(trainable != nullptr);
    CHECK(trainable->param_count() == 768 * 256 + 768);

    trainable->zero_grads();
    std::vector<double> grad(768, 1.0);
    trainable->backward("some text here", grad);
    double grad_mass = 0.0;
    for (double g : trainable->grads()) grad_mass += std::abs(g);
    CHECK(grad_mass > 0.0);
}
