// Acceptance suite: one line per criterion, nonzero exit on any failure.
// Runs entirely on stub backends.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "psydef/evaluation.hpp"
#include "psydef/fusion_model.hpp"
#include "psydef/pipeline.hpp"
#include "psydef/quality.hpp"
#include "psydef/reports.hpp"
#include "psydef/stub_backends.hpp"
#include "support.hpp"
#include "toyset.hpp"

using namespace psydef;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Harness {
    int failures = 0;

    void run(const std::string& name, const std::function<void()>& body) {
        const auto start = std::chrono::steady_clock::now();
        std::string error;
        try {
            body();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (error.empty()) {
            std::printf("[PASS] %-32s (%.2fs)\n", name.c_str(), seconds);
        } else {
            std::printf("[FAIL] %-32s (%.2fs): %s\n", name.c_str(), seconds, error.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
};

void require(bool condition, const std::string& what) {
    if (!condition) throw std::runtime_error(what);
}

void require_close(double actual, double expected, double tol, const std::string& what) {
    if (!(std::abs(actual - expected) <= tol)) {
        std::ostringstream msg;
        msg << what << ": got " << actual << ", expected " << expected << " +/- " << tol;
        throw std::runtime_error(msg.str());
    }
}

double elapsed_since(const std::chrono::steady_clock::time_point& start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------
// 1. Metric oracle equivalence
// ---------------------------------------------------------------------

void metric_oracle_equivalence() {
    const auto start = std::chrono::steady_clock::now();
    SplitMix64 rng(90210);
    for (int round = 0; round < 50; ++round) {
        const std::size_t n = 1 + rng.next_below(200);
        std::vector<int> preds(n), golds(n);
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = static_cast<int>(rng.next_below(9));
            golds[i] = static_cast<int>(rng.next_below(9));
        }
        MetricsReport report = evaluate(preds, golds);

        // brute-force TP/FP/FN oracle
        int correct = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (preds[i] == golds[i]) ++correct;
        }
        double macro_p = 0, macro_r = 0, macro_f1 = 0;
        for (int c = 0; c < 9; ++c) {
            int tp = 0, fp = 0, fn = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (preds[i] == c && golds[i] == c) ++tp;
                if (preds[i] == c && golds[i] != c) ++fp;
                if (preds[i] != c && golds[i] == c) ++fn;
            }
            double p = (tp + fp) > 0 ? double(tp) / (tp + fp) : 0.0;
            double r = (tp + fn) > 0 ? double(tp) / (tp + fn) : 0.0;
            macro_p += p / 9;
            macro_r += r / 9;
            macro_f1 += (p + r) > 0 ? (2 * p * r / (p + r)) / 9 : 0.0;
        }
        require_close(report.accuracy, double(correct) / double(n), 1e-9, "accuracy");
        require_close(report.macro_precision, macro_p, 1e-9, "macro precision");
        require_close(report.macro_recall, macro_r, 1e-9, "macro recall");
        require_close(report.macro_f1, macro_f1, 1e-9, "macro F1");
    }
    require(elapsed_since(start) < 5.0, "oracle equivalence exceeded 5 s");
}

// ---------------------------------------------------------------------
// 2. Kappa correctness and the inclusive 0.60 gate
// ---------------------------------------------------------------------

std::vector<SyntheticSample> gate_batch(const std::vector<int>& labels) {
    std::vector<SyntheticSample> batch(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        batch[i].text = std::to_string(i);
        batch[i].intended_label = labels[i];
        batch[i].stressor = {"Unspecified", "", "d", 0};
    }
    return batch;
}

void kappa_correctness_and_gate() {
    std::vector<int> same = {0, 1, 0, 1};
    require(std::abs(cohens_kappa(same, same) - 1.0) <= 1e-12, "kappa 1.0 hand case");

    std::vector<int> a = {0, 0, 1, 1}, b = {1, 1, 0, 0};
    require(std::abs(cohens_kappa(a, b) - (-1.0)) <= 1e-12, "kappa -1.0 hand case");

    std::vector<int> c = {0, 0, 0, 1}, d = {0, 0, 1, 1};
    require(std::abs(cohens_kappa(c, d) - 0.5) <= 1e-12, "kappa 0.5 hand case");

    std::vector<int> mixed = {0, 1, 2, 3, 0, 1};
    std::vector<int> constant(mixed.size(), 2);
    require(std::abs(cohens_kappa(mixed, constant)) <= 1e-12, "kappa 0.0 hand case");

    // balanced two-label pairs: with equal marginals pe = 1/2 exactly, so
    // kappa = 2*po - 1. 100/500 flips per side gives po = 0.8 -> kappa 3/5;
    // 401/2000 flips gives po = 0.7995 -> kappa 599/1000.
    auto balanced = [](int half, int flips) {
        std::vector<int> x, y;
        for (int i = 0; i < 2 * half; ++i) x.push_back(i < half ? 0 : 1);
        y = x;
        for (int i = 0; i < flips; ++i) y[(std::size_t)i] = 1;
        for (int i = 0; i < flips; ++i) y[(std::size_t)(half + i)] = 0;
        return std::make_pair(x, y);
    };

    {
        auto [intended, annotated] = balanced(500, 100);
        auto batch = gate_batch(intended);
        auto gate = kappa_gate(batch, [&](const SyntheticSample& s) {
            return std::optional<int>(annotated[std::stoul(s.text)]);
        });
        require(gate.status == GateStatus::Accepted, "kappa 0.60 must be accepted");
    }
    {
        auto [intended, annotated] = balanced(2000, 401);
        auto batch = gate_batch(intended);
        auto gate = kappa_gate(batch, [&](const SyntheticSample& s) {
            return std::optional<int>(annotated[std::stoul(s.text)]);
        });
        require(gate.status == GateStatus::Rejected, "kappa 0.599 must be rejected");
        require_close(gate.verdict.kappa, 0.599, 1e-12, "kappa 0.599 value");
    }
}

// ---------------------------------------------------------------------
// 3. Self-BLEU fixtures
// ---------------------------------------------------------------------

void self_bleu_fixtures() {
    std::vector<std::string> identical = {"a b c d e", "a b c d e"};
    require_close(self_bleu(identical), 1.0, 1e-6, "identical texts");

    std::vector<std::string> disjoint = {"alpha bravo charlie delta", "echo foxtrot golf"};
    require(self_bleu(disjoint) < 0.1, "disjoint vocabulary must score < 0.1");

    SplitMix64 rng(31415);
    std::vector<std::string> vocab = {"rent", "exam", "sleep", "job", "alone",
                                      "friend", "family", "plan", "worry", "hope"};
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
        const double base = self_bleu(texts);
        std::vector<std::string> shuffled = texts;
        deterministic_shuffle(shuffled, rng);
        require_close(self_bleu(shuffled), base, 1e-12, "permutation invariance");
    }
}

// ---------------------------------------------------------------------
// 4. Augmentation plan exactness
// ---------------------------------------------------------------------

void augmentation_plan_exactness() {
    ClassCounts counts;
    counts.counts = {356, 60, 130, 85, 95, 48, 97, 968, 28};  // level 7 = 968, level 8 = 28

    for (int k : {1, 2, 5, 8, 10}) {
        auto plan = plan_augmentation(counts, AugmentationStrategy::parse(
                                                  "x" + std::to_string(k)));
        require(plan.target_for(7) == 0, "label 7 must stay unaugmented under times-k");
        for (int label = 0; label < 9; ++label) {
            if (label == 7) continue;
            const std::int64_t original = counts.at(label);
            require(original + plan.target_for(label) == std::int64_t(k) * original,
                    "times-" + std::to_string(k) + " total for label " +
                        std::to_string(label));
        }
    }
    auto cap = plan_augmentation(counts, AugmentationStrategy::parse("cap:500"));
    require(cap.target_for(7) == 0, "label 7 must stay unaugmented under cap");
    require(cap.target_for(8) == 472, "cap(500) for label 8 must be exactly 472");
    for (int label = 0; label < 9; ++label) {
        if (label == 7) continue;
        require(counts.at(label) + cap.target_for(label) <= 500, "cap(500) total bound");
    }
}

// ---------------------------------------------------------------------
// 5. DMRS pipeline oracle
// ---------------------------------------------------------------------

void dmrs_pipeline_oracle() {
    const DmrsCatalog& catalog = testsupport::shipped_catalog();
    SplitMix64 rng(60601);

    auto oracle_profile = [&](const std::vector<double>& scores) {
        std::array<double, 30> sums{}, ns{};
        for (std::size_t j = 0; j < catalog.indicators.size(); ++j) {
            std::size_t pos = catalog.mechanism_position(catalog.indicators[j].mechanism_id);
            sums[pos] += scores[j];
            ns[pos] += 1;
        }
        std::array<double, 30> out{};
        double total = 0;
        for (std::size_t m = 0; m < 30; ++m) {
            out[m] = ns[m] > 0 ? sums[m] / ns[m] : 0.0;
            total += out[m];
        }
        if (total <= 0) {
            out.fill(1.0 / 30);
        } else {
            for (double& v : out) v /= total;
        }
        return out;
    };
    auto oracle_level = [&](const std::array<double, 30>& profile) {
        std::array<double, 8> mass{};
        for (std::size_t m = 0; m < 30; ++m) {
            mass[(std::size_t)catalog.mechanisms[m].level_id] += profile[m];
        }
        int best = 1;
        for (int l = 2; l <= 7; ++l) {
            if (mass[(std::size_t)l] > mass[(std::size_t)best]) best = l;
        }
        return best;
    };

    for (int round = 0; round < 100; ++round) {
        std::vector<double> scores(150);
        for (double& s : scores) s = rng.next_unit();
        DefenseProfile profile = aggregate_mechanisms(scores, catalog);
        auto expected = oracle_profile(scores);
        for (std::size_t m = 0; m < 30; ++m) {
            require_close(profile.scores[m], expected[m], 1e-9, "profile oracle");
        }
        require_close(profile.sum(), 1.0, 1e-9, "profile sums to 1");
        require(dmrs_level(profile, catalog) == oracle_level(profile.scores), "level oracle");

        DefenseProfile scaled = profile;
        const double factor = 0.01 + 10.0 * rng.next_unit();
        for (double& s : scaled.scores) s *= factor;
        require(dmrs_level(scaled, catalog) == dmrs_level(profile, catalog),
                "argmax scale invariance");
    }

    for (int probe = 0; probe < 15; ++probe) {
        const std::size_t j = rng.next_below(150);
        std::vector<double> onehot(150, 0.0);
        onehot[j] = 1.0;
        DefenseProfile profile = aggregate_mechanisms(onehot, catalog);
        const int owner = catalog.mechanism_by_id(catalog.indicators[j].mechanism_id).level_id;
        require(dmrs_level(profile, catalog) == owner, "one-hot indicator maps to its level");
    }
}

// ---------------------------------------------------------------------
// 6. Fusion shape and gradient suite
// ---------------------------------------------------------------------

void fusion_shape_and_gradients() {
    const auto start = std::chrono::steady_clock::now();
    FusionConfig config;
    require(config.fused_dim == 832 && config.text_dim + 2 * config.branch_out == 832,
            "fusion width must be 768+32+32 = 832");

    FusionModel model = init_model(config, 321);
    SplitMix64 rng(8675309);

    auto random_matrix = [&](std::size_t rows, std::size_t cols, double scale) {
        nn::Matrix m(rows, cols);
        for (double& v : m.data) v = scale * rng.next_gaussian();
        return m;
    };

    nn::Matrix emb = random_matrix(6, 768, 0.5);
    nn::Matrix heur = random_matrix(6, 7, 0.5);
    nn::Matrix dmrs = random_matrix(6, 30, 0.2);
    nn::Matrix probs = model.forward(emb, heur, dmrs, true);
    for (std::size_t r = 0; r < probs.rows; ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < 9; ++c) sum += probs.at(r, c);
        require_close(sum, 1.0, 1e-6, "probability simplex");
    }

    for (int probe = 0; probe < 10; ++probe) {
        nn::Matrix pe = random_matrix(4, 768, 0.5);
        nn::Matrix ph = random_matrix(4, 7, 0.5);
        nn::Matrix pd = random_matrix(4, 30, 0.2);
        std::vector<int> labels;
        for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.next_below(9)));

        model.zero_grads();
        nn::Matrix logits = model.forward_logits(pe, ph, pd, nn::Mode::Eval, true);
        nn::Matrix grad_logits;
        nn::smoothed_cross_entropy(logits, labels, 0.1, 9, &grad_logits);
        model.backward(grad_logits);

        auto views = model.params();
        // 1e-6 denominator floor: an absolute bound below fd resolution
        const double h = 1e-5;
        for (int sample = 0; sample < 24; ++sample) {
            auto& view = views[rng.next_below(views.size())];
            const std::size_t offset = rng.next_below(view.size);
            const double analytic = view.grad[offset];
            const double original = view.value[offset];

            auto loss_at = [&](double value) {
                view.value[offset] = value;
                nn::Matrix l = model.forward_logits(pe, ph, pd, nn::Mode::Eval, false);
                view.value[offset] = original;
                return nn::smoothed_cross_entropy(l, labels, 0.1, 9, nullptr);
            };
            const double fd = (loss_at(original + h) - loss_at(original - h)) / (2 * h);
            const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-6});
            require(std::abs(analytic - fd) / denom < 1e-4,
                    "gradient probe " + std::to_string(probe) + " relative error");
        }
    }
    require(elapsed_since(start) < 30.0, "gradient suite exceeded 30 s");
}

// ---------------------------------------------------------------------
// 7. Training behavior on a separable toy set
// ---------------------------------------------------------------------

void training_behavior() {
    const auto start = std::chrono::steady_clock::now();
    auto train_rows = testsupport::toy_rows(20, 1);  // 180 rows
    auto dev_rows = testsupport::toy_rows(10, 2);    // 90 rows
    StubTextEncoder encoder(404);

    FusionConfig config;  // batch 16, lr 1e-6 / 1e-4, wd 1e-2, eps 0.1, <= 20 epochs
    config.seed = 7;
    TrainResult result = train(train_rows, dev_rows, config, encoder);

    require(result.history.epochs.size() <= 20, "must stay within 20 epochs");
    require(result.history.best_epoch >= 1, "best epoch recorded");
    require(static_cast<int>(result.history.epochs.size()) - result.history.best_epoch <=
                config.patience,
            "early stopping must halt within patience of the dev macro-F1 peak");

    const auto& best =
        result.history.epochs[static_cast<std::size_t>(result.history.best_epoch - 1)];
    for (const auto& e : result.history.epochs) {
        require(best.dev_macro_f1 >= e.dev_macro_f1, "best epoch dominates dev macro-F1");
    }

    // best-epoch restore: recomputed dev macro-F1 equals the recorded best
    std::vector<int> dev_golds;
    std::vector<int> dev_preds;
    for (const auto& row : dev_rows) dev_golds.push_back(*row.label);
    for (const auto& p : predict(result.model, dev_rows, encoder)) dev_preds.push_back(p.label);
    require_close(evaluate(dev_preds, dev_golds).macro_f1, best.dev_macro_f1, 1e-12,
                  "restored weights reproduce the best epoch's dev macro-F1");

    auto preds = predict(result.model, train_rows, encoder);
    int correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].label == *train_rows[i].label) ++correct;
    }
    const double train_acc = double(correct) / double(preds.size());
    require(train_acc >= 0.95,
            "train accuracy " + std::to_string(train_acc) + " below 0.95");
    require(elapsed_since(start) < 180.0, "training exceeded 3 min");
}

// ---------------------------------------------------------------------
// 8. End-to-end smoke with manifests
// ---------------------------------------------------------------------

void end_to_end_smoke() {
    const auto start = std::chrono::steady_clock::now();
    testsupport::TempDir dir("acceptance_smoke");
    PipelineConfig cfg;
    cfg.corpus_path = testsupport::data_path("fixtures/smoke_corpus.jsonl");
    cfg.catalog_path = testsupport::data_path("dmrs_catalog.json");
    cfg.supplementary_path = testsupport::data_path("supplementary_defenses.json");
    cfg.output_root = dir.file("out");
    cfg.backends.kind = "stub";
    cfg.strategy = AugmentationStrategy::parse("x2");
    cfg.on_reject = OnReject::Continue;
    cfg.fusion.max_epochs = 4;
    cfg.fusion.patience = 4;

    PipelineResult first = run_pipeline(cfg);
    require(first.exit_code == 0, "pipeline failed: " + first.message);
    for (const auto& stage : pipeline_stage_names()) {
        require(first.stages.at(stage) == StageOutcome::Ran, "stage " + stage + " must run");
    }

    json qc = json::parse(read_text_file(cfg.output_root + "/qc/qc_report.json"));
    require(qc.contains("classes") && !qc["classes"].empty(), "qc report has class rows");
    for (const auto& row : qc["classes"]) {
        for (const char* col : {"class", "label", "n", "self_bleu", "semantic_adherence"}) {
            require(row.contains(col), std::string("qc column ") + col);
        }
    }

    json report = json::parse(read_text_file(cfg.output_root + "/eval/report.json"));
    for (const char* field : {"accuracy", "macro_precision", "macro_recall", "macro_f1",
                              "per_class", "confusion", "confusion_row_norm"}) {
        require(report.contains(field), std::string("metrics field ") + field);
    }

    for (const char* artifact :
         {"analyze/class_distribution.csv", "analyze/trajectories.csv",
          "analyze/magnitude_speed.csv", "analyze/cdi_curve.csv",
          "analyze/opening_up_turns.csv", "analyze/latency_by_label.csv",
          "analyze/turns_per_dialogue.csv", "analyze/tokens_per_dialogue.csv",
          "analyze/mechanism_activations.csv", "eval/per_class_metrics.csv",
          "eval/offdiag_counts.csv", "eval/confusion.csv"}) {
        require(fs::exists(cfg.output_root + "/" + artifact),
                std::string("plot data file ") + artifact);
    }

    PipelineResult second = run_pipeline(cfg);
    require(second.exit_code == 0, "rerun failed");
    for (const auto& [stage, outcome] : second.stages) {
        require(outcome == StageOutcome::Skipped, "rerun must skip stage " + stage);
    }
    require(elapsed_since(start) < 60.0, "smoke exceeded 60 s");
}

// ---------------------------------------------------------------------
// 9. Analytics computation checks
// ---------------------------------------------------------------------

void analytics_checks() {
    // larger jumps constructed to happen over fewer turns
    std::vector<std::vector<TrajectoryPoint>> trajectories = {
        {{0, 7}, {1, 0}}, {{0, 7}, {2, 1}}, {{0, 6}, {3, 2}},
        {{0, 5}, {4, 3}}, {{0, 4}, {5, 3}}, {{0, 0}, {6, 1}},
    };
    TransitionStats stats = transition_stats(trajectories);
    require(stats.pearson_r.has_value(), "pearson r must be defined");
    require(*stats.pearson_r > 0.0, "constructed corpus must correlate positively");

    // reconstructed confusion: 23 of 44 class-6 instances land in column 7
    ConfusionMatrix confusion{};
    confusion[6][7] = 23;
    confusion[6][6] = 18;
    confusion[6][5] = 3;
    confusion[5][7] = 10;
    confusion[0][0] = 50;
    SinkAnalysis sink = sink_analysis(confusion, 7);
    require(sink.absorbed[6] == 23, "class 6 absorption count");
    require_close(sink.absorbed_rate[6], 23.0 / 44.0, 1e-12, "class 6 absorption rate");
    require(std::llround(sink.absorbed_rate[6] * 100.0) == 52, "52% reconstruction");
}

// ---------------------------------------------------------------------
// 10. Checkpoint round-trip
// ---------------------------------------------------------------------

void checkpoint_round_trip() {
    testsupport::TempDir dir("acceptance_ckpt");
    auto rows = testsupport::toy_rows(4, 77);
    std::vector<FeatureRow> probe(rows.begin(), rows.begin() + 32);
    StubTextEncoder encoder(55);
    FusionModel model = init_model(FusionConfig{}, 13);

    auto before = predict(model, probe, encoder);
    save_checkpoint(model, encoder, dir.file("ck"), "0123456789abcdef");

    StubTextEncoder fresh(777);
    LoadedCheckpoint loaded = load_checkpoint(dir.file("ck"), fresh, "0123456789abcdef");
    auto after = predict(loaded.model, probe, fresh);
    require(after.size() == before.size(), "probe size");
    for (std::size_t i = 0; i < before.size(); ++i) {
        require(after[i].label == before[i].label, "label mismatch after round-trip");
        for (int c = 0; c < 9; ++c) {
            require(std::abs(after[i].distribution[(std::size_t)c] -
                             before[i].distribution[(std::size_t)c]) == 0.0,
                    "distribution mismatch after round-trip");
        }
    }
}

}  // namespace

int main() {
    Harness harness;
    harness.run("metric-oracle-equivalence", metric_oracle_equivalence);
    harness.run("kappa-correctness-and-gate", kappa_correctness_and_gate);
    harness.run("self-bleu-fixtures", self_bleu_fixtures);
    harness.run("augmentation-plan-exactness", augmentation_plan_exactness);
    harness.run("dmrs-pipeline-oracle", dmrs_pipeline_oracle);
    harness.run("fusion-shape-and-gradients", fusion_shape_and_gradients);
    harness.run("training-behavior", training_behavior);
    harness.run("end-to-end-smoke", end_to_end_smoke);
    harness.run("analytics-checks", analytics_checks);
    harness.run("checkpoint-round-trip", checkpoint_round_trip);

    if (harness.failures > 0) {
        std::printf("%d criterion(s) failed\n", harness.failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}
