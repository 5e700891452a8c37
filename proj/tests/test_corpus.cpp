#include <doctest.h>

#include <fstream>
#include <set>

#include "psydef/corpus.hpp"
#include "support.hpp"

using namespace psydef;
using testsupport::TempDir;

TEST_CASE("load_corpus: empty file gives empty list") {
    TempDir dir("corpus_empty");
    write_text_file(dir.file("empty.jsonl"), "");
    CHECK(load_corpus(dir.file("empty.jsonl")).empty());
}

TEST_CASE("load_corpus: minimal record round-trips with label preserved") {
    TempDir dir("corpus_min");
    const std::string record =
        R"({"id":"d1","turns":[{"index":0,"speaker":"seeker","text":"I lost my job","label":7},)"
        R"({"index":1,"speaker":"supporter","text":"tell me more"}]})";
    write_text_file(dir.file("one.jsonl"), record + "\n");
    auto dialogues = load_corpus(dir.file("one.jsonl"));
    REQUIRE(dialogues.size() == 1);
    REQUIRE(dialogues[0].turns.size() == 2);
    CHECK(dialogues[0].id == "d1");
    CHECK(dialogues[0].turns[0].label == 7);
    CHECK(dialogues[0].turns[1].speaker == Speaker::Supporter);
    CHECK_FALSE(dialogues[0].turns[1].label.has_value());
}

TEST_CASE("load_corpus: label on supporter turn is rejected naming the turn") {
    TempDir dir("corpus_bad");
    const std::string record =
        R"({"id":"d1","turns":[{"index":0,"speaker":"seeker","text":"hi"},)"
        R"({"index":1,"speaker":"supporter","text":"hello","label":3}]})";
    write_text_file(dir.file("bad.jsonl"), record + "\n");
    CHECK_THROWS_WITH_AS(load_corpus(dir.file("bad.jsonl")),
                         doctest::Contains("turn 1"), ValidationError);
}

TEST_CASE("load_corpus: malformed line reports its line number") {
    TempDir dir("corpus_line");
    const std::string good =
        R"({"id":"d1","turns":[{"index":0,"speaker":"seeker","text":"hi"}]})";
    write_text_file(dir.file("c.jsonl"), good + "\nnot json at all\n");
    CHECK_THROWS_WITH_AS(load_corpus(dir.file("c.jsonl")), doctest::Contains(":2:"),
                         ValidationError);
}

TEST_CASE("load_corpus: duplicate dialogue id is rejected") {
    TempDir dir("corpus_dup");
    const std::string rec =
        R"({"id":"dup","turns":[{"index":0,"speaker":"seeker","text":"hi"}]})";
    write_text_file(dir.file("c.jsonl"), rec + "\n" + rec + "\n");
    CHECK_THROWS_WITH_AS(load_corpus(dir.file("c.jsonl")), doctest::Contains("duplicate"),
                         ValidationError);
}

TEST_CASE("load_corpus: missing file") {
    CHECK_THROWS_AS(load_corpus("/nonexistent/nowhere.jsonl"), IoError);
}

TEST_CASE("corpus round-trip is identity on well-formed corpora") {
    TempDir dir("corpus_rt");
    auto corpus = load_corpus(testsupport::data_path("fixtures/smoke_corpus.jsonl"));
    REQUIRE(corpus.size() == 20);
    save_corpus(corpus, dir.file("copy.jsonl"));
    auto reloaded = load_corpus(dir.file("copy.jsonl"));
    REQUIRE(reloaded.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CHECK(serialize_dialogue_record(reloaded[i]) == serialize_dialogue_record(corpus[i]));
    }
}

TEST_CASE("class_distribution counts labeled seeker turns only") {
    using testsupport::seeker_turn;
    using testsupport::supporter_turn;

    SUBCASE("no labels -> all zero") {
        auto d = testsupport::simple_dialogue(
            "d", {seeker_turn(0, "hello"), supporter_turn(1, "hi")});
        ClassCounts counts = class_distribution({d});
        CHECK(counts.total() == 0);
    }
    SUBCASE("three labels {7,7,0}") {
        auto d = testsupport::simple_dialogue(
            "d", {seeker_turn(0, "a", 7), supporter_turn(1, "s"), seeker_turn(2, "b", 7),
                  supporter_turn(3, "s"), seeker_turn(4, "c", 0)});
        ClassCounts counts = class_distribution({d});
        CHECK(counts.at(7) == 2);
        CHECK(counts.at(0) == 1);
        CHECK(counts.total() == 3);
    }
    SUBCASE("constructed 968 level-7 plus 28 level-8 corpus") {
        std::vector<Dialogue> corpus;
        int made7 = 0, made8 = 0, id = 0;
        while (made7 < 968 || made8 < 28) {
            std::vector<Turn> turns;
            int idx = 0;
            for (int k = 0; k < 4 && made7 < 968; ++k, ++made7)
                turns.push_back(seeker_turn(idx++, "turn text", 7));
            if (made8 < 28) {
                turns.push_back(seeker_turn(idx++, "hm okay", 8));
                ++made8;
            }
            corpus.push_back(testsupport::simple_dialogue("gen" + std::to_string(id++), turns));
        }
        ClassCounts counts = class_distribution(corpus);
        CHECK(counts.at(7) == 968);
        CHECK(counts.at(8) == 28);
        CHECK(counts.total() == 996);
    }
}

TEST_CASE("sum over class_distribution equals labeled seeker turn count") {
    auto corpus = load_corpus(testsupport::data_path("fixtures/smoke_corpus.jsonl"));
    std::int64_t labeled = 0;
    for (const Dialogue& d : corpus) {
        for (const Turn& t : d.turns) {
            if (t.speaker == Speaker::Seeker && t.label) ++labeled;
        }
    }
    CHECK(class_distribution(corpus).total() == labeled);
}

namespace {
std::vector<Dialogue> numbered_dialogues(int n) {
    std::vector<Dialogue> out;
    for (int i = 0; i < n; ++i) {
        out.push_back(testsupport::simple_dialogue(
            "d" + std::to_string(i), {testsupport::seeker_turn(0, "text", 7)}));
    }
    return out;
}
}  // namespace

TEST_CASE("split_corpus: cardinality, determinism, partition") {
    auto dialogues = numbered_dialogues(10);
    auto split = split_corpus(dialogues, {0.8, 0.2}, 0);
    CHECK(split.train.size() == 8);
    CHECK(split.dev.size() == 2);

    // partition: every input id appears exactly once
    std::set<std::string> seen;
    for (const auto& d : split.train) seen.insert(d.id);
    for (const auto& d : split.dev) seen.insert(d.id);
    CHECK(seen.size() == 10);

    auto again = split_corpus(dialogues, {0.8, 0.2}, 0);
    REQUIRE(again.dev.size() == split.dev.size());
    for (std::size_t i = 0; i < split.dev.size(); ++i) {
        CHECK(again.dev[i].id == split.dev[i].id);
    }
}

TEST_CASE("split_corpus: different seeds differ on at least one of 10 shuffles") {
    auto dialogues = numbered_dialogues(10);
    bool any_difference = false;
    for (std::uint64_t round = 0; round < 10 && !any_difference; ++round) {
        auto a = split_corpus(dialogues, {0.8, 0.2}, round * 2);
        auto b = split_corpus(dialogues, {0.8, 0.2}, round * 2 + 1);
        for (std::size_t i = 0; i < a.dev.size(); ++i) {
            if (a.dev[i].id != b.dev[i].id) any_difference = true;
        }
    }
    CHECK(any_difference);
}

TEST_CASE("split_corpus: error paths") {
    auto one = numbered_dialogues(1);
    CHECK_THROWS_AS(split_corpus(one, {0.8, 0.2}, 0), ValidationError);
    auto ten = numbered_dialogues(10);
    CHECK_THROWS_AS(split_corpus(ten, {0.9, 0.3}, 0), ValidationError);  // sum > 1
    CHECK_THROWS_AS(split_corpus(ten, {-0.5, 0.2}, 0), ValidationError);
}
