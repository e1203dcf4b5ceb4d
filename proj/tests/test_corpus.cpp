#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "fixtures.hpp"
#include "moelab/corpus.hpp"
#include "moelab/error.hpp"
#include "moelab/io.hpp"

using namespace moelab;

TEST_CASE("exact dedup keeps first occurrences in order") {
    const std::vector<Document> abc{{"1", "A", "", ""}, {"2", "A", "", ""}, {"3", "B", "", ""}};
    const auto out = exact_dedup(abc);
    REQUIRE(out.size() == 2);
    CHECK(out[0].id == "1");
    CHECK(out[1].id == "3");

    const std::vector<Document> distinct{{"x", "one", "", ""}, {"y", "two", "", ""}, {"z", "three", "", ""}};
    const auto same = exact_dedup(distinct);
    REQUIRE(same.size() == 3);
    CHECK(same[0].id == "x");
    CHECK(same[2].id == "z");
}

TEST_CASE("exact dedup ignores trailing whitespace only") {
    const std::vector<Document> docs{
        {"a", "hello\nworld", "", ""}, {"b", "hello  \nworld\n\n", "", ""}, {"c", " hello\nworld", "", ""}};
    CHECK(exact_dedup(docs).size() == 2);
    CHECK(normalize_for_dedup("a \t\nb  \n") == "a\nb");
}

TEST_CASE("planted exact duplicates leave exactly the originals") {
    const auto docs = fixtures::planted_exact_duplicates(11);
    REQUIRE(docs.size() == 1000);
    const auto once = exact_dedup(docs);
    CHECK(once.size() == 900);
    const auto twice = exact_dedup(once);
    CHECK(twice.size() == once.size());
    for (size_t i = 0; i < once.size(); ++i) CHECK(twice[i].id == once[i].id);
}

TEST_CASE("minhash signatures are deterministic and seed dependent") {
    const std::string text = "the quick brown fox jumps over the lazy dog";
    const auto a = minhash_signature(text);
    const auto b = minhash_signature(text);
    CHECK(a.values == b.values);
    CHECK(a.values.size() == 128);
    CHECK_FALSE(a.short_text);
    CHECK(jaccard_estimate(a, b) == 1.0);
    const auto other = minhash_signature(text, {.seed = 1});
    CHECK(other.values != a.values);
    CHECK_THROWS_AS(jaccard_estimate(a, other), InputError);
    CHECK_THROWS_AS(jaccard_estimate(a, minhash_signature(text, {.num_hashes = 64})), InputError);
}

TEST_CASE("short texts are hashed whole and flagged") {
    const auto s = minhash_signature("abc");
    CHECK(s.short_text);
    CHECK(jaccard_estimate(s, minhash_signature("abc")) == 1.0);
    CHECK(jaccard_estimate(s, minhash_signature("abd")) < 0.1);
    CHECK(minhash_signature("").short_text);
}

TEST_CASE("shingles are counted in characters") {
    const std::string cyrillic = "\xd0\xbf\xd1\x80\xd0\xb8\xd0\xb2\xd0\xb5\xd1\x82";
    CHECK(minhash_signature(cyrillic).short_text == false);
    CHECK(minhash_signature(cyrillic.substr(0, 8)).short_text);
}

TEST_CASE("jaccard estimate is symmetric and tracks the brute-force value") {
    Rng rng(2024);
    int within_example_tolerance = 0;
    int within_bound = 0;
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        const auto [a, b] = fixtures::constructed_pair(rng, 0.5);
        const double truth = fixtures::true_jaccard(a, b);
        const auto sa = minhash_signature(a, {.seed = static_cast<std::uint64_t>(t)});
        const auto sb = minhash_signature(b, {.seed = static_cast<std::uint64_t>(t)});
        const double est = jaccard_estimate(sa, sb);
        CHECK(est == jaccard_estimate(sb, sa));
        if (t == 0) CHECK(std::abs(truth - 0.5) < 0.01);
        within_example_tolerance += std::abs(est - truth) <= 0.12;
        within_bound += std::abs(est - truth) <= 3.0 / std::sqrt(128.0);
    }
    CHECK(within_bound >= 990);
    CHECK(within_example_tolerance >= 990);
}

TEST_CASE("minhash dedup on disjoint and identical documents") {
    Rng rng(3);
    std::vector<Document> disjoint;
    for (int i = 0; i < 20; ++i) disjoint.push_back({fixtures::doc_id(i), fixtures::random_letters(rng, 200), "", ""});
    const auto none = minhash_dedup(disjoint);
    CHECK(none.clusters.empty());
    CHECK(none.survivors.size() == 20);

    std::vector<Document> copies{{"b", "same text here, repeated", "", ""},
                                 {"a", "same text here, repeated", "", ""},
                                 {"c", "different words entirely", "", ""}};
    for (double threshold : {0.1, 0.5, 1.0}) {
        const auto r = minhash_dedup(copies, {.threshold = threshold});
        REQUIRE(r.clusters.size() == 1);
        CHECK(r.clusters[0].survivor == "a");
        REQUIRE(r.survivors.size() == 2);
        CHECK(r.survivors[0].id == "a");
        CHECK(r.survivors[1].id == "c");
    }
}

TEST_CASE("minhash dedup validates its configuration") {
    const std::vector<Document> docs{{"a", "text", "", ""}};
    CHECK_THROWS_AS(minhash_dedup(docs, {.bands = 7}), ConfigError);
    CHECK_THROWS_AS(minhash_dedup(docs, {.threshold = 0.0}), ConfigError);
    CHECK_THROWS_AS(minhash_dedup(docs, {.threshold = 1.5}), ConfigError);
    const std::vector<Document> dup_ids{{"a", "x", "", ""}, {"a", "y", "", ""}};
    CHECK_THROWS_AS(minhash_dedup(dup_ids), InputError);
}

TEST_CASE("near-duplicate fixture is caught without false merges") {
    const auto f = fixtures::near_duplicate_fixture(77);
    for (size_t p = 0; p < 5; ++p) {
        const double j = fixtures::true_jaccard(f.docs[2 * p].text, f.docs[2 * p + 1].text);
        CHECK(std::abs(j - 0.9) < 0.01);
    }
    const auto lsh = minhash_dedup(f.docs, {.threshold = 0.8});
    const auto score = fixtures::score_dedup(f, lsh);
    CHECK(score.pairs_caught >= 48);
    CHECK(score.false_merges == 0);

    const auto exact = minhash_dedup(f.docs, {.threshold = 0.8, .all_pairs = true});
    const auto exact_score = fixtures::score_dedup(f, exact);
    CHECK(exact_score.false_merges == 0);
    CHECK(exact_score.pairs_caught >= score.pairs_caught);
    CHECK(exact.candidate_pairs == f.docs.size() * (f.docs.size() - 1) / 2);
}

TEST_CASE("dedup results do not depend on worker count or input order") {
    const auto f = fixtures::near_duplicate_fixture(5);
    const auto one = minhash_dedup(f.docs, {.workers = 1});
    const auto four = minhash_dedup(f.docs, {.workers = 4});
    CHECK(one.report() == four.report());

    std::vector<Document> reversed(f.docs.rbegin(), f.docs.rend());
    const auto back = minhash_dedup(reversed);
    CHECK(back.report().substr(back.report().find('\n')) == one.report().substr(one.report().find('\n')));
}

TEST_CASE("corpus JSONL and directory input") {
    std::istringstream in(
        "{\"id\": \"d1\", \"text\": \"hello\", \"lang\": \"en\", \"source\": \"web\"}\n"
        "\n"
        "{\"id\": 7, \"text\": \"\\u043f\\u0440\\u0438\"}\n");
    const auto docs = read_corpus_jsonl(in);
    REQUIRE(docs.size() == 2);
    CHECK(docs[0].lang == "en");
    CHECK(docs[1].id == "7");
    CHECK(docs[1].text == "\xd0\xbf\xd1\x80\xd0\xb8");
    std::istringstream again(corpus_to_jsonl(docs));
    const auto back = read_corpus_jsonl(again);
    CHECK(back[1].text == docs[1].text);

    std::istringstream bad("{\"id\": \"x\"}\n");
    CHECK_THROWS_AS(read_corpus_jsonl(bad), InputError);
    std::istringstream dup("{\"id\": \"x\", \"text\": \"a\"}\n{\"id\": \"x\", \"text\": \"b\"}\n");
    CHECK_THROWS_AS(read_corpus_jsonl(dup), InputError);

    const auto dir = std::filesystem::temp_directory_path() / "moelab_corpus_dir_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    write_file_atomic(dir / "b.txt", "second");
    write_file_atomic(dir / "a.txt", "first");
    const auto from_dir = read_corpus(dir);
    REQUIRE(from_dir.size() == 2);
    CHECK(from_dir[0].id == "a.txt");
    CHECK(from_dir[0].text == "first");
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(read_corpus(dir / "missing.jsonl"), InputError);
}

TEST_CASE("synthetic grammar text") {
    const std::string a = synthetic_grammar_text(1000, 1);
    CHECK(a.size() == 1000);
    CHECK(a == synthetic_grammar_text(1000, 1));
    CHECK(a != synthetic_grammar_text(1000, 2));
    CHECK(a.find(". ") != std::string::npos);
}
