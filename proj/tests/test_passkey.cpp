#include <doctest.h>

#include <filesystem>
#include <set>

#include "moelab/error.hpp"
#include "moelab/io.hpp"
#include "moelab/passkey.hpp"

using namespace moelab;

namespace {

size_t occurrences(const std::string& haystack, const std::string& needle) {
    size_t n = 0;
    for (size_t at = haystack.find(needle); at != std::string::npos; at = haystack.find(needle, at + 1)) ++n;
    return n;
}

bool within_budget(size_t tokens, size_t budget) {
    return static_cast<double>(tokens) >= 0.98 * static_cast<double>(budget) &&
           static_cast<double>(tokens) <= 1.02 * static_cast<double>(budget);
}

BPEVocab trained_tokenizer() {
    std::vector<std::string> corpus;
    for (int i = 0; i < 4; ++i) corpus.push_back(passkey_generate(400, "12345", i, BPEVocab::byte_identity()).document);
    return train_bpe(corpus, {.target_vocab_size = 300, .mode = PretokenizeMode::Whitespace});
}

}  // namespace

TEST_CASE("small budget document contains the key sentence once") {
    const BPEVocab bytes = BPEVocab::byte_identity();
    const PasskeyItem item = passkey_generate(64, "41732", 3, bytes);
    CHECK(occurrences(item.document, "The pass key is 41732.") == 1);
    CHECK(occurrences(item.document, "41732") == 1);
    CHECK(within_budget(encode(bytes, item.document).size(), 64));
    CHECK(item.document_tokens == encode(bytes, item.document).size());
    CHECK(passkey_score(item.document, item.key));
}

TEST_CASE("generation is deterministic per seed") {
    const BPEVocab bytes = BPEVocab::byte_identity();
    CHECK(passkey_generate(300, "90210", 8, bytes).document == passkey_generate(300, "90210", 8, bytes).document);
    CHECK(passkey_generate(300, "90210", 8, bytes).document != passkey_generate(300, "90210", 9, bytes).document);
}

TEST_CASE("placement sweep gives distinct documents with one key each") {
    const BPEVocab bytes = BPEVocab::byte_identity();
    std::set<std::string> docs;
    for (int i = 1; i <= 9; ++i) {
        const PasskeyItem item = passkey_generate(512, "55501", 4, bytes, i / 10.0);
        CHECK(occurrences(item.document, passkey_sentence("55501")) == 1);
        CHECK(within_budget(item.document_tokens, 512));
        docs.insert(item.document);
    }
    CHECK(docs.size() == 9);
}

TEST_CASE("budget holds under a trained tokenizer") {
    const BPEVocab vocab = trained_tokenizer();
    REQUIRE(vocab.size() > 256);
    for (size_t budget : {128u, 512u, 2048u}) {
        const PasskeyItem item = passkey_generate(budget, "31337", budget, vocab);
        CHECK(within_budget(encode(vocab, item.document).size(), budget));
        CHECK(occurrences(item.document, passkey_sentence("31337")) == 1);
    }
}

TEST_CASE("passkey generation errors") {
    const BPEVocab bytes = BPEVocab::byte_identity();
    CHECK_THROWS_AS(passkey_generate(8, "41732", 0, bytes), InputError);
    CHECK_THROWS_AS(passkey_generate(64, "", 0, bytes), InputError);
    CHECK_THROWS_AS(passkey_generate(64, "12a", 0, bytes), InputError);
    CHECK_THROWS_AS(passkey_generate(64, "1", 0, bytes, 1.5), InputError);
}

TEST_CASE("scoring") {
    CHECK(passkey_score("the key is 41732", "41732"));
    CHECK_FALSE(passkey_score("", "41732"));
    CHECK_FALSE(passkey_score("the key is 4173", "41732"));
    CHECK(passkey_oracle("filler. The pass key is 98765. more") == "98765");
    CHECK(passkey_oracle("no key here").empty());
}

TEST_CASE("cheating oracle scores a full suite perfectly") {
    const BPEVocab bytes = BPEVocab::byte_identity();
    const std::vector<size_t> budgets{256, 512};
    const auto suite = passkey_suite(budgets, 25, 42, bytes);
    REQUIRE(suite.size() == 50);
    CHECK(suite[0].id == "0000");
    CHECK(suite[49].budget == 512);

    const auto root = std::filesystem::temp_directory_path() / "moelab_passkey_test";
    std::filesystem::remove_all(root);
    write_passkey_suite(root / "suite", suite);
    const auto entries = read_passkey_suite(root / "suite");
    REQUIRE(entries.size() == 50);
    CHECK(entries[7].answer == suite[7].item.key);

    write_oracle_outputs(root / "suite", root / "oracle");
    const PasskeyScore oracle = score_passkey_outputs(root / "suite", root / "oracle");
    CHECK(oracle.total == 50);
    CHECK(oracle.accuracy() == 1.0);

    std::filesystem::create_directories(root / "partial");
    write_file_atomic(root / "partial" / "0000.output.txt", suite[0].item.key);
    write_file_atomic(root / "partial" / "0001.output.txt", "no idea");
    const PasskeyScore partial = score_passkey_outputs(root / "suite", root / "partial");
    CHECK(partial.correct == 1);
    CHECK(partial.missing == 48);
    CHECK(partial.accuracy() == doctest::Approx(0.02));
    std::filesystem::remove_all(root);
}
