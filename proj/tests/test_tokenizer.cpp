#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "moelab/error.hpp"
#include "moelab/random.hpp"
#include "moelab/tokenizer.hpp"

using namespace moelab;

namespace {

std::string random_bytes(Rng& rng, size_t max_len) {
    const size_t n = rng.below(max_len + 1);
    std::string s;
    const bool utf8 = rng.below(2) == 0;
    static const char* pieces[] = {"a", "b", " ", "\n", "\xd0\x9f", "\xd1\x80", "\xe4\xb8\xad", "\xf0\x9f\x98\x80", "th", "e"};
    while (s.size() < n) {
        if (utf8) {
            s += pieces[rng.below(10)];
        } else {
            s += static_cast<char>(rng.below(256));
        }
    }
    return s;
}

std::vector<std::string> sample_corpus() {
    return {"the cat sat on the mat", "the dog sat on the log", "int main() { return 0; }",
            "\xd0\x9f\xd1\x80\xd0\xb8\xd0\xb2\xd0\xb5\xd1\x82 \xd0\xbc\xd0\xb8\xd1\x80",
            "for (int i = 0; i < n; ++i) { sum += i; }", "the theory of the thing"};
}

BPEVocab prefix_of(const BPEVocab& full, size_t merges) {
    BPEVocab v = BPEVocab::byte_identity(full.mode());
    for (size_t i = 0; i < merges; ++i) v.add_merge(full.merges()[i].first, full.merges()[i].second);
    return v;
}

}  // namespace

TEST_CASE("first merge of a repeated word is the most frequent pair") {
    const std::vector<std::string> corpus{"aaab aaab"};
    const BPEVocab v = train_bpe(corpus, {.target_vocab_size = 257});
    REQUIRE(v.merges().size() == 1);
    CHECK(v.bytes(v.merges()[0].first) == "a");
    CHECK(v.bytes(v.merges()[0].second) == "a");
    CHECK(v.bytes(256) == "aa");
}

TEST_CASE("frequency ties break toward the smallest byte values") {
    const std::vector<std::string> corpus{"xy", "ab", "xy", "ab"};
    const BPEVocab v = train_bpe(corpus, {.target_vocab_size = 257, .mode = PretokenizeMode::Whitespace});
    REQUIRE(v.merges().size() == 1);
    CHECK(v.bytes(256) == "ab");
}

TEST_CASE("target of 256 yields the byte-identity vocabulary") {
    const auto corpus = sample_corpus();
    const BPEVocab v = train_bpe(corpus, {.target_vocab_size = 256});
    CHECK(v.merges().empty());
    CHECK(v.size() == 256);
    CHECK(encode(v, "ab").size() == 2);
}

TEST_CASE("training stops when no pair repeats") {
    const std::vector<std::string> corpus{"abcdefg"};
    const BPEVocab v = train_bpe(corpus, {.target_vocab_size = 400});
    CHECK(v.merges().empty());
}

TEST_CASE("training is deterministic and rejects an empty corpus") {
    const auto corpus = sample_corpus();
    const BPEVocab a = train_bpe(corpus, {.target_vocab_size = 300, .seed = 7});
    const BPEVocab b = train_bpe(corpus, {.target_vocab_size = 300, .seed = 7});
    CHECK(a.merges() == b.merges());
    CHECK(a.to_text() == b.to_text());
    CHECK_THROWS_AS(train_bpe(std::vector<std::string>{}, {}), InputError);
}

TEST_CASE("merge operands are always defined before use") {
    const auto corpus = sample_corpus();
    const BPEVocab v = train_bpe(corpus, {.target_vocab_size = 320});
    for (size_t i = 0; i < v.merges().size(); ++i) {
        CHECK(v.merges()[i].first < 256 + static_cast<int>(i));
        CHECK(v.merges()[i].second < 256 + static_cast<int>(i));
    }
}

TEST_CASE("protected tokens become single tokens") {
    const auto corpus = sample_corpus();
    BpeOptions opts{.target_vocab_size = 320, .protected_tokens = {"\\begin{equation}", "return"}};
    const BPEVocab v = train_bpe(corpus, opts);
    CHECK(encode(v, "\\begin{equation}").size() == 1);
    CHECK(encode(v, "return").size() == 1);
}

TEST_CASE("whitespace pretokenization starts chunks at whitespace runs") {
    const auto chunks = pretokenize("hello world  again\n", PretokenizeMode::Whitespace);
    REQUIRE(chunks.size() == 4);
    CHECK(chunks[0] == "hello");
    CHECK(chunks[1] == " world");
    CHECK(chunks[2] == "  again");
    CHECK(chunks[3] == "\n");
    CHECK(pretokenize("", PretokenizeMode::Whitespace).empty());
    CHECK(pretokenize("a b", PretokenizeMode::Bytes).size() == 1);
}

TEST_CASE("encode and decode round-trip on random byte strings") {
    const auto corpus = sample_corpus();
    const BPEVocab bytes_vocab = train_bpe(corpus, {.target_vocab_size = 330});
    const BPEVocab ws_vocab = train_bpe(corpus, {.target_vocab_size = 330, .mode = PretokenizeMode::Whitespace});
    CHECK(encode(bytes_vocab, "").empty());
    CHECK(decode(bytes_vocab, std::vector<int>{}).empty());
    Rng rng(99);
    int failures = 0;
    for (int i = 0; i < 10000; ++i) {
        const std::string s = random_bytes(rng, 48);
        const BPEVocab& v = (i % 2 == 0) ? bytes_vocab : ws_vocab;
        if (decode(v, encode(v, s)) != s) ++failures;
    }
    CHECK(failures == 0);
}

TEST_CASE("decode rejects unknown ids") {
    const BPEVocab v = BPEVocab::byte_identity();
    CHECK_THROWS_AS(decode(v, std::vector<int>{65, 256}), InputError);
    CHECK_THROWS_AS(decode(v, std::vector<int>{-1}), InputError);
}

TEST_CASE("adding merges never increases the token count") {
    const auto corpus = sample_corpus();
    const BPEVocab full = train_bpe(corpus, {.target_vocab_size = 340});
    Rng rng(5);
    std::vector<std::string> texts = corpus;
    for (int i = 0; i < 40; ++i) texts.push_back(random_bytes(rng, 64));
    std::vector<size_t> previous(texts.size(), SIZE_MAX);
    for (size_t m = 0; m <= full.merges().size(); ++m) {
        const BPEVocab v = prefix_of(full, m);
        for (size_t t = 0; t < texts.size(); ++t) {
            const size_t n = encode(v, texts[t]).size();
            CHECK(n <= previous[t]);
            previous[t] = n;
        }
    }
}

TEST_CASE("character counting follows UTF-8 scalar values") {
    CHECK(count_chars("") == 0);
    CHECK(count_chars("hello") == 5);
    CHECK(count_chars("\xd0\x9f\xd1\x80") == 2);
    CHECK(count_chars("\xe4\xb8\xad") == 1);
    CHECK(count_chars("\xf0\x9f\x98\x80") == 1);
    CHECK(count_chars("\xff\xfe") == 2);
    CHECK(count_chars("\xe4\xb8") == 2);
    CHECK(count_chars("\xed\xa0\x80") == 3);
    CHECK(count_chars("\xc0\xaf") == 2);
}

TEST_CASE("chars per token") {
    const BPEVocab identity = BPEVocab::byte_identity();
    CHECK(chars_per_token(identity, {"ascii", {"hello world", "int x = 1;"}}) == 1.0);

    const std::string russian = "\xd0\x9f\xd1\x80\xd0\xb8\xd0\xb2\xd0\xb5\xd1\x82";
    CHECK(chars_per_token(identity, {"ru", {russian}}) == doctest::Approx(0.5));

    const std::vector<std::string> corpus{"hello hello hello world world world"};
    const BPEVocab ws = train_bpe(corpus, {.target_vocab_size = 400, .mode = PretokenizeMode::Whitespace});
    REQUIRE(encode(ws, "hello world").size() == 2);
    CHECK(chars_per_token(ws, {"greeting", {"hello world"}}) == 5.5);

    CHECK_THROWS_AS(chars_per_token(identity, {"empty", {}}), InputError);
    CHECK_THROWS_AS(chars_per_token(identity, {"blank", {""}}), InputError);
}

TEST_CASE("mean score reproduces the published comparison rows") {
    const std::vector<double> giga1{3.57, 4.15, 4.62, 3.61, 4.18, 3.34, 4.47};
    const std::vector<double> gpt4o{3.74, 4.43, 4.88, 3.39, 3.40, 3.07, 4.68};
    ComparisonTable t;
    t.domains = {"C", "Java", "C#", "ArXiv", "Ru", "Ar", "En"};
    t.rows = {{"gpt-4o", gpt4o, 0.0}, {"giga_tokenizer_1", giga1, 0.0}};
    finalize_rows(t.rows);
    CHECK(t.rows[0].tokenizer == "giga_tokenizer_1");
    CHECK(std::abs(t.rows[0].mean - 3.99) < 0.005);
    CHECK(std::abs(t.rows[1].mean - 3.94) < 0.005);
    const std::string text = t.to_text();
    CHECK(text.find("3.99") != std::string::npos);
    CHECK(text.find("3.94") != std::string::npos);
    const std::string csv = t.to_csv();
    CHECK(csv.rfind("tokenizer,C,Java,C#,ArXiv,Ru,Ar,En,mean_score\n", 0) == 0);
    CHECK(csv.find("giga_tokenizer_1,3.570000") != std::string::npos);
}

TEST_CASE("published row order is descending by mean") {
    const std::vector<std::pair<std::string, std::vector<double>>> published{
        {"giga_tokenizer_1", {3.57, 4.15, 4.62, 3.61, 4.18, 3.34, 4.47}},
        {"giga_tokenizer_2", {3.56, 4.14, 4.60, 3.61, 4.14, 3.30, 4.44}},
        {"gpt-4o", {3.74, 4.43, 4.88, 3.39, 3.40, 3.07, 4.68}},
        {"giga_tokenizer_5", {3.39, 3.97, 4.44, 3.54, 4.20, 3.50, 4.43}},
        {"giga_tokenizer_3", {3.51, 4.11, 4.59, 3.54, 4.04, 3.25, 4.35}},
        {"giga_tokenizer_4", {3.50, 4.11, 4.58, 3.53, 4.00, 3.21, 4.33}},
        {"llama-3", {3.75, 4.54, 4.99, 3.38, 3.02, 2.60, 4.62}},
        {"mistral-nemo", {3.38, 4.06, 4.50, 3.49, 3.18, 3.24, 4.51}},
        {"qwen2", {3.69, 4.52, 4.95, 3.31, 2.70, 2.56, 4.50}},
        {"gpt-4", {3.74, 4.55, 4.98, 3.38, 2.04, 1.44, 4.62}},
        {"nemotron-4-256k", {2.82, 3.34, 3.76, 3.25, 3.20, 2.93, 4.57}},
        {"deepseek-coder-v2", {2.95, 3.51, 3.92, 3.35, 2.39, 1.11, 4.42}},
        {"deepseek-v2", {2.95, 3.51, 3.92, 3.35, 2.39, 1.11, 4.42}},
        {"mistral-large", {2.75, 3.26, 3.64, 3.14, 2.46, 1.13, 4.04}},
    };
    std::vector<ComparisonRow> rows;
    for (auto it = published.rbegin(); it != published.rend(); ++it) rows.push_back({it->first, it->second, 0.0});
    finalize_rows(rows);
    REQUIRE(rows.size() == published.size());
    for (size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].tokenizer == published[i].first);
}

TEST_CASE("compare_tokenizers scores every pair independently of worker count") {
    const auto corpus = sample_corpus();
    const BPEVocab identity = BPEVocab::byte_identity();
    const BPEVocab trained = train_bpe(corpus, {.target_vocab_size = 330});
    const std::vector<DomainCorpus> corpora{{"code", {corpus[2], corpus[4]}}, {"prose", {corpus[0], corpus[1]}}};

    const std::vector<NamedVocab> single{{"bytes", &identity}};
    const std::vector<DomainCorpus> one{corpora[0]};
    const ComparisonTable t1 = compare_tokenizers(single, one);
    REQUIRE(t1.rows.size() == 1);
    CHECK(t1.rows[0].mean == t1.rows[0].ratios[0]);

    const std::vector<NamedVocab> twins{{"a", &trained}, {"b", &trained}};
    const ComparisonTable t2 = compare_tokenizers(twins, corpora);
    CHECK(t2.rows[0].ratios == t2.rows[1].ratios);

    const std::vector<NamedVocab> both{{"bytes", &identity}, {"trained", &trained}};
    const ComparisonTable serial = compare_tokenizers(both, corpora, 1);
    const ComparisonTable threaded = compare_tokenizers(both, corpora, 4);
    CHECK(serial.to_csv() == threaded.to_csv());
    CHECK(serial.rows[0].tokenizer == "trained");

    CHECK_THROWS_AS(compare_tokenizers(std::vector<NamedVocab>{}, corpora), InputError);
    CHECK_THROWS_AS(compare_tokenizers(both, std::vector<DomainCorpus>{}), InputError);
}

TEST_CASE("vocab file round trip and validation") {
    const auto corpus = sample_corpus();
    const BPEVocab v = train_bpe(corpus, {.target_vocab_size = 320, .mode = PretokenizeMode::Whitespace});
    const std::string text = v.to_text();
    CHECK(text.rfind("bpe-vocab " + std::to_string(v.size()) + " whitespace\n", 0) == 0);
    CHECK(v.size() > 256);
    const BPEVocab back = BPEVocab::from_text(text);
    CHECK(back.merges() == v.merges());
    CHECK(back.mode() == v.mode());
    CHECK(back.to_text() == text);

    CHECK_THROWS_AS(BPEVocab::from_text(""), InputError);
    CHECK_THROWS_AS(BPEVocab::from_text("bpe-vocab 257 bytes\n300 97 61 61\n"), InputError);
    CHECK_THROWS_AS(BPEVocab::from_text("bpe-vocab 257 bytes\n97 97 61 62\n"), InputError);
    CHECK_THROWS_AS(BPEVocab::from_text("bpe-vocab 258 bytes\n97 97 61 61\n"), InputError);
}
