#include "moelab/passkey.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "moelab/error.hpp"
#include "moelab/io.hpp"
#include "moelab/random.hpp"

namespace moelab {

namespace {

constexpr std::string_view kFiller[] = {
    "The grass is green.", "The sky is blue.", "The sun is yellow.", "Here we go.", "There and back again.",
};

constexpr std::string_view kKeyPrefix = "The pass key is ";

std::string filler_text(std::size_t min_bytes, std::uint64_t seed) {
    Rng rng(seed);
    std::string s;
    while (s.size() < min_bytes) {
        s += kFiller[rng.below(std::size(kFiller))];
        s += ' ';
    }
    return s;
}

std::string assemble(std::string_view filler, std::size_t length, double placement, const std::string& sentence) {
    const std::string_view body = filler.substr(0, length);
    auto at = static_cast<std::size_t>(std::floor(placement * static_cast<double>(body.size())));
    at = std::min(at, body.size());
    while (at > 0 && body[at - 1] != ' ') --at;
    std::string doc(body.substr(0, at));
    doc += sentence;
    if (at < body.size()) {
        doc += ' ';
        doc.append(body.substr(at));
    }
    return doc;
}

std::string case_id(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    return buf;
}

void check_key(std::string_view key) {
    if (key.empty() || !std::all_of(key.begin(), key.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw InputError("pass key must be a non-empty digit string, got '" + std::string(key) + "'");
    }
}

}  // namespace

std::string passkey_sentence(std::string_view key) { return std::string(kKeyPrefix) + std::string(key) + "."; }

PasskeyItem passkey_generate(std::size_t token_budget, std::string_view key, std::uint64_t seed,
                             const BPEVocab& tokenizer, std::optional<double> placement) {
    check_key(key);
    if (placement && !(*placement >= 0.0 && *placement <= 1.0)) throw InputError("placement must be in [0, 1]");
    const double where = placement ? *placement : Rng(mix64(seed)).uniform();
    const std::string sentence = passkey_sentence(key);
    const double lo = 0.98 * static_cast<double>(token_budget);
    const double hi = 1.02 * static_cast<double>(token_budget);

    auto tokens_at = [&](const std::string& filler, std::size_t len) {
        return encode(tokenizer, assemble(filler, len, where, sentence)).size();
    };
    const std::size_t minimal = encode(tokenizer, sentence).size();
    if (static_cast<double>(minimal) > hi) {
        throw InputError("token budget " + std::to_string(token_budget) + " cannot hold the key sentence (" +
                         std::to_string(minimal) + " tokens)");
    }

    std::string filler = filler_text(token_budget + 64, seed);
    while (tokens_at(filler, filler.size()) < token_budget) filler = filler_text(filler.size() * 2, seed);

    std::size_t left = 0, right = filler.size();
    while (left < right) {
        const std::size_t mid = left + (right - left) / 2;
        if (tokens_at(filler, mid) < token_budget) {
            left = mid + 1;
        } else {
            right = mid;
        }
    }
    std::size_t best_len = left;
    std::size_t best_tokens = tokens_at(filler, left);
    const std::size_t from = left >= 3 ? left - 3 : 0;
    for (std::size_t len = from; len <= std::min(filler.size(), left + 3); ++len) {
        const std::size_t t = tokens_at(filler, len);
        const auto gap = [&](std::size_t x) { return x > token_budget ? x - token_budget : token_budget - x; };
        if (gap(t) < gap(best_tokens)) {
            best_tokens = t;
            best_len = len;
        }
    }
    if (static_cast<double>(best_tokens) < lo || static_cast<double>(best_tokens) > hi) {
        throw InputError("could not reach token budget " + std::to_string(token_budget) + " within 2% (closest " +
                         std::to_string(best_tokens) + ")");
    }
    PasskeyItem item;
    item.document = assemble(filler, best_len, where, sentence);
    item.question = "What is the pass key? The pass key is";
    item.key = std::string(key);
    item.document_tokens = best_tokens;
    return item;
}

bool passkey_score(std::string_view output, std::string_view key) {
    return !key.empty() && output.find(key) != std::string_view::npos;
}

std::string passkey_random_key(std::uint64_t seed) {
    Rng rng(seed);
    return std::to_string(10000 + rng.below(90000));
}

std::vector<PasskeyCase> passkey_suite(std::span<const std::size_t> budgets, std::size_t per_budget,
                                       std::uint64_t seed, const BPEVocab& tokenizer) {
    std::vector<PasskeyCase> suite;
    for (std::size_t budget : budgets) {
        for (std::size_t j = 0; j < per_budget; ++j) {
            const std::size_t index = suite.size();
            const std::uint64_t case_seed = mix64(seed ^ mix64(index + 1));
            PasskeyCase c;
            c.id = case_id(index);
            c.budget = budget;
            c.item = passkey_generate(budget, passkey_random_key(mix64(case_seed + 1)), case_seed, tokenizer);
            suite.push_back(std::move(c));
        }
    }
    return suite;
}

void write_passkey_suite(const std::filesystem::path& dir, std::span<const PasskeyCase> suite) {
    std::filesystem::create_directories(dir);
    for (const PasskeyCase& c : suite) {
        write_file_atomic(dir / (c.id + ".document.txt"), c.item.document);
        write_file_atomic(dir / (c.id + ".question.txt"), c.item.question);
        write_file_atomic(dir / (c.id + ".answer.txt"), c.item.key);
    }
}

std::vector<SuiteEntry> read_passkey_suite(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw InputError("passkey suite is not a directory: " + dir.string());
    const std::string suffix = ".answer.txt";
    std::vector<std::string> ids;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > suffix.size() && name.ends_with(suffix)) ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw InputError("passkey suite " + dir.string() + " has no answer files");
    std::vector<SuiteEntry> out;
    for (const std::string& id : ids) {
        out.push_back({id, read_text_file(dir / (id + ".document.txt")), read_text_file(dir / (id + ".question.txt")),
                       read_text_file(dir / (id + suffix))});
    }
    return out;
}

std::string passkey_oracle(std::string_view document) {
    const auto at = document.find(kKeyPrefix);
    if (at == std::string_view::npos) return {};
    std::size_t end = at + kKeyPrefix.size();
    while (end < document.size() && document[end] >= '0' && document[end] <= '9') ++end;
    return std::string(document.substr(at + kKeyPrefix.size(), end - at - kKeyPrefix.size()));
}

void write_oracle_outputs(const std::filesystem::path& suite_dir, const std::filesystem::path& out_dir) {
    const auto suite = read_passkey_suite(suite_dir);
    std::filesystem::create_directories(out_dir);
    for (const SuiteEntry& e : suite) write_file_atomic(out_dir / (e.id + ".output.txt"), passkey_oracle(e.document));
}

PasskeyScore score_passkey_outputs(const std::filesystem::path& suite_dir, const std::filesystem::path& outputs_dir) {
    if (!std::filesystem::is_directory(outputs_dir)) {
        throw InputError("outputs path is not a directory: " + outputs_dir.string());
    }
    PasskeyScore score;
    for (const SuiteEntry& e : read_passkey_suite(suite_dir)) {
        ++score.total;
        const auto path = outputs_dir / (e.id + ".output.txt");
        if (!std::filesystem::exists(path)) {
            ++score.missing;
            continue;
        }
        if (passkey_score(read_text_file(path), e.answer)) ++score.correct;
    }
    return score;
}

}  // namespace moelab
