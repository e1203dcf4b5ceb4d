#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moelab/tokenizer.hpp"

namespace moelab {

struct PasskeyItem {
    std::string document;
    std::string question;
    std::string key;
    std::size_t document_tokens = 0;
};

/// Builds a haystack of repetitive filler sentences with "The pass key is <key>."
/// inserted once. The document's token count under `tokenizer` is within 2% of
/// `token_budget`. The insertion point is `placement` (a fraction of the filler)
/// or, when absent, drawn from the seed.
PasskeyItem passkey_generate(std::size_t token_budget, std::string_view key, std::uint64_t seed,
                             const BPEVocab& tokenizer, std::optional<double> placement = std::nullopt);

std::string passkey_sentence(std::string_view key);

/// True when the key digits occur anywhere in the output.
bool passkey_score(std::string_view output, std::string_view key);

/// Five-digit key drawn from the seed.
std::string passkey_random_key(std::uint64_t seed);

struct PasskeyCase {
    std::string id;  // zero-padded index
    std::size_t budget = 0;
    PasskeyItem item;
};

std::vector<PasskeyCase> passkey_suite(std::span<const std::size_t> budgets, std::size_t per_budget,
                                       std::uint64_t seed, const BPEVocab& tokenizer);

/// Writes <id>.document.txt, <id>.question.txt and <id>.answer.txt per case.
void write_passkey_suite(const std::filesystem::path& dir, std::span<const PasskeyCase> suite);

struct SuiteEntry {
    std::string id;
    std::string document;
    std::string question;
    std::string answer;
};

std::vector<SuiteEntry> read_passkey_suite(const std::filesystem::path& dir);

/// Reference extractor that copies the key sentence's digits out of the document.
std::string passkey_oracle(std::string_view document);

/// Writes <id>.output.txt with the oracle's answer for every suite entry.
void write_oracle_outputs(const std::filesystem::path& suite_dir, const std::filesystem::path& out_dir);

struct PasskeyScore {
    std::size_t total = 0;
    std::size_t correct = 0;
    std::size_t missing = 0;  // entries without an output file, scored as wrong
    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

PasskeyScore score_passkey_outputs(const std::filesystem::path& suite_dir, const std::filesystem::path& outputs_dir);

}  // namespace moelab
