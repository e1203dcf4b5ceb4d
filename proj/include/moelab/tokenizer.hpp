#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace moelab {

enum class PretokenizeMode {
    Bytes,       // merges may span any bytes
    Whitespace,  // merges stay within chunks that start at a whitespace run
};

/// Byte-level BPE vocabulary: 256 byte tokens followed by one token per merge.
class BPEVocab {
public:
    BPEVocab() = default;
    static BPEVocab byte_identity(PretokenizeMode mode = PretokenizeMode::Bytes);

    int size() const noexcept { return 256 + static_cast<int>(merges_.size()); }
    PretokenizeMode mode() const noexcept { return mode_; }
    const std::vector<std::pair<int, int>>& merges() const noexcept { return merges_; }
    const std::string& bytes(int id) const;

    /// Appends a merge of two existing ids and returns the new id.
    int add_merge(int left, int right);
    /// Merge rank of (left, right), or -1.
    int rank(int left, int right) const;

    /// Header "bpe-vocab <size> <mode>", then per merge
    /// "<left id> <right id> <left bytes hex> <right bytes hex>".
    std::string to_text() const;
    static BPEVocab from_text(const std::string& text);

private:
    PretokenizeMode mode_ = PretokenizeMode::Bytes;
    std::vector<std::pair<int, int>> merges_;
    std::vector<std::string> extra_bytes_;
    std::unordered_map<std::uint64_t, int> rank_index_;
};

struct BpeOptions {
    int target_vocab_size = 512;
    /// Training is fully deterministic; the seed is recorded for provenance only.
    std::uint64_t seed = 0;
    PretokenizeMode mode = PretokenizeMode::Bytes;
    /// Strings that must become single tokens; built as merge chains before training.
    std::vector<std::string> protected_tokens;
};

/// Greedy BPE: each round merges the most frequent adjacent pair; ties go to the
/// lexicographically smallest (left bytes, right bytes).
BPEVocab train_bpe(std::span<const std::string> documents, const BpeOptions& options);

/// Splits text into pre-token chunks for the vocabulary's mode.
std::vector<std::string_view> pretokenize(std::string_view text, PretokenizeMode mode);

std::vector<int> encode(const BPEVocab& vocab, std::string_view text);
std::string decode(const BPEVocab& vocab, std::span<const int> ids);

/// Byte length of the character starting at `pos`: the length of a well-formed
/// UTF-8 sequence, or 1 for a byte that does not start one.
std::size_t utf8_char_length(std::string_view text, std::size_t pos);

/// Unicode scalar values in UTF-8 text; each byte of an invalid sequence counts as one.
std::size_t count_chars(std::string_view text);

struct DomainCorpus {
    std::string name;
    std::vector<std::string> documents;
};

double chars_per_token(const BPEVocab& vocab, const DomainCorpus& corpus);

struct NamedVocab {
    std::string name;
    const BPEVocab* vocab;
};

struct ComparisonRow {
    std::string tokenizer;
    std::vector<double> ratios;  // aligned with ComparisonTable::domains
    double mean = 0.0;
};

struct ComparisonTable {
    std::vector<std::string> domains;
    std::vector<ComparisonRow> rows;  // descending by mean

    std::string to_text() const;
    std::string to_csv() const;
};

double mean_score(std::span<const double> ratios);
/// Orders rows descending by mean (ties by name) after filling each mean.
void finalize_rows(std::vector<ComparisonRow>& rows);
/// Scores every (vocab, corpus) pair on up to `workers` threads; the result does
/// not depend on the worker count.
ComparisonTable compare_tokenizers(std::span<const NamedVocab> vocabs, std::span<const DomainCorpus> corpora,
                                   int workers = 1);

}  // namespace moelab
