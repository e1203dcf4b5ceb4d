#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace moelab {

struct Document {
    std::string id;
    std::string text;
    std::string lang;
    std::string source;
};

/// One JSON object per line with "id" and "text" (required) and optional
/// "lang" and "source". Duplicate ids are rejected.
std::vector<Document> read_corpus_jsonl(std::istream& in);
/// Every regular file in `dir`, ordered by file name; the id is the file name.
std::vector<Document> read_corpus_dir(const std::filesystem::path& dir);
/// Dispatches on whether `path` is a directory.
std::vector<Document> read_corpus(const std::filesystem::path& path);
std::string corpus_to_jsonl(std::span<const Document> docs);

/// Text with trailing whitespace removed from every line and from the end.
std::string normalize_for_dedup(std::string_view text);

/// Keeps the first document of each normalized text, preserving order.
std::vector<Document> exact_dedup(std::span<const Document> docs);

struct MinHashOptions {
    int num_hashes = 128;
    int shingle_size = 5;  // in Unicode characters
    std::uint64_t seed = 0;
};

struct MinHashSignature {
    std::vector<std::uint64_t> values;
    int shingle_size = 0;
    std::uint64_t seed = 0;
    /// Set when the text was shorter than one shingle and hashed whole.
    bool short_text = false;
};

MinHashSignature minhash_signature(std::string_view text, const MinHashOptions& options = {});
/// Fraction of positions where the signatures agree.
double jaccard_estimate(const MinHashSignature& a, const MinHashSignature& b);

struct DedupOptions {
    MinHashOptions minhash;
    double threshold = 0.8;
    int bands = 16;
    /// Compare every pair instead of LSH candidates.
    bool all_pairs = false;
    int workers = 1;
};

struct ClusterMember {
    std::string id;
    double jaccard_to_survivor = 1.0;
};

struct DedupCluster {
    std::string survivor;
    std::vector<ClusterMember> members;  // sorted by id, survivor first
};

struct DedupResult {
    std::vector<Document> survivors;  // input order
    std::vector<DedupCluster> clusters;  // clusters of two or more, by survivor id
    std::size_t candidate_pairs = 0;

    std::string report() const;
};

/// Near-duplicate removal. Pairs whose estimated Jaccard reaches the threshold
/// are linked; each connected cluster keeps its smallest id.
DedupResult minhash_dedup(std::span<const Document> docs, const DedupOptions& options = {});

/// Sentences from a small fixed grammar, cut to exactly `bytes` bytes.
std::string synthetic_grammar_text(std::size_t bytes, std::uint64_t seed);

}  // namespace moelab
