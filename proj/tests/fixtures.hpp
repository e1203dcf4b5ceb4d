#pragma once

#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "moelab/corpus.hpp"
#include "moelab/random.hpp"

namespace moelab::fixtures {

inline std::string random_letters(Rng& rng, std::size_t n) {
    std::string s(n, 'a');
    for (char& c : s) c = static_cast<char>('a' + rng.below(26));
    return s;
}

/// Brute-force Jaccard similarity of byte k-shingle sets (ASCII inputs).
inline double true_jaccard(const std::string& a, const std::string& b, std::size_t k = 5) {
    std::set<std::string> sa, sb;
    for (std::size_t i = 0; i + k <= a.size(); ++i) sa.insert(a.substr(i, k));
    for (std::size_t i = 0; i + k <= b.size(); ++i) sb.insert(b.substr(i, k));
    std::size_t common = 0;
    for (const auto& s : sa) common += sb.count(s);
    const std::size_t uni = sa.size() + sb.size() - common;
    return uni == 0 ? 1.0 : static_cast<double>(common) / static_cast<double>(uni);
}

/// Two strings sharing a prefix sized so the 5-shingle Jaccard is close to `target`.
inline std::pair<std::string, std::string> constructed_pair(Rng& rng, double target, std::size_t n = 300) {
    const double shingles = static_cast<double>(n - 4);
    const auto shared = static_cast<std::size_t>(2.0 * shingles * target / (1.0 + target) + 0.5);
    const std::string a = random_letters(rng, n);
    const std::string b = a.substr(0, shared + 4) + random_letters(rng, n - shared - 4);
    return {a, b};
}

inline std::string doc_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "doc-%05zu", i);
    return buf;
}

struct NearDuplicateFixture {
    std::vector<Document> docs;
    std::vector<int> group;  // ground-truth group per document
    std::size_t pairs = 0;
};

/// `pairs` near-duplicate pairs at Jaccard about 0.9 followed by `unrelated` single documents.
inline NearDuplicateFixture near_duplicate_fixture(std::uint64_t seed, std::size_t pairs = 50,
                                                   std::size_t unrelated = 50) {
    Rng rng(seed);
    NearDuplicateFixture f;
    f.pairs = pairs;
    int g = 0;
    for (std::size_t p = 0; p < pairs; ++p, ++g) {
        auto [a, b] = constructed_pair(rng, 0.9, 400);
        f.docs.push_back({doc_id(f.docs.size()), a, "en", "fixture"});
        f.group.push_back(g);
        f.docs.push_back({doc_id(f.docs.size()), b, "en", "fixture"});
        f.group.push_back(g);
    }
    for (std::size_t u = 0; u < unrelated; ++u, ++g) {
        f.docs.push_back({doc_id(f.docs.size()), random_letters(rng, 400), "en", "fixture"});
        f.group.push_back(g);
    }
    return f;
}

struct DedupScore {
    std::size_t pairs_caught = 0;
    std::size_t false_merges = 0;  // clusters mixing ground-truth groups
};

inline DedupScore score_dedup(const NearDuplicateFixture& f, const DedupResult& r) {
    DedupScore s;
    auto group_of = [&](const std::string& id) {
        for (std::size_t i = 0; i < f.docs.size(); ++i) {
            if (f.docs[i].id == id) return f.group[i];
        }
        return -1;
    };
    for (const DedupCluster& c : r.clusters) {
        std::set<int> groups;
        for (const ClusterMember& m : c.members) groups.insert(group_of(m.id));
        if (groups.size() > 1) {
            ++s.false_merges;
        } else if (*groups.begin() < static_cast<int>(f.pairs)) {
            ++s.pairs_caught;
        }
    }
    return s;
}

/// `total` documents of which `duplicates` repeat an earlier one, some with
/// extra trailing whitespace.
inline std::vector<Document> planted_exact_duplicates(std::uint64_t seed, std::size_t total = 1000,
                                                      std::size_t duplicates = 100) {
    Rng rng(seed);
    std::vector<Document> docs;
    const std::size_t originals = total - duplicates;
    for (std::size_t i = 0; i < originals; ++i) docs.push_back({doc_id(i), random_letters(rng, 60), "en", "fixture"});
    for (std::size_t d = 0; d < duplicates; ++d) {
        std::string text = docs[rng.below(originals)].text;
        if (d % 3 == 1) text += "  \n";
        const std::size_t at = static_cast<std::size_t>(rng.below(docs.size() + 1));
        docs.insert(docs.begin() + static_cast<std::ptrdiff_t>(at), {doc_id(originals + d), text, "en", "dup"});
    }
    return docs;
}

}  // namespace moelab::fixtures
