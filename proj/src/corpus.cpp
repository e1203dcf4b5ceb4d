#include "moelab/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "moelab/error.hpp"
#include "moelab/io.hpp"
#include "moelab/parallel.hpp"
#include "moelab/random.hpp"
#include "moelab/tokenizer.hpp"

namespace moelab {

namespace {

void check_unique_ids(std::span<const Document> docs) {
    std::unordered_set<std::string_view> seen;
    for (const Document& d : docs) {
        if (!seen.insert(d.id).second) throw InputError("duplicate document id '" + d.id + "'");
    }
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_salt(std::uint64_t seed, int i) { return mix64(seed ^ mix64(static_cast<std::uint64_t>(i) + 1)); }

class DisjointSets {
public:
    explicit DisjointSets(size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), size_t{0}); }

    size_t find(size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(size_t a, size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<size_t> parent_;
};

void validate(const MinHashOptions& o) {
    if (o.num_hashes < 1) throw ConfigError("num_hashes must be positive");
    if (o.shingle_size < 1) throw ConfigError("shingle_size must be positive");
}

}  // namespace

std::vector<Document> read_corpus_jsonl(std::istream& in) {
    std::vector<Document> docs;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Document d;
            const auto& id = j.at("id");
            d.id = id.is_string() ? id.get<std::string>() : id.dump();
            d.text = j.at("text").get<std::string>();
            d.lang = j.value("lang", "");
            d.source = j.value("source", "");
            docs.push_back(std::move(d));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    check_unique_ids(docs);
    return docs;
}

std::vector<Document> read_corpus_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw InputError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Document> docs;
    for (const auto& f : files) docs.push_back({f.filename().string(), read_text_file(f), "", "file"});
    return docs;
}

std::vector<Document> read_corpus(const std::filesystem::path& path) {
    if (std::filesystem::is_directory(path)) return read_corpus_dir(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open corpus " + path.string());
    return read_corpus_jsonl(in);
}

std::string corpus_to_jsonl(std::span<const Document> docs) {
    std::string out;
    for (const Document& d : docs) {
        const nlohmann::json j{{"id", d.id}, {"text", d.text}, {"lang", d.lang}, {"source", d.source}};
        out += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
        out += '\n';
    }
    return out;
}

std::string normalize_for_dedup(std::string_view text) {
    auto trailing = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; };
    std::string out;
    out.reserve(text.size());
    size_t start = 0;
    while (start <= text.size()) {
        size_t end = text.find('\n', start);
        const bool last = end == std::string_view::npos;
        if (last) end = text.size();
        size_t stop = end;
        while (stop > start && trailing(text[stop - 1])) --stop;
        out.append(text.substr(start, stop - start));
        if (last) break;
        out += '\n';
        start = end + 1;
    }
    while (!out.empty() && (out.back() == '\n' || trailing(out.back()))) out.pop_back();
    return out;
}

std::vector<Document> exact_dedup(std::span<const Document> docs) {
    std::unordered_set<std::string> seen;
    std::vector<Document> out;
    for (const Document& d : docs) {
        if (seen.insert(normalize_for_dedup(d.text)).second) out.push_back(d);
    }
    return out;
}

MinHashSignature minhash_signature(std::string_view text, const MinHashOptions& options) {
    validate(options);
    std::vector<size_t> offsets;
    for (size_t i = 0; i < text.size(); i += utf8_char_length(text, i)) offsets.push_back(i);
    offsets.push_back(text.size());
    const size_t chars = offsets.size() - 1;
    const size_t k = static_cast<size_t>(options.shingle_size);

    std::vector<std::uint64_t> shingle_hashes;
    MinHashSignature sig;
    sig.shingle_size = options.shingle_size;
    sig.seed = options.seed;
    if (chars < k) {
        sig.short_text = true;
        shingle_hashes.push_back(fnv1a(text));
    } else {
        for (size_t i = 0; i + k <= chars; ++i) {
            shingle_hashes.push_back(fnv1a(text.substr(offsets[i], offsets[i + k] - offsets[i])));
        }
        std::sort(shingle_hashes.begin(), shingle_hashes.end());
        shingle_hashes.erase(std::unique(shingle_hashes.begin(), shingle_hashes.end()), shingle_hashes.end());
    }

    sig.values.assign(static_cast<size_t>(options.num_hashes), UINT64_MAX);
    for (int i = 0; i < options.num_hashes; ++i) {
        const std::uint64_t salt = hash_salt(options.seed, i);
        std::uint64_t best = UINT64_MAX;
        for (std::uint64_t h : shingle_hashes) best = std::min(best, mix64(h ^ salt));
        sig.values[static_cast<size_t>(i)] = best;
    }
    return sig;
}

double jaccard_estimate(const MinHashSignature& a, const MinHashSignature& b) {
    if (a.values.size() != b.values.size() || a.seed != b.seed || a.shingle_size != b.shingle_size) {
        throw InputError("MinHash signatures were built with different parameters");
    }
    if (a.values.empty()) throw InputError("empty MinHash signature");
    size_t same = 0;
    for (size_t i = 0; i < a.values.size(); ++i) same += a.values[i] == b.values[i];
    return static_cast<double>(same) / static_cast<double>(a.values.size());
}

DedupResult minhash_dedup(std::span<const Document> docs, const DedupOptions& options) {
    validate(options.minhash);
    if (!(options.threshold > 0.0 && options.threshold <= 1.0)) throw ConfigError("threshold must be in (0, 1]");
    if (options.bands < 1 || options.minhash.num_hashes % options.bands != 0) {
        throw ConfigError("bands (" + std::to_string(options.bands) + ") must divide num_hashes (" +
                          std::to_string(options.minhash.num_hashes) + ")");
    }
    check_unique_ids(docs);

    const size_t n = docs.size();
    std::vector<MinHashSignature> sigs(n);
    parallel_for(n, options.workers, [&](size_t i) { sigs[i] = minhash_signature(docs[i].text, options.minhash); });

    std::vector<std::pair<size_t, size_t>> candidates;
    if (options.all_pairs) {
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = i + 1; j < n; ++j) candidates.emplace_back(i, j);
        }
    } else {
        const size_t rows = static_cast<size_t>(options.minhash.num_hashes / options.bands);
        for (int band = 0; band < options.bands; ++band) {
            std::unordered_map<std::uint64_t, std::vector<size_t>> buckets;
            for (size_t i = 0; i < n; ++i) {
                std::uint64_t key = mix64(static_cast<std::uint64_t>(band));
                for (size_t r = 0; r < rows; ++r) key = mix64(key ^ sigs[i].values[static_cast<size_t>(band) * rows + r]);
                buckets[key].push_back(i);
            }
            for (const auto& [key, members] : buckets) {
                for (size_t a = 0; a < members.size(); ++a) {
                    for (size_t b = a + 1; b < members.size(); ++b) candidates.emplace_back(members[a], members[b]);
                }
            }
        }
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    }

    std::vector<std::pair<size_t, size_t>> edges;
    for (const auto& [i, j] : candidates) {
        if (jaccard_estimate(sigs[i], sigs[j]) >= options.threshold) edges.emplace_back(i, j);
    }
    std::sort(edges.begin(), edges.end(), [&](const auto& x, const auto& y) {
        const auto kx = std::minmax(docs[x.first].id, docs[x.second].id);
        const auto ky = std::minmax(docs[y.first].id, docs[y.second].id);
        return kx < ky;
    });
    DisjointSets sets(n);
    for (const auto& [i, j] : edges) sets.unite(i, j);

    std::unordered_map<size_t, std::vector<size_t>> groups;
    for (size_t i = 0; i < n; ++i) groups[sets.find(i)].push_back(i);

    DedupResult result;
    result.candidate_pairs = candidates.size();
    std::vector<char> keep(n, 1);
    for (auto& [root, members] : groups) {
        if (members.size() < 2) continue;
        std::sort(members.begin(), members.end(), [&](size_t a, size_t b) { return docs[a].id < docs[b].id; });
        const size_t survivor = members.front();
        DedupCluster cluster;
        cluster.survivor = docs[survivor].id;
        for (size_t m : members) {
            cluster.members.push_back({docs[m].id, jaccard_estimate(sigs[survivor], sigs[m])});
            if (m != survivor) keep[m] = 0;
        }
        result.clusters.push_back(std::move(cluster));
    }
    std::sort(result.clusters.begin(), result.clusters.end(),
              [](const DedupCluster& a, const DedupCluster& b) { return a.survivor < b.survivor; });
    for (size_t i = 0; i < n; ++i) {
        if (keep[i]) result.survivors.push_back(docs[i]);
    }
    return result;
}

std::string DedupResult::report() const {
    std::ostringstream os;
    os << "clusters " << clusters.size() << " survivors " << survivors.size() << " candidate_pairs " << candidate_pairs
       << '\n';
    char buf[32];
    for (size_t c = 0; c < clusters.size(); ++c) {
        os << "cluster " << c << " survivor " << clusters[c].survivor << " size " << clusters[c].members.size() << '\n';
        for (const ClusterMember& m : clusters[c].members) {
            std::snprintf(buf, sizeof buf, "%.4f", m.jaccard_to_survivor);
            os << "  " << m.id << '\t' << buf << '\n';
        }
    }
    return os.str();
}

std::string synthetic_grammar_text(std::size_t bytes, std::uint64_t seed) {
    static const char* det[] = {"the", "a", "every", "no", "some"};
    static const char* adj[] = {"red", "quiet", "small", "bright", "old", "green", "heavy", "swift"};
    static const char* noun[] = {"cat", "river", "engine", "garden", "teacher", "window", "city", "storm", "lamp", "horse"};
    static const char* verb[] = {"sees", "follows", "builds", "hides", "carries", "finds", "breaks", "paints"};
    Rng rng(seed);
    std::string s;
    s.reserve(bytes + 64);
    while (s.size() < bytes) {
        s += det[rng.below(5)];
        s += ' ';
        s += adj[rng.below(8)];
        s += ' ';
        s += noun[rng.below(10)];
        s += ' ';
        s += verb[rng.below(8)];
        s += ' ';
        s += det[rng.below(5)];
        s += ' ';
        s += noun[rng.below(10)];
        s += ". ";
    }
    s.resize(bytes);
    return s;
}

}  // namespace moelab
