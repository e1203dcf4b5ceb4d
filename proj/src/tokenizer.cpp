#include "moelab/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <numeric>
#include <queue>
#include <sstream>
#include <unordered_set>

#include "moelab/error.hpp"
#include "moelab/parallel.hpp"

namespace moelab {

namespace {

std::uint64_t pair_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

const std::array<std::string, 256>& byte_strings() {
    static const std::array<std::string, 256> table = [] {
        std::array<std::string, 256> t;
        for (int i = 0; i < 256; ++i) t[static_cast<size_t>(i)] = std::string(1, static_cast<char>(i));
        return t;
    }();
    return table;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

std::string to_hex(const std::string& s) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned char c : s) {
        out += digits[c >> 4];
        out += digits[c & 15];
    }
    return out;
}

std::string from_hex(const std::string& h) {
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    if (h.size() % 2 != 0) throw InputError("odd-length hex string '" + h + "'");
    std::string out;
    for (size_t i = 0; i < h.size(); i += 2) {
        const int hi = nibble(h[i]), lo = nibble(h[i + 1]);
        if (hi < 0 || lo < 0) throw InputError("invalid hex string '" + h + "'");
        out += static_cast<char>(hi * 16 + lo);
    }
    return out;
}

/// Applies merges in rank order to one chunk, using a min-heap over
/// (rank, position) so equal-rank merges resolve left to right.
void encode_chunk(const BPEVocab& vocab, std::string_view chunk, std::vector<int>& out) {
    const int n = static_cast<int>(chunk.size());
    if (n == 0) return;
    std::vector<int> ids(static_cast<size_t>(n)), next(static_cast<size_t>(n)), prev(static_cast<size_t>(n));
    std::vector<char> alive(static_cast<size_t>(n), 1);
    for (int i = 0; i < n; ++i) {
        ids[static_cast<size_t>(i)] = static_cast<unsigned char>(chunk[static_cast<size_t>(i)]);
        next[static_cast<size_t>(i)] = i + 1 < n ? i + 1 : -1;
        prev[static_cast<size_t>(i)] = i - 1;
    }
    using Item = std::pair<int, int>;  // (rank, position)
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    auto push = [&](int i) {
        if (i < 0) return;
        const int j = next[static_cast<size_t>(i)];
        if (j < 0) return;
        const int r = vocab.rank(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]);
        if (r >= 0) heap.emplace(r, i);
    };
    for (int i = 0; i + 1 < n; ++i) push(i);
    while (!heap.empty()) {
        const auto [r, i] = heap.top();
        heap.pop();
        if (!alive[static_cast<size_t>(i)]) continue;
        const int j = next[static_cast<size_t>(i)];
        if (j < 0 || vocab.rank(ids[static_cast<size_t>(i)], ids[static_cast<size_t>(j)]) != r) continue;
        ids[static_cast<size_t>(i)] = 256 + r;
        alive[static_cast<size_t>(j)] = 0;
        next[static_cast<size_t>(i)] = next[static_cast<size_t>(j)];
        if (next[static_cast<size_t>(j)] >= 0) prev[static_cast<size_t>(next[static_cast<size_t>(j)])] = i;
        push(prev[static_cast<size_t>(i)]);
        push(i);
    }
    for (int i = 0; i >= 0; i = next[static_cast<size_t>(i)]) out.push_back(ids[static_cast<size_t>(i)]);
}

struct Word {
    std::vector<int> ids;
    long long count = 0;
};

class PairStats {
public:
    void add_word(const Word& w, int index, long long sign) {
        for (size_t i = 0; i + 1 < w.ids.size(); ++i) {
            const std::uint64_t k = pair_key(w.ids[i], w.ids[i + 1]);
            counts_[k] += sign * w.count;
            if (sign > 0) where_[k].insert(index);
        }
    }

    /// Most frequent pair; ties to the lexicographically smallest byte strings.
    std::pair<std::uint64_t, long long> best(const BPEVocab& vocab) const {
        std::uint64_t best_key = 0;
        long long best_count = 0;
        for (const auto& [k, c] : counts_) {
            if (c <= 0 || c < best_count) continue;
            if (c == best_count) {
                const auto& a = vocab.bytes(static_cast<int>(k >> 32));
                const auto& b = vocab.bytes(static_cast<int>(k & 0xffffffffu));
                const auto& ba = vocab.bytes(static_cast<int>(best_key >> 32));
                const auto& bb = vocab.bytes(static_cast<int>(best_key & 0xffffffffu));
                if (std::tie(a, b) >= std::tie(ba, bb)) continue;
            }
            best_key = k;
            best_count = c;
        }
        return {best_key, best_count};
    }

    std::vector<int> words_with(std::uint64_t k) const {
        auto it = where_.find(k);
        if (it == where_.end()) return {};
        std::vector<int> out(it->second.begin(), it->second.end());
        std::sort(out.begin(), out.end());
        return out;
    }

private:
    std::unordered_map<std::uint64_t, long long> counts_;
    std::unordered_map<std::uint64_t, std::unordered_set<int>> where_;
};

void merge_word(Word& w, int left, int right, int merged) {
    std::vector<int> out;
    out.reserve(w.ids.size());
    for (size_t i = 0; i < w.ids.size(); ++i) {
        if (i + 1 < w.ids.size() && w.ids[i] == left && w.ids[i + 1] == right) {
            out.push_back(merged);
            ++i;
        } else {
            out.push_back(w.ids[i]);
        }
    }
    w.ids = std::move(out);
}

}  // namespace

BPEVocab BPEVocab::byte_identity(PretokenizeMode mode) {
    BPEVocab v;
    v.mode_ = mode;
    return v;
}

const std::string& BPEVocab::bytes(int id) const {
    if (id < 0 || id >= size()) {
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
    }
    if (id < 256) return byte_strings()[static_cast<size_t>(id)];
    return extra_bytes_[static_cast<size_t>(id - 256)];
}

int BPEVocab::add_merge(int left, int right) {
    const std::string joined = bytes(left) + bytes(right);
    if (rank_index_.count(pair_key(left, right))) {
        throw InputError("duplicate merge (" + std::to_string(left) + ", " + std::to_string(right) + ")");
    }
    rank_index_[pair_key(left, right)] = static_cast<int>(merges_.size());
    merges_.emplace_back(left, right);
    extra_bytes_.push_back(joined);
    return size() - 1;
}

int BPEVocab::rank(int left, int right) const {
    auto it = rank_index_.find(pair_key(left, right));
    return it == rank_index_.end() ? -1 : it->second;
}

std::string BPEVocab::to_text() const {
    std::ostringstream os;
    os << "bpe-vocab " << size() << ' ' << (mode_ == PretokenizeMode::Bytes ? "bytes" : "whitespace") << '\n';
    for (const auto& [l, r] : merges_) os << l << ' ' << r << ' ' << to_hex(bytes(l)) << ' ' << to_hex(bytes(r)) << '\n';
    return os.str();
}

BPEVocab BPEVocab::from_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw InputError("empty vocabulary file");
    std::istringstream header(line);
    std::string tag, mode;
    int declared = 0;
    if (!(header >> tag >> declared >> mode) || tag != "bpe-vocab") throw InputError("missing 'bpe-vocab' header");
    BPEVocab v;
    if (mode == "bytes") {
        v.mode_ = PretokenizeMode::Bytes;
    } else if (mode == "whitespace") {
        v.mode_ = PretokenizeMode::Whitespace;
    } else {
        throw InputError("unknown pretokenize mode '" + mode + "'");
    }
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        int l = 0, r = 0;
        std::string hl, hr;
        if (!(ls >> l >> r >> hl >> hr)) throw InputError("vocab line " + std::to_string(lineno) + ": malformed merge");
        if (l >= v.size() || r >= v.size() || l < 0 || r < 0) {
            throw InputError("vocab line " + std::to_string(lineno) + ": merge operand defined later");
        }
        if (v.bytes(l) != from_hex(hl) || v.bytes(r) != from_hex(hr)) {
            throw InputError("vocab line " + std::to_string(lineno) + ": bytes do not match token ids");
        }
        v.add_merge(l, r);
    }
    if (v.size() != declared) {
        throw InputError("vocab header declares " + std::to_string(declared) + " tokens, file defines " +
                         std::to_string(v.size()));
    }
    return v;
}

std::vector<std::string_view> pretokenize(std::string_view text, PretokenizeMode mode) {
    std::vector<std::string_view> out;
    if (text.empty()) return out;
    if (mode == PretokenizeMode::Bytes) {
        out.push_back(text);
        return out;
    }
    size_t start = 0;
    for (size_t i = 1; i < text.size(); ++i) {
        if (is_space(static_cast<unsigned char>(text[i])) && !is_space(static_cast<unsigned char>(text[i - 1]))) {
            out.push_back(text.substr(start, i - start));
            start = i;
        }
    }
    out.push_back(text.substr(start));
    return out;
}

BPEVocab train_bpe(std::span<const std::string> documents, const BpeOptions& options) {
    if (documents.empty()) throw InputError("cannot train a tokenizer on an empty corpus");
    if (options.target_vocab_size < 256) throw ConfigError("target_vocab_size must be at least 256");

    BPEVocab vocab = BPEVocab::byte_identity(options.mode);
    for (const std::string& p : options.protected_tokens) {
        if (p.size() < 2) continue;
        int left = static_cast<unsigned char>(p[0]);
        for (size_t i = 1; i < p.size() && vocab.size() <= options.target_vocab_size; ++i) {
            const int right = static_cast<unsigned char>(p[i]);
            const int r = vocab.rank(left, right);
            if (r >= 0) {
                left = 256 + r;
            } else if (vocab.size() < options.target_vocab_size) {
                left = vocab.add_merge(left, right);
            } else {
                break;
            }
        }
    }

    std::map<std::string_view, long long> chunk_counts;
    for (const std::string& doc : documents) {
        for (std::string_view c : pretokenize(doc, options.mode)) ++chunk_counts[c];
    }
    std::vector<Word> words;
    for (const auto& [chunk, count] : chunk_counts) {
        Word w;
        encode_chunk(vocab, chunk, w.ids);
        w.count = count;
        words.push_back(std::move(w));
    }
    if (words.empty()) throw InputError("cannot train a tokenizer on an empty corpus");

    PairStats stats;
    for (size_t i = 0; i < words.size(); ++i) stats.add_word(words[i], static_cast<int>(i), +1);

    while (vocab.size() < options.target_vocab_size) {
        const auto [key, count] = stats.best(vocab);
        if (count < 2) break;
        const int left = static_cast<int>(key >> 32);
        const int right = static_cast<int>(key & 0xffffffffu);
        const int merged = vocab.add_merge(left, right);
        for (int idx : stats.words_with(key)) {
            Word& w = words[static_cast<size_t>(idx)];
            stats.add_word(w, idx, -1);
            merge_word(w, left, right, merged);
            stats.add_word(w, idx, +1);
        }
    }
    return vocab;
}

std::vector<int> encode(const BPEVocab& vocab, std::string_view text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (std::string_view chunk : pretokenize(text, vocab.mode())) encode_chunk(vocab, chunk, out);
    return out;
}

std::string decode(const BPEVocab& vocab, std::span<const int> ids) {
    std::string out;
    for (int id : ids) out += vocab.bytes(id);
    return out;
}

std::size_t utf8_char_length(std::string_view text, std::size_t i) {
    const size_t n = text.size();
    auto cont = [&](size_t k) { return k < n && (static_cast<unsigned char>(text[k]) & 0xC0) == 0x80; };
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c >= 0xC2 && c <= 0xDF && cont(i + 1)) return 2;
    if (c >= 0xE0 && c <= 0xEF && cont(i + 1) && cont(i + 2)) {
        const unsigned char c1 = static_cast<unsigned char>(text[i + 1]);
        const bool overlong = c == 0xE0 && c1 < 0xA0;
        const bool surrogate = c == 0xED && c1 >= 0xA0;
        return overlong || surrogate ? 1 : 3;
    }
    if (c >= 0xF0 && c <= 0xF4 && cont(i + 1) && cont(i + 2) && cont(i + 3)) {
        const unsigned char c1 = static_cast<unsigned char>(text[i + 1]);
        const bool overlong = c == 0xF0 && c1 < 0x90;
        const bool too_big = c == 0xF4 && c1 >= 0x90;
        return overlong || too_big ? 1 : 4;
    }
    return 1;
}

std::size_t count_chars(std::string_view text) {
    std::size_t chars = 0;
    for (size_t i = 0; i < text.size(); i += utf8_char_length(text, i)) ++chars;
    return chars;
}

double chars_per_token(const BPEVocab& vocab, const DomainCorpus& corpus) {
    std::size_t chars = 0, tokens = 0;
    for (const std::string& doc : corpus.documents) {
        chars += count_chars(doc);
        tokens += encode(vocab, doc).size();
    }
    if (tokens == 0) throw InputError("corpus '" + corpus.name + "' is empty");
    return static_cast<double>(chars) / static_cast<double>(tokens);
}

double mean_score(std::span<const double> ratios) {
    if (ratios.empty()) throw InputError("mean score of an empty row");
    return std::accumulate(ratios.begin(), ratios.end(), 0.0) / static_cast<double>(ratios.size());
}

void finalize_rows(std::vector<ComparisonRow>& rows) {
    for (ComparisonRow& r : rows) r.mean = mean_score(r.ratios);
    std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
        if (a.mean != b.mean) return a.mean > b.mean;
        return a.tokenizer < b.tokenizer;
    });
}

ComparisonTable compare_tokenizers(std::span<const NamedVocab> vocabs, std::span<const DomainCorpus> corpora,
                                   int workers) {
    if (vocabs.empty() || corpora.empty()) throw InputError("tokenizer comparison needs at least one vocab and corpus");
    ComparisonTable table;
    for (const DomainCorpus& c : corpora) table.domains.push_back(c.name);
    const size_t nv = vocabs.size(), nc = corpora.size();
    std::vector<double> ratios(nv * nc);
    parallel_for(nv * nc, workers, [&](size_t i) {
        ratios[i] = chars_per_token(*vocabs[i / nc].vocab, corpora[i % nc]);
    });
    for (size_t v = 0; v < nv; ++v) {
        ComparisonRow row;
        row.tokenizer = vocabs[v].name;
        row.ratios.assign(ratios.begin() + static_cast<std::ptrdiff_t>(v * nc),
                          ratios.begin() + static_cast<std::ptrdiff_t>((v + 1) * nc));
        table.rows.push_back(std::move(row));
    }
    finalize_rows(table.rows);
    return table;
}

std::string ComparisonTable::to_text() const {
    size_t name_w = std::string("Tokenizer").size();
    for (const ComparisonRow& r : rows) name_w = std::max(name_w, r.tokenizer.size());
    std::vector<size_t> widths;
    for (const std::string& d : domains) widths.push_back(std::max<size_t>(d.size(), 6));
    const std::string mean_head = "Mean Score";

    std::ostringstream os;
    auto pad_left = [](const std::string& s, size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };
    os << "Tokenizer" << std::string(name_w - 9, ' ');
    for (size_t i = 0; i < domains.size(); ++i) os << "  " << pad_left(domains[i], widths[i]);
    os << "  " << mean_head << '\n';
    char buf[32];
    for (const ComparisonRow& r : rows) {
        os << r.tokenizer << std::string(name_w - r.tokenizer.size(), ' ');
        for (size_t i = 0; i < r.ratios.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.2f", r.ratios[i]);
            os << "  " << pad_left(buf, widths[i]);
        }
        std::snprintf(buf, sizeof buf, "%.2f", r.mean);
        os << "  " << pad_left(buf, mean_head.size()) << '\n';
    }
    return os.str();
}

std::string ComparisonTable::to_csv() const {
    std::ostringstream os;
    os << "tokenizer";
    for (const std::string& d : domains) os << ',' << d;
    os << ",mean_score\n";
    char buf[32];
    for (const ComparisonRow& r : rows) {
        os << r.tokenizer;
        for (double v : r.ratios) {
            std::snprintf(buf, sizeof buf, "%.6f", v);
            os << ',' << buf;
        }
        std::snprintf(buf, sizeof buf, "%.6f", r.mean);
        os << ',' << buf << '\n';
    }
    return os.str();
}

}  // namespace moelab
