#include "moelab/routing.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "moelab/random.hpp"

namespace moelab {

namespace {

using json = nlohmann::json;

const LayerActivationRecord& layer_of(const RoutingTrace& trace, Index layer) {
    if (layer < 0 || layer >= static_cast<Index>(trace.layers.size())) {
        throw InputError("layer " + std::to_string(layer) + " out of range for trace '" + trace.sample_id + "' with " +
                         std::to_string(trace.layers.size()) + " MoE layers");
    }
    return trace.layers[static_cast<size_t>(layer)];
}

LayerRoutingStats collect(std::span<const RoutingTrace> traces, Index layer) {
    if (traces.empty()) throw InputError("empty trace batch");
    LayerRoutingStats stats(traces.front().n_experts);
    for (const RoutingTrace& t : traces) {
        if (t.n_experts != traces.front().n_experts) throw InputError("traces disagree on expert count");
        stats.add(layer_of(t, layer));
    }
    if (stats.tokens == 0) throw InputError("no routed tokens in layer " + std::to_string(layer));
    return stats;
}

Index common_layer_count(std::span<const RoutingTrace> traces) {
    if (traces.empty()) throw InputError("empty trace batch");
    const size_t n = traces.front().layers.size();
    for (const RoutingTrace& t : traces) {
        if (t.layers.size() != n) throw InputError("traces disagree on MoE layer count");
    }
    return static_cast<Index>(n);
}

void require_same_shape(const RoutingEmbedding& a, const RoutingEmbedding& b) {
    if (a.layers() != b.layers() || a.experts() != b.experts()) {
        throw InputError("embedding shape mismatch: " + std::to_string(a.layers()) + "x" + std::to_string(a.experts()) +
                         " vs " + std::to_string(b.layers()) + "x" + std::to_string(b.experts()));
    }
}

}  // namespace

void RoutingTrace::validate() const {
    if (top_k <= 0 || n_experts <= 0 || top_k > n_experts) {
        throw InputError("trace '" + sample_id + "': invalid top_k/n_experts");
    }
    for (const LayerActivationRecord& rec : layers) {
        if (rec.tokens() != token_count) {
            throw InputError("trace '" + sample_id + "': layer " + std::to_string(rec.layer) + " has " +
                             std::to_string(rec.tokens()) + " tokens, expected " + std::to_string(token_count));
        }
        if (rec.distribution.size() > 0 && (rec.distribution.rows() != token_count || rec.distribution.cols() != n_experts)) {
            throw InputError("trace '" + sample_id + "': distribution shape mismatch");
        }
        for (const auto& sel : rec.selected) {
            if (static_cast<Index>(sel.size()) != top_k) {
                throw InputError("trace '" + sample_id + "': token selects " + std::to_string(sel.size()) +
                                 " experts, expected " + std::to_string(top_k));
            }
            for (int e : sel) {
                if (e < 0 || e >= n_experts) throw InputError("trace '" + sample_id + "': expert id out of range");
            }
        }
    }
}

RoutingTrace make_trace(std::string sample_id, std::vector<LayerActivationRecord> layers, Index top_k, Index n_experts) {
    RoutingTrace t;
    t.sample_id = std::move(sample_id);
    t.top_k = top_k;
    t.n_experts = n_experts;
    t.token_count = layers.empty() ? 0 : layers.front().tokens();
    t.layers = std::move(layers);
    t.validate();
    return t;
}

void LayerRoutingStats::add(const LayerActivationRecord& record) {
    for (const auto& sel : record.selected) {
        for (int e : sel) {
            if (e < 0 || static_cast<size_t>(e) >= assignments.size()) throw InputError("expert id out of range");
            ++assignments[static_cast<size_t>(e)];
        }
    }
    const Index n = record.tokens();
    if (record.distribution.rows() == n && n > 0) {
        for (Index t = 0; t < n; ++t) {
            const Vector row = record.distribution.row(t);
            distribution_entropy_sum += normalized_entropy<double>(std::span<const double>(row.data(), row.size()));
        }
    }
    tokens += n;
}

void LayerRoutingStats::merge(const LayerRoutingStats& other) {
    if (assignments.size() != other.assignments.size()) throw InputError("cannot merge stats of different expert counts");
    for (size_t i = 0; i < assignments.size(); ++i) assignments[i] += other.assignments[i];
    distribution_entropy_sum += other.distribution_entropy_sum;
    tokens += other.tokens;
}

long long LayerRoutingStats::total_assignments() const {
    return std::accumulate(assignments.begin(), assignments.end(), 0LL);
}

double h_utilization(const LayerRoutingStats& stats) {
    if (stats.total_assignments() == 0) throw InputError("no routed tokens");
    std::vector<double> counts(stats.assignments.begin(), stats.assignments.end());
    return normalized_entropy<double>(counts);
}

double h_sparsity(const LayerRoutingStats& stats) {
    if (stats.tokens == 0) throw InputError("no routed tokens");
    return stats.distribution_entropy_sum / static_cast<double>(stats.tokens);
}

double h_utilization(std::span<const RoutingTrace> traces, Index layer) { return h_utilization(collect(traces, layer)); }

double h_sparsity(std::span<const RoutingTrace> traces, Index layer) { return h_sparsity(collect(traces, layer)); }

std::vector<CollapsedExpert> detect_collapse(std::span<const RoutingTrace> traces, std::optional<double> min_fraction) {
    std::vector<CollapsedExpert> out;
    if (traces.empty()) return out;
    const Index layers = common_layer_count(traces);
    const Index e = traces.front().n_experts;
    const double threshold = min_fraction.value_or(0.1 / static_cast<double>(e));
    for (Index l = 0; l < layers; ++l) {
        const LayerRoutingStats stats = collect(traces, l);
        const double total = static_cast<double>(stats.total_assignments());
        for (Index j = 0; j < e; ++j) {
            const double f = static_cast<double>(stats.assignments[static_cast<size_t>(j)]) / total;
            if (f < threshold) out.push_back({l, static_cast<int>(j), f});
        }
    }
    return out;
}

TelemetryReport telemetry_report(std::span<const RoutingTrace> traces, std::optional<double> min_fraction) {
    TelemetryReport r;
    const Index layers = common_layer_count(traces);
    for (Index l = 0; l < layers; ++l) {
        const LayerRoutingStats stats = collect(traces, l);
        r.h_utilization.push_back(h_utilization(stats));
        r.h_sparsity.push_back(h_sparsity(stats));
        double total = 0.0;
        double lowest = std::numeric_limits<double>::infinity();
        long long n = 0;
        for (const RoutingTrace& t : traces) {
            const LayerActivationRecord& rec = layer_of(t, l);
            for (Index i = 0; i < rec.gates.rows(); ++i) {
                const double top = rec.gates.row(i).maxCoeff();
                total += top;
                lowest = std::min(lowest, top);
                ++n;
            }
        }
        r.mean_top_gate.push_back(n > 0 ? total / static_cast<double>(n) : 0.0);
        r.min_top_gate.push_back(n > 0 ? lowest : 0.0);
    }
    r.collapsed = detect_collapse(traces, min_fraction);
    return r;
}

std::string TelemetryReport::to_text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "layer\tH_utilization\tH_sparsity\tmean_top_gate\tmin_top_gate\n";
    for (size_t l = 0; l < h_utilization.size(); ++l) {
        os << l << '\t' << h_utilization[l] << '\t' << h_sparsity[l] << '\t' << mean_top_gate[l] << '\t'
           << min_top_gate[l] << '\n';
    }
    os << "collapsed " << collapsed.size() << '\n';
    for (const CollapsedExpert& c : collapsed) {
        os << "  layer " << c.layer << " expert " << c.expert << " fraction " << c.fraction << '\n';
    }
    return os.str();
}

double RoutingEmbedding::row_sum(Index layer) const {
    if (counts.rows() == values.rows() && counts.cols() == values.cols() && token_count > 0) {
        return static_cast<double>(counts.row(layer).sum()) / static_cast<double>(token_count);
    }
    double sum = 0.0;
    double comp = 0.0;
    for (Index j = 0; j < values.cols(); ++j) {
        const double v = values(layer, j);
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v)) {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    return sum + comp;
}

RoutingEmbedding routing_embedding(const RoutingTrace& trace) {
    if (trace.token_count <= 0) throw InputError("trace '" + trace.sample_id + "' has no tokens");
    trace.validate();
    RoutingEmbedding emb;
    emb.token_count = trace.token_count;
    emb.top_k = trace.top_k;
    const Index layers = static_cast<Index>(trace.layers.size());
    emb.counts = CountMatrix::Zero(layers, trace.n_experts);
    for (Index l = 0; l < layers; ++l) {
        for (const auto& sel : trace.layers[static_cast<size_t>(l)].selected) {
            for (int e : sel) ++emb.counts(l, e);
        }
    }
    emb.values = emb.counts.cast<double>() / static_cast<double>(trace.token_count);
    return emb;
}

RoutingEmbedding domain_embedding(std::span<const RoutingEmbedding> embeddings) {
    if (embeddings.empty()) throw InputError("domain embedding of an empty set");
    RoutingEmbedding out;
    out.values = Matrix::Zero(embeddings.front().layers(), embeddings.front().experts());
    out.top_k = embeddings.front().top_k;
    for (const RoutingEmbedding& e : embeddings) {
        require_same_shape(embeddings.front(), e);
        out.values += e.values;
        out.token_count += e.token_count;
    }
    out.values /= static_cast<double>(embeddings.size());
    return out;
}

RoutingEmbedding filter_embedding(const RoutingEmbedding& emb, Index n_experts) {
    if (n_experts != emb.experts()) {
        throw InputError("filter expects " + std::to_string(emb.experts()) + " experts, got " + std::to_string(n_experts));
    }
    const double threshold = 3.0 / static_cast<double>(n_experts);
    RoutingEmbedding out = emb;
    out.counts.resize(0, 0);
    out.values = emb.values.unaryExpr([threshold](double v) { return v < threshold ? 0.0 : v; });
    return out;
}

Vector steering_bias(const RoutingEmbedding& filtered, Index layer, double strength) {
    if (!(strength >= 0.0)) throw InputError("steering strength must be non-negative");
    if (layer < 0 || layer >= filtered.layers()) {
        throw InputError("steering layer " + std::to_string(layer) + " out of range [0, " +
                         std::to_string(filtered.layers()) + ")");
    }
    return (strength * filtered.values.row(layer)).transpose();
}

std::vector<Vector> steering_biases(const RoutingEmbedding& filtered, double strength) {
    std::vector<Vector> out;
    for (Index l = 0; l < filtered.layers(); ++l) out.push_back(steering_bias(filtered, l, strength));
    return out;
}

ClusterResult cluster_embeddings(std::span<const RoutingEmbedding> embeddings, Index n_clusters, std::uint64_t seed) {
    if (embeddings.empty()) throw InputError("no embeddings to cluster");
    if (n_clusters < 1 || n_clusters > static_cast<Index>(embeddings.size())) {
        throw InputError("n_clusters must be in [1, " + std::to_string(embeddings.size()) + "]");
    }
    const Index n = static_cast<Index>(embeddings.size());
    const Index dim = embeddings.front().values.size();
    Matrix points(n, dim);
    for (Index i = 0; i < n; ++i) {
        require_same_shape(embeddings.front(), embeddings[static_cast<size_t>(i)]);
        points.row(i) = embeddings[static_cast<size_t>(i)].values.reshaped<Eigen::RowMajor>().transpose();
    }

    ClusterResult result;
    bool identical = true;
    for (Index i = 1; i < n && identical; ++i) identical = points.row(i) == points.row(0);
    if (identical) {
        result.degenerate = true;
        result.labels.assign(static_cast<size_t>(n), 0);
        result.centroids.push_back(embeddings.front());
        return result;
    }

    Rng rng(seed);
    Matrix centers(n_clusters, dim);
    centers.row(0) = points.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
    Vector nearest(n);
    for (Index c = 1; c < n_clusters; ++c) {
        for (Index i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (Index j = 0; j < c; ++j) best = std::min(best, (points.row(i) - centers.row(j)).squaredNorm());
            nearest(i) = best;
        }
        const double total = nearest.sum();
        Index pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            for (pick = 0; pick < n - 1; ++pick) {
                r -= nearest(pick);
                if (r < 0.0) break;
            }
        }
        centers.row(c) = points.row(pick);
    }

    std::vector<int> labels(static_cast<size_t>(n), -1);
    for (int iter = 0; iter < 300; ++iter) {
        bool changed = false;
        for (Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (Index c = 0; c < n_clusters; ++c) {
                const double d = (points.row(i) - centers.row(c)).squaredNorm();
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(c);
                }
            }
            if (labels[static_cast<size_t>(i)] != best) {
                labels[static_cast<size_t>(i)] = best;
                changed = true;
            }
        }
        if (!changed) break;
        Matrix sums = Matrix::Zero(n_clusters, dim);
        std::vector<Index> sizes(static_cast<size_t>(n_clusters), 0);
        for (Index i = 0; i < n; ++i) {
            sums.row(labels[static_cast<size_t>(i)]) += points.row(i);
            ++sizes[static_cast<size_t>(labels[static_cast<size_t>(i)])];
        }
        for (Index c = 0; c < n_clusters; ++c) {
            if (sizes[static_cast<size_t>(c)] > 0) centers.row(c) = sums.row(c) / static_cast<double>(sizes[static_cast<size_t>(c)]);
        }
    }

    std::map<int, int> renumber;
    for (int& l : labels) {
        auto [it, inserted] = renumber.try_emplace(l, static_cast<int>(renumber.size()));
        l = it->second;
    }
    result.labels = labels;
    std::vector<std::vector<RoutingEmbedding>> members(renumber.size());
    for (Index i = 0; i < n; ++i) members[static_cast<size_t>(labels[static_cast<size_t>(i)])].push_back(embeddings[static_cast<size_t>(i)]);
    for (const auto& m : members) result.centroids.push_back(domain_embedding(m));
    return result;
}

double co2_estimate(const EmissionsInput& in) {
    if (!(in.pue >= 0.0) || !(in.kwh >= 0.0) || !(in.intensity >= 0.0)) {
        throw InputError("emissions inputs must be non-negative");
    }
    return in.pue * in.kwh * in.intensity / 1000.0;
}

void write_trace_jsonl(std::ostream& out, const RoutingTrace& trace) {
    for (const LayerActivationRecord& rec : trace.layers) {
        for (Index t = 0; t < rec.tokens(); ++t) {
            json j;
            j["sample"] = trace.sample_id;
            j["layer"] = rec.layer;
            j["token"] = t;
            j["selected"] = rec.selected[static_cast<size_t>(t)];
            std::vector<double> gates(rec.gates.row(t).begin(), rec.gates.row(t).end());
            j["gates"] = gates;
            if (rec.distribution.rows() > t) {
                std::vector<double> dist(rec.distribution.row(t).begin(), rec.distribution.row(t).end());
                j["dist"] = dist;
            }
            out << j.dump() << '\n';
        }
    }
}

std::vector<RoutingTrace> read_trace_jsonl(std::istream& in, Index top_k) {
    struct Row {
        std::vector<int> selected;
        std::vector<double> gates, dist;
    };
    std::vector<std::string> order;
    std::map<std::string, std::map<Index, std::map<Index, Row>>> samples;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            const std::string id = j.at("sample").get<std::string>();
            if (!samples.contains(id)) order.push_back(id);
            Row row;
            row.selected = j.at("selected").get<std::vector<int>>();
            row.gates = j.value("gates", std::vector<double>{});
            row.dist = j.value("dist", std::vector<double>{});
            samples[id][j.at("layer").get<Index>()][j.at("token").get<Index>()] = std::move(row);
        } catch (const json::exception& e) {
            throw InputError("trace line " + std::to_string(lineno) + ": " + e.what());
        }
    }

    std::vector<RoutingTrace> traces;
    for (const std::string& id : order) {
        RoutingTrace t;
        t.sample_id = id;
        t.top_k = top_k;
        for (auto& [layer, tokens] : samples[id]) {
            LayerActivationRecord rec;
            rec.layer = layer;
            const Index n = static_cast<Index>(tokens.size());
            Index e = 0;
            for (auto& [tok, row] : tokens) {
                if (tok != static_cast<Index>(rec.selected.size())) {
                    throw InputError("trace '" + id + "': missing token " + std::to_string(rec.selected.size()));
                }
                e = std::max<Index>(e, static_cast<Index>(row.dist.size()));
                rec.selected.push_back(row.selected);
            }
            rec.gates = Matrix::Zero(n, top_k);
            rec.distribution = Matrix::Zero(e > 0 ? n : 0, e);
            for (auto& [tok, row] : tokens) {
                for (size_t s = 0; s < row.gates.size() && static_cast<Index>(s) < top_k; ++s) rec.gates(tok, static_cast<Index>(s)) = row.gates[s];
                if (e > 0) {
                    if (static_cast<Index>(row.dist.size()) != e) throw InputError("trace '" + id + "': ragged distributions");
                    for (Index j = 0; j < e; ++j) rec.distribution(tok, j) = row.dist[static_cast<size_t>(j)];
                }
            }
            if (t.layers.empty()) t.token_count = n;
            t.n_experts = std::max(t.n_experts, e);
            t.layers.push_back(std::move(rec));
        }
        if (t.n_experts == 0) {
            for (const auto& rec : t.layers)
                for (const auto& sel : rec.selected)
                    for (int x : sel) t.n_experts = std::max<Index>(t.n_experts, x + 1);
        }
        t.validate();
        traces.push_back(std::move(t));
    }
    return traces;
}

std::string embedding_to_text(const RoutingEmbedding& emb) {
    std::ostringstream os;
    os.precision(17);
    os << "routing-embedding " << emb.layers() << ' ' << emb.experts() << ' ' << emb.top_k << ' ' << emb.token_count
       << '\n';
    for (Index l = 0; l < emb.layers(); ++l) {
        for (Index j = 0; j < emb.experts(); ++j) os << (j ? " " : "") << emb.values(l, j);
        os << '\n';
    }
    return os.str();
}

RoutingEmbedding embedding_from_text(const std::string& text) {
    std::istringstream is(text);
    std::string tag;
    Index layers = 0, experts = 0;
    RoutingEmbedding emb;
    if (!(is >> tag >> layers >> experts >> emb.top_k >> emb.token_count) || tag != "routing-embedding" || layers <= 0 ||
        experts <= 0) {
        throw InputError("malformed routing embedding header");
    }
    emb.values.resize(layers, experts);
    for (Index l = 0; l < layers; ++l) {
        for (Index j = 0; j < experts; ++j) {
            if (!(is >> emb.values(l, j))) throw InputError("routing embedding truncated at row " + std::to_string(l));
        }
    }
    std::string extra;
    if (is >> extra) throw InputError("trailing data after routing embedding");
    return emb;
}

}  // namespace moelab
