#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moelab/model.hpp"

namespace moelab {

/// Routing of one text sample through every MoE layer.
struct RoutingTrace {
    std::string sample_id;
    Index token_count = 0;
    Index top_k = 0;
    Index n_experts = 0;
    std::vector<LayerActivationRecord> layers;

    /// Checks selected-per-token == top_k and per-layer token counts.
    void validate() const;
};

RoutingTrace make_trace(std::string sample_id, std::vector<LayerActivationRecord> layers, Index top_k,
                        Index n_experts);

/// Count-based aggregate of routing decisions for one layer; merging is
/// associative, entropies are derived afterwards.
struct LayerRoutingStats {
    std::vector<long long> assignments;  // per expert
    double distribution_entropy_sum = 0.0;  // sum over tokens of normalized entropy
    long long tokens = 0;

    explicit LayerRoutingStats(Index n_experts = 0) : assignments(static_cast<size_t>(n_experts), 0) {}
    void add(const LayerActivationRecord& record);
    void merge(const LayerRoutingStats& other);
    long long total_assignments() const;
};

/// Normalized Shannon entropy (log base e / log n) of a non-negative weight vector.
template <typename Scalar>
Scalar normalized_entropy(std::span<const Scalar> weights) {
    using std::log;
    const size_t n = weights.size();
    if (n <= 1) return Scalar(0);
    Scalar total = 0;
    for (Scalar w : weights) total += w;
    if (total <= 0) return Scalar(0);
    Scalar h = 0;
    for (Scalar w : weights) {
        if (w > 0) {
            const Scalar p = w / total;
            h -= p * log(p);
        }
    }
    return h / log(static_cast<Scalar>(n));
}

double h_utilization(const LayerRoutingStats& stats);
double h_sparsity(const LayerRoutingStats& stats);

/// Entropy of the expert-assignment frequencies, in [0, 1].
double h_utilization(std::span<const RoutingTrace> traces, Index layer);
/// Mean normalized entropy of the per-token router distribution, in [0, 1].
double h_sparsity(std::span<const RoutingTrace> traces, Index layer);

struct CollapsedExpert {
    Index layer;
    int expert;
    double fraction;
    bool operator==(const CollapsedExpert&) const = default;
};

/// Experts whose share of top-k assignments is below `min_fraction`
/// (default 0.1 / n_experts).
std::vector<CollapsedExpert> detect_collapse(std::span<const RoutingTrace> traces,
                                             std::optional<double> min_fraction = std::nullopt);

struct TelemetryReport {
    std::vector<double> h_utilization;
    std::vector<double> h_sparsity;
    std::vector<CollapsedExpert> collapsed;
    std::vector<double> mean_top_gate;  // per layer, mean of each token's largest gate
    std::vector<double> min_top_gate;

    std::string to_text() const;
};

TelemetryReport telemetry_report(std::span<const RoutingTrace> traces,
                                 std::optional<double> min_fraction = std::nullopt);

using CountMatrix = Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// l x e matrix of expert activation counts normalized by sample length.
struct RoutingEmbedding {
    Matrix values;
    Index token_count = 0;
    Index top_k = 0;
    /// Raw activation counts when the embedding comes from a single trace;
    /// empty for averaged or parsed embeddings.
    CountMatrix counts;

    Index layers() const { return values.rows(); }
    Index experts() const { return values.cols(); }
    /// Exact count total / token_count when counts are present, otherwise a
    /// compensated sum of the row.
    double row_sum(Index layer) const;
};

RoutingEmbedding routing_embedding(const RoutingTrace& trace);
RoutingEmbedding domain_embedding(std::span<const RoutingEmbedding> embeddings);
/// Zeroes entries below 3 / n_experts.
RoutingEmbedding filter_embedding(const RoutingEmbedding& emb, Index n_experts);
/// Additive pre-selection bias strength * filtered[layer].
Vector steering_bias(const RoutingEmbedding& filtered, Index layer, double strength);
/// One bias vector per MoE layer, ready for ForwardOptions::steering.
std::vector<Vector> steering_biases(const RoutingEmbedding& filtered, double strength);

struct ClusterResult {
    std::vector<int> labels;
    bool degenerate = false;  // all inputs identical
    std::vector<RoutingEmbedding> centroids;
};

/// Seeded k-means (k-means++ seeding, Lloyd iterations) over flattened embeddings.
/// Labels are renumbered in order of first appearance.
ClusterResult cluster_embeddings(std::span<const RoutingEmbedding> embeddings, Index n_clusters, std::uint64_t seed);

struct EmissionsInput {
    double pue = 1.0;
    double kwh = 0.0;
    double intensity = 0.0;  // g CO2 per kWh
};

/// Kilograms of CO2: pue * kwh * intensity / 1000.
double co2_estimate(const EmissionsInput& in);

// File formats.

/// One JSON object per (sample, layer, token):
/// {"sample", "layer", "token", "selected", "gates", "dist"}.
void write_trace_jsonl(std::ostream& out, const RoutingTrace& trace);
std::vector<RoutingTrace> read_trace_jsonl(std::istream& in, Index top_k);

/// Header "routing-embedding <layers> <experts> <top_k> <token_count>" then one row per line.
std::string embedding_to_text(const RoutingEmbedding& emb);
RoutingEmbedding embedding_from_text(const std::string& text);

}  // namespace moelab
