#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moelab/autograd.hpp"
#include "moelab/kv.hpp"

namespace moelab {

enum class GateMode {
    SigmoidUnnormalized,     // gate_i = sigma(a_i), no rescaling
    SoftmaxTopkUnnormalized, // gate_i = softmax(a)_i over all experts, no rescaling
    SoftmaxRenormalized,     // selected softmax probabilities rescaled to sum to one
};

std::string to_string(GateMode m);
GateMode gate_mode_from_string(const std::string& s);

struct ModelConfig {
    Index vocab_size = 256;
    Index d_model = 256;
    Index n_layers = 6;
    Index n_heads = 8;
    Index n_kv_heads = 4;
    Index n_shared_experts = 2;
    Index n_routed_experts = 8;
    Index top_k = 2;
    Index d_ff_expert = 448;
    Index d_ff_first = 896;
    double rope_base = 10000.0;
    Index context_len = 8192;
    bool tie_experts_across_layers = false;
    GateMode gate_mode = GateMode::SigmoidUnnormalized;

    Index head_dim() const { return d_model / n_heads; }
    /// Layer 0 is a dense gated MLP; every later layer is MoE.
    Index n_moe_layers() const { return n_layers - 1; }
    void validate() const;

    static const std::vector<std::string>& keys();
    KeyValues to_kv() const;
    std::string to_text() const { return to_kv().to_text(); }
    static ModelConfig from_kv(const KeyValues& kv);
    static ModelConfig from_text(const std::string& text) { return from_kv(KeyValues::parse(text)); }
};

// ---------------------------------------------------------------------------
// Plain weight bundles for the value-level API. Projections multiply on the
// right: y = x W, with x a row vector.

struct GatedMlpWeights {
    Matrix gate;  // [d_model, d_ff]
    Matrix up;    // [d_model, d_ff]
    Matrix down;  // [d_ff, d_model]
};

struct MoeWeights {
    Matrix router;  // [d_model, n_routed]
    std::vector<GatedMlpWeights> shared;
    std::vector<GatedMlpWeights> routed;
};

struct AttentionWeights {
    Matrix wq;  // [d_model, n_heads * head_dim]
    Matrix wk;  // [d_model, n_kv_heads * head_dim]
    Matrix wv;  // [d_model, n_kv_heads * head_dim]
    Matrix wo;  // [n_heads * head_dim, d_model]
};

struct RouterOutput {
    Vector affinities;          // unbiased router scores
    std::vector<int> selected;  // ascending expert ids
    std::vector<double> gates;  // aligned with `selected`
};

/// Routing of one MoE layer over a batch of tokens.
struct LayerActivationRecord {
    Index layer = 0;                          // MoE layer ordinal (0 = first MoE layer)
    std::vector<std::vector<int>> selected;   // per token, ascending
    Matrix distribution;                      // [tokens, n_routed]; softmax of affinities
    Matrix gates;                             // [tokens, top_k]; aligned with `selected`

    Index tokens() const { return static_cast<Index>(selected.size()); }
};

/// Top-k by descending score, ties to the lower index; result sorted ascending.
std::vector<int> top_k_indices(std::span<const double> scores, Index k);

Vector gated_mlp(const Vector& h, const GatedMlpWeights& w);
RouterOutput router_forward(const Vector& h, const Matrix& router_weights, const ModelConfig& config,
                            const Vector* steering_bias = nullptr);
/// x is [tokens, d_model]; returns [tokens, d_model].
std::pair<Matrix, LayerActivationRecord> moe_forward(const Matrix& x, const MoeWeights& w, const ModelConfig& config,
                                                     const Vector* steering_bias = nullptr);
/// Rotates every row of q_or_k ([rows, k * head_dim]) for a single position.
Tensor rope_apply(const Tensor& q_or_k, Index position, double base, Index head_dim);
/// RoPE base for an extended context: 8192 -> 1e4, 32768 -> 3e5, 131072 -> 1.4e6.
double abf_base_for_context(Index target_context, std::optional<double> override_base = std::nullopt);
/// Causal grouped-query attention over one sequence, hidden is [tokens, d_model].
Matrix attention_forward(const Matrix& hidden, std::span<const Index> positions, const AttentionWeights& w,
                         const ModelConfig& config);

struct ParamCount {
    std::int64_t total = 0;
    std::int64_t active_per_token = 0;
};
ParamCount count_params(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Differentiable building blocks.

struct GatedMlpVars {
    Var gate, up, down;
};
struct MoeVars {
    Var router;
    std::vector<GatedMlpVars> shared;
    std::vector<GatedMlpVars> routed;
};
struct AttentionVars {
    Var wq, wk, wv, wo;
};

struct MoeOutput {
    Var output;
    Var balance_loss;  // n_routed * sum_i f_i P_i for this layer
    LayerActivationRecord record;
};

Var gated_mlp(Var x, const GatedMlpVars& w);
MoeOutput moe_layer(Var x, const MoeVars& w, const ModelConfig& config, const Vector* steering_bias = nullptr);
/// x is [batch * seq_len, d_model]; each sequence uses `positions`.
Var attention(Var x, Index batch, std::span<const Index> positions, const AttentionVars& w, const ModelConfig& config);

// ---------------------------------------------------------------------------

struct GatedMlpSlots {
    size_t gate, up, down;
};

struct LayerSlots {
    size_t attn_norm, wq, wk, wv, wo, mlp_norm;
    std::optional<GatedMlpSlots> dense;
    size_t router = 0;
    std::vector<GatedMlpSlots> shared;
    std::vector<GatedMlpSlots> routed;
};

/// Decoder-only MoE transformer: embedding, pre-norm blocks of attention plus a
/// gated MLP (layer 0) or MoE block (later layers), final norm, output head.
class Model {
public:
    explicit Model(ModelConfig config, std::uint64_t seed = 0, double init_std = 0.02);

    const ModelConfig& config() const noexcept { return config_; }
    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    Parameter& parameter(const std::string& name);
    const LayerSlots& layer(Index i) const { return layers_.at(static_cast<size_t>(i)); }
    size_t embed_slot() const noexcept { return embed_; }
    size_t final_norm_slot() const noexcept { return final_norm_; }
    size_t head_slot() const noexcept { return head_; }
    void zero_grad();

    MoeWeights moe_weights(Index moe_layer) const;
    AttentionWeights attention_weights(Index layer) const;

private:
    size_t add(const std::string& name, Shape shape);

    ModelConfig config_;
    std::vector<Parameter> params_;
    std::vector<LayerSlots> layers_;
    size_t embed_ = 0, final_norm_ = 0, head_ = 0;
};

struct ForwardOptions {
    /// Optional per-MoE-layer additive selection bias (empty = unsteered).
    std::vector<Vector> steering;
};

struct ForwardPass {
    Var logits;        // [batch * seq_len, vocab]
    Var balance_loss;  // mean over MoE layers
    std::vector<LayerActivationRecord> records;
};

/// `sequences` must share one length.
ForwardPass forward(Graph& g, Model& model, const std::vector<std::vector<int>>& sequences,
                    const ForwardOptions& options = {});

/// Inference: next-token logits per position and one record per MoE layer.
std::pair<Matrix, std::vector<LayerActivationRecord>> model_forward(const Model& model, std::span<const int> ids,
                                                                    const ForwardOptions& options = {});

/// Greedy continuation of `prompt` by `n_new` tokens.
std::vector<int> generate_greedy(const Model& model, std::span<const int> prompt, Index n_new,
                                 const ForwardOptions& options = {});

}  // namespace moelab
