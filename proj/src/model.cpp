#include "moelab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moelab/random.hpp"
#include "moelab/rope.hpp"

namespace moelab {

std::string to_string(GateMode m) {
    switch (m) {
        case GateMode::SigmoidUnnormalized: return "sigmoid-unnormalized";
        case GateMode::SoftmaxTopkUnnormalized: return "softmax-topk-unnormalized";
        case GateMode::SoftmaxRenormalized: return "softmax-renormalized";
    }
    return "?";
}

GateMode gate_mode_from_string(const std::string& s) {
    if (s == "sigmoid-unnormalized") return GateMode::SigmoidUnnormalized;
    if (s == "softmax-topk-unnormalized") return GateMode::SoftmaxTopkUnnormalized;
    if (s == "softmax-renormalized") return GateMode::SoftmaxRenormalized;
    throw ConfigError("unknown gate_mode '" + s + "'");
}

void ModelConfig::validate() const {
    auto positive = [](Index v, const char* name) {
        if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(vocab_size, "vocab_size");
    positive(d_model, "d_model");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(n_kv_heads, "n_kv_heads");
    positive(n_routed_experts, "n_routed_experts");
    positive(d_ff_expert, "d_ff_expert");
    positive(d_ff_first, "d_ff_first");
    positive(context_len, "context_len");
    if (n_shared_experts < 0) throw ConfigError("n_shared_experts must be non-negative");
    if (n_heads % n_kv_heads != 0) throw ConfigError("n_heads must be a multiple of n_kv_heads");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be a multiple of n_heads");
    if (head_dim() % 2 != 0) throw ConfigError("head_dim must be even for rotary embeddings");
    if (top_k < 1 || top_k > n_routed_experts) {
        throw ConfigError("top_k " + std::to_string(top_k) + " must lie in [1, n_routed_experts=" +
                          std::to_string(n_routed_experts) + "]");
    }
    if (!(rope_base > 0.0)) throw ConfigError("rope_base must be positive");
}

const std::vector<std::string>& ModelConfig::keys() {
    static const std::vector<std::string> k = {
        "vocab_size",       "d_model",       "n_layers",  "n_heads",     "n_kv_heads",
        "n_shared_experts", "n_routed_experts", "top_k",  "d_ff_expert", "d_ff_first",
        "rope_base",        "context_len",   "tie_experts_across_layers", "gate_mode"};
    return k;
}

KeyValues ModelConfig::to_kv() const {
    KeyValues kv;
    kv.set("vocab_size", std::to_string(vocab_size));
    kv.set("d_model", std::to_string(d_model));
    kv.set("n_layers", std::to_string(n_layers));
    kv.set("n_heads", std::to_string(n_heads));
    kv.set("n_kv_heads", std::to_string(n_kv_heads));
    kv.set("n_shared_experts", std::to_string(n_shared_experts));
    kv.set("n_routed_experts", std::to_string(n_routed_experts));
    kv.set("top_k", std::to_string(top_k));
    kv.set("d_ff_expert", std::to_string(d_ff_expert));
    kv.set("d_ff_first", std::to_string(d_ff_first));
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", rope_base);
    kv.set("rope_base", buf);
    kv.set("context_len", std::to_string(context_len));
    kv.set("tie_experts_across_layers", tie_experts_across_layers ? "true" : "false");
    kv.set("gate_mode", to_string(gate_mode));
    return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
    kv.require_known(keys());
    ModelConfig c;
    c.vocab_size = kv.integer("vocab_size", c.vocab_size);
    c.d_model = kv.integer("d_model", c.d_model);
    c.n_layers = kv.integer("n_layers", c.n_layers);
    c.n_heads = kv.integer("n_heads", c.n_heads);
    c.n_kv_heads = kv.integer("n_kv_heads", c.n_kv_heads);
    c.n_shared_experts = kv.integer("n_shared_experts", c.n_shared_experts);
    c.n_routed_experts = kv.integer("n_routed_experts", c.n_routed_experts);
    c.top_k = kv.integer("top_k", c.top_k);
    c.d_ff_expert = kv.integer("d_ff_expert", c.d_ff_expert);
    c.d_ff_first = kv.integer("d_ff_first", c.d_ff_first);
    c.rope_base = kv.real("rope_base", c.rope_base);
    c.context_len = kv.integer("context_len", c.context_len);
    c.tie_experts_across_layers = kv.boolean("tie_experts_across_layers", c.tie_experts_across_layers);
    if (auto m = kv.get("gate_mode")) c.gate_mode = gate_mode_from_string(*m);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------

std::vector<int> top_k_indices(std::span<const double> scores, Index k) {
    const Index n = static_cast<Index>(scores.size());
    if (k < 1 || k > n) throw ConfigError("top_k " + std::to_string(k) + " exceeds expert count " + std::to_string(n));
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)]) {
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        }
        return a < b;
    });
    order.resize(static_cast<size_t>(k));
    std::sort(order.begin(), order.end());
    return order;
}

namespace {

double logistic(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void check_mlp(const GatedMlpWeights& w, Index d) {
    if (w.gate.rows() != d || w.up.rows() != d || w.gate.cols() != w.up.cols() || w.down.rows() != w.gate.cols() ||
        w.down.cols() != d) {
        throw ConfigError("gated MLP weights do not match d_model " + std::to_string(d));
    }
}

GatedMlpVars bind(Graph& g, const GatedMlpWeights& w) {
    return {g.constant(Tensor::from_matrix(w.gate)), g.constant(Tensor::from_matrix(w.up)),
            g.constant(Tensor::from_matrix(w.down))};
}

}  // namespace

Vector gated_mlp(const Vector& h, const GatedMlpWeights& w) {
    check_mlp(w, h.size());
    Graph g(false);
    Matrix row = h.transpose();
    Var out = gated_mlp(g.constant(Tensor::from_matrix(row)), bind(g, w));
    return out.mat().row(0).transpose();
}

RouterOutput router_forward(const Vector& h, const Matrix& router_weights, const ModelConfig& config,
                            const Vector* steering_bias) {
    if (router_weights.rows() != h.size()) throw DimensionError("router weights do not match hidden size");
    const Index e = router_weights.cols();
    if (config.top_k > e) throw ConfigError("top_k exceeds n_routed_experts");
    RouterOutput out;
    out.affinities = router_weights.transpose() * h;
    Vector scores = out.affinities;
    if (steering_bias) {
        if (steering_bias->size() != e) throw DimensionError("steering bias length does not match expert count");
        scores += *steering_bias;
    }
    out.selected = top_k_indices({scores.data(), static_cast<size_t>(e)}, config.top_k);
    Vector probs = (out.affinities.array() - out.affinities.maxCoeff()).exp();
    probs /= probs.sum();
    double total = 0.0;
    for (int i : out.selected) {
        const double gval = config.gate_mode == GateMode::SigmoidUnnormalized ? logistic(out.affinities[i]) : probs[i];
        out.gates.push_back(gval);
        total += gval;
    }
    if (config.gate_mode == GateMode::SoftmaxRenormalized) {
        for (double& gval : out.gates) gval /= total;
    }
    return out;
}

std::pair<Matrix, LayerActivationRecord> moe_forward(const Matrix& x, const MoeWeights& w, const ModelConfig& config,
                                                     const Vector* steering_bias) {
    for (const auto& m : w.shared) check_mlp(m, x.cols());
    for (const auto& m : w.routed) check_mlp(m, x.cols());
    Graph g(false);
    MoeVars vars;
    vars.router = g.constant(Tensor::from_matrix(w.router));
    for (const auto& m : w.shared) vars.shared.push_back(bind(g, m));
    for (const auto& m : w.routed) vars.routed.push_back(bind(g, m));
    MoeOutput out = moe_layer(g.constant(Tensor::from_matrix(x)), vars, config, steering_bias);
    return {out.output.mat(), std::move(out.record)};
}

Tensor rope_apply(const Tensor& q_or_k, Index position, double base, Index head_dim) {
    if (head_dim <= 0 || head_dim % 2 != 0) throw ConfigError("rope head_dim must be positive and even");
    Tensor out = q_or_k;
    std::vector<Index> positions(static_cast<size_t>(out.mat().rows()), position);
    rope_rotate<double>(out.mat(), positions, head_dim, base);
    return out;
}

double abf_base_for_context(Index target_context, std::optional<double> override_base) {
    if (override_base) {
        if (!(*override_base > 0.0)) throw ConfigError("RoPE base override must be positive");
        return *override_base;
    }
    switch (target_context) {
        case 8192: return 10'000.0;
        case 32768: return 300'000.0;
        case 131072: return 1'400'000.0;
        default: break;
    }
    throw ConfigError("no RoPE base scheduled for context " + std::to_string(target_context) +
                      " (supported: 8192, 32768, 131072; pass an override)");
}

Matrix attention_forward(const Matrix& hidden, std::span<const Index> positions, const AttentionWeights& w,
                         const ModelConfig& config) {
    Graph g(false);
    AttentionVars vars{g.constant(Tensor::from_matrix(w.wq)), g.constant(Tensor::from_matrix(w.wk)),
                       g.constant(Tensor::from_matrix(w.wv)), g.constant(Tensor::from_matrix(w.wo))};
    return attention(g.constant(Tensor::from_matrix(hidden)), 1, positions, vars, config).mat();
}

ParamCount count_params(const ModelConfig& c) {
    c.validate();
    using I = std::int64_t;
    const I d = c.d_model;
    const I hd = c.head_dim();
    const I attn = d * c.n_heads * hd + 2 * d * c.n_kv_heads * hd + c.n_heads * hd * d;
    const I norms = 2 * d;
    const I expert = 3 * d * c.d_ff_expert;
    const I moe_layers = c.n_moe_layers();
    const I e = c.n_routed_experts;
    const I k = c.top_k;

    I common = c.vocab_size * d + c.n_layers * (attn + norms) + d + d * c.vocab_size;
    if (c.n_layers > 0) common += 3 * d * c.d_ff_first;
    common += moe_layers * d * e;  // routers

    ParamCount out;
    if (!c.tie_experts_across_layers || moe_layers == 0) {
        out.total = common + moe_layers * (c.n_shared_experts + e) * expert;
        out.active_per_token = common + moe_layers * (c.n_shared_experts + k) * expert;
    } else {
        // One expert bank serves every MoE layer; a token touches at most
        // min(e, k * layers) distinct routed experts.
        out.total = common + (c.n_shared_experts + e) * expert;
        out.active_per_token = common + (c.n_shared_experts + std::min(e, k * moe_layers)) * expert;
    }
    return out;
}

// ---------------------------------------------------------------------------

Var gated_mlp(Var x, const GatedMlpVars& w) {
    return matmul(silu(matmul(x, w.gate)) * matmul(x, w.up), w.down);
}

MoeOutput moe_layer(Var x, const MoeVars& w, const ModelConfig& config, const Vector* steering_bias) {
    Graph& g = x.graph();
    const Index n = x.mat().rows();
    const Index e = static_cast<Index>(w.routed.size());
    if (e != config.n_routed_experts) throw ConfigError("routed expert count does not match config");
    if (config.top_k > e) throw ConfigError("top_k exceeds n_routed_experts");
    if (steering_bias && steering_bias->size() != e) {
        throw DimensionError("steering bias length does not match expert count");
    }

    Var affinities = matmul(x, w.router);
    Var probs = softmax(affinities);

    MoeOutput out;
    out.record.distribution = probs.mat();
    out.record.gates.resize(n, config.top_k);
    out.record.selected.resize(static_cast<size_t>(n));

    Matrix mask = Matrix::Zero(n, e);
    std::vector<std::vector<Index>> tokens_of(static_cast<size_t>(e));
    Vector scores(e);
    for (Index t = 0; t < n; ++t) {
        scores = affinities.mat().row(t).transpose();
        if (steering_bias) scores += *steering_bias;
        auto sel = top_k_indices({scores.data(), static_cast<size_t>(e)}, config.top_k);
        for (int j : sel) {
            mask(t, j) = 1.0;
            tokens_of[static_cast<size_t>(j)].push_back(t);
        }
        out.record.selected[static_cast<size_t>(t)] = std::move(sel);
    }

    Var gates = config.gate_mode == GateMode::SigmoidUnnormalized ? sigmoid(affinities) : probs;
    gates = gates * g.constant(Tensor::from_matrix(mask));
    if (config.gate_mode == GateMode::SoftmaxRenormalized) gates = scale_rows(gates, reciprocal(row_sum(gates)));
    for (Index t = 0; t < n; ++t) {
        const auto& sel = out.record.selected[static_cast<size_t>(t)];
        for (size_t s = 0; s < sel.size(); ++s) out.record.gates(t, static_cast<Index>(s)) = gates.mat()(t, sel[s]);
    }

    Var total;
    auto accumulate = [&total](Var v) { total = total.valid() ? total + v : v; };
    for (const auto& shared : w.shared) accumulate(gated_mlp(x, shared));
    for (Index j = 0; j < e; ++j) {
        const auto& idx = tokens_of[static_cast<size_t>(j)];
        if (idx.empty()) continue;
        Var y = gated_mlp(gather_rows(x, idx), w.routed[static_cast<size_t>(j)]);
        Var gj = gather_rows(slice_cols(gates, j, 1), idx);
        accumulate(scatter_add_rows(scale_rows(y, gj), idx, n));
    }
    out.output = total;

    // Switch-style balance term: f_i is the share of top-k assignments.
    Tensor frac(Shape{e});
    for (Index j = 0; j < e; ++j) {
        frac[j] = static_cast<double>(tokens_of[static_cast<size_t>(j)].size()) / static_cast<double>(n * config.top_k);
    }
    out.balance_loss = scale(sum(mean_rows(probs) * g.constant(std::move(frac))), static_cast<double>(e));
    return out;
}

Var attention(Var x, Index batch, std::span<const Index> positions, const AttentionVars& w, const ModelConfig& config) {
    Graph& g = x.graph();
    const Index seq = static_cast<Index>(positions.size());
    if (x.mat().rows() != batch * seq) throw DimensionError("attention rows must equal batch * positions");
    if (seq > config.context_len) {
        throw InputError("sequence length " + std::to_string(seq) + " exceeds context_len " +
                         std::to_string(config.context_len));
    }
    const Index hd = config.head_dim();
    const Index group = config.n_heads / config.n_kv_heads;

    std::vector<Index> all_pos;
    all_pos.reserve(static_cast<size_t>(batch * seq));
    for (Index b = 0; b < batch; ++b) all_pos.insert(all_pos.end(), positions.begin(), positions.end());

    Var q = rope(matmul(x, w.wq), all_pos, hd, config.rope_base);
    Var k = rope(matmul(x, w.wk), all_pos, hd, config.rope_base);
    Var v = matmul(x, w.wv);

    Matrix mask_m = Matrix::Zero(seq, seq);
    for (Index i = 0; i < seq; ++i) {
        for (Index j = i + 1; j < seq; ++j) mask_m(i, j) = -1e30;
    }
    Var mask = g.constant(Tensor::from_matrix(std::move(mask_m)));
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<Var> seq_out;
    for (Index b = 0; b < batch; ++b) {
        Var qb = slice_rows(q, b * seq, seq);
        Var kb = slice_rows(k, b * seq, seq);
        Var vb = slice_rows(v, b * seq, seq);
        std::vector<Var> kT(static_cast<size_t>(config.n_kv_heads));
        std::vector<Var> vh(static_cast<size_t>(config.n_kv_heads));
        for (Index kvh = 0; kvh < config.n_kv_heads; ++kvh) {
            kT[static_cast<size_t>(kvh)] = transpose(slice_cols(kb, kvh * hd, hd));
            vh[static_cast<size_t>(kvh)] = slice_cols(vb, kvh * hd, hd);
        }
        std::vector<Var> heads;
        for (Index h = 0; h < config.n_heads; ++h) {
            const size_t kvh = static_cast<size_t>(h / group);
            Var scores = scale(matmul(slice_cols(qb, h * hd, hd), kT[kvh]), scale_factor) + mask;
            heads.push_back(matmul(softmax(scores), vh[kvh]));
        }
        seq_out.push_back(concat_cols(heads));
    }
    Var merged = batch == 1 ? seq_out.front() : concat_rows(seq_out);
    return matmul(merged, w.wo);
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, std::uint64_t seed, double init_std) : config_(std::move(config)) {
    config_.validate();
    const Index d = config_.d_model;
    const Index hd = config_.head_dim();
    params_.reserve(static_cast<size_t>(16 + config_.n_layers * (8 + 3 * (config_.n_routed_experts + config_.n_shared_experts))));

    auto mlp = [&](const std::string& prefix, Index ff) {
        return GatedMlpSlots{add(prefix + ".gate", {d, ff}), add(prefix + ".up", {d, ff}), add(prefix + ".down", {ff, d})};
    };

    embed_ = add("embed", {config_.vocab_size, d});
    std::vector<GatedMlpSlots> tied_shared, tied_routed;
    if (config_.tie_experts_across_layers && config_.n_moe_layers() > 0) {
        for (Index s = 0; s < config_.n_shared_experts; ++s) tied_shared.push_back(mlp("tied.shared." + std::to_string(s), config_.d_ff_expert));
        for (Index j = 0; j < config_.n_routed_experts; ++j) tied_routed.push_back(mlp("tied.expert." + std::to_string(j), config_.d_ff_expert));
    }
    for (Index l = 0; l < config_.n_layers; ++l) {
        const std::string p = "layer." + std::to_string(l);
        LayerSlots s{};
        s.attn_norm = add(p + ".attn_norm", {d});
        s.wq = add(p + ".wq", {d, config_.n_heads * hd});
        s.wk = add(p + ".wk", {d, config_.n_kv_heads * hd});
        s.wv = add(p + ".wv", {d, config_.n_kv_heads * hd});
        s.wo = add(p + ".wo", {config_.n_heads * hd, d});
        s.mlp_norm = add(p + ".mlp_norm", {d});
        if (l == 0) {
            s.dense = mlp(p + ".mlp", config_.d_ff_first);
        } else {
            s.router = add(p + ".router", {d, config_.n_routed_experts});
            if (config_.tie_experts_across_layers) {
                s.shared = tied_shared;
                s.routed = tied_routed;
            } else {
                for (Index e = 0; e < config_.n_shared_experts; ++e) s.shared.push_back(mlp(p + ".shared." + std::to_string(e), config_.d_ff_expert));
                for (Index e = 0; e < config_.n_routed_experts; ++e) s.routed.push_back(mlp(p + ".expert." + std::to_string(e), config_.d_ff_expert));
            }
        }
        layers_.push_back(std::move(s));
    }
    final_norm_ = add("final_norm", {d});
    head_ = add("lm_head", {d, config_.vocab_size});

    Rng rng(seed);
    for (auto& p : params_) {
        const bool is_norm = p.name.ends_with("norm");
        for (double& v : p.value.data()) v = is_norm ? 1.0 : init_std * rng.normal();
    }
}

size_t Model::add(const std::string& name, Shape shape) {
    params_.emplace_back(name, Tensor(std::move(shape)));
    return params_.size() - 1;
}

Parameter& Model::parameter(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw InputError("no parameter named '" + name + "'");
}

void Model::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

MoeWeights Model::moe_weights(Index moe_layer) const {
    const LayerSlots& s = layer(moe_layer + 1);
    auto copy = [this](const GatedMlpSlots& m) {
        return GatedMlpWeights{params_[m.gate].value.mat(), params_[m.up].value.mat(), params_[m.down].value.mat()};
    };
    MoeWeights w;
    w.router = params_[s.router].value.mat();
    for (const auto& m : s.shared) w.shared.push_back(copy(m));
    for (const auto& m : s.routed) w.routed.push_back(copy(m));
    return w;
}

AttentionWeights Model::attention_weights(Index l) const {
    const LayerSlots& s = layer(l);
    return {params_[s.wq].value.mat(), params_[s.wk].value.mat(), params_[s.wv].value.mat(), params_[s.wo].value.mat()};
}

ForwardPass forward(Graph& g, Model& model, const std::vector<std::vector<int>>& sequences,
                    const ForwardOptions& options) {
    const ModelConfig& c = model.config();
    if (sequences.empty()) throw InputError("forward needs at least one sequence");
    const Index seq = static_cast<Index>(sequences.front().size());
    if (seq == 0) throw InputError("forward needs non-empty sequences");
    std::vector<Index> flat;
    for (const auto& s : sequences) {
        if (static_cast<Index>(s.size()) != seq) throw InputError("sequences in one batch must share a length");
        for (int id : s) {
            if (id < 0 || id >= c.vocab_size) {
                throw InputError("token id " + std::to_string(id) + " outside vocab of " + std::to_string(c.vocab_size));
            }
            flat.push_back(id);
        }
    }
    if (!options.steering.empty() && static_cast<Index>(options.steering.size()) != c.n_moe_layers()) {
        throw InputError("steering needs one bias vector per MoE layer");
    }

    std::vector<Var> pv;
    pv.reserve(model.parameters().size());
    for (auto& p : model.parameters()) pv.push_back(g.parameter(p));
    auto P = [&pv](size_t slot) { return pv[slot]; };
    auto mlp_vars = [&](const GatedMlpSlots& m) { return GatedMlpVars{P(m.gate), P(m.up), P(m.down)}; };

    std::vector<Index> positions(static_cast<size_t>(seq));
    std::iota(positions.begin(), positions.end(), Index{0});
    const Index batch = static_cast<Index>(sequences.size());

    ForwardPass out;
    Var x = gather_rows(P(model.embed_slot()), flat);
    Var balance;
    for (Index l = 0; l < c.n_layers; ++l) {
        const LayerSlots& s = model.layer(l);
        Var h = rms_norm(x, P(s.attn_norm));
        x = x + attention(h, batch, positions, {P(s.wq), P(s.wk), P(s.wv), P(s.wo)}, c);
        Var h2 = rms_norm(x, P(s.mlp_norm));
        if (s.dense) {
            x = x + gated_mlp(h2, mlp_vars(*s.dense));
            continue;
        }
        MoeVars mv;
        mv.router = P(s.router);
        for (const auto& m : s.shared) mv.shared.push_back(mlp_vars(m));
        for (const auto& m : s.routed) mv.routed.push_back(mlp_vars(m));
        const Vector* bias = options.steering.empty() ? nullptr : &options.steering[static_cast<size_t>(l - 1)];
        MoeOutput mo = moe_layer(h2, mv, c, bias);
        mo.record.layer = l - 1;
        x = x + mo.output;
        balance = balance.valid() ? balance + mo.balance_loss : mo.balance_loss;
        out.records.push_back(std::move(mo.record));
    }
    x = rms_norm(x, P(model.final_norm_slot()));
    out.logits = matmul(x, P(model.head_slot()));
    out.balance_loss = balance.valid() ? scale(balance, 1.0 / static_cast<double>(c.n_moe_layers()))
                                       : g.constant(Tensor::scalar(0.0));
    return out;
}

std::pair<Matrix, std::vector<LayerActivationRecord>> model_forward(const Model& model, std::span<const int> ids,
                                                                    const ForwardOptions& options) {
    Graph g(false);
    // A grad-disabled graph only reads parameter values.
    ForwardPass fp = forward(g, const_cast<Model&>(model), {std::vector<int>(ids.begin(), ids.end())}, options);
    return {fp.logits.mat(), std::move(fp.records)};
}

std::vector<int> generate_greedy(const Model& model, std::span<const int> prompt, Index n_new,
                                 const ForwardOptions& options) {
    std::vector<int> ids(prompt.begin(), prompt.end());
    if (ids.empty()) throw InputError("generation needs a non-empty prompt");
    for (Index i = 0; i < n_new; ++i) {
        const Index ctx = model.config().context_len;
        std::span<const int> window(ids);
        if (static_cast<Index>(window.size()) > ctx) window = window.subspan(window.size() - static_cast<size_t>(ctx));
        auto [logits, records] = model_forward(model, window, options);
        Index best = 0;
        logits.row(logits.rows() - 1).maxCoeff(&best);
        ids.push_back(static_cast<int>(best));
    }
    return std::vector<int>(ids.begin() + static_cast<std::ptrdiff_t>(prompt.size()), ids.end());
}

}  // namespace moelab
