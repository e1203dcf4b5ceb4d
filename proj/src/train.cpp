#include "moelab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "moelab/checkpoint.hpp"
#include "moelab/random.hpp"
#include "moelab/routing.hpp"

namespace moelab {

namespace {

std::string fmt_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string fmt_list(const std::vector<double>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_real(v[i]);
    return out;
}

void check_step(Index step, Index last, const char* what) {
    if (step < 0 || step > last) {
        throw InputError(std::string(what) + ": step " + std::to_string(step) + " outside [0, " + std::to_string(last) +
                         "]");
    }
}

std::string step_name(Index step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step-%07lld.ckpt", static_cast<long long>(step));
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

void MultiStepScheduleSpec::validate() const {
    if (total_steps <= 0) throw ConfigError("total_steps must be positive");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive and finite");
    if (!(drop_factor > 0.0) || !std::isfinite(drop_factor)) throw ConfigError("drop_factor must be positive");
    for (size_t i = 0; i < drop_fractions.size(); ++i) {
        const double f = drop_fractions[i];
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("drop fraction " + fmt_real(f) + " outside (0, 1]");
        if (i > 0 && !(f > drop_fractions[i - 1])) throw ConfigError("drop fractions must be strictly increasing");
    }
    const std::vector<Index> drops = drop_steps();
    if (!drops.empty() && warmup_steps >= drops.front()) {
        throw ConfigError("warmup_steps (" + std::to_string(warmup_steps) + ") must precede the first drop step (" +
                          std::to_string(drops.front()) + ")");
    }
}

std::vector<Index> MultiStepScheduleSpec::drop_steps() const {
    std::vector<Index> out;
    for (double f : drop_fractions) out.push_back(static_cast<Index>(std::llround(f * static_cast<double>(total_steps))));
    return out;
}

double lr_at(const MultiStepScheduleSpec& spec, Index step) {
    spec.validate();
    check_step(step, spec.total_steps, "multi-step schedule");
    if (step < spec.warmup_steps) {
        return spec.base_lr * static_cast<double>(step) / static_cast<double>(spec.warmup_steps);
    }
    double lr = spec.base_lr;
    for (Index d : spec.drop_steps()) {
        if (step >= d) lr *= spec.drop_factor;
    }
    return lr;
}

void CosineScheduleSpec::validate() const {
    if (max_steps <= 0) throw ConfigError("max_steps must be positive");
    if (warmup_steps < 0 || warmup_steps >= max_steps) throw ConfigError("warmup_steps must be in [0, max_steps)");
    if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("base_lr must be positive and finite");
    if (!(min_lr >= 0.0) || min_lr > base_lr) throw ConfigError("min_lr must be in [0, base_lr]");
}

double cosine_lr_at(const CosineScheduleSpec& spec, Index step) {
    spec.validate();
    check_step(step, spec.max_steps, "cosine schedule");
    if (step < spec.warmup_steps) {
        return spec.base_lr * static_cast<double>(step) / static_cast<double>(spec.warmup_steps);
    }
    const double progress =
        static_cast<double>(step - spec.warmup_steps) / static_cast<double>(spec.max_steps - spec.warmup_steps);
    return spec.min_lr + 0.5 * (spec.base_lr - spec.min_lr) * (1.0 + std::cos(M_PI * progress));
}

double lr_at(const Schedule& schedule, Index step) {
    return std::visit(
        [step](const auto& s) {
            if constexpr (std::is_same_v<std::decay_t<decltype(s)>, MultiStepScheduleSpec>) {
                return lr_at(s, step);
            } else {
                return cosine_lr_at(s, step);
            }
        },
        schedule);
}

Index total_steps(const Schedule& schedule) {
    if (const auto* m = std::get_if<MultiStepScheduleSpec>(&schedule)) return m->total_steps;
    return std::get<CosineScheduleSpec>(schedule).max_steps;
}

// ---------------------------------------------------------------------------

double load_balancing_loss(std::span<const LayerActivationRecord> records) {
    if (records.empty()) throw InputError("load balancing loss over an empty batch");
    double total = 0.0;
    for (const LayerActivationRecord& rec : records) {
        const Index n = rec.tokens();
        const Index e = rec.distribution.cols();
        if (n == 0 || e == 0) throw InputError("load balancing loss over an empty batch");
        if (rec.distribution.rows() != n) throw InputError("distribution rows do not match token count");
        std::vector<long long> counts(static_cast<size_t>(e), 0);
        long long assignments = 0;
        for (const auto& sel : rec.selected) {
            for (int j : sel) {
                if (j < 0 || j >= e) throw InputError("expert id out of range");
                ++counts[static_cast<size_t>(j)];
                ++assignments;
            }
        }
        const Vector p = rec.distribution.colwise().mean().transpose();
        double layer = 0.0;
        for (Index j = 0; j < e; ++j) {
            layer += static_cast<double>(counts[static_cast<size_t>(j)]) / static_cast<double>(assignments) * p(j);
        }
        total += static_cast<double>(e) * layer;
    }
    return total / static_cast<double>(records.size());
}

void PreferencePair::validate() const {
    if (chosen.size() != policy_chosen.size() || chosen.size() != reference_chosen.size()) {
        throw InputError("chosen completion has " + std::to_string(chosen.size()) + " tokens but " +
                         std::to_string(policy_chosen.size()) + "/" + std::to_string(reference_chosen.size()) +
                         " log-probs");
    }
    if (rejected.size() != policy_rejected.size() || rejected.size() != reference_rejected.size()) {
        throw InputError("rejected completion has " + std::to_string(rejected.size()) + " tokens but " +
                         std::to_string(policy_rejected.size()) + "/" + std::to_string(reference_rejected.size()) +
                         " log-probs");
    }
    for (const auto* v : {&policy_chosen, &policy_rejected, &reference_chosen, &reference_rejected}) {
        for (double lp : *v) {
            if (!(lp <= 0.0)) throw InputError("log-probability " + fmt_real(lp) + " is not <= 0");
        }
    }
}

double PreferencePair::chosen_log_ratio() const {
    return std::accumulate(policy_chosen.begin(), policy_chosen.end(), 0.0) -
           std::accumulate(reference_chosen.begin(), reference_chosen.end(), 0.0);
}

double PreferencePair::rejected_log_ratio() const {
    return std::accumulate(policy_rejected.begin(), policy_rejected.end(), 0.0) -
           std::accumulate(reference_rejected.begin(), reference_rejected.end(), 0.0);
}

void DPOConfig::validate() const {
    if (!(beta_w > 0.0) || !(beta_l > 0.0)) throw ConfigError("DPO betas must be positive");
    if (!std::isfinite(nll_term_coefficient)) throw ConfigError("DPO trailing coefficient must be finite");
}

double dpo_pair_loss(double r_w, double r_l, const DPOConfig& config) {
    const double z = config.beta_w * r_w - config.beta_l * r_l;
    // -log sigmoid(z) = log(1 + exp(-z)), evaluated without overflow
    const double nls = z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
    return nls + config.trailing_coefficient() * r_w;
}

double dpo_loss(std::span<const PreferencePair> pairs, const DPOConfig& config) {
    config.validate();
    if (pairs.empty()) throw InputError("DPO loss over an empty batch");
    double total = 0.0;
    for (const PreferencePair& p : pairs) {
        p.validate();
        total += dpo_pair_loss(p.chosen_log_ratio(), p.rejected_log_ratio(), config);
    }
    return total / static_cast<double>(pairs.size());
}

Var dpo_loss(Var r_w, Var r_l, const DPOConfig& config) {
    config.validate();
    if (r_w.shape() != r_l.shape()) {
        throw InputError("DPO ratio shapes differ: " + shape_string(r_w.shape()) + " vs " + shape_string(r_l.shape()));
    }
    Var z = r_w * config.beta_w - r_l * config.beta_l;
    Var per_pair = -log_sigmoid(z) + r_w * config.trailing_coefficient();
    return mean(per_pair);
}

Var sft_loss(Var logits, std::span<const int> targets, std::span<const double> mask) {
    const double weight = std::accumulate(mask.begin(), mask.end(), 0.0);
    if (!(weight > 0.0)) throw InputError("every target position is masked");
    return token_logprob_sum(logits, targets, mask) * (-1.0 / weight);
}

double sft_loss(const Matrix& logits, std::span<const int> targets, std::span<const double> mask) {
    Graph g(false);
    return sft_loss(g.constant(Tensor::from_matrix(logits)), targets, mask).item();
}

Var sequence_logprob(Graph& g, Model& model, std::span<const int> tokens, Index prompt_len) {
    const Index n = static_cast<Index>(tokens.size());
    if (prompt_len < 1 || prompt_len >= n) {
        throw InputError("sequence of " + std::to_string(n) + " tokens needs a prompt of length in [1, " +
                         std::to_string(n - 1) + "], got " + std::to_string(prompt_len));
    }
    std::vector<std::vector<int>> input{std::vector<int>(tokens.begin(), tokens.end() - 1)};
    std::vector<int> targets(tokens.begin() + 1, tokens.end());
    std::vector<double> mask(static_cast<size_t>(n - 1), 0.0);
    for (Index t = prompt_len - 1; t < n - 1; ++t) mask[static_cast<size_t>(t)] = 1.0;
    ForwardPass fp = forward(g, model, input);
    return token_logprob_sum(fp.logits, targets, mask);
}

// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<Parameter>& params, AdamWOptions options) : params_(&params), options_(options) {
    if (!(options.beta1 >= 0.0 && options.beta1 < 1.0) || !(options.beta2 >= 0.0 && options.beta2 < 1.0)) {
        throw ConfigError("AdamW betas must be in [0, 1)");
    }
    if (!(options.eps > 0.0)) throw ConfigError("AdamW eps must be positive");
    if (!(options.weight_decay >= 0.0) || !(options.grad_clip >= 0.0)) {
        throw ConfigError("weight_decay and grad_clip must be non-negative");
    }
    for (const Parameter& p : params) {
        m_.push_back(Matrix::Zero(p.grad.rows(), p.grad.cols()));
        v_.push_back(Matrix::Zero(p.grad.rows(), p.grad.cols()));
    }
}

double AdamW::step(double lr) {
    auto& params = *params_;
    double sq = 0.0;
    for (const Parameter& p : params) sq += p.grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm at optimizer step " + std::to_string(t_ + 1));
    const double clip = options_.grad_clip > 0.0 && norm > options_.grad_clip ? options_.grad_clip / norm : 1.0;

    ++t_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
    const double b1 = options_.beta1, b2 = options_.beta2, eps = options_.eps;
    for (size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        double* __restrict w = p.value.mat().data();
        double* __restrict g = p.grad.data();
        double* __restrict m = m_[i].data();
        double* __restrict v = v_[i].data();
        const double decay = p.value.rank() >= 2 ? 1.0 - lr * options_.weight_decay : 1.0;
        const Index n = p.grad.size();
        for (Index j = 0; j < n; ++j) {
            const double gj = g[j] * clip;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            w[j] = w[j] * decay - lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
            g[j] = 0.0;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------

WindowSampler::WindowSampler(std::span<const int> tokens, Index seq_len, std::uint64_t seed)
    : tokens_(tokens), seq_len_(seq_len), seed_(seed) {
    if (seq_len < 1) throw ConfigError("seq_len must be positive");
    const Index n = static_cast<Index>(tokens.size());
    const Index windows = (n - 1) / seq_len;
    if (windows < 1) {
        throw InputError("corpus of " + std::to_string(n) + " tokens is shorter than one window of " +
                         std::to_string(seq_len + 1));
    }
    order_.resize(static_cast<size_t>(windows));
    shuffle();
}

void WindowSampler::shuffle() {
    std::iota(order_.begin(), order_.end(), Index{0});
    Rng rng(mix64(seed_ ^ mix64(epoch_)));
    for (size_t i = order_.size(); i > 1; --i) {
        std::swap(order_[i - 1], order_[rng.below(i)]);
    }
    cursor_ = 0;
}

std::vector<std::vector<int>> WindowSampler::next_batch(Index batch_size) {
    std::vector<std::vector<int>> batch;
    for (Index b = 0; b < batch_size; ++b) {
        if (cursor_ == order_.size()) {
            ++epoch_;
            shuffle();
        }
        const Index start = order_[cursor_++] * seq_len_;
        batch.emplace_back(tokens_.begin() + start, tokens_.begin() + start + seq_len_ + 1);
    }
    return batch;
}

std::string StepTelemetry::header() { return "step\tlr\tloss\taux_loss\tH_utilization\tH_sparsity"; }

std::string StepTelemetry::to_line() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld\t%.9g\t%.6f\t%.6f\t%.6f\t%.6f", static_cast<long long>(step), lr, loss, aux_loss,
                  h_utilization, h_sparsity);
    return buf;
}

TrainResult train_loop(Model& model, std::span<const int> tokens, const TrainOptions& options,
                       const StepCallback& on_step) {
    const Index steps = total_steps(options.schedule);
    lr_at(options.schedule, 0);
    if (options.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(options.aux_loss_weight >= 0.0)) throw ConfigError("aux_loss_weight must be non-negative");
    if (options.seq_len > model.config().context_len) throw ConfigError("seq_len exceeds the model context length");
    for (int t : tokens) {
        if (t < 0 || t >= model.config().vocab_size) throw InputError("corpus token " + std::to_string(t) + " out of vocabulary");
    }

    WindowSampler sampler(tokens, options.seq_len, options.seed);
    model.zero_grad();
    AdamW optimizer(model.parameters(), options.optimizer);
    const Index per_epoch = (sampler.windows_per_epoch() + options.batch_size - 1) / options.batch_size;
    if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);

    TrainResult result;
    const Index n_moe = model.config().n_moe_layers();
    for (Index step = 1; step <= steps; ++step) {
        const double lr = lr_at(options.schedule, step);
        const auto batch = sampler.next_batch(options.batch_size);
        std::vector<std::vector<int>> inputs;
        std::vector<int> targets;
        for (const auto& w : batch) {
            inputs.emplace_back(w.begin(), w.end() - 1);
            targets.insert(targets.end(), w.begin() + 1, w.end());
        }
        const std::vector<double> mask(targets.size(), 1.0);

        Graph g;
        ForwardPass fp = forward(g, model, inputs);
        Var ce = sft_loss(fp.logits, targets, mask);
        Var loss = n_moe > 0 ? ce + fp.balance_loss * options.aux_loss_weight : ce;

        StepTelemetry tel;
        tel.step = step;
        tel.lr = lr;
        tel.loss = ce.item();
        tel.aux_loss = fp.balance_loss.item();
        std::vector<double> hu, hs;
        for (const LayerActivationRecord& rec : fp.records) {
            LayerRoutingStats stats(model.config().n_routed_experts);
            stats.add(rec);
            hu.push_back(h_utilization(stats));
            hs.push_back(h_sparsity(stats));
        }
        if (!hu.empty()) {
            tel.h_utilization = std::accumulate(hu.begin(), hu.end(), 0.0) / static_cast<double>(hu.size());
            tel.h_sparsity = std::accumulate(hs.begin(), hs.end(), 0.0) / static_cast<double>(hs.size());
        }

        if (!std::isfinite(loss.item())) {
            std::ostringstream os;
            os << "non-finite loss at step " << step << " (lr=" << lr << ", router entropy H_utilization=[";
            for (size_t i = 0; i < hu.size(); ++i) os << (i ? ", " : "") << hu[i];
            os << "], H_sparsity=[";
            for (size_t i = 0; i < hs.size(); ++i) os << (i ? ", " : "") << hs[i];
            os << "])";
            throw NumericalError(os.str());
        }

        g.backward(loss);
        optimizer.step(lr);
        result.telemetry.push_back(tel);
        result.final_h_utilization = hu;
        if (on_step) on_step(tel);

        const bool half_epoch = (2 * step) / per_epoch != (2 * (step - 1)) / per_epoch;
        if (!options.checkpoint_dir.empty() && half_epoch && step < steps) {
            const auto path = options.checkpoint_dir / step_name(step);
            save_checkpoint(model, static_cast<std::uint64_t>(step), path);
            result.checkpoints.push_back(path);
        }
    }
    if (!options.checkpoint_dir.empty()) {
        result.final_checkpoint = options.checkpoint_dir / "final.ckpt";
        save_checkpoint(model, static_cast<std::uint64_t>(steps), result.final_checkpoint);
        result.checkpoints.push_back(result.final_checkpoint);
    }
    return result;
}

std::string DpoStepTelemetry::to_line() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld\t%.9g\t%.6f\t%.6f\t%.6f", static_cast<long long>(step), lr, loss,
                  mean_chosen_ratio, mean_rejected_ratio);
    return buf;
}

DpoResult dpo_train(Model& policy, const Model& reference, std::span<const PreferenceExample> data,
                    const DpoTrainOptions& options, const std::function<void(const DpoStepTelemetry&)>& on_step) {
    options.schedule.validate();
    options.dpo.validate();
    if (data.empty()) throw InputError("no preference pairs");
    if (options.batch_size < 1) throw ConfigError("batch_size must be positive");
    for (const PreferenceExample& ex : data) {
        if (ex.prompt.empty() || ex.chosen.empty() || ex.rejected.empty()) {
            throw InputError("preference pairs need a non-empty prompt, chosen and rejected completion");
        }
    }

    auto join = [](const std::vector<int>& a, const std::vector<int>& b) {
        std::vector<int> out(a);
        out.insert(out.end(), b.begin(), b.end());
        return out;
    };

    // Reference log-probs are fixed for the whole run.
    Model& frozen = const_cast<Model&>(reference);
    std::vector<std::pair<double, double>> ref;
    for (const PreferenceExample& ex : data) {
        const Index p = static_cast<Index>(ex.prompt.size());
        Graph g(false);
        const double w = sequence_logprob(g, frozen, join(ex.prompt, ex.chosen), p).item();
        const double l = sequence_logprob(g, frozen, join(ex.prompt, ex.rejected), p).item();
        ref.emplace_back(w, l);
    }

    AdamW optimizer(policy.parameters(), options.optimizer);
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(options.seed);
    size_t cursor = order.size();

    DpoResult result;
    for (Index step = 1; step <= options.schedule.max_steps; ++step) {
        const double lr = cosine_lr_at(options.schedule, step);
        policy.zero_grad();
        Graph g;
        Var total;
        double sum_w = 0.0, sum_l = 0.0;
        for (Index b = 0; b < options.batch_size; ++b) {
            if (cursor == order.size()) {
                for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
                cursor = 0;
            }
            const size_t idx = order[cursor++];
            const PreferenceExample& ex = data[idx];
            const Index p = static_cast<Index>(ex.prompt.size());
            Var r_w = sequence_logprob(g, policy, join(ex.prompt, ex.chosen), p) -
                      g.constant(Tensor::scalar(ref[idx].first));
            Var r_l = sequence_logprob(g, policy, join(ex.prompt, ex.rejected), p) -
                      g.constant(Tensor::scalar(ref[idx].second));
            sum_w += r_w.item();
            sum_l += r_l.item();
            Var pair = dpo_loss(r_w, r_l, options.dpo);
            total = total.valid() ? total + pair : pair;
        }
        Var loss = total * (1.0 / static_cast<double>(options.batch_size));
        if (!std::isfinite(loss.item())) {
            throw NumericalError("non-finite DPO loss at step " + std::to_string(step) + " (lr=" + fmt_real(lr) + ")");
        }
        g.backward(loss);
        optimizer.step(lr);

        DpoStepTelemetry tel{step, lr, loss.item(), sum_w / static_cast<double>(options.batch_size),
                             sum_l / static_cast<double>(options.batch_size)};
        result.telemetry.push_back(tel);
        if (on_step) on_step(tel);
    }
    if (!options.checkpoint_dir.empty()) {
        std::filesystem::create_directories(options.checkpoint_dir);
        result.final_checkpoint = options.checkpoint_dir / "dpo-final.ckpt";
        save_checkpoint(policy, static_cast<std::uint64_t>(options.schedule.max_steps), result.final_checkpoint);
    }
    return result;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& TrainConfig::keys() {
    static const std::vector<std::string> k = [] {
        std::vector<std::string> out = {
            "schedule",     "warmup_steps", "total_steps",     "base_lr",        "min_lr",          "drop_fractions",
            "drop_factor",  "batch_size",   "seq_len",         "seed",           "aux_loss_weight", "beta1",
            "beta2",        "eps",          "weight_decay",    "grad_clip",      "init_std",        "dpo_beta_w",
            "dpo_beta_l",   "dpo_nll_coefficient", "dpo_negate_nll", "dpo_warmup_steps", "dpo_max_steps",
            "dpo_base_lr",  "dpo_min_lr",   "dpo_batch_size",
        };
        for (const std::string& m : ModelConfig::keys()) out.push_back("model." + m);
        return out;
    }();
    return k;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
    kv.require_known(keys());
    TrainConfig c;
    KeyValues model_kv;
    for (const std::string& key : kv.keys()) {
        if (key.rfind("model.", 0) == 0) model_kv.set(key.substr(6), *kv.get(key));
    }
    c.model = ModelConfig::from_kv(model_kv);
    c.init_std = kv.real("init_std", c.init_std);

    const std::string kind = kv.str("schedule", "multistep");
    if (kind == "multistep" || kind == "constant") {
        MultiStepScheduleSpec s;
        s.warmup_steps = kv.integer("warmup_steps", s.warmup_steps);
        s.total_steps = kv.integer("total_steps", s.total_steps);
        s.base_lr = kv.real("base_lr", s.base_lr);
        s.drop_fractions = kv.reals("drop_fractions", s.drop_fractions);
        s.drop_factor = kv.real("drop_factor", s.drop_factor);
        s.validate();
        c.train.schedule = s;
    } else if (kind == "cosine") {
        CosineScheduleSpec s;
        s.warmup_steps = kv.integer("warmup_steps", s.warmup_steps);
        s.max_steps = kv.integer("total_steps", s.max_steps);
        s.base_lr = kv.real("base_lr", s.base_lr);
        s.min_lr = kv.real("min_lr", s.min_lr);
        s.validate();
        c.train.schedule = s;
    } else {
        throw ConfigError("schedule must be multistep, constant or cosine, got '" + kind + "'");
    }

    AdamWOptions o;
    o.beta1 = kv.real("beta1", o.beta1);
    o.beta2 = kv.real("beta2", o.beta2);
    o.eps = kv.real("eps", o.eps);
    o.weight_decay = kv.real("weight_decay", o.weight_decay);
    o.grad_clip = kv.real("grad_clip", o.grad_clip);
    c.train.optimizer = o;
    c.train.batch_size = kv.integer("batch_size", c.train.batch_size);
    c.train.seq_len = kv.integer("seq_len", c.train.seq_len);
    c.train.seed = static_cast<std::uint64_t>(kv.integer("seed", 0));
    c.train.aux_loss_weight = kv.real("aux_loss_weight", c.train.aux_loss_weight);

    c.dpo.optimizer = o;
    c.dpo.seed = c.train.seed;
    c.dpo.dpo.beta_w = kv.real("dpo_beta_w", c.dpo.dpo.beta_w);
    c.dpo.dpo.beta_l = kv.real("dpo_beta_l", c.dpo.dpo.beta_l);
    c.dpo.dpo.nll_term_coefficient = kv.real("dpo_nll_coefficient", c.dpo.dpo.nll_term_coefficient);
    c.dpo.dpo.negate_nll_term = kv.boolean("dpo_negate_nll", c.dpo.dpo.negate_nll_term);
    c.dpo.schedule.warmup_steps = kv.integer("dpo_warmup_steps", c.dpo.schedule.warmup_steps);
    c.dpo.schedule.max_steps = kv.integer("dpo_max_steps", c.dpo.schedule.max_steps);
    c.dpo.schedule.base_lr = kv.real("dpo_base_lr", c.dpo.schedule.base_lr);
    c.dpo.schedule.min_lr = kv.real("dpo_min_lr", c.dpo.schedule.min_lr);
    c.dpo.batch_size = kv.integer("dpo_batch_size", c.dpo.batch_size);
    c.dpo.schedule.validate();
    c.dpo.dpo.validate();
    return c;
}

KeyValues TrainConfig::to_kv() const {
    KeyValues kv;
    if (const auto* m = std::get_if<MultiStepScheduleSpec>(&train.schedule)) {
        kv.set("schedule", "multistep");
        kv.set("warmup_steps", std::to_string(m->warmup_steps));
        kv.set("total_steps", std::to_string(m->total_steps));
        kv.set("base_lr", fmt_real(m->base_lr));
        kv.set("drop_fractions", fmt_list(m->drop_fractions));
        kv.set("drop_factor", fmt_real(m->drop_factor));
    } else {
        const auto& s = std::get<CosineScheduleSpec>(train.schedule);
        kv.set("schedule", "cosine");
        kv.set("warmup_steps", std::to_string(s.warmup_steps));
        kv.set("total_steps", std::to_string(s.max_steps));
        kv.set("base_lr", fmt_real(s.base_lr));
        kv.set("min_lr", fmt_real(s.min_lr));
    }
    kv.set("batch_size", std::to_string(train.batch_size));
    kv.set("seq_len", std::to_string(train.seq_len));
    kv.set("seed", std::to_string(train.seed));
    kv.set("aux_loss_weight", fmt_real(train.aux_loss_weight));
    kv.set("beta1", fmt_real(train.optimizer.beta1));
    kv.set("beta2", fmt_real(train.optimizer.beta2));
    kv.set("eps", fmt_real(train.optimizer.eps));
    kv.set("weight_decay", fmt_real(train.optimizer.weight_decay));
    kv.set("grad_clip", fmt_real(train.optimizer.grad_clip));
    kv.set("init_std", fmt_real(init_std));
    kv.set("dpo_beta_w", fmt_real(dpo.dpo.beta_w));
    kv.set("dpo_beta_l", fmt_real(dpo.dpo.beta_l));
    kv.set("dpo_nll_coefficient", fmt_real(dpo.dpo.nll_term_coefficient));
    kv.set("dpo_negate_nll", dpo.dpo.negate_nll_term ? "true" : "false");
    kv.set("dpo_warmup_steps", std::to_string(dpo.schedule.warmup_steps));
    kv.set("dpo_max_steps", std::to_string(dpo.schedule.max_steps));
    kv.set("dpo_base_lr", fmt_real(dpo.schedule.base_lr));
    kv.set("dpo_min_lr", fmt_real(dpo.schedule.min_lr));
    kv.set("dpo_batch_size", std::to_string(dpo.batch_size));
    const KeyValues m = model.to_kv();
    for (const std::string& key : m.keys()) kv.set("model." + key, *m.get(key));
    return kv;
}

std::vector<int> byte_tokens(std::string_view text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(c);
    return out;
}

std::vector<PreferenceExample> read_preferences_jsonl(std::istream& in) {
    std::vector<PreferenceExample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            PreferenceExample ex;
            ex.prompt = byte_tokens(j.at("prompt").get<std::string>());
            ex.chosen = byte_tokens(j.at("chosen").get<std::string>());
            ex.rejected = byte_tokens(j.at("rejected").get<std::string>());
            out.push_back(std::move(ex));
        } catch (const nlohmann::json::exception& e) {
            throw InputError("preference line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace moelab
