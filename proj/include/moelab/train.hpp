#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "moelab/model.hpp"

namespace moelab {

// ---------------------------------------------------------------------------
// Learning-rate schedules

/// Linear warmup from 0, then constant with multiplicative drops at fixed
/// fractions of the run.
struct MultiStepScheduleSpec {
    Index warmup_steps = 2000;
    Index total_steps = 100000;
    double base_lr = 1e-4;
    std::vector<double> drop_fractions{0.30, 0.60, 0.90, 0.98};
    double drop_factor = 0.25;

    void validate() const;
    /// Step at which each drop takes effect: llround(fraction * total_steps).
    std::vector<Index> drop_steps() const;
};

/// lr at `step` in [0, total_steps]. The i-th drop applies from its drop step onward.
double lr_at(const MultiStepScheduleSpec& spec, Index step);

struct CosineScheduleSpec {
    Index warmup_steps = 200;
    Index max_steps = 7900;
    double base_lr = 1e-6;
    double min_lr = 0.0;

    void validate() const;
};

double cosine_lr_at(const CosineScheduleSpec& spec, Index step);

using Schedule = std::variant<MultiStepScheduleSpec, CosineScheduleSpec>;

double lr_at(const Schedule& schedule, Index step);
Index total_steps(const Schedule& schedule);

// ---------------------------------------------------------------------------
// Losses

/// Switch-style balance term, averaged over records:
/// n_experts * sum_i f_i * P_i with f_i the share of top-k assignments and P_i
/// the mean router probability of expert i.
double load_balancing_loss(std::span<const LayerActivationRecord> records);

struct PreferencePair {
    std::vector<int> prompt;
    std::vector<int> chosen;    // completion tokens after the prompt
    std::vector<int> rejected;
    std::vector<double> policy_chosen;  // per completion token log-probs
    std::vector<double> policy_rejected;
    std::vector<double> reference_chosen;
    std::vector<double> reference_rejected;

    void validate() const;
    /// log pi(y_w|x) - log pi_ref(y_w|x), summed over completion tokens.
    double chosen_log_ratio() const;
    double rejected_log_ratio() const;
};

struct DPOConfig {
    double beta_w = 0.2;
    double beta_l = 0.1;
    /// Weight of the trailing chosen log-ratio term.
    double nll_term_coefficient = 1.0;
    /// Flips the sign of the trailing term (negative log-likelihood reading).
    bool negate_nll_term = false;

    void validate() const;
    double trailing_coefficient() const { return negate_nll_term ? -nll_term_coefficient : nll_term_coefficient; }
};

/// Per-pair loss -log sigmoid(beta_w r_w - beta_l r_l) + c r_w.
double dpo_pair_loss(double r_w, double r_l, const DPOConfig& config);
/// Batch mean of dpo_pair_loss.
double dpo_loss(std::span<const PreferencePair> pairs, const DPOConfig& config);
/// Differentiable form; r_w and r_l are [n, 1] columns of log-ratios.
Var dpo_loss(Var r_w, Var r_l, const DPOConfig& config);

/// Mean negative log-likelihood over rows with mask != 0.
Var sft_loss(Var logits, std::span<const int> targets, std::span<const double> mask);
double sft_loss(const Matrix& logits, std::span<const int> targets, std::span<const double> mask);

/// Summed log-probability of tokens[prompt_len:] given everything before them.
Var sequence_logprob(Graph& g, Model& model, std::span<const int> tokens, Index prompt_len);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    /// Decoupled decay, applied to matrices only (norm gains are exempt).
    double weight_decay = 0.1;
    /// Global L2 gradient-norm clip; 0 disables.
    double grad_clip = 1.0;
};

class AdamW {
public:
    AdamW(std::vector<Parameter>& params, AdamWOptions options = {});

    /// Applies one update from the accumulated gradients and clears them.
    /// Returns the pre-clip global gradient norm.
    double step(double lr);
    Index steps_taken() const noexcept { return t_; }
    const AdamWOptions& options() const noexcept { return options_; }

private:
    std::vector<Parameter>* params_;
    AdamWOptions options_;
    std::vector<Matrix> m_, v_;
    Index t_ = 0;
};

// ---------------------------------------------------------------------------
// Training loops

/// Contiguous non-overlapping windows of seq_len + 1 tokens, visited in a
/// seeded random order that is reshuffled every epoch.
class WindowSampler {
public:
    WindowSampler(std::span<const int> tokens, Index seq_len, std::uint64_t seed);

    std::vector<std::vector<int>> next_batch(Index batch_size);
    Index windows_per_epoch() const noexcept { return static_cast<Index>(order_.size()); }

private:
    void shuffle();

    std::span<const int> tokens_;
    Index seq_len_;
    std::uint64_t seed_;
    std::uint64_t epoch_ = 0;
    std::vector<Index> order_;
    size_t cursor_ = 0;
};

struct StepTelemetry {
    Index step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double aux_loss = 0.0;
    double h_utilization = 0.0;  // mean over MoE layers
    double h_sparsity = 0.0;     // mean over MoE layers

    /// step, lr, loss, aux_loss, H_utilization, H_sparsity; tab-separated.
    std::string to_line() const;
    static std::string header();
};

struct TrainOptions {
    Schedule schedule = MultiStepScheduleSpec{};
    AdamWOptions optimizer;
    Index batch_size = 2;
    Index seq_len = 64;
    std::uint64_t seed = 0;
    double aux_loss_weight = 0.01;
    /// When non-empty, checkpoints are written here twice per epoch and at the end.
    std::filesystem::path checkpoint_dir;
};

struct TrainResult {
    std::vector<StepTelemetry> telemetry;
    std::vector<std::filesystem::path> checkpoints;
    std::filesystem::path final_checkpoint;
    /// Per-MoE-layer H_utilization measured on the final step's batch.
    std::vector<double> final_h_utilization;
};

using StepCallback = std::function<void(const StepTelemetry&)>;

/// Next-token pretraining with the auxiliary balance loss. Throws
/// NumericalError on a non-finite loss.
TrainResult train_loop(Model& model, std::span<const int> tokens, const TrainOptions& options,
                       const StepCallback& on_step = {});

struct PreferenceExample {
    std::vector<int> prompt;
    std::vector<int> chosen;
    std::vector<int> rejected;
};

struct DpoTrainOptions {
    CosineScheduleSpec schedule{.warmup_steps = 10, .max_steps = 100, .base_lr = 1e-4, .min_lr = 0.0};
    AdamWOptions optimizer;
    DPOConfig dpo;
    Index batch_size = 2;
    std::uint64_t seed = 0;
    std::filesystem::path checkpoint_dir;
};

struct DpoStepTelemetry {
    Index step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double mean_chosen_ratio = 0.0;
    double mean_rejected_ratio = 0.0;
    std::string to_line() const;
};

struct DpoResult {
    std::vector<DpoStepTelemetry> telemetry;
    std::filesystem::path final_checkpoint;
};

/// Preference tuning of `policy` against a frozen `reference`.
DpoResult dpo_train(Model& policy, const Model& reference, std::span<const PreferenceExample> data,
                    const DpoTrainOptions& options, const std::function<void(const DpoStepTelemetry&)>& on_step = {});

// ---------------------------------------------------------------------------
// Config and data files

/// Key/value training configuration. Keys starting with "model." configure the
/// architecture; the rest configure the run.
struct TrainConfig {
    ModelConfig model;
    TrainOptions train;
    DpoTrainOptions dpo;
    double init_std = 0.02;

    static const std::vector<std::string>& keys();
    static TrainConfig from_kv(const KeyValues& kv);
    KeyValues to_kv() const;
};

/// Byte-level token ids of UTF-8 text.
std::vector<int> byte_tokens(std::string_view text);

/// One JSON object per line with string fields "prompt", "chosen", "rejected",
/// tokenized as bytes.
std::vector<PreferenceExample> read_preferences_jsonl(std::istream& in);

}  // namespace moelab
