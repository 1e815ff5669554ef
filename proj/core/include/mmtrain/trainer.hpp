#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmtrain/data.hpp"
#include "mmtrain/losses.hpp"
#include "mmtrain/metrics.hpp"
#include "mmtrain/model.hpp"
#include "mmtrain/modulation.hpp"
#include "mmtrain/optimizer.hpp"

namespace mmtrain {

/// Component switches mirroring the ablation table.
struct Toggles {
    bool ame = true;  // reparameterized sampling; off means Z = mu
    bool gm = true;   // gradient modulation
    bool ge = false;  // gradient enhancement (requires gm)
    bool cp = true;   // conflict-aware penalty (requires gm)
    bool sl = true;   // statistical loss in the objective

    bool operator==(const Toggles&) const = default;
};

std::string to_string(const Toggles& t);

/// Where training data comes from: a directory holding train/val/test
/// feature files, or (empty path) the synthetic generator.
struct DataSpec {
    std::string path;
    SyntheticConfig synthetic;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    double learning_rate = 1e-5;
    double warmup_ratio = 0.1;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    Toggles toggles;
    LossWeights loss;
    TaskLossKind task_loss = TaskLossKind::L1;
    ReconReduction recon_reduction = ReconReduction::Mean;
    Acc2Convention acc2 = Acc2Convention::ExcludeZero;
    ModulationConfig modulation;
    ModelConfig model;
    int eval_every = 1;
    DataSpec data;

    /// Published training settings (30 epochs, lr 1e-5, warmup 0.1, batch 8).
    static TrainConfig paper();
    /// Same objective and modulation settings, scaled so a laptop core trains
    /// the synthetic task in minutes (10 epochs, lr 3e-3).
    static TrainConfig desk();

    /// Throws std::invalid_argument on an invalid config; returns warnings for
    /// settings that are legal but have no effect.
    std::vector<std::string> validate() const;

    /// Modulation settings with the cp / ge toggles folded in.
    ModulationConfig effective_modulation() const;
    /// Loss weights with the sl toggle folded in.
    LossWeights effective_weights() const;
};

/// NaN or infinity in a loss term; names the step and the term.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t step, std::string term);
    std::size_t step() const { return step_; }
    const std::string& term() const { return term_; }

private:
    std::size_t step_;
    std::string term_;
};

struct StepRecord {
    std::size_t step = 0;
    int epoch = 0;
    double lr = 0.0;
    LossBreakdown loss;
    double entropy = 0.0;  // -div: the latent entropy the diversity term raises
    ModulationState modulation;
};

struct SplitMetrics {
    Split split;
    MetricReport report;
};

struct EpochRecord {
    int epoch = 0;
    double mean_train_loss = 0.0;
    std::vector<SplitMetrics> splits;
};

struct RunArtifacts {
    TrainConfig config;
    std::vector<StepRecord> trace;
    std::vector<EpochRecord> metrics;
    ModelParams params;
};

struct Objective {
    ForwardOutputs outputs;
    LossTerms terms;
    Tensor total;
};

/// Forward pass plus every loss term and the weighted total (toggles folded
/// in). Records on the active tape, if any. `batch` must already be normalized.
Objective compute_objective(const ModelParams& params, const MultimodalBatch& batch,
                            const TrainConfig& cfg, const ForwardOptions& options);

/// Predictions for a split with dropout off and Z = mu.
std::vector<double> predict(const ModelParams& params, const Dataset& ds, int batch_size);

/// Throws ContractError on an empty split.
MetricReport evaluate(const ModelParams& params, const Dataset& ds, const TrainConfig& cfg);

/// Owns one run's mutable state. Copyable via fork() so a run can branch at
/// any epoch boundary.
class Trainer {
public:
    /// Called after modulation and before the optimizer update of every step.
    using StepObserver = std::function<void(const StepRecord&, const ModelParams&)>;

    Trainer(TrainConfig cfg, std::shared_ptr<const DataSplits> data);

    void run_epoch();
    RunArtifacts run();
    bool done() const { return epoch_ >= cfg_.epochs; }

    int next_epoch() const { return epoch_; }
    std::size_t steps_done() const { return step_; }
    std::size_t total_steps() const { return total_steps_; }
    double lr_at(std::size_t step) const { return schedule_.lr_at(step); }

    const TrainConfig& config() const { return cfg_; }
    /// Toggles may change between epochs; other fields are fixed at construction.
    void set_toggles(const Toggles& toggles) { cfg_.toggles = toggles; }

    const ModelParams& params() const { return params_; }
    const std::vector<StepRecord>& trace() const { return trace_; }
    const std::vector<EpochRecord>& metrics() const { return metrics_; }

    void set_step_observer(StepObserver observer) { observer_ = std::move(observer); }

    /// Deep copy of every piece of run state (params, optimizer moments, RNG).
    Trainer fork() const;

private:
    Trainer() = default;
    void train_step(const MultimodalBatch& raw, int epoch);
    void record_epoch(int epoch, double mean_loss);

    TrainConfig cfg_;
    std::shared_ptr<const DataSplits> data_;
    ModelParams params_;
    AdamW optimizer_;
    WarmupSchedule schedule_{0.0, 0.0, 0};
    Rng rng_;
    MaeSmoother smoother_;
    int epoch_ = 0;
    std::size_t step_ = 0;
    std::size_t total_steps_ = 0;
    std::vector<StepRecord> trace_;
    std::vector<EpochRecord> metrics_;
    StepObserver observer_;
};

RunArtifacts train(const TrainConfig& cfg, const DataSplits& data);

/// Builds the dataset described by cfg.data and aligns cfg.model dims to it.
DataSplits load_splits(TrainConfig& cfg);

struct AblationRow {
    std::string id;
    std::string label;
    Toggles toggles;
};

/// A0-A6, B1-B5, C1-C5.
const std::vector<AblationRow>& ablation_rows();
const AblationRow& ablation_row(const std::string& id);

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;
};

struct AblationResult {
    AblationRow row;
    std::vector<std::uint64_t> seeds;
    std::vector<std::optional<MetricReport>> per_seed;  // nullopt: diverged
    int diverged = 0;
    MetricSummary acc2, f1, mae, corr;
};

/// Trains every row under every seed on the test split of `data`. Runs are
/// independent and may execute on up to `workers` threads; results do not
/// depend on the worker count.
std::vector<AblationResult> run_ablation(const TrainConfig& base, const DataSplits& data,
                                         const std::vector<AblationRow>& rows,
                                         const std::vector<std::uint64_t>& seeds, int workers = 1);

}  // namespace mmtrain
