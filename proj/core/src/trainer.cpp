#include "mmtrain/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <thread>

#include "mmtrain/ops.hpp"

namespace mmtrain {

std::string to_string(const Toggles& t) {
    std::string s;
    auto add = [&s](bool on, const char* name) {
        if (!on) return;
        if (!s.empty()) s += '+';
        s += name;
    };
    add(t.ame, "AME");
    add(t.gm, "GM");
    add(t.ge, "GE");
    add(t.cp, "CP");
    add(t.sl, "SL");
    return s.empty() ? "none" : s;
}

TrainConfig TrainConfig::paper() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.learning_rate = 3e-3;
    return cfg;
}

std::vector<std::string> TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("train: learning_rate must be finite and >= 0");
    }
    if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) {
        throw std::invalid_argument("train: warmup_ratio must lie in [0, 1]");
    }
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight_decay must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
    loss.validate();
    modulation.validate();
    model.validate();

    std::vector<std::string> warnings;
    if (!toggles.gm && toggles.cp) warnings.emplace_back("toggle cp has no effect while gm is off");
    if (!toggles.gm && toggles.ge) warnings.emplace_back("toggle ge has no effect while gm is off");
    return warnings;
}

ModulationConfig TrainConfig::effective_modulation() const {
    ModulationConfig m = modulation;
    m.cp_enabled = toggles.cp;
    m.ge_enabled = toggles.ge;
    return m;
}

LossWeights TrainConfig::effective_weights() const {
    LossWeights w = loss;
    if (!toggles.sl) w.lambda_stat = 0.0;
    return w;
}

TrainingDiverged::TrainingDiverged(std::size_t step, std::string term)
    : std::runtime_error("training diverged at step " + std::to_string(step) + ": loss term '" +
                         term + "' is not finite"),
      step_(step),
      term_(std::move(term)) {}

Objective compute_objective(const ModelParams& params, const MultimodalBatch& batch,
                            const TrainConfig& cfg, const ForwardOptions& options) {
    Objective obj;
    obj.outputs = forward(params, batch, options);
    const auto& out = obj.outputs;
    auto& terms = obj.terms;
    terms.task = task_loss(out.y_hat, batch.labels, cfg.task_loss);
    terms.recon = recon_loss(batch.audio, out.a_hat, batch.visual, out.v_hat, cfg.recon_reduction);
    terms.uni = uni_loss(out.y_uni_t, out.y_uni_a, out.y_uni_v, batch.labels, cfg.task_loss);
    terms.div = div_loss(out.var_a, out.var_v);
    terms.stat = stat_loss(batch.audio, batch.visual, out.mu_a, out.var_a, out.mu_v, out.var_v);
    obj.total = total_loss(terms, cfg.effective_weights());
    return obj;
}

std::vector<double> predict(const ModelParams& params, const Dataset& ds, int batch_size) {
    NoGradScope no_grad;
    std::vector<double> out(ds.size(), 0.0);
    for (const auto& raw : batches(ds, batch_size, 0, false)) {
        const auto batch = normalize_batch(raw);
        const auto fwd = forward(params, batch, ForwardOptions{});
        for (std::size_t i = 0; i < batch.indices.size(); ++i) out[batch.indices[i]] = fwd.y_hat[i];
    }
    return out;
}

MetricReport evaluate(const ModelParams& params, const Dataset& ds, const TrainConfig& cfg) {
    if (ds.empty()) throw ContractError("evaluate: split '" + to_string(ds.split) + "' is empty");
    const auto y_hat = predict(params, ds, cfg.batch_size);
    std::vector<double> y;
    y.reserve(ds.size());
    for (const auto& s : ds.samples) y.push_back(s.label);
    return compute_metrics(y_hat, y, cfg.acc2);
}

Trainer::Trainer(TrainConfig cfg, std::shared_ptr<const DataSplits> data)
    : cfg_(std::move(cfg)), data_(std::move(data)) {
    cfg_.validate();
    if (!data_ || data_->train.empty()) throw ContractError("Trainer: empty training split");
    const auto& tr = data_->train;
    if (tr.seq_len != cfg_.model.seq_len || tr.d_t != cfg_.model.d_t || tr.d_a != cfg_.model.d_a ||
        tr.d_v != cfg_.model.d_v) {
        throw ContractError("Trainer: dataset dims (L=" + std::to_string(tr.seq_len) +
                            ", d_t=" + std::to_string(tr.d_t) + ", d_a=" + std::to_string(tr.d_a) +
                            ", d_v=" + std::to_string(tr.d_v) + ") do not match the model config");
    }
    params_ = ModelParams::init(cfg_.model, cfg_.seed);
    optimizer_ = AdamW(params_, AdamW::Options{.weight_decay = cfg_.weight_decay});
    const auto B = static_cast<std::size_t>(cfg_.batch_size);
    const std::size_t per_epoch = (tr.size() + B - 1) / B;
    total_steps_ = per_epoch * static_cast<std::size_t>(cfg_.epochs);
    schedule_ = WarmupSchedule(cfg_.learning_rate, cfg_.warmup_ratio, total_steps_);
    rng_ = Rng(derive_seed(cfg_.seed, 2));
    smoother_ = MaeSmoother(cfg_.modulation.mae_ema_decay);
}

Trainer Trainer::fork() const {
    Trainer t;
    t.cfg_ = cfg_;
    t.data_ = data_;
    t.params_ = params_.clone();
    t.optimizer_ = optimizer_;
    t.schedule_ = schedule_;
    t.rng_ = rng_;
    t.smoother_ = smoother_;
    t.epoch_ = epoch_;
    t.step_ = step_;
    t.total_steps_ = total_steps_;
    t.trace_ = trace_;
    t.metrics_ = metrics_;
    return t;
}

void Trainer::train_step(const MultimodalBatch& raw, int epoch) {
    const auto batch = normalize_batch(raw);
    const auto& toggles = cfg_.toggles;
    const auto& mcfg = cfg_.model;

    params_.zero_grad();
    Tape tape;
    Objective obj;
    {
        TapeScope scope(tape);
        std::optional<NoiseDraw> noise;
        if (toggles.ame) noise = draw_noise(batch.size(), mcfg.seq_len, mcfg.d_latent, rng_);
        ForwardOptions options;
        options.ame = toggles.ame;
        options.noise = noise ? &*noise : nullptr;
        options.dropout_rng = &rng_;
        obj = compute_objective(params_, batch, cfg_, options);
    }
    const ForwardOutputs& out = obj.outputs;

    StepRecord rec;
    rec.step = step_;
    rec.epoch = epoch;
    rec.loss = breakdown(obj.terms, obj.total);
    rec.entropy = -rec.loss.div;
    const std::pair<const char*, double> named[] = {
        {"task", rec.loss.task}, {"recon", rec.loss.recon}, {"uni", rec.loss.uni},
        {"div", rec.loss.div},   {"stat", rec.loss.stat},   {"total", rec.loss.total}};
    for (const auto& [name, value] : named) {
        if (!std::isfinite(value)) throw TrainingDiverged(step_, name);
    }

    tape.backward(obj.total);

    const auto y = batch.labels.data();
    const double mae_a = mean_absolute_error(out.y_uni_a.data(), y);
    const double mae_v = mean_absolute_error(out.y_uni_v.data(), y);
    const auto [sm_a, sm_v] = smoother_.update(mae_a, mae_v);
    const ModulationConfig mod = cfg_.effective_modulation();
    rec.modulation = toggles.gm ? modulation_step(sm_a, sm_v, params_, epoch, mod)
                                : observe_modulation(sm_a, sm_v, params_, mod);

    rec.lr = schedule_.lr_at(step_);
    if (observer_) observer_(rec, params_);
    optimizer_.step(params_, rec.lr);

    trace_.push_back(rec);
    ++step_;
}

void Trainer::record_epoch(int epoch, double mean_loss) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_train_loss = mean_loss;
    const bool last = epoch + 1 == cfg_.epochs;
    if ((epoch + 1) % cfg_.eval_every == 0 || last) {
        for (const Dataset* ds : {&data_->train, &data_->val, &data_->test}) {
            if (ds->empty()) continue;
            try {
                rec.splits.push_back({ds->split, evaluate(params_, *ds, cfg_)});
            } catch (const MetricError&) {
                // constant predictions: correlation undefined, split omitted
            }
        }
    }
    metrics_.push_back(std::move(rec));
}

void Trainer::run_epoch() {
    if (done()) throw ContractError("Trainer: all epochs already run");
    const int epoch = epoch_;
    const auto order_seed = derive_seed(cfg_.seed, 10'000 + static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    std::size_t n = 0;
    for (const auto& batch : batches(data_->train, cfg_.batch_size, order_seed)) {
        train_step(batch, epoch);
        loss_sum += trace_.back().loss.total;
        ++n;
    }
    record_epoch(epoch, n ? loss_sum / static_cast<double>(n) : 0.0);
    ++epoch_;
}

RunArtifacts Trainer::run() {
    while (!done()) run_epoch();
    return RunArtifacts{cfg_, trace_, metrics_, params_};
}

RunArtifacts train(const TrainConfig& cfg, const DataSplits& data) {
    Trainer trainer(cfg, std::make_shared<const DataSplits>(data));
    return trainer.run();
}

DataSplits load_splits(TrainConfig& cfg) {
    DataSplits splits;
    if (cfg.data.path.empty()) {
        splits = split_dataset(gen_synthetic(cfg.data.synthetic));
    } else {
        const std::filesystem::path dir(cfg.data.path);
        const std::size_t L = cfg.model.seq_len;
        splits.train = load_features(dir / "train.jsonl", L, Split::Train);
        auto optional_split = [&](const char* file, Split tag) {
            const auto p = dir / file;
            if (!std::filesystem::exists(p)) {
                Dataset empty;
                empty.split = tag;
                return empty;
            }
            return load_features(p, L, tag);
        };
        splits.val = optional_split("val.jsonl", Split::Val);
        splits.test = optional_split("test.jsonl", Split::Test);
        for (const Dataset* ds : {&splits.val, &splits.test}) {
            if (!ds->empty() && (ds->d_t != splits.train.d_t || ds->d_a != splits.train.d_a ||
                                 ds->d_v != splits.train.d_v)) {
                throw SchemaError("split '" + to_string(ds->split) +
                                  "' has feature dims different from the training split");
            }
        }
    }
    cfg.model.seq_len = splits.train.seq_len;
    cfg.model.d_t = splits.train.d_t;
    cfg.model.d_a = splits.train.d_a;
    cfg.model.d_v = splits.train.d_v;
    return splits;
}

const std::vector<AblationRow>& ablation_rows() {
    //                                   ame    gm     ge     cp     sl
    static const std::vector<AblationRow> rows = {
        {"A0", "Baseline", {false, false, false, false, false}},
        {"A1", "+AME", {true, false, false, false, false}},
        {"A2", "+AME+GM", {true, true, false, false, false}},
        {"A3", "+AME+GM+GE", {true, true, true, false, false}},
        {"A4", "+AME+GM+GE+CP", {true, true, true, true, false}},
        {"A5", "+AME+GM+GE+SL", {true, true, true, false, true}},
        {"A6", "Full Model", {true, true, true, true, true}},
        {"B1", "AME Only", {true, false, false, false, false}},
        {"B2", "GM Only", {false, true, false, false, false}},
        {"B3", "SL Only", {false, false, false, false, true}},
        {"B4", "GM+GE", {false, true, true, false, false}},
        {"B5", "GM+CP", {false, true, false, true, false}},
        {"C1", "GM+GE+CP", {false, true, true, true, false}},
        {"C2", "AME+SL", {true, false, false, false, true}},
        {"C3", "AME+GM", {true, true, false, false, false}},
        {"C4", "Full - CP", {true, true, true, false, true}},
        {"C5", "Full - GE", {true, true, false, true, true}},
    };
    return rows;
}

const AblationRow& ablation_row(const std::string& id) {
    for (const auto& row : ablation_rows()) {
        if (row.id == id) return row;
    }
    throw std::invalid_argument("unknown ablation row '" + id + "'");
}

namespace {

MetricSummary summarize(const std::vector<double>& xs) {
    MetricSummary s;
    if (xs.empty()) {
        s.mean = s.stddev = std::nan("");
        return s;
    }
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return s;
}

}  // namespace

std::vector<AblationResult> run_ablation(const TrainConfig& base, const DataSplits& data,
                                         const std::vector<AblationRow>& rows,
                                         const std::vector<std::uint64_t>& seeds, int workers) {
    const auto shared = std::make_shared<const DataSplits>(data);
    const Dataset& eval_split = data.test.empty() ? data.train : data.test;

    struct Job {
        std::size_t row;
        std::size_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t s = 0; s < seeds.size(); ++s) jobs.push_back({r, s});
    }
    std::vector<std::optional<MetricReport>> results(jobs.size());

    auto run_job = [&](const Job& job) -> std::optional<MetricReport> {
        TrainConfig cfg = base;
        cfg.toggles = rows[job.row].toggles;
        cfg.seed = seeds[job.seed];
        try {
            Trainer trainer(cfg, shared);
            trainer.run();
            return evaluate(trainer.params(), eval_split, cfg);
        } catch (const TrainingDiverged&) {
            return std::nullopt;
        } catch (const MetricError&) {
            return std::nullopt;
        }
    };

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            try {
                results[i] = run_job(jobs[i]);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<AblationResult> out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        AblationResult res;
        res.row = rows[r];
        res.seeds = seeds;
        std::vector<double> acc2, f1, mae, corr;
        for (std::size_t s = 0; s < seeds.size(); ++s) {
            const auto& m = results[r * seeds.size() + s];
            res.per_seed.push_back(m);
            if (!m) {
                ++res.diverged;
                continue;
            }
            acc2.push_back(m->acc2);
            f1.push_back(m->f1);
            mae.push_back(m->mae);
            corr.push_back(m->corr);
        }
        res.acc2 = summarize(acc2);
        res.f1 = summarize(f1);
        res.mae = summarize(mae);
        res.corr = summarize(corr);
        out.push_back(std::move(res));
    }
    return out;
}

}  // namespace mmtrain
