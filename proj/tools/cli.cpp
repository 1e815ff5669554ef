#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "mmtrain/data.hpp"
#include "mmtrain/gradcheck.hpp"
#include "mmtrain/io.hpp"
#include "mmtrain/trainer.hpp"

namespace mmtrain::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string default_out_dir() {
    if (const char* env = std::getenv("MMTRAIN_OUT"); env && *env) return env;
    return "mmtrain-out";
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

Toggles parse_toggles(const std::string& s) {
    Toggles t{false, false, false, false, false};
    if (s == "none") return t;
    for (const auto& name : split_list(s)) {
        if (name == "ame") t.ame = true;
        else if (name == "gm") t.gm = true;
        else if (name == "ge") t.ge = true;
        else if (name == "cp") t.cp = true;
        else if (name == "sl") t.sl = true;
        else throw UsageError("--toggles: unknown component '" + name + "' (expected ame, gm, ge, cp, sl)");
    }
    return t;
}

// A flag value plus the option that owns it, so only flags the user actually
// passed override the config file.
template <typename T>
struct Flag {
    T value;
    CLI::Option* opt = nullptr;
    bool given() const { return opt && opt->count() > 0; }
};

template <typename T>
void add_flag(CLI::App* app, Flag<T>& f, const std::string& name, const std::string& help) {
    f.opt = app->add_option(name, f.value, help)->capture_default_str();
}

struct OutFlags {
    std::string out = default_out_dir();
    void add(CLI::App* app) {
        app->add_option("--out", out, "Output directory (default: $MMTRAIN_OUT or ./mmtrain-out)")
            ->capture_default_str();
    }
};

// Flags shared by every subcommand that resolves a TrainConfig. Precedence:
// preset < --config file < individual flags < --set overrides.
struct ConfigFlags {
    std::string preset = "desk";
    std::string config_path;
    std::vector<std::string> overrides;
    Flag<std::uint64_t> seed{0};
    Flag<int> epochs{TrainConfig::desk().epochs};
    Flag<int> batch_size{TrainConfig::desk().batch_size};
    Flag<double> lr{TrainConfig::desk().learning_rate};
    Flag<double> warmup{TrainConfig::desk().warmup_ratio};
    Flag<double> weight_decay{TrainConfig::desk().weight_decay};
    Flag<double> alpha{ModulationConfig{}.alpha};
    Flag<double> eta{ModulationConfig{}.eta};
    Flag<int> window_start{ModulationConfig{}.window_start};
    Flag<int> window_end{ModulationConfig{}.window_end};
    Flag<double> beta{ModelConfig{}.beta};
    Flag<double> lambda_recon{LossWeights{}.lambda_recon};
    Flag<double> lambda_uni{LossWeights{}.lambda_uni};
    Flag<double> lambda_div{LossWeights{}.lambda_div};
    Flag<double> lambda_stat{LossWeights{}.lambda_stat};
    Flag<std::string> toggles{"ame,gm,cp,sl"};
    Flag<std::string> row{""};
    Flag<std::string> data{""};

    void add(CLI::App* app, bool training) {
        app->add_option("--preset", preset, "Base settings: desk (10 epochs, lr 3e-3) or paper (30 epochs, lr 1e-5)")
            ->check(CLI::IsMember({"desk", "paper"}))
            ->capture_default_str();
        app->add_option("--config", config_path, "JSON config file (keys mirror config.json)");
        app->add_option("--set", overrides, "Dotted override key=value, e.g. modulation.alpha=2 (repeatable)");
        add_flag(app, seed, "--seed", "Seed for initialization, shuffling, noise and dropout");
        add_flag(app, data, "--data", "Directory with train/val/test .jsonl feature files (empty: synthetic)");
        if (!training) return;
        add_flag(app, epochs, "--epochs", "Training epochs");
        add_flag(app, batch_size, "--batch-size", "Mini-batch size");
        add_flag(app, lr, "--lr", "Peak learning rate");
        add_flag(app, warmup, "--warmup-ratio", "Fraction of steps with linear warmup");
        add_flag(app, weight_decay, "--weight-decay", "Decoupled weight decay");
        add_flag(app, alpha, "--alpha", "Modulation strength alpha");
        add_flag(app, eta, "--eta", "Conflict penalty factor eta");
        add_flag(app, window_start, "--window-start", "First epoch with modulation");
        add_flag(app, window_end, "--window-end", "Modulation stops at this epoch (exclusive)");
        add_flag(app, beta, "--beta", "Residual weight of the fused signal");
        add_flag(app, lambda_recon, "--lambda-recon", "Weight of the reconstruction loss");
        add_flag(app, lambda_uni, "--lambda-uni", "Weight of the unimodal loss");
        add_flag(app, lambda_div, "--lambda-div", "Weight of the diversity loss");
        add_flag(app, lambda_stat, "--lambda-stat", "Weight of the statistical loss");
        add_flag(app, toggles, "--toggles", "Enabled components: comma list of ame,gm,ge,cp,sl or 'none'");
        add_flag(app, row, "--row", "Take toggles from an ablation row id (A0-A6, B1-B5, C1-C5)");
    }

    TrainConfig resolve() const {
        TrainConfig cfg = preset == "paper" ? TrainConfig::paper() : TrainConfig::desk();
        if (!config_path.empty()) cfg = io::load_config(config_path, cfg);
        if (seed.given()) cfg.seed = seed.value;
        if (data.given()) cfg.data.path = data.value;
        if (epochs.given()) cfg.epochs = epochs.value;
        if (batch_size.given()) cfg.batch_size = batch_size.value;
        if (lr.given()) cfg.learning_rate = lr.value;
        if (warmup.given()) cfg.warmup_ratio = warmup.value;
        if (weight_decay.given()) cfg.weight_decay = weight_decay.value;
        if (alpha.given()) cfg.modulation.alpha = alpha.value;
        if (eta.given()) cfg.modulation.eta = eta.value;
        if (window_start.given()) cfg.modulation.window_start = window_start.value;
        if (window_end.given()) cfg.modulation.window_end = window_end.value;
        if (beta.given()) cfg.model.beta = beta.value;
        if (lambda_recon.given()) cfg.loss.lambda_recon = lambda_recon.value;
        if (lambda_uni.given()) cfg.loss.lambda_uni = lambda_uni.value;
        if (lambda_div.given()) cfg.loss.lambda_div = lambda_div.value;
        if (lambda_stat.given()) cfg.loss.lambda_stat = lambda_stat.value;
        if (row.given() && toggles.given()) throw UsageError("--row and --toggles are mutually exclusive");
        if (row.given()) {
            try {
                cfg.toggles = ablation_row(row.value).toggles;
            } catch (const std::invalid_argument& e) {
                throw UsageError(std::string("--row: ") + e.what());
            }
        }
        if (toggles.given()) cfg.toggles = parse_toggles(toggles.value);
        for (const auto& o : overrides) {
            try {
                io::apply_override(cfg, o);
            } catch (const std::invalid_argument& e) {
                throw UsageError(std::string("--set: ") + e.what());
            }
        }
        return cfg;
    }
};

void print_warnings(const TrainConfig& cfg, std::ostream& err) {
    for (const auto& w : cfg.validate()) err << "mmtrain: warning: " << w << "\n";
}

std::string fmt(double x, int precision = 4) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(precision) << x;
    return ss.str();
}

void print_report(std::ostream& out, const std::string& label, const MetricReport& r) {
    out << label << ": acc2=" << fmt(r.acc2) << " f1=" << fmt(r.f1) << " mae=" << fmt(r.mae)
        << " corr=" << fmt(r.corr) << " n=" << r.n_eval << "\n";
}

int cmd_gen_data(const ConfigFlags& flags, const OutFlags& o, const SyntheticConfig& syn_flags,
                 const std::map<std::string, bool>& given, std::ostream& out) {
    TrainConfig cfg = flags.resolve();
    auto& syn = cfg.data.synthetic;
    if (given.at("n")) syn.n_samples = syn_flags.n_samples;
    if (given.at("L")) syn.seq_len = syn_flags.seq_len;
    if (given.at("wt")) syn.w_t = syn_flags.w_t;
    if (given.at("wa")) syn.w_a = syn_flags.w_a;
    if (given.at("wv")) syn.w_v = syn_flags.w_v;
    if (given.at("noise")) syn.noise_std = syn_flags.noise_std;
    if (flags.seed.given()) syn.seed = flags.seed.value;
    syn.validate();
    const fs::path dir = fs::path(o.out) / "data";
    fs::create_directories(dir);
    const DataSplits splits = split_dataset(gen_synthetic(syn));
    save_features(splits.train, dir / "train.jsonl");
    save_features(splits.val, dir / "val.jsonl");
    save_features(splits.test, dir / "test.jsonl");
    io::write_text(fs::path(o.out) / "config.json", io::config_to_json(cfg));
    out << "wrote " << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
        << " samples to " << dir.string() << "\n";
    return kExitOk;
}

int cmd_train(const ConfigFlags& flags, const OutFlags& o, bool quiet, std::ostream& out,
              std::ostream& err) {
    TrainConfig cfg = flags.resolve();
    print_warnings(cfg, err);
    const DataSplits data = load_splits(cfg);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    io::write_text(dir / "config.json", io::config_to_json(cfg));

    Trainer trainer(cfg, std::make_shared<const DataSplits>(data));
    while (!trainer.done()) {
        trainer.run_epoch();
        if (quiet) continue;
        const auto& e = trainer.metrics().back();
        out << "epoch " << e.epoch << " loss=" << fmt(e.mean_train_loss);
        for (const auto& s : e.splits) out << " " << to_string(s.split) << "_mae=" << fmt(s.report.mae);
        out << "\n";
    }
    io::write_trace(trainer.trace(), dir / "trace.jsonl");
    io::write_metrics(trainer.metrics(), dir / "metrics.jsonl");
    io::save_checkpoint(trainer.params(), dir / "checkpoint.json");
    for (const auto& s : trainer.metrics().back().splits) print_report(out, to_string(s.split), s.report);
    out << "artifacts in " << dir.string() << "\n";
    return kExitOk;
}

int cmd_eval(const ConfigFlags& flags, const OutFlags& o, const std::string& checkpoint,
             const std::string& split_name, std::ostream& out) {
    TrainConfig cfg = flags.resolve();
    const ModelParams params = io::load_checkpoint(checkpoint);
    cfg.model = params.config();
    const DataSplits data = load_splits(cfg);
    const ModelConfig& m = params.config();
    if (cfg.model.seq_len != m.seq_len || cfg.model.d_t != m.d_t || cfg.model.d_a != m.d_a ||
        cfg.model.d_v != m.d_v) {
        throw SchemaError("eval: data dims do not match checkpoint '" + checkpoint + "'");
    }
    const Dataset& ds = split_name == "train" ? data.train : split_name == "val" ? data.val : data.test;
    const MetricReport report = evaluate(params, ds, cfg);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    io::write_text(dir / "config.json", io::config_to_json(cfg));
    std::ostringstream js;
    js << std::setprecision(17) << "{\"split\": \"" << split_name << "\", \"acc2\": " << report.acc2
       << ", \"f1\": " << report.f1 << ", \"mae\": " << report.mae << ", \"corr\": " << report.corr
       << ", \"n_eval\": " << report.n_eval << "}\n";
    io::write_text(dir / "eval.json", js.str());
    print_report(out, split_name, report);
    return kExitOk;
}

int cmd_ablate(const ConfigFlags& flags, const OutFlags& o, const std::string& rows_arg,
               const std::string& seeds_arg, int workers, std::ostream& out, std::ostream& err) {
    TrainConfig cfg = flags.resolve();
    print_warnings(cfg, err);
    std::vector<AblationRow> rows;
    for (const auto& id : split_list(rows_arg)) {
        try {
            rows.push_back(ablation_row(id));
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("--rows: ") + e.what());
        }
    }
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(seeds_arg)) {
        try {
            std::size_t pos = 0;
            seeds.push_back(std::stoull(s, &pos));
            if (pos != s.size()) throw std::invalid_argument(s);
        } catch (const std::exception&) {
            throw UsageError("--seeds: '" + s + "' is not a non-negative integer");
        }
    }
    if (rows.empty()) throw UsageError("--rows: no rows given");
    if (seeds.empty()) throw UsageError("--seeds: no seeds given");
    const DataSplits data = load_splits(cfg);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    io::write_text(dir / "config.json", io::config_to_json(cfg));
    const auto results = run_ablation(cfg, data, rows, seeds, workers);
    const std::string table = io::format_ablation_table(results);
    io::write_ablation_csv(results, dir / "ablation.csv");
    io::write_ablation_json(results, dir / "ablation.json");
    io::write_text(dir / "ablation.txt", table);
    out << table;
    return kExitOk;
}

int cmd_gradcheck(const ConfigFlags& flags, const OutFlags& o, double tol, double h,
                  std::ostream& out) {
    TrainConfig cfg = flags.resolve();
    SyntheticConfig syn;
    syn.n_samples = 4;
    syn.seq_len = cfg.model.seq_len;
    syn.d_t = cfg.model.d_t;
    syn.d_a = cfg.model.d_a;
    syn.d_v = cfg.model.d_v;
    syn.seed = cfg.seed;
    const Dataset ds = gen_synthetic(syn);
    const MultimodalBatch batch = normalize_batch(make_batch(ds, {0, 1, 2, 3}));

    const ModelParams params = ModelParams::init(cfg.model, cfg.seed);
    Rng rng(derive_seed(cfg.seed, 3));
    const NoiseDraw noise = draw_noise(batch.size(), cfg.model.seq_len, cfg.model.d_latent, rng);
    ForwardOptions options;
    options.ame = cfg.toggles.ame;
    options.noise = cfg.toggles.ame ? &noise : nullptr;
    auto closure = [&] { return compute_objective(params, batch, cfg, options).total; };

    GradCheckOptions gc;
    gc.tol = tol;
    gc.h = h;
    const GradCheckReport report = finite_diff_check(closure, params.named(), gc);

    const fs::path dir(o.out);
    fs::create_directories(dir);
    io::write_text(dir / "config.json", io::config_to_json(cfg));
    std::ostringstream js;
    js << std::setprecision(17) << "{\"tol\": " << tol << ", \"h\": " << h
       << ", \"max_rel_error\": " << report.max_rel_error
       << ", \"passed\": " << (report.passed() ? "true" : "false") << ", \"params\": [";
    for (std::size_t i = 0; i < report.params.size(); ++i) {
        const auto& p = report.params[i];
        if (i) js << ", ";
        js << "{\"name\": \"" << p.name << "\", \"max_rel_error\": " << p.max_rel_error
           << ", \"max_abs_error\": " << p.max_abs_error
           << ", \"flagged\": " << (p.flagged ? "true" : "false") << "}";
    }
    js << "]}\n";
    io::write_text(dir / "gradcheck.json", js.str());

    for (const auto& p : report.params) {
        if (p.flagged) out << "FLAGGED " << p.name << " rel=" << p.max_rel_error << "\n";
    }
    out << "gradcheck: " << report.params.size() << " tensors, max rel error "
        << std::scientific << std::setprecision(3) << report.max_rel_error << " (tol " << tol << ") "
        << (report.passed() ? "PASS" : "FAIL") << "\n";
    return report.passed() ? kExitOk : kExitRuntime;
}

int cmd_export(const OutFlags& o, const std::string& trace_arg, std::ostream& out) {
    const fs::path dir(o.out);
    const fs::path trace = trace_arg.empty() ? dir / "trace.jsonl" : fs::path(trace_arg);
    const auto records = io::read_trace(trace);
    io::write_trace_csv(records, dir / "trace.csv");
    out << "wrote " << records.size() << " steps to " << (dir / "trace.csv").string() << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"mmtrain: multimodal regression training with gradient modulation", "mmtrain"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    OutFlags o_gen, o_train, o_eval, o_ablate, o_grad, o_export;
    ConfigFlags f_gen, f_train, f_eval, f_ablate, f_grad;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as train/val/test .jsonl files");
    o_gen.add(gen);
    f_gen.add(gen, false);
    SyntheticConfig syn;
    auto* n_opt = gen->add_option("--n-samples", syn.n_samples, "Number of samples")->capture_default_str();
    auto* l_opt = gen->add_option("--seq-len", syn.seq_len, "Sequence length")->capture_default_str();
    auto* wt_opt = gen->add_option("--w-t", syn.w_t, "Text signal weight")->capture_default_str();
    auto* wa_opt = gen->add_option("--w-a", syn.w_a, "Audio signal weight")->capture_default_str();
    auto* wv_opt = gen->add_option("--w-v", syn.w_v, "Visual signal weight")->capture_default_str();
    auto* noise_opt = gen->add_option("--noise-std", syn.noise_std, "Label noise std")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "Train one model; writes config, trace, metrics, checkpoint");
    o_train.add(train_cmd);
    f_train.add(train_cmd, true);
    bool quiet = false;
    train_cmd->add_flag("--quiet", quiet, "Suppress per-epoch progress");

    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    o_eval.add(eval_cmd);
    f_eval.add(eval_cmd, false);
    std::string checkpoint;
    std::string split_name = "test";
    eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
    eval_cmd->add_option("--split", split_name, "Split to evaluate")
        ->check(CLI::IsMember({"train", "val", "test"}))
        ->capture_default_str();

    auto* ablate_cmd = app.add_subcommand("ablate", "Run ablation rows over several seeds");
    o_ablate.add(ablate_cmd);
    f_ablate.add(ablate_cmd, true);
    std::string rows_arg = "A0,A4,A6,C4";
    std::string seeds_arg = "0,1,2";
    int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    ablate_cmd->add_option("--rows", rows_arg, "Comma-separated row ids (A0-A6, B1-B5, C1-C5)")
        ->capture_default_str();
    ablate_cmd->add_option("--seeds", seeds_arg, "Comma-separated seeds")->capture_default_str();
    ablate_cmd->add_option("--workers", workers, "Parallel runs")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    o_grad.add(grad_cmd);
    f_grad.add(grad_cmd, false);
    double tol = 1e-4;
    double h = 1e-5;
    grad_cmd->add_option("--tol", tol, "Max relative error")->capture_default_str();
    grad_cmd->add_option("--step", h, "Central difference step")->capture_default_str();

    auto* export_cmd = app.add_subcommand("export-traces", "Convert trace.jsonl to long-format CSV");
    o_export.add(export_cmd);
    std::string trace_arg;
    export_cmd->add_option("--trace", trace_arg, "Trace file (default: <out>/trace.jsonl)");

    std::string command = "mmtrain";
    try {
        app.parse(argc, argv);
        if (gen->parsed()) {
            command = "mmtrain gen-data";
            const std::map<std::string, bool> given{
                {"n", n_opt->count() > 0},   {"L", l_opt->count() > 0},   {"wt", wt_opt->count() > 0},
                {"wa", wa_opt->count() > 0}, {"wv", wv_opt->count() > 0}, {"noise", noise_opt->count() > 0}};
            return cmd_gen_data(f_gen, o_gen, syn, given, out);
        }
        if (train_cmd->parsed()) {
            command = "mmtrain train";
            return cmd_train(f_train, o_train, quiet, out, err);
        }
        if (eval_cmd->parsed()) {
            command = "mmtrain eval";
            return cmd_eval(f_eval, o_eval, checkpoint, split_name, out);
        }
        if (ablate_cmd->parsed()) {
            command = "mmtrain ablate";
            return cmd_ablate(f_ablate, o_ablate, rows_arg, seeds_arg, workers, out, err);
        }
        if (grad_cmd->parsed()) {
            command = "mmtrain gradcheck";
            return cmd_gradcheck(f_grad, o_grad, tol, h, out);
        }
        if (export_cmd->parsed()) {
            command = "mmtrain export-traces";
            return cmd_export(o_export, trace_arg, out);
        }
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const UsageError& e) {
        err << command << ": " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        // configuration values rejected by validate()
        err << command << ": invalid configuration: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << command << ": " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace mmtrain::cli
