#include "mmtrain/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mmtrain::io {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kCheckpointFormat = "mmtrain-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string acc2_to_string(Acc2Convention c) {
    return c == Acc2Convention::ExcludeZero ? "exclude_zero" : "non_negative";
}

Acc2Convention acc2_from_string(const std::string& s) {
    if (s == "exclude_zero") return Acc2Convention::ExcludeZero;
    if (s == "non_negative") return Acc2Convention::NonNegative;
    throw std::invalid_argument("unknown acc2 convention '" + s + "'");
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
    return out;
}

ojson model_to_json(const ModelConfig& m) {
    return ojson{{"d_t", m.d_t},
                 {"d_a", m.d_a},
                 {"d_v", m.d_v},
                 {"d_latent", m.d_latent},
                 {"d_fusion", m.d_fusion},
                 {"seq_len", m.seq_len},
                 {"beta", m.beta},
                 {"dropout_encoder", m.dropout_encoder},
                 {"dropout_classifier", m.dropout_classifier},
                 {"fusion_kind", to_string(m.fusion_kind)}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    m.d_t = j.at("d_t").get<std::size_t>();
    m.d_a = j.at("d_a").get<std::size_t>();
    m.d_v = j.at("d_v").get<std::size_t>();
    m.d_latent = j.at("d_latent").get<std::size_t>();
    m.d_fusion = j.at("d_fusion").get<std::size_t>();
    m.seq_len = j.at("seq_len").get<std::size_t>();
    m.beta = j.at("beta").get<double>();
    m.dropout_encoder = j.at("dropout_encoder").get<double>();
    m.dropout_classifier = j.at("dropout_classifier").get<double>();
    m.fusion_kind = fusion_kind_from_string(j.at("fusion_kind").get<std::string>());
    return m;
}

ojson config_json(const TrainConfig& c) {
    const auto& t = c.toggles;
    const auto& md = c.modulation;
    const auto& s = c.data.synthetic;
    return ojson{
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"warmup_ratio", c.warmup_ratio},
        {"weight_decay", c.weight_decay},
        {"seed", c.seed},
        {"toggles", {{"ame", t.ame}, {"gm", t.gm}, {"ge", t.ge}, {"cp", t.cp}, {"sl", t.sl}}},
        {"loss",
         {{"lambda_recon", c.loss.lambda_recon},
          {"lambda_uni", c.loss.lambda_uni},
          {"lambda_div", c.loss.lambda_div},
          {"lambda_stat", c.loss.lambda_stat}}},
        {"task_loss", to_string(c.task_loss)},
        {"recon_reduction", to_string(c.recon_reduction)},
        {"acc2", acc2_to_string(c.acc2)},
        {"modulation",
         {{"alpha", md.alpha},
          {"eta", md.eta},
          {"epsilon", md.epsilon},
          {"window_start", md.window_start},
          {"window_end", md.window_end},
          {"ratio_variant", to_string(md.ratio_variant)},
          {"ge_cap", md.ge_cap},
          {"grad_norm_mode", to_string(md.grad_norm_mode)},
          {"mae_ema_decay", md.mae_ema_decay}}},
        {"model", model_to_json(c.model)},
        {"eval_every", c.eval_every},
        {"data",
         {{"path", c.data.path},
          {"synthetic",
           {{"n_samples", s.n_samples},
            {"seq_len", s.seq_len},
            {"d_t", s.d_t},
            {"d_a", s.d_a},
            {"d_v", s.d_v},
            {"w_t", s.w_t},
            {"w_a", s.w_a},
            {"w_v", s.w_v},
            {"noise_std", s.noise_std},
            {"feature_noise", s.feature_noise},
            {"seed", s.seed}}}}}};
}

// Reads a fully populated config object (as produced by config_json).
TrainConfig config_from_full_json(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.warmup_ratio = j.at("warmup_ratio").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& t = j.at("toggles");
    c.toggles = {t.at("ame").get<bool>(), t.at("gm").get<bool>(), t.at("ge").get<bool>(),
                 t.at("cp").get<bool>(), t.at("sl").get<bool>()};
    const auto& l = j.at("loss");
    c.loss.lambda_recon = l.at("lambda_recon").get<double>();
    c.loss.lambda_uni = l.at("lambda_uni").get<double>();
    c.loss.lambda_div = l.at("lambda_div").get<double>();
    c.loss.lambda_stat = l.at("lambda_stat").get<double>();
    c.task_loss = task_loss_kind_from_string(j.at("task_loss").get<std::string>());
    c.recon_reduction = recon_reduction_from_string(j.at("recon_reduction").get<std::string>());
    c.acc2 = acc2_from_string(j.at("acc2").get<std::string>());
    const auto& md = j.at("modulation");
    c.modulation.alpha = md.at("alpha").get<double>();
    c.modulation.eta = md.at("eta").get<double>();
    c.modulation.epsilon = md.at("epsilon").get<double>();
    c.modulation.window_start = md.at("window_start").get<int>();
    c.modulation.window_end = md.at("window_end").get<int>();
    c.modulation.ratio_variant = ratio_variant_from_string(md.at("ratio_variant").get<std::string>());
    c.modulation.ge_cap = md.at("ge_cap").get<double>();
    c.modulation.grad_norm_mode = grad_norm_mode_from_string(md.at("grad_norm_mode").get<std::string>());
    c.modulation.mae_ema_decay = md.at("mae_ema_decay").get<double>();
    c.model = model_from_json(j.at("model"));
    c.eval_every = j.at("eval_every").get<int>();
    const auto& d = j.at("data");
    c.data.path = d.at("path").get<std::string>();
    const auto& s = d.at("synthetic");
    auto& sy = c.data.synthetic;
    sy.n_samples = s.at("n_samples").get<std::size_t>();
    sy.seq_len = s.at("seq_len").get<std::size_t>();
    sy.d_t = s.at("d_t").get<std::size_t>();
    sy.d_a = s.at("d_a").get<std::size_t>();
    sy.d_v = s.at("d_v").get<std::size_t>();
    sy.w_t = s.at("w_t").get<double>();
    sy.w_a = s.at("w_a").get<double>();
    sy.w_v = s.at("w_v").get<double>();
    sy.noise_std = s.at("noise_std").get<double>();
    sy.feature_noise = s.at("feature_noise").get<double>();
    sy.seed = s.at("seed").get<std::uint64_t>();
    return c;
}

// Overlays `patch` onto `target`; every key in the patch must already exist.
void merge_strict(ojson& target, const json& patch, const std::string& prefix) {
    if (!patch.is_object()) throw FormatError("config: '" + prefix + "' must be an object");
    for (const auto& [key, value] : patch.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!target.contains(key)) throw FormatError("config: unknown key '" + path + "'");
        auto& slot = target[key];
        if (slot.is_object()) {
            merge_strict(slot, value, path);
        } else {
            slot = value;
        }
    }
}

TrainConfig parse_checked(const ojson& j) {
    try {
        return config_from_full_json(json::parse(j.dump()));
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
}

ojson state_json(const StepRecord& r) {
    const auto& m = r.modulation;
    return ojson{{"step", r.step},
                 {"epoch", r.epoch},
                 {"lr", r.lr},
                 {"task", r.loss.task},
                 {"recon", r.loss.recon},
                 {"uni", r.loss.uni},
                 {"div", r.loss.div},
                 {"entropy", r.entropy},
                 {"stat", r.loss.stat},
                 {"total", r.loss.total},
                 {"mae_a", m.mae_a},
                 {"mae_v", m.mae_v},
                 {"s_a", m.s_a},
                 {"s_v", m.s_v},
                 {"c_a", m.c_a},
                 {"c_v", m.c_v},
                 {"g_a", m.g_a},
                 {"g_v", m.g_v},
                 {"conflict_a", m.conflict_a},
                 {"conflict_v", m.conflict_v},
                 {"imbalance", m.imbalance},
                 {"active", m.active}};
}

ojson report_json(const MetricReport& r) {
    return ojson{{"acc2", r.acc2}, {"f1", r.f1}, {"mae", r.mae}, {"corr", r.corr}, {"n_eval", r.n_eval}};
}

std::string csv_number(double x) {
    if (std::isnan(x)) return "nan";
    std::ostringstream ss;
    ss << std::setprecision(17) << x;
    return ss.str();
}

}  // namespace

std::string config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

TrainConfig config_from_json(const std::string& text, const TrainConfig& base) {
    json patch;
    try {
        patch = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    ojson full = config_json(base);
    merge_strict(full, patch, "");
    return parse_checked(full);
}

TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base) {
    return config_from_json(read_file(path), base);
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument("override '" + assignment + "' is not of the form key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    ojson full = config_json(cfg);
    ojson* slot = &full;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
        if (!slot->is_object() || !slot->contains(part)) {
            throw std::invalid_argument("unknown config key '" + key + "'");
        }
        slot = &(*slot)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    if (slot->is_object()) throw std::invalid_argument("config key '" + key + "' is a section");
    *slot = value;
    try {
        cfg = config_from_full_json(json::parse(full.dump()));
    } catch (const json::exception&) {
        throw std::invalid_argument("bad value '" + raw + "' for config key '" + key + "'");
    }
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    ojson entries = ojson::array();
    for (const auto& e : params.entries()) {
        const auto data = e.tensor.data();
        entries.push_back(ojson{{"name", e.name},
                                {"group", to_string(e.group)},
                                {"shape", e.tensor.shape()},
                                {"data", std::vector<double>(data.begin(), data.end())}});
    }
    const ojson doc{{"format", kCheckpointFormat},
                    {"version", kCheckpointVersion},
                    {"model", model_to_json(params.config())},
                    {"params", entries}};
    auto out = open_out(path);
    out << doc.dump() << "\n";
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw FormatError("checkpoint '" + path.string() + "': " + e.what());
    }
    try {
        if (doc.at("format").get<std::string>() != kCheckpointFormat) {
            throw FormatError("checkpoint '" + path.string() + "': not an mmtrain checkpoint");
        }
        const int version = doc.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw FormatError("checkpoint '" + path.string() + "': unsupported version " +
                              std::to_string(version));
        }
        const ModelConfig cfg = model_from_json(doc.at("model"));
        cfg.validate();
        const ModelParams layout = ModelParams::init(cfg, 0);
        const auto& items = doc.at("params");
        if (items.size() != layout.entries().size()) {
            throw FormatError("checkpoint '" + path.string() + "': expected " +
                              std::to_string(layout.entries().size()) + " tensors, found " +
                              std::to_string(items.size()));
        }
        ModelParams params(cfg);
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto& item = items[i];
            const auto& expected = layout.entries()[i];
            const auto name = item.at("name").get<std::string>();
            const auto shape = item.at("shape").get<Shape>();
            if (name != expected.name || shape != expected.tensor.shape()) {
                throw FormatError("checkpoint '" + path.string() + "': tensor '" + name + "' " +
                                  shape_str(shape) + " does not match expected '" + expected.name +
                                  "' " + shape_str(expected.tensor.shape()));
            }
            auto values = item.at("data").get<std::vector<double>>();
            if (values.size() != numel_of(shape)) {
                throw FormatError("checkpoint '" + path.string() + "': tensor '" + name +
                                  "' has the wrong number of values");
            }
            params.add(name, param_group_from_string(item.at("group").get<std::string>()),
                       Tensor(shape, std::move(values)));
        }
        return params;
    } catch (const json::exception& e) {
        throw FormatError("checkpoint '" + path.string() + "': " + e.what());
    }
}

void write_trace(const std::vector<StepRecord>& trace, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& r : trace) out << state_json(r).dump() << "\n";
}

void write_metrics(const std::vector<EpochRecord>& metrics, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& e : metrics) {
        ojson splits = ojson::object();
        for (const auto& s : e.splits) splits[to_string(s.split)] = report_json(s.report);
        out << ojson{{"epoch", e.epoch}, {"mean_train_loss", e.mean_train_loss}, {"splits", splits}}.dump()
            << "\n";
    }
}

std::vector<StepRecord> read_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::vector<StepRecord> trace;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            StepRecord r;
            r.step = j.at("step").get<std::size_t>();
            r.epoch = j.at("epoch").get<int>();
            r.lr = j.at("lr").get<double>();
            r.loss.task = j.at("task").get<double>();
            r.loss.recon = j.at("recon").get<double>();
            r.loss.uni = j.at("uni").get<double>();
            r.loss.div = j.at("div").get<double>();
            r.entropy = j.at("entropy").get<double>();
            r.loss.stat = j.at("stat").get<double>();
            r.loss.total = j.at("total").get<double>();
            auto& m = r.modulation;
            m.mae_a = j.at("mae_a").get<double>();
            m.mae_v = j.at("mae_v").get<double>();
            m.s_a = j.at("s_a").get<double>();
            m.s_v = j.at("s_v").get<double>();
            m.c_a = j.at("c_a").get<double>();
            m.c_v = j.at("c_v").get<double>();
            m.g_a = j.at("g_a").get<double>();
            m.g_v = j.at("g_v").get<double>();
            m.conflict_a = j.at("conflict_a").get<bool>();
            m.conflict_v = j.at("conflict_v").get<bool>();
            m.imbalance = j.at("imbalance").get<double>();
            m.active = j.at("active").get<bool>();
            trace.push_back(r);
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return trace;
}

void write_trace_csv(const std::vector<StepRecord>& trace, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "step,epoch,series,value\n";
    for (const auto& r : trace) {
        const ojson j = state_json(r);
        for (const auto& [key, value] : j.items()) {
            if (key == "step" || key == "epoch") continue;
            const double x = value.is_boolean() ? (value.get<bool>() ? 1.0 : 0.0) : value.get<double>();
            out << r.step << ',' << r.epoch << ',' << key << ',' << csv_number(x) << "\n";
        }
    }
}

void write_ablation_csv(const std::vector<AblationResult>& results, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "row,label,toggles,n_seeds,diverged,acc2_mean,acc2_std,f1_mean,f1_std,mae_mean,mae_std,"
           "corr_mean,corr_std\n";
    for (const auto& r : results) {
        out << r.row.id << ',' << '"' << r.row.label << '"' << ',' << to_string(r.row.toggles) << ','
            << r.seeds.size() << ',' << r.diverged;
        for (const auto* s : {&r.acc2, &r.f1, &r.mae, &r.corr}) {
            out << ',' << csv_number(s->mean) << ',' << csv_number(s->stddev);
        }
        out << "\n";
    }
}

void write_ablation_json(const std::vector<AblationResult>& results, const std::filesystem::path& path) {
    ojson rows = ojson::array();
    for (const auto& r : results) {
        ojson per_seed = ojson::array();
        for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
            ojson item{{"seed", r.seeds[i]}};
            item["metrics"] = r.per_seed[i] ? report_json(*r.per_seed[i]) : ojson(nullptr);
            per_seed.push_back(item);
        }
        auto summary = [](const MetricSummary& s) { return ojson{{"mean", s.mean}, {"std", s.stddev}}; };
        rows.push_back(ojson{{"row", r.row.id},
                             {"label", r.row.label},
                             {"toggles", to_string(r.row.toggles)},
                             {"diverged", r.diverged},
                             {"acc2", summary(r.acc2)},
                             {"f1", summary(r.f1)},
                             {"mae", summary(r.mae)},
                             {"corr", summary(r.corr)},
                             {"per_seed", per_seed}});
    }
    auto out = open_out(path);
    out << rows.dump(2) << "\n";
}

std::string format_ablation_table(const std::vector<AblationResult>& results) {
    std::ostringstream ss;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-4s %-16s %-18s %-17s %-17s %-17s %-17s\n", "row", "label",
                  "toggles", "acc2", "f1", "mae", "corr");
    ss << buf;
    auto cell = [](const MetricSummary& s) {
        char c[32];
        std::snprintf(c, sizeof c, "%.4f +- %.4f", s.mean, s.stddev);
        return std::string(c);
    };
    for (const auto& r : results) {
        std::snprintf(buf, sizeof buf, "%-4s %-16s %-18s %-17s %-17s %-17s %-17s", r.row.id.c_str(),
                      r.row.label.c_str(), to_string(r.row.toggles).c_str(), cell(r.acc2).c_str(),
                      cell(r.f1).c_str(), cell(r.mae).c_str(), cell(r.corr).c_str());
        ss << buf;
        if (r.diverged) ss << "  (" << r.diverged << " diverged)";
        ss << "\n";
    }
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    auto out = open_out(path);
    out << text;
}

}  // namespace mmtrain::io
