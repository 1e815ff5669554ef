#include "mmtrain/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mmtrain/rng.hpp"

namespace mmtrain {

using nlohmann::json;

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "unknown";
}

void SyntheticConfig::validate() const {
    if (n_samples == 0 || seq_len == 0 || d_t == 0 || d_a == 0 || d_v == 0) {
        throw std::invalid_argument("synthetic: sizes must be >= 1");
    }
    if (w_t < 0 || w_a < 0 || w_v < 0 || !(w_t + w_a + w_v > 0)) {
        throw std::invalid_argument("synthetic: informativeness weights must be >= 0 with positive sum");
    }
    if (!(noise_std >= 0) || !(feature_noise >= 0)) {
        throw std::invalid_argument("synthetic: noise levels must be >= 0");
    }
}

Dataset gen_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const std::size_t L = cfg.seq_len;

    Rng map_rng(derive_seed(cfg.seed, 0));
    std::normal_distribution<double> unit(0.0, 1.0);
    // One direction per modality, shared by every time step and rescaled to
    // unit RMS, so a modality's informativeness depends on w alone.
    auto draw_map = [&](std::size_t d) {
        std::vector<double> dir(d);
        double ss = 0.0;
        for (double& x : dir) {
            x = unit(map_rng);
            ss += x * x;
        }
        const double scale = std::sqrt(static_cast<double>(d) / ss);
        std::vector<double> m(L * d);
        for (std::size_t k = 0; k < m.size(); ++k) m[k] = dir[k % d] * scale;
        return m;
    };
    const auto map_t = draw_map(cfg.d_t);
    const auto map_a = draw_map(cfg.d_a);
    const auto map_v = draw_map(cfg.d_v);

    Dataset ds;
    ds.seq_len = L;
    ds.d_t = cfg.d_t;
    ds.d_a = cfg.d_a;
    ds.d_v = cfg.d_v;
    ds.samples.resize(cfg.n_samples);

    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
        Rng rng(derive_seed(cfg.seed, i + 1));
        std::uniform_real_distribution<double> latent(-3.0, 3.0);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const double u = latent(rng);

        auto encode = [&](const std::vector<double>& map, double w) {
            std::vector<double> x(map.size());
            for (std::size_t k = 0; k < map.size(); ++k) {
                x[k] = w * u * map[k] + cfg.feature_noise * gauss(rng);
            }
            return x;
        };
        Sample& s = ds.samples[i];
        s.id = "syn-" + std::to_string(i);
        s.text = encode(map_t, cfg.w_t);
        s.audio = encode(map_a, cfg.w_a);
        s.visual = encode(map_v, cfg.w_v);
        s.label = std::clamp(u + cfg.noise_std * gauss(rng), -3.0, 3.0);
        s.mask.assign(L, 1.0);
    }
    return ds;
}

DataSplits split_dataset(const Dataset& ds, double train_frac, double val_frac) {
    if (!(train_frac > 0) || !(val_frac >= 0) || train_frac + val_frac >= 1.0) {
        throw std::invalid_argument("split_dataset: fractions must satisfy 0 < train, 0 <= val, train + val < 1");
    }
    const auto n = ds.size();
    const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(n)));
    DataSplits out;
    auto take = [&ds](Dataset& dst, Split tag, std::size_t from, std::size_t to) {
        dst.split = tag;
        dst.seq_len = ds.seq_len;
        dst.d_t = ds.d_t;
        dst.d_a = ds.d_a;
        dst.d_v = ds.d_v;
        dst.samples.assign(ds.samples.begin() + static_cast<std::ptrdiff_t>(from),
                           ds.samples.begin() + static_cast<std::ptrdiff_t>(to));
    };
    take(out.train, Split::Train, 0, n_train);
    take(out.val, Split::Val, n_train, n_train + n_val);
    take(out.test, Split::Test, n_train + n_val, n);
    return out;
}

namespace {

// Returns the record's [steps x dim] block for `field` flattened row-major.
std::vector<double> read_block(const json& rec, const char* field, std::size_t line,
                               std::size_t& steps, std::size_t& dim) {
    if (!rec.contains(field)) {
        throw SchemaError("line " + std::to_string(line) + ": missing field '" + field + "'");
    }
    const json& rows = rec.at(field);
    if (!rows.is_array()) {
        throw SchemaError("line " + std::to_string(line) + ": field '" + field +
                          "' must be a 2-D array");
    }
    steps = rows.size();
    dim = 0;
    std::vector<double> flat;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const json& row = rows[r];
        if (!row.is_array()) {
            throw SchemaError("line " + std::to_string(line) + ": field '" + field + "' row " +
                              std::to_string(r) + " is not an array");
        }
        if (r == 0) {
            dim = row.size();
        } else if (row.size() != dim) {
            throw SchemaError("line " + std::to_string(line) + ": field '" + field +
                              "' has ragged rows (" + std::to_string(row.size()) + " vs " +
                              std::to_string(dim) + ")");
        }
        for (const json& v : row) {
            if (!v.is_number()) {
                throw SchemaError("line " + std::to_string(line) + ": field '" + field +
                                  "' holds a non-numeric value");
            }
            flat.push_back(v.get<double>());
        }
    }
    return flat;
}

// Truncates or zero-pads a [steps x dim] block to [seq_len x dim].
std::vector<double> fit_length(std::vector<double> block, std::size_t dim, std::size_t seq_len) {
    block.resize(seq_len * dim, 0.0);
    return block;
}

}  // namespace

Dataset load_features(const std::filesystem::path& path, std::size_t seq_len, Split split) {
    std::ifstream in(path);
    if (!in) throw SchemaError("load_features: cannot open " + path.string());

    Dataset ds;
    ds.split = split;
    ds.seq_len = seq_len;
    bool dims_known = false;

    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(text);
        } catch (const json::parse_error& e) {
            throw SchemaError(path.string() + ": line " + std::to_string(line) +
                              ": malformed record: " + e.what());
        }
        if (!rec.is_object()) {
            throw SchemaError("line " + std::to_string(line) + ": record is not an object");
        }
        if (!rec.contains("label") || !rec.at("label").is_number()) {
            throw SchemaError("line " + std::to_string(line) + ": missing or non-numeric field 'label'");
        }
        Sample s;
        s.id = rec.contains("id") ? (rec.at("id").is_string() ? rec.at("id").get<std::string>()
                                                              : rec.at("id").dump())
                                  : std::to_string(line);
        s.label = rec.at("label").get<double>();
        if (!(s.label >= -3.0 && s.label <= 3.0)) {
            throw SchemaError("line " + std::to_string(line) + ": label outside [-3, 3]");
        }

        std::size_t st = 0, sa = 0, sv = 0, dt = 0, da = 0, dv = 0;
        auto t = read_block(rec, "text", line, st, dt);
        auto a = read_block(rec, "audio", line, sa, da);
        auto v = read_block(rec, "visual", line, sv, dv);
        if (st != sa || st != sv) {
            throw SchemaError("line " + std::to_string(line) +
                              ": modalities are not aligned (text/audio/visual lengths " +
                              std::to_string(st) + "/" + std::to_string(sa) + "/" +
                              std::to_string(sv) + ")");
        }
        if (st == 0) throw SchemaError("line " + std::to_string(line) + ": empty sequence");
        if (!dims_known) {
            ds.d_t = dt;
            ds.d_a = da;
            ds.d_v = dv;
            if (ds.seq_len == 0) ds.seq_len = st;
            dims_known = true;
        } else if (dt != ds.d_t || da != ds.d_a || dv != ds.d_v) {
            throw SchemaError("line " + std::to_string(line) + ": feature dims (" +
                              std::to_string(dt) + "," + std::to_string(da) + "," +
                              std::to_string(dv) + ") differ from first record (" +
                              std::to_string(ds.d_t) + "," + std::to_string(ds.d_a) + "," +
                              std::to_string(ds.d_v) + ")");
        }
        const std::size_t L = ds.seq_len;
        const std::size_t kept = std::min(st, L);
        s.text = fit_length(std::move(t), dt, L);
        s.audio = fit_length(std::move(a), da, L);
        s.visual = fit_length(std::move(v), dv, L);
        s.mask.assign(L, 0.0);
        std::fill(s.mask.begin(), s.mask.begin() + static_cast<std::ptrdiff_t>(kept), 1.0);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

void save_features(const Dataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_features: cannot open " + path.string());
    auto block = [](const std::vector<double>& flat, std::size_t steps, std::size_t dim) {
        json rows = json::array();
        for (std::size_t r = 0; r < steps; ++r) {
            json row = json::array();
            for (std::size_t c = 0; c < dim; ++c) row.push_back(flat[r * dim + c]);
            rows.push_back(std::move(row));
        }
        return rows;
    };
    for (const auto& s : ds.samples) {
        const auto steps = static_cast<std::size_t>(
            std::count_if(s.mask.begin(), s.mask.end(), [](double m) { return m > 0.0; }));
        json rec;
        rec["id"] = s.id;
        rec["label"] = s.label;
        rec["text"] = block(s.text, steps, ds.d_t);
        rec["audio"] = block(s.audio, steps, ds.d_a);
        rec["visual"] = block(s.visual, steps, ds.d_v);
        out << rec.dump() << '\n';
    }
}

Tensor minmax_normalize(const Tensor& block) {
    if (block.rank() != 3) {
        throw ShapeError("minmax_normalize: expected [B, L, d], got " + shape_str(block.shape()));
    }
    const std::size_t d = block.shape()[2];
    const std::size_t rows = block.shape()[0] * block.shape()[1];
    const auto x = block.data();
    std::vector<double> lo(d, std::numeric_limits<double>::infinity());
    std::vector<double> hi(d, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            lo[c] = std::min(lo[c], x[r * d + c]);
            hi[c] = std::max(hi[c], x[r * d + c]);
        }
    }
    std::vector<double> out(x.size(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const double range = hi[c] - lo[c];
            out[r * d + c] = range > 0.0 ? (x[r * d + c] - lo[c]) / range : 0.0;
        }
    }
    return Tensor(block.shape(), std::move(out));
}

MultimodalBatch normalize_batch(const MultimodalBatch& batch) {
    MultimodalBatch out = batch;
    out.audio = minmax_normalize(batch.audio);
    out.visual = minmax_normalize(batch.visual);
    return out;
}

MultimodalBatch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ContractError("make_batch: empty index list");
    const std::size_t B = indices.size();
    const std::size_t L = ds.seq_len;
    std::vector<double> t, a, v, y, m;
    t.reserve(B * L * ds.d_t);
    a.reserve(B * L * ds.d_a);
    v.reserve(B * L * ds.d_v);
    for (std::size_t i : indices) {
        const Sample& s = ds.samples.at(i);
        t.insert(t.end(), s.text.begin(), s.text.end());
        a.insert(a.end(), s.audio.begin(), s.audio.end());
        v.insert(v.end(), s.visual.begin(), s.visual.end());
        y.push_back(s.label);
        m.insert(m.end(), s.mask.begin(), s.mask.end());
    }
    MultimodalBatch batch;
    batch.text = Tensor({B, L, ds.d_t}, std::move(t));
    batch.audio = Tensor({B, L, ds.d_a}, std::move(a));
    batch.visual = Tensor({B, L, ds.d_v}, std::move(v));
    batch.labels = Tensor({B}, std::move(y));
    batch.mask = Tensor({B, L}, std::move(m));
    batch.indices = indices;
    return batch;
}

std::vector<MultimodalBatch> batches(const Dataset& ds, int batch_size, std::uint64_t shuffle_seed,
                                     bool shuffle) {
    if (batch_size <= 0) {
        throw ContractError("batches: batch size must be positive, got " + std::to_string(batch_size));
    }
    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        Rng rng(shuffle_seed);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(order[i - 1], order[pick(rng)]);
        }
    }
    std::vector<MultimodalBatch> out;
    const auto B = static_cast<std::size_t>(batch_size);
    for (std::size_t start = 0; start < order.size(); start += B) {
        const std::size_t end = std::min(order.size(), start + B);
        out.push_back(make_batch(ds, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                              order.begin() + static_cast<std::ptrdiff_t>(end))));
    }
    return out;
}

}  // namespace mmtrain
