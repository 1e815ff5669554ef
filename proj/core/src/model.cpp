#include "mmtrain/model.hpp"

#include <cmath>
#include <stdexcept>
#include <tuple>

#include "mmtrain/ops.hpp"

namespace mmtrain {

namespace {

const char* prefix_for(Modality m) {
    switch (m) {
        case Modality::Text: return "t";
        case Modality::Audio: return "a";
        case Modality::Visual: return "v";
    }
    return "?";
}

std::string key(std::string_view group, Modality m, std::string_view leaf) {
    return std::string(group) + "_" + prefix_for(m) + "." + std::string(leaf);
}

}  // namespace

std::string to_string(FusionKind kind) {
    return kind == FusionKind::Gated ? "gated" : "concat-mlp";
}

FusionKind fusion_kind_from_string(std::string_view s) {
    if (s == "gated") return FusionKind::Gated;
    if (s == "concat-mlp") return FusionKind::ConcatMlp;
    throw std::invalid_argument("unknown fusion kind '" + std::string(s) + "'");
}

std::string to_string(ParamGroup group) {
    switch (group) {
        case ParamGroup::TextStub: return "text_stub";
        case ParamGroup::EncA: return "enc_a";
        case ParamGroup::EncV: return "enc_v";
        case ParamGroup::Fusion: return "fusion";
        case ParamGroup::TaskHead: return "task_head";
        case ParamGroup::DecA: return "dec_a";
        case ParamGroup::DecV: return "dec_v";
        case ParamGroup::UniHeads: return "uni_heads";
    }
    return "unknown";
}

ParamGroup param_group_from_string(std::string_view s) {
    for (auto g : {ParamGroup::TextStub, ParamGroup::EncA, ParamGroup::EncV, ParamGroup::Fusion,
                   ParamGroup::TaskHead, ParamGroup::DecA, ParamGroup::DecV, ParamGroup::UniHeads}) {
        if (to_string(g) == s) return g;
    }
    throw std::invalid_argument("unknown parameter group '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
    if (d_t == 0 || d_a == 0 || d_v == 0 || d_latent == 0 || d_fusion == 0 || seq_len == 0) {
        throw std::invalid_argument("model: all dimensions must be >= 1");
    }
    if (!std::isfinite(beta)) throw std::invalid_argument("model: beta must be finite");
    auto rate_ok = [](double p) { return p >= 0.0 && p < 1.0; };
    if (!rate_ok(dropout_encoder) || !rate_ok(dropout_classifier)) {
        throw std::invalid_argument("model: dropout rates must lie in [0, 1)");
    }
}

void ModelParams::add(std::string name, ParamGroup group, Tensor tensor) {
    if (index_.count(name)) throw ContractError("ModelParams: duplicate parameter '" + name + "'");
    tensor.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), group, std::move(tensor)});
}

const Tensor& ModelParams::at(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ContractError("ModelParams: no parameter named '" + std::string(name) + "'");
    }
    return entries_[it->second].tensor;
}

bool ModelParams::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::vector<Tensor> ModelParams::group(ParamGroup g) const {
    std::vector<Tensor> out;
    for (const auto& e : entries_) {
        if (e.group == g) out.push_back(e.tensor);
    }
    return out;
}

std::vector<NamedTensor> ModelParams::named() const {
    std::vector<NamedTensor> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back({e.name, e.tensor});
    return out;
}

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
}

void ModelParams::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

ModelParams ModelParams::clone() const {
    ModelParams out(config_);
    for (const auto& e : entries_) out.add(e.name, e.group, e.tensor.clone());
    return out;
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams p(config);
    Rng rng(derive_seed(seed, 1000));

    auto weight = [&rng](std::size_t in, std::size_t out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<double> w(in * out);
        for (double& x : w) x = dist(rng);
        return Tensor({in, out}, std::move(w));
    };
    auto bias = [](std::size_t n, double value = 0.0) { return Tensor::full({n}, value); };

    const auto dt = config.d_t;
    const auto dl = config.d_latent;
    const auto df = config.d_fusion;
    const auto L = config.seq_len;

    p.add("text_stub.w1", ParamGroup::TextStub, weight(dt, dt));
    p.add("text_stub.b1", ParamGroup::TextStub, bias(dt));
    p.add("text_stub.w2", ParamGroup::TextStub, weight(dt, dt));
    p.add("text_stub.b2", ParamGroup::TextStub, bias(dt));
    {
        std::normal_distribution<double> small(0.0, 0.02);
        std::vector<double> pos(L * dt);
        for (double& x : pos) x = small(rng);
        p.add("text_stub.pos", ParamGroup::TextStub, Tensor({L, dt}, std::move(pos)));
    }

    for (auto [m, d, group] : {std::tuple{Modality::Audio, config.d_a, ParamGroup::EncA},
                               std::tuple{Modality::Visual, config.d_v, ParamGroup::EncV}}) {
        p.add(key("enc", m, "trunk.w"), group, weight(d, dl));
        p.add(key("enc", m, "trunk.b"), group, bias(dl));
        p.add(key("enc", m, "mu.w"), group, weight(dl, dl));
        p.add(key("enc", m, "mu.b"), group, bias(dl));
        p.add(key("enc", m, "var.w"), group, weight(dl, dl));
        // softplus(-2) ~ 0.13, near the variance of min-max scaled features
        p.add(key("enc", m, "var.b"), group, bias(dl, -2.0));
    }

    if (config.fusion_kind == FusionKind::Gated) {
        p.add("fusion.gate.w", ParamGroup::Fusion, weight(2 * dl, df));
        p.add("fusion.gate.b", ParamGroup::Fusion, bias(df));
        p.add("fusion.a.w", ParamGroup::Fusion, weight(dl, df));
        p.add("fusion.a.b", ParamGroup::Fusion, bias(df));
        p.add("fusion.v.w", ParamGroup::Fusion, weight(dl, df));
        p.add("fusion.v.b", ParamGroup::Fusion, bias(df));
    } else {
        p.add("fusion.mlp.w", ParamGroup::Fusion, weight(2 * dl, df));
        p.add("fusion.mlp.b", ParamGroup::Fusion, bias(df));
    }
    p.add("fusion.proj.w", ParamGroup::Fusion, weight(df, dt));

    p.add("task_head.ln.gain", ParamGroup::TaskHead, bias(dt, 1.0));
    p.add("task_head.ln.bias", ParamGroup::TaskHead, bias(dt));
    p.add("task_head.w1", ParamGroup::TaskHead, weight(dt, df));
    p.add("task_head.b1", ParamGroup::TaskHead, bias(df));
    p.add("task_head.w2", ParamGroup::TaskHead, weight(df, 1));
    p.add("task_head.b2", ParamGroup::TaskHead, bias(1));

    for (auto [m, d, group] : {std::tuple{Modality::Audio, config.d_a, ParamGroup::DecA},
                               std::tuple{Modality::Visual, config.d_v, ParamGroup::DecV}}) {
        p.add(key("dec", m, "skip.w"), group, weight(dl, d));
        p.add(key("dec", m, "w1"), group, weight(dl, dl));
        p.add(key("dec", m, "b1"), group, bias(dl));
        p.add(key("dec", m, "w2"), group, weight(dl, d));
        p.add(key("dec", m, "b2"), group, bias(d));
    }

    p.add("uni_t.w", ParamGroup::UniHeads, weight(dt, 1));
    p.add("uni_t.b", ParamGroup::UniHeads, bias(1));
    p.add("uni_a.w", ParamGroup::UniHeads, weight(dl, 1));
    p.add("uni_a.b", ParamGroup::UniHeads, bias(1));
    p.add("uni_v.w", ParamGroup::UniHeads, weight(dl, 1));
    p.add("uni_v.b", ParamGroup::UniHeads, bias(1));
    return p;
}

NoiseDraw draw_noise(std::size_t batch, std::size_t seq_len, std::size_t d_latent, Rng& rng) {
    std::normal_distribution<double> unit(0.0, 1.0);
    auto draw = [&] {
        std::vector<double> v(batch * seq_len * d_latent);
        for (double& x : v) x = unit(rng);
        return Tensor({batch, seq_len, d_latent}, std::move(v));
    };
    NoiseDraw out;
    out.audio = draw();
    out.visual = draw();
    return out;
}

Tensor dropout(const Tensor& x, double rate, Rng* rng) {
    if (rng == nullptr || rate <= 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    const double inv = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (double& m : mask) m = keep(*rng) ? inv : 0.0;
    return ops::mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor masked_mean_pool(const Tensor& x, const Tensor& mask) {
    if (x.rank() != 3 || mask.rank() != 2 || mask.shape()[0] != x.shape()[0] ||
        mask.shape()[1] != x.shape()[1]) {
        throw ShapeError("masked_mean_pool: x " + shape_str(x.shape()) + " vs mask " +
                         shape_str(mask.shape()));
    }
    const std::size_t B = x.shape()[0];
    const std::size_t L = x.shape()[1];
    std::vector<double> counts(B, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t l = 0; l < L; ++l) counts[b] += mask[b * L + l];
        counts[b] = std::max(counts[b], 1.0);
    }
    const Tensor m3({B, L, 1}, std::vector<double>(mask.data().begin(), mask.data().end()));
    const Tensor summed = ops::sum(ops::mul(x, m3), 1);
    return ops::div(summed, Tensor({B, 1}, std::move(counts)));
}

AmeOutputs ame_forward(const Tensor& x, const ModelParams& params, Modality m, const Tensor* noise,
                       bool detach_variance, Rng* dropout_rng) {
    if (m == Modality::Text) throw ContractError("ame_forward: text is not an AME modality");
    const double rate = params.config().dropout_encoder;
    Tensor hidden = ops::tanh(ops::linear(x, params.at(key("enc", m, "trunk.w")),
                                          params.at(key("enc", m, "trunk.b"))));
    hidden = dropout(hidden, rate, dropout_rng);

    AmeOutputs out;
    out.mu = ops::linear(hidden, params.at(key("enc", m, "mu.w")), params.at(key("enc", m, "mu.b")));
    auto variance_head = [&] {
        return ops::softplus(
            ops::linear(hidden, params.at(key("enc", m, "var.w")), params.at(key("enc", m, "var.b"))));
    };
    if (detach_variance) {
        NoGradScope no_grad;
        out.var = variance_head();
    } else {
        out.var = variance_head();
    }
    if (noise == nullptr) {
        out.z = out.mu;
    } else {
        if (noise->shape() != out.mu.shape()) {
            throw ShapeError("ame_forward: noise " + shape_str(noise->shape()) + " vs latent " +
                             shape_str(out.mu.shape()));
        }
        out.z = ops::add(out.mu, ops::mul(*noise, ops::sqrt(ops::add_scalar(out.var, kReparamEps))));
    }
    return out;
}

Tensor gated_fuse(const Tensor& z_a, const Tensor& z_v, const ModelParams& params) {
    if (z_a.shape() != z_v.shape()) {
        throw ShapeError("gated_fuse: Z_a " + shape_str(z_a.shape()) + " vs Z_v " +
                         shape_str(z_v.shape()));
    }
    const Tensor joint = ops::concat_last(z_a, z_v);
    if (params.config().fusion_kind == FusionKind::ConcatMlp) {
        return ops::tanh(ops::linear(joint, params.at("fusion.mlp.w"), params.at("fusion.mlp.b")));
    }
    const Tensor gate = ops::sigmoid(ops::linear(joint, params.at("fusion.gate.w"), params.at("fusion.gate.b")));
    const Tensor ha = ops::tanh(ops::linear(z_a, params.at("fusion.a.w"), params.at("fusion.a.b")));
    const Tensor hv = ops::tanh(ops::linear(z_v, params.at("fusion.v.w"), params.at("fusion.v.b")));
    return ops::add(ops::mul(gate, ha), ops::mul(ops::add_scalar(ops::neg(gate), 1.0), hv));
}

ResidualOutputs residual_inject(const Tensor& t, const Tensor& f_av, double beta,
                                const ModelParams& params) {
    ResidualOutputs out;
    out.p_av = ops::tanh(ops::matmul(f_av, params.at("fusion.proj.w")));
    if (out.p_av.shape() != t.shape()) {
        throw ShapeError("residual_inject: projection " + shape_str(out.p_av.shape()) +
                         " does not match text " + shape_str(t.shape()));
    }
    out.h = ops::add(t, ops::scale(out.p_av, beta));
    return out;
}

Tensor predict_head(const Tensor& h, const Tensor& mask, const ModelParams& params, Rng* dropout_rng) {
    const Tensor normed = ops::layer_norm(h, params.at("task_head.ln.gain"), params.at("task_head.ln.bias"));
    const Tensor pooled = masked_mean_pool(normed, mask);
    Tensor hidden = ops::tanh(ops::linear(pooled, params.at("task_head.w1"), params.at("task_head.b1")));
    hidden = dropout(hidden, params.config().dropout_classifier, dropout_rng);
    const Tensor y = ops::linear(hidden, params.at("task_head.w2"), params.at("task_head.b2"));
    return ops::reshape(y, {y.shape()[0]});
}

Tensor reconstruct(const Tensor& z, const ModelParams& params, Modality m) {
    if (m == Modality::Text) throw ContractError("reconstruct: text is not reconstructed");
    const Tensor skip = ops::matmul(z, params.at(key("dec", m, "skip.w")));
    const Tensor hidden = ops::tanh(ops::linear(z, params.at(key("dec", m, "w1")), params.at(key("dec", m, "b1"))));
    return ops::add(skip, ops::linear(hidden, params.at(key("dec", m, "w2")), params.at(key("dec", m, "b2"))));
}

Tensor unimodal_predict(const Tensor& features, const Tensor& mask, const ModelParams& params,
                        Modality m) {
    const std::string head = std::string("uni_") + prefix_for(m);
    const Tensor y = ops::linear(masked_mean_pool(features, mask), params.at(head + ".w"),
                                 params.at(head + ".b"));
    return ops::reshape(y, {y.shape()[0]});
}

Tensor text_stub_forward(const Tensor& t_raw, const ModelParams& params) {
    const Tensor hidden = ops::tanh(ops::linear(t_raw, params.at("text_stub.w1"), params.at("text_stub.b1")));
    const Tensor mixed = ops::linear(hidden, params.at("text_stub.w2"), params.at("text_stub.b2"));
    return ops::add(mixed, params.at("text_stub.pos"));
}

ForwardOutputs forward(const ModelParams& params, const MultimodalBatch& batch,
                       const ForwardOptions& options) {
    const auto& cfg = params.config();
    const auto& ts = batch.text.shape();
    if (ts.size() != 3 || ts[1] != cfg.seq_len || ts[2] != cfg.d_t ||
        batch.audio.shape() != Shape{ts[0], cfg.seq_len, cfg.d_a} ||
        batch.visual.shape() != Shape{ts[0], cfg.seq_len, cfg.d_v}) {
        throw ShapeError("forward: batch shapes text " + shape_str(batch.text.shape()) + ", audio " +
                         shape_str(batch.audio.shape()) + ", visual " +
                         shape_str(batch.visual.shape()) + " do not match the model config");
    }

    const Tensor* noise_a = nullptr;
    const Tensor* noise_v = nullptr;
    if (options.ame && options.noise != nullptr) {
        noise_a = &options.noise->audio;
        noise_v = &options.noise->visual;
    }

    ForwardOutputs out;
    out.t = text_stub_forward(batch.text, params);
    auto enc_a = ame_forward(batch.audio, params, Modality::Audio, noise_a, !options.ame, options.dropout_rng);
    auto enc_v = ame_forward(batch.visual, params, Modality::Visual, noise_v, !options.ame, options.dropout_rng);
    out.mu_a = enc_a.mu;
    out.var_a = enc_a.var;
    out.z_a = enc_a.z;
    out.mu_v = enc_v.mu;
    out.var_v = enc_v.var;
    out.z_v = enc_v.z;

    out.f_av = gated_fuse(out.z_a, out.z_v, params);
    auto res = residual_inject(out.t, out.f_av, cfg.beta, params);
    out.p_av = res.p_av;
    out.h = res.h;
    out.y_hat = predict_head(out.h, batch.mask, params, options.dropout_rng);

    out.a_hat = reconstruct(out.z_a, params, Modality::Audio);
    out.v_hat = reconstruct(out.z_v, params, Modality::Visual);

    out.y_uni_t = unimodal_predict(out.t, batch.mask, params, Modality::Text);
    out.y_uni_a = unimodal_predict(out.z_a, batch.mask, params, Modality::Audio);
    out.y_uni_v = unimodal_predict(out.z_v, batch.mask, params, Modality::Visual);
    return out;
}

}  // namespace mmtrain
