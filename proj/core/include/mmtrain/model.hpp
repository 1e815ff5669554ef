#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mmtrain/data.hpp"
#include "mmtrain/gradcheck.hpp"
#include "mmtrain/rng.hpp"
#include "mmtrain/tensor.hpp"

namespace mmtrain {

enum class FusionKind { Gated, ConcatMlp };
enum class Modality { Text, Audio, Visual };

std::string to_string(FusionKind kind);
FusionKind fusion_kind_from_string(std::string_view s);

struct ModelConfig {
    std::size_t d_t = 16;
    std::size_t d_a = 8;
    std::size_t d_v = 8;
    std::size_t d_latent = 16;  // AME output width
    std::size_t d_fusion = 32;
    std::size_t seq_len = 8;
    double beta = 1.0;  // residual weight of the fused signal
    double dropout_encoder = 0.3;
    double dropout_classifier = 0.5;
    FusionKind fusion_kind = FusionKind::Gated;

    void validate() const;
};

/// Parameter groups. Membership is a partition of the registry; EncA and EncV
/// are the groups whose gradients the modulation engine rescales.
enum class ParamGroup { TextStub, EncA, EncV, Fusion, TaskHead, DecA, DecV, UniHeads };

std::string to_string(ParamGroup group);
ParamGroup param_group_from_string(std::string_view s);

class ModelParams {
public:
    struct Entry {
        std::string name;
        ParamGroup group;
        Tensor tensor;
    };

    ModelParams() = default;
    explicit ModelParams(ModelConfig config) : config_(config) {}

    /// Xavier-uniform weights, zero biases, unit layer-norm gain.
    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    void add(std::string name, ParamGroup group, Tensor tensor);
    const Tensor& at(std::string_view name) const;
    bool contains(std::string_view name) const;

    std::vector<Tensor> group(ParamGroup g) const;
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<NamedTensor> named() const;
    const ModelConfig& config() const { return config_; }
    ModelConfig& mutable_config() { return config_; }

    std::size_t scalar_count() const;
    void zero_grad();
    /// Deep copy: fresh storage for every tensor.
    ModelParams clone() const;

private:
    ModelConfig config_;
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

struct ForwardOutputs {
    Tensor t;  // text stub output [B, L, d_t]
    Tensor mu_a, var_a, mu_v, var_v;  // [B, L, d_latent]
    Tensor z_a, z_v;                  // [B, L, d_latent]
    Tensor f_av;                      // [B, L, d_fusion]
    Tensor p_av;                      // [B, L, d_t]
    Tensor h;                         // [B, L, d_t]
    Tensor y_hat;                     // [B]
    Tensor a_hat, v_hat;              // [B, L, d_a], [B, L, d_v]
    Tensor y_uni_t, y_uni_a, y_uni_v; // [B]
};

/// Reparameterization noise for one batch, [B, L, d_latent] per modality.
struct NoiseDraw {
    Tensor audio;
    Tensor visual;
};

NoiseDraw draw_noise(std::size_t batch, std::size_t seq_len, std::size_t d_latent, Rng& rng);

struct ForwardOptions {
    // When false, Z = mu and the variance head is evaluated without gradient.
    bool ame = true;
    // nullptr means Z = mu (evaluation path).
    const NoiseDraw* noise = nullptr;
    // nullptr disables dropout.
    Rng* dropout_rng = nullptr;
};

inline constexpr double kReparamEps = 1e-6;

struct AmeOutputs {
    Tensor mu;
    Tensor var;
    Tensor z;
};

/// mu = f_mu(x), var = softplus(f_var(x)), z = mu + noise * sqrt(var + 1e-6).
AmeOutputs ame_forward(const Tensor& x, const ModelParams& params, Modality m,
                       const Tensor* noise, bool detach_variance = false,
                       Rng* dropout_rng = nullptr);

/// Fusion block selected by the config's fusion_kind.
Tensor gated_fuse(const Tensor& z_a, const Tensor& z_v, const ModelParams& params);

struct ResidualOutputs {
    Tensor p_av;
    Tensor h;
};

/// P = tanh(F W_p); H = T + beta * P.
ResidualOutputs residual_inject(const Tensor& t, const Tensor& f_av, double beta,
                                const ModelParams& params);

/// Layer-norm over features, masked mean-pool over L, two-layer head.
Tensor predict_head(const Tensor& h, const Tensor& mask, const ModelParams& params,
                    Rng* dropout_rng = nullptr);

/// Decoder for Audio or Visual: Z W_skip + tanh(Z W1 + b1) W2 + b2.
Tensor reconstruct(const Tensor& z, const ModelParams& params, Modality m);

/// Masked mean-pool over L followed by a linear head.
Tensor unimodal_predict(const Tensor& features, const Tensor& mask, const ModelParams& params,
                        Modality m);

/// tanh(T W1 + b1) W2 + b2 + positional bias.
Tensor text_stub_forward(const Tensor& t_raw, const ModelParams& params);

Tensor masked_mean_pool(const Tensor& x, const Tensor& mask);
Tensor dropout(const Tensor& x, double rate, Rng* rng);

ForwardOutputs forward(const ModelParams& params, const MultimodalBatch& batch,
                       const ForwardOptions& options = {});

}  // namespace mmtrain
