#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "mmtrain/gradcheck.hpp"
#include "mmtrain/model.hpp"

namespace mmtrain {

/// How the score ratio enters the coefficient: tanh(alpha * relu(r)) with
/// r = s_self / (s_other + eps) (AsWritten) or that ratio minus one.
enum class RatioVariant { AsWritten, RatioMinusOne };

std::string to_string(RatioVariant v);
RatioVariant ratio_variant_from_string(std::string_view s);
std::string to_string(GradNormMode m);
GradNormMode grad_norm_mode_from_string(std::string_view s);

struct ModulationConfig {
    double alpha = 1.0;
    double eta = 0.5;  // conflict penalty factor
    double epsilon = 1e-8;
    // Active for epochs in [window_start, window_end).
    int window_start = 0;
    int window_end = 25;
    RatioVariant ratio_variant = RatioVariant::AsWritten;
    bool cp_enabled = true;
    // Gradient Enhancement: amplifies the weaker modality, capped at ge_cap.
    // Not part of the published update rule; off unless requested.
    bool ge_enabled = false;
    double ge_cap = 2.0;
    GradNormMode grad_norm_mode = GradNormMode::MeanOfNorms;
    // Exponential moving average of the unimodal MAEs; 0 uses the raw batch values.
    double mae_ema_decay = 0.0;

    void validate() const;
    bool in_window(int epoch) const { return epoch >= window_start && epoch < window_end; }
};

struct ModulationState {
    double mae_a = 0.0;
    double mae_v = 0.0;
    double s_a = 0.0;
    double s_v = 0.0;
    double c_a = 1.0;
    double c_v = 1.0;
    double g_a = 0.0;
    double g_v = 0.0;
    bool conflict_a = false;
    bool conflict_v = false;
    double imbalance = 0.0;
    bool active = false;
};

struct Coefficients {
    double s_a;
    double s_v;
    double c_a;
    double c_v;
};

/// Inverse-error scores and the raw modulation coefficients. The better
/// modality (strictly larger score) gets 1 - tanh(alpha * relu(r)); the other keeps 1.
Coefficients compute_coefficients(double mae_a, double mae_v, const ModulationConfig& cfg);

struct ConflictFlags {
    bool a = false;
    bool v = false;
};

/// A modality is in conflict when its error is strictly lower and its
/// encoder gradient norm strictly larger than the other's.
ConflictFlags detect_conflict(double mae_a, double mae_v, double g_a, double g_v);

inline double apply_conflict_penalty(double c, bool conflict, double eta) {
    return conflict ? c * eta : c;
}

/// Coefficient for the weaker modality under Gradient Enhancement:
/// min(cap, 1 + tanh(alpha * relu(s_other / (s_self + eps) - 1))).
double enhancement_coefficient(double s_self, double s_other, const ModulationConfig& cfg);

struct GradNorms {
    double g_a;
    double g_v;
};

GradNorms collect_grad_norms(const ModelParams& params, GradNormMode mode);

/// Multiplies enc_a gradients by c_a and enc_v gradients by c_v; other
/// groups are not touched.
void scale_gradients(ModelParams& params, double c_a, double c_v);

/// |g_a - g_v| / (g_a + g_v + eps). Trace-only.
double imbalance_degree(double g_a, double g_v, double eps);

/// Scores, norms and imbalance without touching gradients (inactive state).
ModulationState observe_modulation(double mae_a, double mae_v, const ModelParams& params,
                                   const ModulationConfig& cfg);

/// One modulation pass. Call after backward and before the optimizer update,
/// once per step. Outside the window the returned state is inactive (c = 1,
/// no conflicts) and gradients are left untouched; scores and norms are still
/// recorded for the trace.
ModulationState modulation_step(double mae_a, double mae_v, ModelParams& params, int epoch,
                                const ModulationConfig& cfg);

/// Optional EMA smoothing of the unimodal errors fed to modulation_step.
class MaeSmoother {
public:
    explicit MaeSmoother(double decay = 0.0) : decay_(decay) {}
    std::pair<double, double> update(double mae_a, double mae_v);

private:
    double decay_;
    std::optional<std::pair<double, double>> state_;
};

}  // namespace mmtrain
