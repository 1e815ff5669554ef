#include "mmtrain/modulation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mmtrain {

namespace {

// 1 - tanh(x) without cancellation. Floored at the smallest normal double so
// the coefficient stays strictly positive once exp(2x) overflows.
double one_minus_tanh(double x) {
    return std::max(2.0 / (1.0 + std::exp(2.0 * x)), std::numeric_limits<double>::min());
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace

std::string to_string(RatioVariant v) {
    return v == RatioVariant::AsWritten ? "as_written" : "ratio_minus_one";
}

RatioVariant ratio_variant_from_string(std::string_view s) {
    if (s == "as_written") return RatioVariant::AsWritten;
    if (s == "ratio_minus_one") return RatioVariant::RatioMinusOne;
    throw std::invalid_argument("unknown ratio variant '" + std::string(s) + "'");
}

std::string to_string(GradNormMode m) {
    return m == GradNormMode::MeanOfNorms ? "mean_of_norms" : "norm_of_all";
}

GradNormMode grad_norm_mode_from_string(std::string_view s) {
    if (s == "mean_of_norms") return GradNormMode::MeanOfNorms;
    if (s == "norm_of_all") return GradNormMode::NormOfAll;
    throw std::invalid_argument("unknown grad norm mode '" + std::string(s) + "'");
}

void ModulationConfig::validate() const {
    if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("modulation: eta must lie in (0, 1)");
    if (window_start > window_end) {
        throw std::invalid_argument("modulation: window_start must not exceed window_end");
    }
    if (!(ge_cap >= 1.0)) throw std::invalid_argument("modulation: ge_cap must be >= 1");
    if (!std::isfinite(alpha) || alpha < 0.0) {
        throw std::invalid_argument("modulation: alpha must be finite and >= 0");
    }
    if (!(epsilon >= 0.0)) throw std::invalid_argument("modulation: epsilon must be >= 0");
    if (!(mae_ema_decay >= 0.0 && mae_ema_decay < 1.0)) {
        throw std::invalid_argument("modulation: mae_ema_decay must lie in [0, 1)");
    }
}

Coefficients compute_coefficients(double mae_a, double mae_v, const ModulationConfig& cfg) {
    const double eps = cfg.epsilon;
    Coefficients out{1.0 / (mae_a + eps), 1.0 / (mae_v + eps), 1.0, 1.0};
    auto coefficient = [&](double s_self, double s_other) {
        if (!(s_self > s_other)) return 1.0;
        double r = s_self / (s_other + eps);
        if (cfg.ratio_variant == RatioVariant::RatioMinusOne) r -= 1.0;
        return one_minus_tanh(cfg.alpha * relu(r));
    };
    out.c_a = coefficient(out.s_a, out.s_v);
    out.c_v = coefficient(out.s_v, out.s_a);
    return out;
}

ConflictFlags detect_conflict(double mae_a, double mae_v, double g_a, double g_v) {
    return {mae_a < mae_v && g_a > g_v, mae_v < mae_a && g_v > g_a};
}

double enhancement_coefficient(double s_self, double s_other, const ModulationConfig& cfg) {
    const double boost = 1.0 + std::tanh(cfg.alpha * relu(s_other / (s_self + cfg.epsilon) - 1.0));
    return std::min(cfg.ge_cap, boost);
}

GradNorms collect_grad_norms(const ModelParams& params, GradNormMode mode) {
    return {grad_norm(params.group(ParamGroup::EncA), mode),
            grad_norm(params.group(ParamGroup::EncV), mode)};
}

void scale_gradients(ModelParams& params, double c_a, double c_v) {
    for (const auto& e : params.entries()) {
        double c = 1.0;
        if (e.group == ParamGroup::EncA) {
            c = c_a;
        } else if (e.group == ParamGroup::EncV) {
            c = c_v;
        } else {
            continue;
        }
        Tensor t = e.tensor;
        if (!t.has_grad()) {
            throw ContractError("scale_gradients: parameter '" + e.name + "' has no gradient");
        }
        for (double& g : t.grad()) g *= c;
    }
}

double imbalance_degree(double g_a, double g_v, double eps) {
    return std::abs(g_a - g_v) / (g_a + g_v + eps);
}

ModulationState observe_modulation(double mae_a, double mae_v, const ModelParams& params,
                                   const ModulationConfig& cfg) {
    ModulationState st;
    st.mae_a = mae_a;
    st.mae_v = mae_v;
    const Coefficients coeff = compute_coefficients(mae_a, mae_v, cfg);
    st.s_a = coeff.s_a;
    st.s_v = coeff.s_v;
    const GradNorms norms = collect_grad_norms(params, cfg.grad_norm_mode);
    st.g_a = norms.g_a;
    st.g_v = norms.g_v;
    st.imbalance = imbalance_degree(st.g_a, st.g_v, cfg.epsilon);
    return st;
}

ModulationState modulation_step(double mae_a, double mae_v, ModelParams& params, int epoch,
                                const ModulationConfig& cfg) {
    ModulationState st = observe_modulation(mae_a, mae_v, params, cfg);
    if (!cfg.in_window(epoch)) return st;

    const Coefficients coeff = compute_coefficients(mae_a, mae_v, cfg);
    st.active = true;
    st.c_a = coeff.c_a;
    st.c_v = coeff.c_v;
    if (cfg.cp_enabled) {
        const ConflictFlags conflict = detect_conflict(mae_a, mae_v, st.g_a, st.g_v);
        st.conflict_a = conflict.a;
        st.conflict_v = conflict.v;
        st.c_a = apply_conflict_penalty(st.c_a, conflict.a, cfg.eta);
        st.c_v = apply_conflict_penalty(st.c_v, conflict.v, cfg.eta);
    }
    if (cfg.ge_enabled) {
        if (st.s_a < st.s_v) {
            st.c_a = enhancement_coefficient(st.s_a, st.s_v, cfg);
        } else if (st.s_v < st.s_a) {
            st.c_v = enhancement_coefficient(st.s_v, st.s_a, cfg);
        }
    }
    scale_gradients(params, st.c_a, st.c_v);
    return st;
}

std::pair<double, double> MaeSmoother::update(double mae_a, double mae_v) {
    if (decay_ <= 0.0) return {mae_a, mae_v};
    if (!state_) {
        state_ = std::pair{mae_a, mae_v};
    } else {
        state_->first = decay_ * state_->first + (1.0 - decay_) * mae_a;
        state_->second = decay_ * state_->second + (1.0 - decay_) * mae_v;
    }
    return *state_;
}

}  // namespace mmtrain
