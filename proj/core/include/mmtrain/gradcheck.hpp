#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmtrain/tensor.hpp"

namespace mmtrain {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

enum class GradNormMode { MeanOfNorms, NormOfAll };

/// Mean of per-tensor L2 norms (MeanOfNorms) or one L2 norm over the
/// concatenation of all gradients (NormOfAll). Throws ContractError on an
/// empty group or a tensor without a gradient slot.
double grad_norm(const std::vector<Tensor>& group, GradNormMode mode = GradNormMode::MeanOfNorms);

struct GradCheckOptions {
    double h = 1e-5;
    double tol = 1e-5;
    // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    double denom_floor = 1e-3;
};

struct ParamCheck {
    std::string name;
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    bool flagged = false;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    double max_rel_error = 0.0;
    bool passed() const;
};

/// Compares tape gradients of `closure` against central differences.
/// The closure must be deterministic: freeze any noise before calling.
/// A parameter is flagged unless its max relative error is strictly below tol.
GradCheckReport finite_diff_check(const std::function<Tensor()>& closure,
                                  const std::vector<NamedTensor>& params,
                                  const GradCheckOptions& options = {});

}  // namespace mmtrain
