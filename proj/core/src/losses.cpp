#include "mmtrain/losses.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mmtrain/ops.hpp"

namespace mmtrain {

std::string to_string(TaskLossKind kind) { return kind == TaskLossKind::L1 ? "l1" : "squared"; }

TaskLossKind task_loss_kind_from_string(std::string_view s) {
    if (s == "l1") return TaskLossKind::L1;
    if (s == "squared") return TaskLossKind::Squared;
    throw std::invalid_argument("unknown task loss '" + std::string(s) + "'");
}

std::string to_string(ReconReduction r) { return r == ReconReduction::Mean ? "mean" : "sum"; }

ReconReduction recon_reduction_from_string(std::string_view s) {
    if (s == "mean") return ReconReduction::Mean;
    if (s == "sum") return ReconReduction::Sum;
    throw std::invalid_argument("unknown recon reduction '" + std::string(s) + "'");
}

void LossWeights::validate() const {
    for (double w : {lambda_recon, lambda_uni, lambda_div, lambda_stat}) {
        if (!std::isfinite(w) || w < 0.0) {
            throw std::invalid_argument("loss weights must be finite and non-negative");
        }
    }
}

Tensor task_loss(const Tensor& y_hat, const Tensor& y, TaskLossKind kind) {
    if (y.numel() == 0) throw ContractError("task_loss: empty batch");
    if (y_hat.shape() != y.shape()) {
        throw ShapeError("task_loss: predictions " + shape_str(y_hat.shape()) + " vs labels " +
                         shape_str(y.shape()));
    }
    const Tensor residual = ops::sub(y_hat, y);
    return ops::mean_all(kind == TaskLossKind::L1 ? ops::abs(residual) : ops::square(residual));
}

Tensor recon_loss(const Tensor& a, const Tensor& a_hat, const Tensor& v, const Tensor& v_hat,
                  ReconReduction reduction) {
    auto term = [reduction](const Tensor& x, const Tensor& x_hat, const char* name) {
        if (x.shape() != x_hat.shape()) {
            throw ShapeError(std::string("recon_loss: ") + name + " " + shape_str(x.shape()) +
                             " vs reconstruction " + shape_str(x_hat.shape()));
        }
        const Tensor sq = ops::square(ops::sub(x, x_hat));
        return reduction == ReconReduction::Mean ? ops::mean_all(sq) : ops::sum_all(sq);
    };
    return ops::scale(ops::add(term(a, a_hat, "audio"), term(v, v_hat, "visual")), 0.5);
}

Tensor uni_loss(const Tensor& y_uni_t, const Tensor& y_uni_a, const Tensor& y_uni_v, const Tensor& y,
                TaskLossKind kind) {
    const Tensor sum = ops::add(ops::add(task_loss(y_uni_t, y, kind), task_loss(y_uni_a, y, kind)),
                                task_loss(y_uni_v, y, kind));
    return ops::scale(sum, 1.0 / 3.0);
}

Tensor div_loss(const Tensor& var_a, const Tensor& var_v) {
    const double two_pi_e = 2.0 * std::numbers::pi * std::numbers::e;
    auto entropy = [two_pi_e](const Tensor& var) {
        return ops::scale(ops::mean_all(ops::log(ops::scale(ops::add_scalar(var, kVarianceEps), two_pi_e))), 0.5);
    };
    return ops::scale(ops::add(entropy(var_a), entropy(var_v)), -0.5);
}

Tensor stat_loss(const Tensor& a, const Tensor& v, const Tensor& mu_a, const Tensor& var_a,
                 const Tensor& mu_v, const Tensor& var_v) {
    if (a.rank() == 0 || a.shape().back() == 0 || v.rank() == 0 || v.shape().back() == 0) {
        throw ContractError("stat_loss: input feature dimension must be >= 1");
    }
    auto modality = [](const Tensor& x, const Tensor& mu, const Tensor& var) {
        const Tensor emp_mean = ops::mean(x, -1);
        const Tensor emp_var = ops::variance(x, -1);
        const Tensor pred_mean = ops::mean(mu, -1);
        const Tensor pred_var = ops::mean(var, -1);
        if (emp_mean.shape() != pred_mean.shape()) {
            throw ShapeError("stat_loss: input positions " + shape_str(emp_mean.shape()) +
                             " vs encoder positions " + shape_str(pred_mean.shape()));
        }
        return ops::add(ops::mse(pred_mean, emp_mean), ops::mse(pred_var, emp_var));
    };
    return ops::scale(ops::add(modality(a, mu_a, var_a), modality(v, mu_v, var_v)), 0.25);
}

Tensor total_loss(const LossTerms& terms, const LossWeights& w) {
    Tensor total = terms.task;
    auto accumulate = [&total](const Tensor& term, double weight) {
        if (weight != 0.0) total = ops::add(total, ops::scale(term, weight));
    };
    accumulate(terms.recon, w.lambda_recon);
    accumulate(terms.uni, w.lambda_uni);
    accumulate(terms.div, w.lambda_div);
    accumulate(terms.stat, w.lambda_stat);
    return total;
}

LossBreakdown breakdown(const LossTerms& terms, const Tensor& total) {
    return {terms.task.item(), terms.recon.item(), terms.uni.item(),
            terms.div.item(),  terms.stat.item(),  total.item()};
}

}  // namespace mmtrain
