#include "mmtrain/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace mmtrain {

double grad_norm(const std::vector<Tensor>& group, GradNormMode mode) {
    if (group.empty()) throw ContractError("grad_norm: empty parameter group");
    double total_sq = 0.0;
    double sum_norms = 0.0;
    for (const auto& t : group) {
        if (!t.has_grad()) {
            throw ContractError("grad_norm: tensor of shape " + shape_str(t.shape()) +
                                " has no gradient; run backward first");
        }
        double sq = 0.0;
        for (double g : t.grad()) sq += g * g;
        total_sq += sq;
        sum_norms += std::sqrt(sq);
    }
    if (mode == GradNormMode::NormOfAll) return std::sqrt(total_sq);
    return sum_norms / static_cast<double>(group.size());
}

bool GradCheckReport::passed() const {
    return std::none_of(params.begin(), params.end(), [](const ParamCheck& p) { return p.flagged; });
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& closure,
                                  const std::vector<NamedTensor>& params,
                                  const GradCheckOptions& options) {
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            loss = closure();
        }
        for (const auto& p : params) {
            Tensor t = p.tensor;
            t.zero_grad();
        }
        if (!tape.empty()) tape.backward(loss);
        for (const auto& p : params) {
            analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
        }
    }

    auto evaluate = [&closure]() {
        NoGradScope no_grad;
        return closure().item();
    };

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor t = params[pi].tensor;
        auto values = t.data();
        ParamCheck check{params[pi].name};
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double saved = values[k];
            values[k] = saved + options.h;
            const double plus = evaluate();
            values[k] = saved - options.h;
            const double minus = evaluate();
            values[k] = saved;
            const double numeric = (plus - minus) / (2.0 * options.h);
            const double a = analytic[pi][k];
            const double abs_err = std::abs(a - numeric);
            const double denom = std::max({std::abs(a), std::abs(numeric), options.denom_floor});
            check.max_abs_error = std::max(check.max_abs_error, abs_err);
            check.max_rel_error = std::max(check.max_rel_error, abs_err / denom);
        }
        check.flagged = !(check.max_rel_error < options.tol);
        report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
        report.params.push_back(std::move(check));
    }
    return report;
}

}  // namespace mmtrain
