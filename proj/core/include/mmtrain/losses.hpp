#pragma once

#include <string>
#include <string_view>

#include "mmtrain/tensor.hpp"

namespace mmtrain {

enum class TaskLossKind { L1, Squared };
enum class ReconReduction { Mean, Sum };

std::string to_string(TaskLossKind kind);
TaskLossKind task_loss_kind_from_string(std::string_view s);
std::string to_string(ReconReduction r);
ReconReduction recon_reduction_from_string(std::string_view s);

struct LossWeights {
    double lambda_recon = 1.0;
    double lambda_uni = 0.5;
    double lambda_div = 0.1;
    double lambda_stat = 0.1;

    void validate() const;
};

/// Scalar loss terms, still attached to the tape when computed under one.
struct LossTerms {
    Tensor task;
    Tensor recon;
    Tensor uni;
    Tensor div;
    Tensor stat;
};

/// Plain values of every term and the weighted objective.
struct LossBreakdown {
    double task = 0.0;
    double recon = 0.0;
    double uni = 0.0;
    double div = 0.0;
    double stat = 0.0;
    double total = 0.0;
};

inline constexpr double kVarianceEps = 1e-6;

/// Mean absolute error (L1) or mean squared error between prediction and label.
Tensor task_loss(const Tensor& y_hat, const Tensor& y, TaskLossKind kind = TaskLossKind::L1);

/// 1/2 (reduce((A - A_hat)^2) + reduce((V - V_hat)^2)); reduce is the
/// per-element mean by default, the raw sum with ReconReduction::Sum.
Tensor recon_loss(const Tensor& a, const Tensor& a_hat, const Tensor& v, const Tensor& v_hat,
                  ReconReduction reduction = ReconReduction::Mean);

/// Mean of the three unimodal task losses.
Tensor uni_loss(const Tensor& y_uni_t, const Tensor& y_uni_a, const Tensor& y_uni_v, const Tensor& y,
                TaskLossKind kind = TaskLossKind::L1);

/// Negative Gaussian entropy of the encoder variances, averaged per modality
/// and then across the two modalities. Minimizing it raises the entropy.
Tensor div_loss(const Tensor& var_a, const Tensor& var_v);

/// Moment matching between encoder outputs and raw inputs. For every (b, l):
/// empirical mean / population variance over the input feature axis versus the
/// mean over the latent axis of mu and var. Each of the four squared-error
/// terms is averaged over B*L and the four are averaged.
Tensor stat_loss(const Tensor& a, const Tensor& v, const Tensor& mu_a, const Tensor& var_a,
                 const Tensor& mu_v, const Tensor& var_v);

/// task + sum of lambda * term. A term whose weight is exactly zero is left out
/// of the graph entirely.
Tensor total_loss(const LossTerms& terms, const LossWeights& w);

LossBreakdown breakdown(const LossTerms& terms, const Tensor& total);

}  // namespace mmtrain
