#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>

namespace mmtrain {

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Binarization used for Acc-2 / F1.
enum class Acc2Convention {
    // negative vs positive, samples with an exactly-zero label dropped
    ExcludeZero,
    // negative vs non-negative over every sample
    NonNegative,
};

struct MetricReport {
    double acc2 = 0.0;
    double f1 = 0.0;  // support-weighted over the two classes
    double mae = 0.0;
    double corr = 0.0;
    std::size_t n_eval = 0;  // samples entering Acc-2 / F1
};

double mean_absolute_error(std::span<const double> y_hat, std::span<const double> y);
/// Throws MetricError when either vector is constant.
double pearson(std::span<const double> x, std::span<const double> y);

MetricReport compute_metrics(std::span<const double> y_hat, std::span<const double> y,
                             Acc2Convention convention = Acc2Convention::ExcludeZero);

}  // namespace mmtrain
