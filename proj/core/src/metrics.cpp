#include "mmtrain/metrics.hpp"

#include <cmath>
#include <string>

namespace mmtrain {

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b, const char* what) {
    if (a.size() != b.size()) {
        throw MetricError(std::string(what) + ": length mismatch " + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()));
    }
    if (a.empty()) throw MetricError(std::string(what) + ": empty input");
}

double f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
    const double denom = static_cast<double>(2 * tp + fp + fn);
    return denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
}

}  // namespace

double mean_absolute_error(std::span<const double> y_hat, std::span<const double> y) {
    check_lengths(y_hat, y, "mae");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += std::abs(y_hat[i] - y[i]);
    return acc / static_cast<double>(y.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
    check_lengths(x, y, "pearson");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw MetricError("pearson: correlation undefined for a constant vector");
    }
    return sxy / std::sqrt(sxx * syy);
}

MetricReport compute_metrics(std::span<const double> y_hat, std::span<const double> y,
                             Acc2Convention convention) {
    check_lengths(y_hat, y, "compute_metrics");
    MetricReport r;
    r.mae = mean_absolute_error(y_hat, y);
    r.corr = pearson(y_hat, y);

    // Confusion counts with "positive" as class 1.
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        bool truth = false;
        bool pred = false;
        if (convention == Acc2Convention::ExcludeZero) {
            if (y[i] == 0.0) continue;
            truth = y[i] > 0.0;
            pred = y_hat[i] > 0.0;
        } else {
            truth = y[i] >= 0.0;
            pred = y_hat[i] >= 0.0;
        }
        if (truth && pred) ++tp;
        else if (!truth && !pred) ++tn;
        else if (pred) ++fp;
        else ++fn;
    }
    r.n_eval = tp + tn + fp + fn;
    if (r.n_eval == 0) throw MetricError("compute_metrics: all labels are zero; Acc-2/F1 undefined");

    const double n = static_cast<double>(r.n_eval);
    r.acc2 = static_cast<double>(tp + tn) / n;
    const double support_pos = static_cast<double>(tp + fn);
    const double support_neg = static_cast<double>(tn + fp);
    r.f1 = (support_pos * f1_score(tp, fp, fn) + support_neg * f1_score(tn, fn, fp)) / n;
    return r;
}

}  // namespace mmtrain
