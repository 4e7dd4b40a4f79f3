#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ttwin {

struct WelchResult {
    double t = 0;
    double df = 0;
    double p_value = 1;
    bool degenerate = false;  // zero variance in both samples
};

// Two-sided Welch's t-test with Welch-Satterthwaite degrees of freedom.
// Both-zero-variance samples: equal means give t=0, p=1; unequal means give
// p=0 (flagged degenerate in either case).
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

// CDF of Student's t distribution via the regularized incomplete beta
// function (continued-fraction evaluation, ~1e-10 accuracy).
double student_t_cdf(double t, double df);

// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

struct BootstrapCI {
    double lo = 0;
    double hi = 0;
};

// Percentile bootstrap of the mean: `iters` resamples with replacement,
// interval from linearly interpolated percentiles. Deterministic in `seed`.
BootstrapCI bootstrap_mean_ci(std::span<const double> values, double level, int iters,
                              uint64_t seed);

double mean(std::span<const double> v);
double sample_variance(std::span<const double> v);  // unbiased, n-1 denominator

}  // namespace ttwin
