#include "ttwin/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ttwin/rng.hpp"

namespace ttwin {

double mean(std::span<const double> v) {
    if (v.empty()) throw std::runtime_error("mean: empty sample");
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v) {
    if (v.size() < 2) throw std::runtime_error("sample_variance: need at least two values");
    double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

// Lentz's continued fraction for the regularized incomplete beta function.
static double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 500;
    constexpr double kEps = 1e-14;
    constexpr double kTiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw std::runtime_error("incomplete_beta: continued fraction did not converge");
}

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0) || !(b > 0)) throw std::runtime_error("incomplete_beta: a, b must be positive");
    if (x < 0.0 || x > 1.0) throw std::runtime_error("incomplete_beta: x out of [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
    if (!(df > 0)) throw std::runtime_error("student_t_cdf: df must be positive");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    double x = df / (df + t * t);
    double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
    return t >= 0 ? 1.0 - tail : tail;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2)
        throw std::runtime_error("welch_t_test: need at least two values per sample");
    double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    double ma = mean(a), mb = mean(b);
    double va = sample_variance(a), vb = sample_variance(b);
    WelchResult r;
    double se2 = va / na + vb / nb;
    if (se2 == 0.0) {
        r.degenerate = true;
        r.df = na + nb - 2.0;
        if (ma == mb) {
            r.t = 0.0;
            r.p_value = 1.0;
        } else {
            r.t = ma > mb ? std::numeric_limits<double>::infinity()
                          : -std::numeric_limits<double>::infinity();
            r.p_value = 0.0;
        }
        return r;
    }
    r.t = (ma - mb) / std::sqrt(se2);
    r.df = se2 * se2 /
           (va * va / (na * na * (na - 1.0)) + vb * vb / (nb * nb * (nb - 1.0)));
    r.p_value = 2.0 * (1.0 - student_t_cdf(std::fabs(r.t), r.df));
    if (r.p_value > 1.0) r.p_value = 1.0;
    return r;
}

// Linearly interpolated percentile of a sorted sample at fraction q in [0,1]
// (the usual "linear" method on ranks 0..n-1).
static double percentile_sorted(const std::vector<double>& s, double q) {
    size_t n = s.size();
    if (n == 1) return s[0];
    double pos = q * static_cast<double>(n - 1);
    size_t lo = static_cast<size_t>(pos);
    if (lo >= n - 1) return s[n - 1];
    double frac = pos - static_cast<double>(lo);
    return s[lo] + frac * (s[lo + 1] - s[lo]);
}

BootstrapCI bootstrap_mean_ci(std::span<const double> values, double level, int iters,
                              uint64_t seed) {
    if (values.empty()) throw std::runtime_error("bootstrap_mean_ci: empty sample");
    if (!(level > 0.0 && level < 1.0))
        throw std::runtime_error("bootstrap_mean_ci: level out of (0,1)");
    if (iters < 1) throw std::runtime_error("bootstrap_mean_ci: iters must be positive");
    Rng rng(seed);
    size_t n = values.size();
    std::vector<double> means(iters);
    for (int i = 0; i < iters; ++i) {
        double s = 0;
        for (size_t j = 0; j < n; ++j) s += values[rng.below(n)];
        means[i] = s / static_cast<double>(n);
    }
    std::sort(means.begin(), means.end());
    double alpha = (1.0 - level) / 2.0;
    return {percentile_sorted(means, alpha), percentile_sorted(means, 1.0 - alpha)};
}

}  // namespace ttwin
