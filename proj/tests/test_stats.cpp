#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "ttwin/rng.hpp"
#include "ttwin/stats.hpp"

using namespace ttwin;

TEST_CASE("mean and sample variance") {
    std::vector<double> v = {1, 2, 3, 4, 5};
    CHECK(mean(v) == doctest::Approx(3.0));
    CHECK(sample_variance(v) == doctest::Approx(2.5));
    CHECK_THROWS(mean(std::vector<double>{}));
    CHECK_THROWS(sample_variance(std::vector<double>{1.0}));
}

TEST_CASE("student t cdf matches high-precision reference to 1e-8") {
    // reference values computed with a 30-digit arbitrary-precision
    // incomplete-beta evaluation, frozen here
    struct Ref {
        double t;
        double df;
        double cdf;
    };
    const Ref refs[] = {
        {0.0, 1, 0.5},
        {1.0, 1, 0.75},
        {-1.0, 1, 0.25},
        {2.5, 1, 0.8788810584091566},
        {1.0, 2, 0.78867513459481288},
        {-2.0, 3, 0.069662984279421588},
        {0.5, 4, 0.67833501840906836},
        {1.0, 5, 0.81839126617543869},
        {-1.5, 7, 0.088649243494985017},
        {2.0, 8, 0.95974188102136866},
        {-1.0, 8, 0.17329675354366712},
        {0.25, 10, 0.59617589713169299},
        {3.0, 12, 0.99446665215698315},
        {-2.5, 15, 0.012252901623256923},
        {1.96, 30, 0.97032884355197476},
        {-0.75, 45, 0.2285790913514407},
        {2.576, 60, 0.99376241101933094},
        {1.645, 100, 0.94844511741247681},
        {-3.29, 200, 0.00059199930106916331},
        {0.674, 1000, 0.74976646208978516},
    };
    for (const Ref& r : refs) {
        CAPTURE(r.t);
        CAPTURE(r.df);
        CHECK(std::fabs(student_t_cdf(r.t, r.df) - r.cdf) < 1e-8);
    }
}

TEST_CASE("t cdf basic shape") {
    CHECK(student_t_cdf(0.0, 7) == doctest::Approx(0.5));
    CHECK(student_t_cdf(1e6, 3) == doctest::Approx(1.0));
    CHECK(student_t_cdf(-1e6, 3) == doctest::Approx(0.0));
    // symmetry
    for (double t : {0.3, 1.7, 4.2})
        CHECK(student_t_cdf(t, 11) + student_t_cdf(-t, 11) == doctest::Approx(1.0));
    CHECK_THROWS(student_t_cdf(1.0, 0.0));
}

TEST_CASE("welch on the fixed reference pair") {
    std::vector<double> a = {1, 2, 3, 4, 5};
    std::vector<double> b = {2, 3, 4, 5, 6};
    WelchResult r = welch_t_test(a, b);
    CHECK(r.t == doctest::Approx(-1.0));
    CHECK(r.df == doctest::Approx(8.0));
    CHECK(r.p_value == doctest::Approx(0.3466).epsilon(1e-3));
    CHECK_FALSE(r.degenerate);

    WelchResult rs = welch_t_test(b, a);
    CHECK(rs.t == doctest::Approx(1.0));
    CHECK(rs.p_value == doctest::Approx(r.p_value));
}

TEST_CASE("welch identical samples") {
    std::vector<double> a = {1, 2, 3, 7};
    WelchResult r = welch_t_test(a, a);
    CHECK(r.t == doctest::Approx(0.0));
    CHECK(r.p_value == doctest::Approx(1.0));
}

TEST_CASE("welch degenerate zero-variance samples") {
    std::vector<double> a = {2, 2, 2};
    std::vector<double> b = {2, 2, 2, 2};
    WelchResult same = welch_t_test(a, b);
    CHECK(same.degenerate);
    CHECK(same.t == doctest::Approx(0.0));
    CHECK(same.p_value == doctest::Approx(1.0));

    std::vector<double> c = {3, 3, 3};
    WelchResult diff = welch_t_test(a, c);
    CHECK(diff.degenerate);
    CHECK(diff.p_value == doctest::Approx(0.0));
}

TEST_CASE("welch shift invariance of p") {
    Rng rng(11);
    std::vector<double> a, b;
    for (int i = 0; i < 20; ++i) a.push_back(rng.normal(0, 1));
    for (int i = 0; i < 25; ++i) b.push_back(rng.normal(0.4, 1.5));
    WelchResult r1 = welch_t_test(a, b);
    for (double& x : a) x += 13.25;
    for (double& x : b) x += 13.25;
    WelchResult r2 = welch_t_test(a, b);
    CHECK(r1.t == doctest::Approx(r2.t).epsilon(1e-9));
    CHECK(r1.p_value == doctest::Approx(r2.p_value).epsilon(1e-9));
}

TEST_CASE("bootstrap degenerate cases give point intervals") {
    std::vector<double> same = {4.5, 4.5, 4.5, 4.5};
    BootstrapCI ci = bootstrap_mean_ci(same, 0.95, 1000, 1);
    CHECK(ci.lo == doctest::Approx(4.5));
    CHECK(ci.hi == doctest::Approx(4.5));

    std::vector<double> one = {7.25};
    ci = bootstrap_mean_ci(one, 0.95, 1000, 1);
    CHECK(ci.lo == doctest::Approx(7.25));
    CHECK(ci.hi == doctest::Approx(7.25));
}

TEST_CASE("bootstrap interval bounds and width against normal approximation") {
    Rng rng(99);
    std::vector<double> v;
    for (int i = 0; i < 500; ++i) v.push_back(rng.bernoulli(0.4) ? 1.0 : 0.0);
    double m = mean(v);
    BootstrapCI ci = bootstrap_mean_ci(v, 0.95, 1000, 7);
    CHECK(ci.lo <= m);
    CHECK(ci.hi >= m);
    CHECK(ci.lo >= *std::min_element(v.begin(), v.end()));
    CHECK(ci.hi <= *std::max_element(v.begin(), v.end()));
    double normal_width = 2 * 1.96 * std::sqrt(m * (1 - m) / v.size());
    double width = ci.hi - ci.lo;
    CHECK(width > normal_width * 0.6);
    CHECK(width < normal_width * 1.4);
}

TEST_CASE("bootstrap deterministic in seed") {
    std::vector<double> v = {1, 5, 2, 8, 3, 9, 4};
    BootstrapCI a = bootstrap_mean_ci(v, 0.95, 1000, 42);
    BootstrapCI b = bootstrap_mean_ci(v, 0.95, 1000, 42);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
}

TEST_CASE("incomplete beta endpoints and symmetry") {
    CHECK(incomplete_beta(2, 3, 0.0) == 0.0);
    CHECK(incomplete_beta(2, 3, 1.0) == 1.0);
    // I_x(a,b) = 1 - I_{1-x}(b,a)
    for (double x : {0.1, 0.37, 0.5, 0.81})
        CHECK(incomplete_beta(2.5, 4.0, x) ==
              doctest::Approx(1.0 - incomplete_beta(4.0, 2.5, 1.0 - x)).epsilon(1e-12));
    // I_x(1,1) = x
    CHECK(incomplete_beta(1, 1, 0.3) == doctest::Approx(0.3));
}
