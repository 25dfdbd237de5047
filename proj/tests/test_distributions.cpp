#include <catch_amalgamated.hpp>

#include <random>

#include "leadkin/distributions.hpp"

using namespace leadkin;
using Catch::Approx;

namespace {
FittedDist make(Family f, std::vector<double> p) {
    FittedDist d;
    d.family = f;
    d.params = std::move(p);
    return d;
}
} // namespace

TEST_CASE("nelder_mead minimizes the Rosenbrock function", "[optimize]") {
    const auto rosen = [](const std::vector<double>& x) {
        return 100.0 * std::pow(x[1] - x[0] * x[0], 2) + std::pow(1.0 - x[0], 2);
    };
    const auto m = optimize::nelder_mead(rosen, {-1.2, 1.0}, {.max_evaluations = 10000, .f_tol = 1e-14, .x_tol = 1e-10});
    CHECK(m.x[0] == Approx(1.0).margin(1e-4));
    CHECK(m.x[1] == Approx(1.0).margin(1e-4));
}

TEST_CASE("family densities and CDFs match reference values", "[distributions]") {
    // Reference values computed with scipy.stats (skewnorm, exponnorm K = 1/(sigma*lambda), gamma, gengamma).
    const auto sn = make(Family::SkewNormal, {1.0, 2.0, 3.0});
    CHECK(sn.logpdf(2.5) == Approx(-1.212488339296122).epsilon(1e-10));
    CHECK(sn.cdf(2.5) == Approx(0.5475253217547736).epsilon(1e-10));

    const auto en = make(Family::ExpNormal, {1.0, 0.5, 0.8});
    CHECK(en.logpdf(2.0) == Approx(-0.9995015356181934).epsilon(1e-10));
    CHECK(en.cdf(2.0) == Approx(0.5171712909516175).epsilon(1e-10));
    CHECK(en.logpdf(-5.0) == Approx(-75.66617969947842).epsilon(1e-8));
    CHECK(en.cdf(-1.0) == Approx(2.629934550179693e-06).epsilon(1e-6));

    const auto ga = make(Family::Gamma, {2.5, 1.5});
    CHECK(ga.logpdf(3.0) == Approx(-1.6504272077411657).epsilon(1e-10));
    CHECK(ga.cdf(3.0) == Approx(0.4505840486472198).epsilon(1e-10));

    const auto gg = make(Family::GenGamma, {1.7, 2.2, 3.0});
    CHECK(gg.logpdf(2.0) == Approx(-1.7351473655494678).epsilon(1e-10));
    CHECK(gg.cdf(2.0) == Approx(0.11036856975247682).epsilon(1e-10));
}

TEST_CASE("quantile inverts cdf for every family, with and without reflection", "[distributions]") {
    std::vector<FittedDist> ds{
        make(Family::Normal, {0.3, 1.7}),         make(Family::SkewNormal, {1.0, 2.0, -4.0}),
        make(Family::ExpNormal, {1.0, 0.5, 0.8}), make(Family::Gamma, {0.7, 2.0}),
        make(Family::GenGamma, {1.7, 2.2, 3.0}),  make(Family::Exponential, {2.0}),
    };
    for (auto d : ds) {
        for (bool reflect : {false, true}) {
            d.reflect = reflect;
            d.shift = reflect ? 1.5 : 0.0;
            double prev = -1.0;
            for (double p : {0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
                const double x = d.quantile(p);
                CHECK(d.cdf(x) == Approx(p).margin(1e-8));
                if (prev > -1.0) CHECK(x != prev);
                prev = x;
            }
            // Monotone CDF on a grid.
            double last = -1.0;
            for (int i = -100; i <= 100; ++i) {
                const double c = d.cdf(i * 0.1);
                CHECK(c >= last - 1e-15);
                last = c;
            }
        }
    }
}

TEST_CASE("fit_univariate selects Normal on normal data", "[distributions]") {
    std::mt19937_64 rng(101);
    std::normal_distribution<double> n01;
    std::vector<double> x(10000), w(10000, 1.0);
    for (auto& v : x) v = n01(rng);
    const auto d = fit_univariate(x, w);
    CHECK(d.family == Family::Normal);
    CHECK(d.params[0] == Approx(0.0).margin(0.05));
    CHECK(d.params[1] == Approx(1.0).margin(0.05));
    CHECK(d.aic == Approx(2.0 * d.k() - 2.0 * d.loglik));
}

TEST_CASE("fit_univariate on exponential data is close to the exact exponential fit", "[distributions]") {
    std::mt19937_64 rng(7);
    std::exponential_distribution<double> ex(2.0);
    std::vector<double> x(3000), w(3000, 1.0);
    for (auto& v : x) v = ex(rng);
    // Analytic MLE: rate = 1/mean.
    double s = 0;
    for (double v : x) s += v;
    const double rate = x.size() / s;
    const double ll = x.size() * std::log(rate) - rate * s;
    const double aic_exp = 2.0 - 2.0 * ll;
    const auto d = fit_univariate(x, w);
    CHECK((d.family == Family::Gamma || d.family == Family::ExpNormal));
    CHECK(d.aic <= aic_exp + 2.0);
}

TEST_CASE("fit_univariate errors and weight-scale invariance", "[distributions]") {
    std::vector<double> c(20, 3.0), w(20, 1.0);
    try {
        (void)fit_univariate(c, w);
        FAIL("expected AllFitsFailed");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::AllFitsFailed);
    }
    CHECK_THROWS_AS(fit_univariate(std::vector<double>{1, 2, 3}, std::vector<double>{1, 1, 1}), Error);

    std::mt19937_64 rng(9);
    std::gamma_distribution<double> g(2.0, 1.0);
    std::uniform_real_distribution<double> u(0.5, 2.0);
    std::vector<double> x(400), wt(400), wt10(400);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = g(rng) - 1.0;  // signed data forces the affine path for Gamma
        wt[i] = u(rng);
        wt10[i] = 10.0 * wt[i];
    }
    const auto a = fit_univariate(x, wt);
    const auto b = fit_univariate(x, wt10);
    CHECK(a.family == b.family);
    CHECK(a.aic == Approx(b.aic).epsilon(1e-9));
}

TEST_CASE("positive families on signed data use reflect and shift", "[distributions]") {
    std::mt19937_64 rng(13);
    std::gamma_distribution<double> g(1.5, 1.0);
    std::vector<double> x(2000), w(2000, 1.0);
    for (auto& v : x) v = -g(rng);  // all negative, left-skewed
    const auto d = fit_univariate(x, w, {Family::Gamma});
    CHECK(d.reflect);
    CHECK(d.shift == 0.0);
    CHECK(d.params[0] == Approx(1.5).margin(0.15));
    CHECK(d.quantile(0.5) < 0.0);
}

TEST_CASE("detect_point_mass", "[distributions]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.1, 5.0);
    std::vector<double> x, w;
    for (int i = 0; i < 100; ++i) {
        x.push_back(i < 40 ? 0.0 : u(rng));
        w.push_back(1.0);
    }
    auto pm = detect_point_mass(x, w);
    REQUIRE(pm);
    CHECK(pm->mass_value == 0.0);
    CHECK(pm->mass_probability == Approx(0.40));

    std::vector<double> jitter;
    for (int i = 0; i < 100; ++i) jitter.push_back(u(rng));
    CHECK_FALSE(detect_point_mass(jitter, w));

    // 30% at 0 and 12% at 5: the larger share wins.
    for (int i = 0; i < 100; ++i) x[i] = i < 30 ? 0.0 : (i < 42 ? 5.0 : u(rng));
    pm = detect_point_mass(x, w);
    REQUIRE(pm);
    CHECK(pm->mass_value == 0.0);
    CHECK(pm->mass_probability == Approx(0.30));

    // Exactly at the threshold counts.
    for (int i = 0; i < 100; ++i) x[i] = i < 10 ? 2.0 : u(rng);
    pm = detect_point_mass(x, w, 0.10);
    REQUIRE(pm);
    CHECK(pm->mass_value == 2.0);
}

TEST_CASE("fit_hurdle recovers mass share and continuous scale", "[distributions]") {
    std::mt19937_64 rng(21);
    std::exponential_distribution<double> ex(1.0);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> x(20000), w(20000, 1.0);
    for (auto& v : x) v = coin(rng) ? 0.0 : ex(rng);
    const auto pm = detect_point_mass(x, w);
    REQUIRE(pm);
    const auto h = fit_hurdle(x, w, *pm);
    CHECK(h.mass.mass_probability == Approx(0.5).margin(0.02));
    REQUIRE(h.continuous);
    // Mean of the continuous part equals 1/rate for every admissible family.
    double m = 0;
    const int k = 20000;
    for (int i = 0; i < k; ++i) m += h.continuous->quantile((i + 0.5) / k);
    CHECK(m / k == Approx(1.0).margin(0.05));

    std::vector<double> all(10, 0.0), w10(10, 1.0);
    const auto h1 = fit_hurdle(all, w10, PointMassSpec{0, 0.0, 1.0});
    CHECK(h1.mass.mass_probability == 1.0);
    CHECK_FALSE(h1.continuous);
    CHECK(h1.sample(0.99, 0.5) == 0.0);

    // Too few non-mass values falls back to an exponential.
    std::vector<double> few{0, 0, 0, 0, 0, 0, 0, 1.0, 3.0};
    std::vector<double> wf(few.size(), 1.0);
    const auto h2 = fit_hurdle(few, wf, PointMassSpec{0, 0.0, 7.0 / 9.0});
    REQUIRE(h2.continuous);
    CHECK(h2.continuous->family == Family::Exponential);
    CHECK(h2.continuous->params[0] == Approx(0.5));
}

TEST_CASE("quantile_normalize", "[distributions]") {
    const auto n = make(Family::Normal, {0.0, 1.0});
    for (double x : {-2.0, -0.5, 0.0, 1.3}) CHECK(quantile_normalize(x, n) == Approx(x).margin(1e-9));
    CHECK(quantile_normalize(100.0, n) == Approx(dist_detail::ndtri(1.0 - 1e-10)));

    const auto g = make(Family::Gamma, {2.0, 1.5});
    CHECK(quantile_normalize(g.quantile(0.5), g) == Approx(0.0).margin(1e-9));
    for (double x : {0.5, 1.0, 3.0, 6.0}) CHECK(quantile_denormalize(quantile_normalize(x, g), g) == Approx(x).epsilon(1e-6));

    // Normalized fitted sample is close to standard normal.
    std::mt19937_64 rng(5);
    std::gamma_distribution<double> gd(2.0, 1.5);
    std::vector<double> x(2000), w(2000, 1.0);
    for (auto& v : x) v = gd(rng);
    const auto d = fit_univariate(x, w);
    const auto z = quantile_normalize(x, d);
    CHECK(stats::weighted_mean(z, w) == Approx(0.0).margin(0.1));
    CHECK(std::sqrt(stats::weighted_variance_freq(z, w)) == Approx(1.0).margin(0.1));
}
