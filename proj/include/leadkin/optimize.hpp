#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace leadkin::optimize {

struct NelderMeadOptions {
    int max_evaluations = 4000;
    double f_tol = 1e-10;  // spread of simplex values
    double x_tol = 1e-8;   // simplex diameter
    double initial_step = 0.5;
};

struct Minimum {
    std::vector<double> x;
    double f = std::numeric_limits<double>::infinity();
    int evaluations = 0;
    bool converged = false;
};

/// Adaptive Nelder-Mead (Gao and Han coefficients). Non-finite objective values
/// are treated as +infinity so the simplex retreats from invalid regions.
inline Minimum nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                           std::vector<double> x0, const NelderMeadOptions& opt = {}) {
    const std::size_t n = x0.size();
    const double dn = static_cast<double>(n);
    const double alpha = 1.0;
    const double beta = 1.0 + 2.0 / dn;
    const double gamma = 0.75 - 1.0 / (2.0 * dn);
    const double delta = 1.0 - 1.0 / dn;

    Minimum out;
    const auto eval = [&](const std::vector<double>& x) {
        ++out.evaluations;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<std::vector<double>> s(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) {
        const double h = x0[i] != 0.0 ? opt.initial_step * std::max(1.0, std::abs(x0[i])) : opt.initial_step;
        s[i + 1][i] += h;
    }
    std::vector<double> fv(n + 1);
    for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(s[i]);

    std::vector<std::size_t> idx(n + 1);
    std::vector<double> c(n), xr(n), xe(n), xc(n);
    while (out.evaluations < opt.max_evaluations) {
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        const std::size_t best = idx.front(), worst = idx.back(), second = idx[n - 1];

        double diam = 0.0;
        for (std::size_t i = 0; i <= n; ++i)
            for (std::size_t k = 0; k < n; ++k) diam = std::max(diam, std::abs(s[i][k] - s[best][k]));
        if (std::isfinite(fv[best]) && std::abs(fv[worst] - fv[best]) <= opt.f_tol * (1.0 + std::abs(fv[best])) &&
            diam <= opt.x_tol * (1.0 + std::sqrt(std::inner_product(s[best].begin(), s[best].end(), s[best].begin(), 0.0)))) {
            out.converged = true;
            break;
        }

        std::fill(c.begin(), c.end(), 0.0);
        for (std::size_t i = 0; i <= n; ++i)
            if (i != worst)
                for (std::size_t k = 0; k < n; ++k) c[k] += s[i][k] / dn;

        for (std::size_t k = 0; k < n; ++k) xr[k] = c[k] + alpha * (c[k] - s[worst][k]);
        const double fr = eval(xr);
        if (fr < fv[best]) {
            for (std::size_t k = 0; k < n; ++k) xe[k] = c[k] + beta * (xr[k] - c[k]);
            const double fe = eval(xe);
            if (fe < fr) {
                s[worst] = xe;
                fv[worst] = fe;
            } else {
                s[worst] = xr;
                fv[worst] = fr;
            }
            continue;
        }
        if (fr < fv[second]) {
            s[worst] = xr;
            fv[worst] = fr;
            continue;
        }
        const bool outside = fr < fv[worst];
        for (std::size_t k = 0; k < n; ++k)
            xc[k] = outside ? c[k] + gamma * (xr[k] - c[k]) : c[k] - gamma * (c[k] - s[worst][k]);
        const double fc = eval(xc);
        if (fc < (outside ? fr : fv[worst])) {
            s[worst] = xc;
            fv[worst] = fc;
            continue;
        }
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == best) continue;
            for (std::size_t k = 0; k < n; ++k) s[i][k] = s[best][k] + delta * (s[i][k] - s[best][k]);
            fv[i] = eval(s[i]);
        }
    }
    const auto it = std::min_element(fv.begin(), fv.end());
    out.x = s[static_cast<std::size_t>(it - fv.begin())];
    out.f = *it;
    return out;
}

} // namespace leadkin::optimize
