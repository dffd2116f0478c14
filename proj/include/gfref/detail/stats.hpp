#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gfref/errors.hpp"

namespace gfref::detail {

// Linear-interpolation percentile (the "type 7" convention): q in [0, 1].
inline double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw validation_error("percentile: empty sample");
    if (!(q >= 0.0 && q <= 1.0)) throw validation_error("percentile: q outside [0,1]");
    std::sort(v.begin(), v.end());
    const double h = q * (static_cast<double>(v.size()) - 1.0);
    const auto i = static_cast<std::size_t>(h);
    if (i + 1 >= v.size()) return v.back();
    const double frac = h - static_cast<double>(i);
    return v[i] + frac * (v[i + 1] - v[i]);
}

inline double logsumexp(const std::vector<double>& x) {
    if (x.empty()) throw validation_error("logsumexp: empty input");
    const double m = *std::max_element(x.begin(), x.end());
    if (!std::isfinite(m)) return m;  // all -inf (or a nan/inf dominates)
    double s = 0.0;
    for (double xi : x) s += std::exp(xi - m);
    return m + std::log(s);
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) throw validation_error("mean: empty sample");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
    if (v.size() < 2) throw validation_error("sample_variance: need at least 2 points");
    const double mu = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return s / (static_cast<double>(v.size()) - 1.0);
}

inline double sample_sd(const std::vector<double>& v) { return std::sqrt(sample_variance(v)); }

}  // namespace gfref::detail
