#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "gfref/errors.hpp"

namespace gfref::detail {

// Monotone (shape-preserving) cubic interpolant, Fritsch–Carlson limiter.
// Outside [x_front, x_back] it extends linearly with the boundary slope.
class PchipSpline {
public:
    PchipSpline() = default;

    PchipSpline(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
        const std::size_t n = x_.size();
        if (n < 2 || n != y_.size()) throw validation_error("PchipSpline: need >= 2 matching points");
        for (std::size_t i = 1; i < n; ++i)
            if (!(x_[i] > x_[i - 1])) throw validation_error("PchipSpline: abscissae must increase");

        std::vector<double> h(n - 1), s(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            h[i] = x_[i + 1] - x_[i];
            s[i] = (y_[i + 1] - y_[i]) / h[i];
        }
        d_.assign(n, 0.0);
        d_[0] = s[0];
        d_[n - 1] = s[n - 2];
        for (std::size_t i = 1; i + 1 < n; ++i) {
            if (s[i - 1] * s[i] <= 0.0) {
                d_[i] = 0.0;  // local extremum: flat tangent
            } else {
                const double w1 = 2.0 * h[i] + h[i - 1];
                const double w2 = h[i] + 2.0 * h[i - 1];
                d_[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
            }
        }
        h_ = std::move(h);
        s_ = std::move(s);
    }

    double operator()(double x) const {
        const std::size_t n = x_.size();
        if (x <= x_.front()) return y_.front() + d_.front() * (x - x_.front());
        if (x >= x_.back()) return y_.back() + d_.back() * (x - x_.back());
        std::size_t lo = 0, hi = n - 1;
        while (hi - lo > 1) {
            const std::size_t mid = (lo + hi) / 2;
            (x_[mid] <= x ? lo : hi) = mid;
        }
        const double t = x - x_[lo];
        const double c2 = (3.0 * s_[lo] - 2.0 * d_[lo] - d_[lo + 1]) / h_[lo];
        const double c3 = (d_[lo] + d_[lo + 1] - 2.0 * s_[lo]) / (h_[lo] * h_[lo]);
        return y_[lo] + t * (d_[lo] + t * (c2 + t * c3));
    }

    double x_front() const { return x_.front(); }
    double x_back() const { return x_.back(); }
    bool empty() const { return x_.empty(); }

private:
    std::vector<double> x_, y_, h_, s_, d_;
};

}  // namespace gfref::detail
