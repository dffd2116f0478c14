#pragma once

#include <cmath>
#include <functional>
#include <utility>

namespace gfref::detail {

struct ScalarMax {
    double x;
    double value;
    int evaluations;
    bool at_lower;  // coarse-scan argmax was pinned to an end of the range
    bool at_upper;
};

// Coarse grid scan followed by golden-section refinement between the scan
// neighbours of the best point.  f is evaluated on [lo, hi] directly; callers
// wanting a log axis pass transformed bounds and wrap f.
inline ScalarMax golden_max(const std::function<double(double)>& f, double lo, double hi,
                            double tol, int scan_points = 41, int max_iter = 200) {
    ScalarMax out{lo, -HUGE_VAL, 0, false, false};
    int best = 0;
    const int m = scan_points < 3 ? 3 : scan_points;
    for (int i = 0; i < m; ++i) {
        const double x = lo + (hi - lo) * i / (m - 1);
        const double v = f(x);
        ++out.evaluations;
        if (v > out.value) {
            out.value = v;
            out.x = x;
            best = i;
        }
    }
    out.at_lower = best == 0;
    out.at_upper = best == m - 1;
    double a = lo + (hi - lo) * (best == 0 ? 0 : best - 1) / (m - 1);
    double b = lo + (hi - lo) * (best == m - 1 ? m - 1 : best + 1) / (m - 1);

    constexpr double invphi = 0.6180339887498949;
    double x1 = b - invphi * (b - a), x2 = a + invphi * (b - a);
    double f1 = f(x1), f2 = f(x2);
    out.evaluations += 2;
    for (int it = 0; it < max_iter && (b - a) > tol; ++it) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + invphi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - invphi * (b - a);
            f1 = f(x1);
        }
        ++out.evaluations;
    }
    const double xm = 0.5 * (a + b);
    const double fm = f(xm);
    ++out.evaluations;
    if (fm > out.value) {
        out.value = fm;
        out.x = xm;
    }
    return out;
}

// Bisection for f(x) = 0 on [a, b] with f(a), f(b) of opposite sign.
inline double bisect_root(const std::function<double(double)>& f, double a, double b, double fa,
                          double fb, int max_iter = 60) {
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    for (int it = 0; it < max_iter; ++it) {
        const double mid = 0.5 * (a + b);
        const double fm = f(mid);
        if (fm == 0.0) return mid;
        if ((fa < 0.0) == (fm < 0.0)) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
            fb = fm;
        }
    }
    return 0.5 * (a + b);
}

}  // namespace gfref::detail
