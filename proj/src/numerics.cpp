#include "odflow/numerics.hpp"

#include <cassert>
#include <cmath>

namespace odflow {

namespace {

// Lower-triangular Cholesky factor; nullopt when not positive definite.
std::optional<Mat> cholesky_factor(const Mat& m) {
    assert(m.square());
    const std::size_t n = m.rows;
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(m(i, i)));
    if (!(max_diag > 0.0) || !std::isfinite(max_diag)) return std::nullopt;

    Mat l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = m(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(s > 1e-12 * max_diag) || !std::isfinite(s)) return std::nullopt;
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

} // namespace

std::optional<Mat> cholesky_inverse(const Mat& m) {
    auto lopt = cholesky_factor(m);
    if (!lopt) return std::nullopt;
    const Mat& l = *lopt;
    const std::size_t n = m.rows;

    // Solve L L^T X = I column by column.
    Mat inv(n, n);
    std::vector<double> y(n), x(n);
    for (std::size_t col = 0; col < n; ++col) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = (i == col) ? 1.0 : 0.0;
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
            y[i] = s / l(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
            x[ii] = s / l(ii, ii);
        }
        for (std::size_t i = 0; i < n; ++i) inv(i, col) = x[i];
    }
    return inv;
}

double dot(const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double inf_norm(const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v));
    return m;
}

std::vector<double> linspace(double lo, double hi, std::size_t count) {
    std::vector<double> out;
    out.reserve(count);
    if (count == 1) {
        out.push_back(lo);
        return out;
    }
    for (std::size_t i = 0; i < count; ++i)
        out.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    return out;
}

} // namespace odflow
