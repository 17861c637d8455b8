#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace odflow {

// Small dense row-major matrix. The problems here are tiny (at most a
// handful of parameters, a few dozen destinations), so no linear-algebra
// dependency is warranted.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    bool square() const { return rows == cols; }
};

// Inverse of a symmetric positive-definite matrix via Cholesky.
// Returns nullopt when a pivot is non-positive or negligible relative to
// the largest diagonal entry (rank deficiency).
std::optional<Mat> cholesky_inverse(const Mat& m);

double dot(const std::vector<double>& x, const std::vector<double>& y);
double inf_norm(const std::vector<double>& x);

std::vector<double> linspace(double lo, double hi, std::size_t count);

} // namespace odflow
