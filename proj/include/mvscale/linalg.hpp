#pragma once

#include <span>
#include <vector>

#include "mvscale/common.hpp"

namespace mvscale::linalg {

// Dense row-major matrix, sized for the small state dimensions used here.
struct Matrix {
    int rows = 0;
    int cols = 0;
    Vec data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

// out = A (r x c) * v (c)
void matvec(std::span<const double> a, int r, int c, std::span<const double> v,
            std::span<double> out);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// Pairwise (tree) summation: deterministic fixed order and better rounding
// behavior than a running sum.
double pairwise_sum(std::span<const double> v);

// Pairwise sum over a strided view: element i lives at base[i*stride + offset].
double pairwise_sum_strided(const double* base, size_t count, size_t stride, size_t offset);

// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
// Returns eigenvalues ascending; eigvecs columns are the eigenvectors.
void symmetric_eigen(const Matrix& a, Vec& eigvals, Matrix& eigvecs);

struct PsdSqrtResult {
    Matrix root;          // symmetric PSD square root
    double min_eigenvalue = 0.0;
    bool clipped = false; // some eigenvalue below zero was clipped
};

// Symmetric PSD square root via eigendecomposition. Eigenvalues in
// [-warn_floor, 0) are clipped silently to 0, eigenvalues in
// [-error_floor, -warn_floor) clipped with the `clipped` flag set, and
// anything below -error_floor raises EstimationError. Floors are relative
// to the trace.
PsdSqrtResult psd_sqrt(const Matrix& a, double warn_rel = 1e-8, double error_rel = 1e-6);

}  // namespace mvscale::linalg
