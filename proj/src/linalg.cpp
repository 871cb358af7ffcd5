#include "mvscale/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace mvscale::linalg {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void matvec(std::span<const double> a, int r, int c, std::span<const double> v,
            std::span<double> out) {
    for (int i = 0; i < r; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += a[static_cast<size_t>(i) * c + j] * v[j];
        out[i] = s;
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols == b.rows, "matmul: inner dimensions differ");
    Matrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            for (int j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
        }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (int i = 0; i < a.rows; ++i)
        for (int j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

namespace {

double pairwise_sum_range(const double* v, size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const size_t half = n / 2;
    return pairwise_sum_range(v, half) + pairwise_sum_range(v + half, n - half);
}

double pairwise_sum_strided_range(const double* base, size_t n, size_t stride, size_t offset) {
    if (n <= 8) {
        double s = 0.0;
        for (size_t i = 0; i < n; ++i) s += base[i * stride + offset];
        return s;
    }
    const size_t half = n / 2;
    return pairwise_sum_strided_range(base, half, stride, offset) +
           pairwise_sum_strided_range(base + half * stride, n - half, stride, offset);
}

}  // namespace

double pairwise_sum(std::span<const double> v) { return pairwise_sum_range(v.data(), v.size()); }

double pairwise_sum_strided(const double* base, size_t count, size_t stride, size_t offset) {
    return pairwise_sum_strided_range(base, count, stride, offset);
}

void symmetric_eigen(const Matrix& a, Vec& eigvals, Matrix& eigvecs) {
    require(a.rows == a.cols, "symmetric_eigen: matrix not square");
    const int n = a.rows;
    Matrix m = a;
    eigvecs = Matrix::identity(n);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += m(i, j) * m(i, j);
        if (off < 1e-30) break;

        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                if (std::fabs(m(p, q)) < 1e-300) continue;
                const double theta = (m(q, q) - m(p, p)) / (2.0 * m(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double mkp = m(k, p), mkq = m(k, q);
                    m(k, p) = c * mkp - s * mkq;
                    m(k, q) = s * mkp + c * mkq;
                }
                for (int k = 0; k < n; ++k) {
                    const double mpk = m(p, k), mqk = m(q, k);
                    m(p, k) = c * mpk - s * mqk;
                    m(q, k) = s * mpk + c * mqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = eigvecs(k, p), vkq = eigvecs(k, q);
                    eigvecs(k, p) = c * vkp - s * vkq;
                    eigvecs(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[i] = m(i, i);

    // sort ascending, carrying eigenvector columns along
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return eigvals[i] < eigvals[j]; });
    Vec sorted_vals(n);
    Matrix sorted_vecs(n, n);
    for (int j = 0; j < n; ++j) {
        sorted_vals[j] = eigvals[order[j]];
        for (int i = 0; i < n; ++i) sorted_vecs(i, j) = eigvecs(i, order[j]);
    }
    eigvals = std::move(sorted_vals);
    eigvecs = std::move(sorted_vecs);
}

PsdSqrtResult psd_sqrt(const Matrix& a, double warn_rel, double error_rel) {
    require(a.rows == a.cols, "psd_sqrt: matrix not square");
    const int n = a.rows;

    Matrix sym(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sym(i, j) = 0.5 * (a(i, j) + a(j, i));

    double trace = 0.0;
    for (int i = 0; i < n; ++i) trace += sym(i, i);
    const double scale = std::max(std::fabs(trace), 1e-300);

    Vec vals;
    Matrix vecs;
    symmetric_eigen(sym, vals, vecs);

    PsdSqrtResult res;
    res.min_eigenvalue = vals.front();
    if (vals.front() < -error_rel * scale)
        throw EstimationError("psd_sqrt: eigenvalue " + std::to_string(vals.front()) +
                              " below -" + std::to_string(error_rel) + "*trace; inconsistent estimate");
    res.clipped = vals.front() < -warn_rel * scale;

    Matrix root(n, n);
    for (int k = 0; k < n; ++k) {
        const double lam = std::sqrt(std::max(vals[k], 0.0));
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) root(i, j) += lam * vecs(i, k) * vecs(j, k);
    }
    res.root = std::move(root);
    return res;
}

}  // namespace mvscale::linalg
