#include "bravl/matrix.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace bravl {

namespace {
using EigenRowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;
using MutMap = Eigen::Map<EigenRowMajor>;
} // namespace

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols) throw std::invalid_argument("Matrix: data size does not match shape");
}

bool Matrix::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix Matrix::filled(std::size_t r, std::size_t c, double v) {
    Matrix m(r, c);
    std::fill(m.data.begin(), m.data.end(), v);
    return m;
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

Matrix Matrix::row_vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Matrix(1, n, std::move(v));
}

Matrix Matrix::column_vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Matrix(n, 1, std::move(v));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Matrix c(a.rows, b.cols);
    if (a.rows == 0 || b.cols == 0 || a.cols == 0) return c;
    ConstMap ma(a.data.data(), static_cast<Eigen::Index>(a.rows), static_cast<Eigen::Index>(a.cols));
    ConstMap mb(b.data.data(), static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
    MutMap mc(c.data.data(), static_cast<Eigen::Index>(c.rows), static_cast<Eigen::Index>(c.cols));
    mc.noalias() = ma * mb;
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t c = 0; c < a.cols; ++c) t.at(c, r) = a.at(r, c);
    return t;
}

Matrix take_rows(const Matrix& a, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), a.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= a.rows) throw std::out_of_range("take_rows: index out of range");
        std::copy(a.row_ptr(idx[i]), a.row_ptr(idx[i]) + a.cols, out.row_ptr(i));
    }
    return out;
}

Matrix take_cols(const Matrix& a, const std::vector<std::size_t>& idx) {
    Matrix out(a.rows, idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j)
        if (idx[j] >= a.cols) throw std::out_of_range("take_cols: index out of range");
    for (std::size_t r = 0; r < a.rows; ++r)
        for (std::size_t j = 0; j < idx.size(); ++j) out.at(r, j) = a.at(r, idx[j]);
    return out;
}

Matrix vstack(const std::vector<const Matrix*>& parts) {
    if (parts.empty()) return Matrix();
    std::size_t total = 0;
    const std::size_t cols = parts.front()->cols;
    for (const Matrix* p : parts) {
        if (p->cols != cols) throw std::invalid_argument("vstack: column counts differ");
        total += p->rows;
    }
    Matrix out(total, cols);
    std::size_t r = 0;
    for (const Matrix* p : parts) {
        std::copy(p->data.begin(), p->data.end(), out.row_ptr(r));
        r += p->rows;
    }
    return out;
}

double pearson(const double* x, const double* y, std::size_t n, double fallback) {
    if (n < 2) return fallback;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return fallback;
    return sxy / std::sqrt(sxx * syy);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

} // namespace bravl
