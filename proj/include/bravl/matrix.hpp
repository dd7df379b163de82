#ifndef BRAVL_MATRIX_HPP
#define BRAVL_MATRIX_HPP

#include <cstddef>
#include <string>
#include <vector>

namespace bravl {

// Dense row-major double matrix. Row = one sample, column = one feature
// dimension; this matches the on-disk container layout.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> d);

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const;

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }
    static Matrix filled(std::size_t r, std::size_t c, double v);
    static Matrix identity(std::size_t n);
    static Matrix row_vector(std::vector<double> v);
    static Matrix column_vector(std::vector<double> v);
};

// C = A * B through Eigen's GEMM.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// picks rows [offset, offset+count) cyclically if wrap requested
Matrix take_rows(const Matrix& a, const std::vector<std::size_t>& idx);
Matrix take_cols(const Matrix& a, const std::vector<std::size_t>& idx);
Matrix vstack(const std::vector<const Matrix*>& parts);

// Pearson correlation of two equal-length sequences; returns fallback when
// either side has zero variance.
double pearson(const double* x, const double* y, std::size_t n, double fallback = 0.0);

double max_abs_diff(const Matrix& a, const Matrix& b);

} // namespace bravl

#endif
