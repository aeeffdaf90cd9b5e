#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace hsi {

/// Row-major dense matrix used for unfoldings and small linear maps.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Index extents of a dense tensor. Every extent is at least 1.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims);
    explicit Shape(std::vector<std::size_t> dims);

    [[nodiscard]] std::size_t order() const noexcept { return dims_.size(); }
    [[nodiscard]] std::size_t operator[](std::size_t k) const { return dims_.at(k); }
    [[nodiscard]] const std::vector<std::size_t>& dims() const noexcept { return dims_; }
    [[nodiscard]] std::size_t count() const noexcept { return count_; }

    /// Row-major strides (last index fastest).
    [[nodiscard]] std::vector<std::size_t> strides() const;

    friend bool operator==(const Shape&, const Shape&) = default;

private:
    std::vector<std::size_t> dims_;
    std::size_t count_ = 0;
};

/// N-dimensional array of 64-bit reals, row-major.
class DenseTensor {
public:
    DenseTensor() = default;
    explicit DenseTensor(Shape shape, double fill = 0.0);
    DenseTensor(Shape shape, std::vector<double> data);

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t order() const noexcept { return shape_.order(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t k) const { return shape_[k]; }

    [[nodiscard]] std::span<double> data() noexcept { return data_; }
    [[nodiscard]] std::span<const double> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(std::initializer_list<std::size_t> index);
    [[nodiscard]] double at(std::initializer_list<std::size_t> index) const;
    [[nodiscard]] std::size_t offset(std::span<const std::size_t> index) const;

    /// Same data viewed under another shape with an equal element count.
    [[nodiscard]] DenseTensor reshaped(Shape shape) const;

    DenseTensor& operator+=(const DenseTensor& other);
    DenseTensor& operator-=(const DenseTensor& other);
    DenseTensor& operator*=(double s) noexcept;

    friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

DenseTensor operator+(DenseTensor a, const DenseTensor& b);
DenseTensor operator-(DenseTensor a, const DenseTensor& b);
DenseTensor operator*(double s, DenseTensor a);

/// Mode-k unfolding (k is 0-based). Row i collects the entries with i_k = i;
/// columns enumerate the remaining modes in ascending mode order, last fastest.
[[nodiscard]] Matrix unfold(const DenseTensor& t, std::size_t k);

/// Inverse of unfold under the same column convention.
[[nodiscard]] DenseTensor fold(const Matrix& m, std::size_t k, const Shape& shape);

/// Axis permutation: output axis d is input axis perm[d].
[[nodiscard]] DenseTensor permute(const DenseTensor& t, std::span<const std::size_t> perm);

/// Forward-difference operator, (n-1) x n, no wrap-around.
[[nodiscard]] Matrix diff_operator(std::size_t n);

[[nodiscard]] double frobenius_norm(const DenseTensor& t) noexcept;
[[nodiscard]] double squared_norm(std::span<const double> v) noexcept;

[[nodiscard]] bool all_finite(std::span<const double> v) noexcept;

/// Flat copies between tensors and matrices of equal element count.
[[nodiscard]] Matrix as_matrix(const DenseTensor& t, std::size_t rows, std::size_t cols);
[[nodiscard]] DenseTensor from_matrix(const Matrix& m, Shape shape);

}  // namespace hsi
