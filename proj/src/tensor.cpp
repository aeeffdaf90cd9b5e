#include "hsi/tensor.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hsi {

namespace {

std::size_t checked_count(const std::vector<std::size_t>& dims) {
    if (dims.empty()) throw std::invalid_argument("shape must have at least one mode");
    std::size_t count = 1;
    for (std::size_t d : dims) {
        if (d == 0) throw std::invalid_argument("shape extents must be >= 1");
        if (count > std::numeric_limits<std::size_t>::max() / d)
            throw std::overflow_error("shape element count overflows");
        count *= d;
    }
    return count;
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)), count_(checked_count(dims_)) {}

std::vector<std::size_t> Shape::strides() const {
    std::vector<std::size_t> s(dims_.size(), 1);
    for (std::size_t k = dims_.size(); k-- > 1;) s[k - 1] = s[k] * dims_[k];
    return s;
}

DenseTensor::DenseTensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_.count(), fill) {}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.count())
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape count " + std::to_string(shape_.count()));
}

std::size_t DenseTensor::offset(std::span<const std::size_t> index) const {
    if (index.size() != order()) throw std::invalid_argument("index order does not match tensor order");
    std::size_t off = 0;
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= shape_[k]) throw std::out_of_range("tensor index out of range");
        off = off * shape_[k] + index[k];
    }
    return off;
}

double& DenseTensor::at(std::initializer_list<std::size_t> index) {
    return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

double DenseTensor::at(std::initializer_list<std::size_t> index) const {
    return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

DenseTensor DenseTensor::reshaped(Shape shape) const {
    if (shape.count() != size()) throw std::invalid_argument("reshape changes element count");
    return DenseTensor(std::move(shape), data_);
}

DenseTensor& DenseTensor::operator+=(const DenseTensor& other) {
    if (other.shape_ != shape_) throw std::invalid_argument("tensor shape mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

DenseTensor& DenseTensor::operator-=(const DenseTensor& other) {
    if (other.shape_ != shape_) throw std::invalid_argument("tensor shape mismatch in -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

DenseTensor& DenseTensor::operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
}

DenseTensor operator+(DenseTensor a, const DenseTensor& b) { return a += b; }
DenseTensor operator-(DenseTensor a, const DenseTensor& b) { return a -= b; }
DenseTensor operator*(double s, DenseTensor a) { return a *= s; }

// The tensor is viewed as (pre, I_k, post); the remaining-mode column index is
// then pre_index * post + post_index.
Matrix unfold(const DenseTensor& t, std::size_t k) {
    if (k >= t.order()) throw std::out_of_range("unfold: mode " + std::to_string(k) + " out of range");
    const auto& dims = t.shape().dims();
    std::size_t pre = 1, post = 1;
    for (std::size_t j = 0; j < k; ++j) pre *= dims[j];
    for (std::size_t j = k + 1; j < dims.size(); ++j) post *= dims[j];
    const std::size_t n = dims[k];
    Matrix m(n, pre * post);
    const auto src = t.data();
    for (std::size_t a = 0; a < pre; ++a)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t b = 0; b < post; ++b) m(i, a * post + b) = src[(a * n + i) * post + b];
    return m;
}

DenseTensor fold(const Matrix& m, std::size_t k, const Shape& shape) {
    if (k >= shape.order()) throw std::out_of_range("fold: mode " + std::to_string(k) + " out of range");
    const auto& dims = shape.dims();
    std::size_t pre = 1, post = 1;
    for (std::size_t j = 0; j < k; ++j) pre *= dims[j];
    for (std::size_t j = k + 1; j < dims.size(); ++j) post *= dims[j];
    const std::size_t n = dims[k];
    if (static_cast<std::size_t>(m.rows()) != n || static_cast<std::size_t>(m.cols()) != pre * post)
        throw std::invalid_argument("fold: matrix is " + std::to_string(m.rows()) + "x" +
                                    std::to_string(m.cols()) + ", expected " + std::to_string(n) + "x" +
                                    std::to_string(pre * post));
    DenseTensor t(shape);
    auto dst = t.data();
    for (std::size_t a = 0; a < pre; ++a)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t b = 0; b < post; ++b) dst[(a * n + i) * post + b] = m(i, a * post + b);
    return t;
}

DenseTensor permute(const DenseTensor& t, std::span<const std::size_t> perm) {
    const std::size_t n = t.order();
    if (perm.size() != n) throw std::invalid_argument("permute: permutation length mismatch");
    std::vector<bool> seen(n, false);
    bool identity = true;
    for (std::size_t d = 0; d < n; ++d) {
        if (perm[d] >= n || seen[perm[d]]) throw std::invalid_argument("permute: not a permutation");
        seen[perm[d]] = true;
        identity = identity && perm[d] == d;
    }
    if (identity) return t;

    std::vector<std::size_t> out_dims(n);
    const auto in_strides = t.shape().strides();
    std::vector<std::size_t> gather(n);
    for (std::size_t d = 0; d < n; ++d) {
        out_dims[d] = t.dim(perm[d]);
        gather[d] = in_strides[perm[d]];
    }
    DenseTensor out{Shape(out_dims)};
    auto dst = out.data();
    const auto src = t.data();
    std::vector<std::size_t> idx(n, 0);
    std::size_t src_off = 0;
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] = src[src_off];
        for (std::size_t d = n; d-- > 0;) {
            if (++idx[d] < out_dims[d]) {
                src_off += gather[d];
                break;
            }
            src_off -= gather[d] * (out_dims[d] - 1);
            idx[d] = 0;
        }
    }
    return out;
}

Matrix diff_operator(std::size_t n) {
    if (n < 2) throw std::invalid_argument("diff_operator requires n >= 2, got " + std::to_string(n));
    Matrix d = Matrix::Zero(n - 1, n);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        d(i, i) = -1.0;
        d(i, i + 1) = 1.0;
    }
    return d;
}

double squared_norm(std::span<const double> v) noexcept {
    double s = 0.0;
    for (double x : v) s += x * x;
    return s;
}

double frobenius_norm(const DenseTensor& t) noexcept { return std::sqrt(squared_norm(t.data())); }

bool all_finite(std::span<const double> v) noexcept {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

Matrix as_matrix(const DenseTensor& t, std::size_t rows, std::size_t cols) {
    if (rows * cols != t.size()) throw std::invalid_argument("as_matrix: element count mismatch");
    Matrix m(rows, cols);
    std::copy(t.data().begin(), t.data().end(), m.data());
    return m;
}

DenseTensor from_matrix(const Matrix& m, Shape shape) {
    if (shape.count() != static_cast<std::size_t>(m.size()))
        throw std::invalid_argument("from_matrix: element count mismatch");
    return DenseTensor(std::move(shape), std::vector<double>(m.data(), m.data() + m.size()));
}

}  // namespace hsi
