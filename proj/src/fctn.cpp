#include "hsi/fctn.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hsi {

RankMatrix::RankMatrix(std::size_t n) : n_(n), r_(n * n, 0) {}

RankMatrix RankMatrix::uniform(std::size_t n, std::size_t r) {
    RankMatrix m(n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < n; ++k)
            if (j != k) m.r_[j * n + k] = r;
    return m;
}

RankMatrix RankMatrix::from_entries(std::size_t n, const std::vector<std::size_t>& entries) {
    if (entries.size() != n * n) throw std::invalid_argument("rank matrix needs n*n entries");
    RankMatrix m(n);
    m.r_ = entries;
    for (std::size_t j = 0; j < n; ++j) {
        if (m(j, j) != 0) throw std::invalid_argument("rank matrix diagonal must be zero");
        for (std::size_t k = 0; k < j; ++k)
            if (m(j, k) != m(k, j)) throw std::invalid_argument("rank matrix must be symmetric");
    }
    return m;
}

void RankMatrix::set(std::size_t j, std::size_t k, std::size_t r) {
    if (j == k) throw std::invalid_argument("rank matrix diagonal is fixed at zero");
    r_.at(j * n_ + k) = r;
    r_.at(k * n_ + j) = r;
}

void RankMatrix::require_decomposable() const {
    for (std::size_t j = 0; j < n_; ++j)
        for (std::size_t k = 0; k < n_; ++k)
            if (j != k && (*this)(j, k) < 1)
                throw std::invalid_argument("rank R(" + std::to_string(j) + "," + std::to_string(k) +
                                            ") must be >= 1");
}

Shape factor_shape(const Shape& data, const RankMatrix& ranks, std::size_t k) {
    const std::size_t n = data.order();
    if (ranks.size() != n) throw std::invalid_argument("rank matrix order does not match data order");
    std::vector<std::size_t> dims(n);
    for (std::size_t m = 0; m < n; ++m) dims[m] = (m == k) ? data[k] : ranks(m, k);
    return Shape(std::move(dims));
}

std::size_t rank_product(const RankMatrix& ranks, std::size_t k) {
    std::size_t p = 1;
    for (std::size_t m = 0; m < ranks.size(); ++m)
        if (m != k) p *= ranks(m, k);
    return p;
}

Shape FactorSet::data_shape() const {
    std::vector<std::size_t> dims(factors.size());
    for (std::size_t k = 0; k < factors.size(); ++k) dims[k] = factors[k].dim(k);
    return Shape(std::move(dims));
}

void FactorSet::validate() const {
    const std::size_t n = factors.size();
    if (n == 0) throw std::invalid_argument("factor set is empty");
    if (ranks.size() != n) throw std::invalid_argument("rank matrix order does not match factor count");
    for (std::size_t k = 0; k < n; ++k) {
        if (factors[k].order() != n)
            throw std::invalid_argument("factor " + std::to_string(k) + " must have order " + std::to_string(n));
        for (std::size_t m = 0; m < n; ++m) {
            if (m == k) continue;
            if (factors[k].dim(m) != ranks(m, k))
                throw std::invalid_argument("factor " + std::to_string(k) + " extent " + std::to_string(m) +
                                            " is " + std::to_string(factors[k].dim(m)) + ", shared rank is " +
                                            std::to_string(ranks(m, k)));
        }
    }
}

std::size_t FactorSet::parameter_count() const noexcept {
    std::size_t c = 0;
    for (const auto& g : factors) c += g.size();
    return c;
}

namespace {

// A tensor whose axes carry integer labels. Data mode k has label k; the edge
// between modes j < k has label n + j * n + k.
struct Labeled {
    DenseTensor tensor;
    std::vector<std::size_t> labels;
};

std::size_t edge_label(std::size_t n, std::size_t j, std::size_t k) {
    if (j > k) std::swap(j, k);
    return n + j * n + k;
}

Labeled label_factor(const FactorSet& f, std::size_t k) {
    const std::size_t n = f.factors.size();
    Labeled l{f.factors[k], std::vector<std::size_t>(n)};
    for (std::size_t m = 0; m < n; ++m) l.labels[m] = (m == k) ? k : edge_label(n, m, k);
    return l;
}

// Sums over labels present in both operands; the result carries a's free
// labels followed by b's free labels.
Labeled contract(const Labeled& a, const Labeled& b) {
    std::vector<std::size_t> free_a, shared_a, shared_b, free_b;
    for (std::size_t i = 0; i < a.labels.size(); ++i) {
        auto it = std::find(b.labels.begin(), b.labels.end(), a.labels[i]);
        if (it == b.labels.end()) {
            free_a.push_back(i);
        } else {
            shared_a.push_back(i);
            shared_b.push_back(static_cast<std::size_t>(it - b.labels.begin()));
        }
    }
    for (std::size_t i = 0; i < b.labels.size(); ++i)
        if (std::find(shared_b.begin(), shared_b.end(), i) == shared_b.end()) free_b.push_back(i);

    std::size_t rows = 1, inner = 1, cols = 1;
    for (std::size_t i : free_a) rows *= a.tensor.dim(i);
    for (std::size_t s = 0; s < shared_a.size(); ++s) {
        if (a.tensor.dim(shared_a[s]) != b.tensor.dim(shared_b[s]))
            throw std::invalid_argument("inconsistent shared rank between factors");
        inner *= a.tensor.dim(shared_a[s]);
    }
    for (std::size_t i : free_b) cols *= b.tensor.dim(i);

    std::vector<std::size_t> perm_a = free_a;
    perm_a.insert(perm_a.end(), shared_a.begin(), shared_a.end());
    std::vector<std::size_t> perm_b = shared_b;
    perm_b.insert(perm_b.end(), free_b.begin(), free_b.end());
    const DenseTensor pa = permute(a.tensor, perm_a);
    const DenseTensor pb = permute(b.tensor, perm_b);

    using ConstMap = Eigen::Map<const Matrix>;
    ConstMap ma(pa.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(inner));
    ConstMap mb(pb.data().data(), static_cast<Eigen::Index>(inner), static_cast<Eigen::Index>(cols));

    Labeled out;
    std::vector<std::size_t> dims;
    for (std::size_t i : free_a) {
        dims.push_back(a.tensor.dim(i));
        out.labels.push_back(a.labels[i]);
    }
    for (std::size_t i : free_b) {
        dims.push_back(b.tensor.dim(i));
        out.labels.push_back(b.labels[i]);
    }
    if (dims.empty()) throw std::logic_error("full contraction to a scalar is not supported");
    out.tensor = DenseTensor(Shape(dims));
    Eigen::Map<Matrix> mc(out.tensor.data().data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
    mc.noalias() = ma * mb;
    return out;
}

DenseTensor arrange(const Labeled& l, const std::vector<std::size_t>& wanted) {
    std::vector<std::size_t> perm(wanted.size());
    for (std::size_t d = 0; d < wanted.size(); ++d) {
        auto it = std::find(l.labels.begin(), l.labels.end(), wanted[d]);
        if (it == l.labels.end()) throw std::logic_error("contraction lost a label");
        perm[d] = static_cast<std::size_t>(it - l.labels.begin());
    }
    return permute(l.tensor, perm);
}

}  // namespace

DenseTensor fctn_reconstruct(const FactorSet& f) {
    f.validate();
    const std::size_t n = f.factors.size();
    Labeled acc = label_factor(f, 0);
    for (std::size_t k = 1; k < n; ++k) acc = contract(acc, label_factor(f, k));
    std::vector<std::size_t> wanted(n);
    std::iota(wanted.begin(), wanted.end(), std::size_t{0});
    return arrange(acc, wanted);
}

DenseTensor fctn_factor_gradient(const FactorSet& f, std::size_t k, const DenseTensor& dX) {
    f.validate();
    const std::size_t n = f.factors.size();
    if (k >= n) throw std::out_of_range("factor index out of range");
    if (dX.shape() != f.data_shape()) throw std::invalid_argument("gradient seed shape does not match data shape");
    Labeled acc{dX, std::vector<std::size_t>(n)};
    std::iota(acc.labels.begin(), acc.labels.end(), std::size_t{0});
    for (std::size_t j = 0; j < n; ++j)
        if (j != k) acc = contract(acc, label_factor(f, j));
    return arrange(acc, label_factor(f, k).labels);
}

}  // namespace hsi
