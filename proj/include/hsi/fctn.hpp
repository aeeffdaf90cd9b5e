#pragma once

#include <cstddef>
#include <vector>

#include "hsi/tensor.hpp"

namespace hsi {

/// Symmetric matrix of pairwise ranks R_{j,k} with a zero diagonal.
class RankMatrix {
public:
    RankMatrix() = default;
    explicit RankMatrix(std::size_t n);
    /// Every off-diagonal entry set to r.
    static RankMatrix uniform(std::size_t n, std::size_t r);
    /// Row-major n x n entries; validated for symmetry and zero diagonal.
    static RankMatrix from_entries(std::size_t n, const std::vector<std::size_t>& entries);

    [[nodiscard]] std::size_t size() const noexcept { return n_; }
    [[nodiscard]] std::size_t operator()(std::size_t j, std::size_t k) const { return r_.at(j * n_ + k); }
    /// Sets both (j,k) and (k,j).
    void set(std::size_t j, std::size_t k, std::size_t r);

    /// Throws unless every off-diagonal entry is >= 1.
    void require_decomposable() const;
    [[nodiscard]] const std::vector<std::size_t>& entries() const noexcept { return r_; }

    friend bool operator==(const RankMatrix&, const RankMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::vector<std::size_t> r_;
};

/// Shape of factor G_k for data shape `data` and ranks `ranks`:
/// (R_{0,k}, ..., R_{k-1,k}, I_k, R_{k,k+1}, ..., R_{k,N-1}).
[[nodiscard]] Shape factor_shape(const Shape& data, const RankMatrix& ranks, std::size_t k);

/// Product of the ranks attached to factor k.
[[nodiscard]] std::size_t rank_product(const RankMatrix& ranks, std::size_t k);

/// Fully-connected tensor-network factors {G_k}.
struct FactorSet {
    RankMatrix ranks;
    std::vector<DenseTensor> factors;

    /// Data shape (I_0, ..., I_{N-1}) read off the factors.
    [[nodiscard]] Shape data_shape() const;
    /// Throws std::invalid_argument on any layout or shared-rank inconsistency.
    void validate() const;
    [[nodiscard]] std::size_t parameter_count() const noexcept;
};

/// X(i_0..i_{N-1}) = sum over all pair indices of prod_k G_k(r_k, i_k), computed
/// by contracting the factors one after another in mode order.
[[nodiscard]] DenseTensor fctn_reconstruct(const FactorSet& f);

/// Gradient of <dX, fctn_reconstruct(f)> with respect to factor k, i.e. dX
/// contracted with every other factor. Shape equals the shape of G_k.
[[nodiscard]] DenseTensor fctn_factor_gradient(const FactorSet& f, std::size_t k, const DenseTensor& dX);

}  // namespace hsi
