#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsi/data.hpp"

namespace hsi::eval {

/// Rows are true classes, columns predicted classes; ids are 1-based outside.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes);

    [[nodiscard]] std::size_t classes() const noexcept { return n_; }
    [[nodiscard]] std::uint64_t at(std::size_t truth, std::size_t pred) const { return m_.at(truth * n_ + pred); }
    void add(int truth, int pred, std::uint64_t count = 1);
    /// Sums another matrix of the same size in (for sharded accumulation).
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);

    [[nodiscard]] std::uint64_t total() const;
    [[nodiscard]] std::uint64_t trace() const;
    [[nodiscard]] std::uint64_t row_sum(std::size_t i) const;
    [[nodiscard]] std::uint64_t col_sum(std::size_t j) const;

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t n_;
    std::vector<std::uint64_t> m_;
};

/// Tallies (pred, truth) pairs. Throws std::invalid_argument on length mismatch
/// or an id outside [1, classes].
[[nodiscard]] ConfusionMatrix accumulate(std::span<const int> preds, std::span<const int> truths, std::size_t classes);

/// trace / total. Throws std::domain_error on an empty matrix.
[[nodiscard]] double oa(const ConfusionMatrix& cm);
/// m[i][i] / row_i per class. Throws std::domain_error when a row is empty.
[[nodiscard]] std::vector<double> per_class(const ConfusionMatrix& cm);
/// Mean of per_class, summed in class order.
[[nodiscard]] double aa(const ConfusionMatrix& cm);
/// (p_o - p_e) / (1 - p_e), evaluated as the exact integer ratio
/// (N*trace - S) / (N^2 - S) with S = sum row_i*col_i and rounded once.
/// Throws std::domain_error when empty or when p_e = 1.
[[nodiscard]] double kappa(const ConfusionMatrix& cm);

/// Percent value rounded half away from zero to two decimals (table display).
[[nodiscard]] double percent2(double fraction);

using Rgb = std::array<std::uint8_t, 3>;

/// Index 0 (unlabeled) is black, then nine class colours.
[[nodiscard]] const std::vector<Rgb>& default_palette();

/// Binary P6 pixmap of a label image. Throws std::invalid_argument when a
/// label has no palette entry.
[[nodiscard]] std::vector<unsigned char> render_map(const data::LabelImage& labels,
                                                    const std::vector<Rgb>& palette = default_palette());

/// Confusion matrix of `pred` against `truth` at the given pixels.
[[nodiscard]] ConfusionMatrix confusion_at(const data::LabelImage& pred, const data::LabelImage& truth,
                                           std::span<const data::Pixel> pixels, std::size_t classes);

}  // namespace hsi::eval
