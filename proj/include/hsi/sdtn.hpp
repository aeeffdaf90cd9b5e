#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hsi/fctn.hpp"
#include "hsi/tensor.hpp"

namespace hsi::sdtn {

enum class LineSearch {
    /// Fixed step lr0 * decay^floor(iter / decay_every).
    Schedule,
    /// Start from the scheduled step (or twice the last accepted step, if
    /// smaller) and halve until the loss decreases. Accepted steps are monotone.
    Backtracking,
};

/// Loss weights and optimizer settings shared by SDTN and TRN.
struct Hyperparams {
    double alpha = 0.1;     ///< gradient-domain low-rank penalty weight
    double beta = 1.0;      ///< classification loss weight
    double gamma = 0.01;    ///< tensor consistency weight (TRN only)
    double lambda1 = 1e-4;  ///< ||U_k||^2 weight
    double lambda2 = 1e-4;  ///< ||V_k||^2 weight
    double lambda3 = 1e-4;  ///< ||G_k||^2 weight
    double lr0 = 1e-3;
    double decay = 0.9;
    std::size_t decay_every = 10000;
    std::size_t max_iters = 1000;
    double tol = 1e-9;
    std::uint64_t seed = 0;
    LineSearch line_search = LineSearch::Schedule;

    /// Throws std::invalid_argument naming the first bad field.
    void validate() const;
};

/// lr0 * decay^floor(iter / decay_every).
[[nodiscard]] double learning_rate(const Hyperparams& hp, std::size_t iter);

/// Low-rank factorization U V of the forward-differenced mode-k unfolding of G_k.
struct GradLowRankPair {
    std::size_t mode = 0;
    std::size_t rank = 1;
    Matrix U;  ///< (I_k - 1) x rank
    Matrix V;  ///< rank x (product of ranks attached to G_k)
};

/// Classifier used by the supervised term: global average pool of the
/// reconstruction over every mode but the last, then affine + softmax.
struct SpectralHead {
    Matrix weight;  ///< classes x bands
    Vector bias;    ///< classes

    [[nodiscard]] std::size_t classes() const noexcept { return static_cast<std::size_t>(weight.rows()); }
};

/// One labeled patch for the supervised term. Labels are 1-based class ids.
struct Supervision {
    const SpectralHead* head = nullptr;
    int label = 1;
};

struct SdtnState {
    FactorSet factors;
    std::vector<GradLowRankPair> glr;
    std::size_t iter = 0;
    std::vector<double> loss_history;
};

struct LossTerms {
    double reconstruction = 0.0;  ///< 1/2 ||X - Xhat||^2
    double low_rank = 0.0;        ///< alpha/2 sum ||D G^(k) - U V||^2
    double regularization = 0.0;  ///< sum l1||U||^2 + l2||V||^2 + l3||G||^2
    double classification = 0.0;  ///< beta * cross-entropy

    [[nodiscard]] double total() const noexcept { return reconstruction + low_rank + regularization + classification; }
};

struct SdtnGrad {
    std::vector<DenseTensor> factors;
    std::vector<Matrix> U;
    std::vector<Matrix> V;
    Matrix head_weight;  ///< empty without supervision
    Vector head_bias;
};

/// Throws unless 1 <= r_k <= min(I_k - 1, product of ranks attached to k).
void validate_glr_ranks(const Shape& shape, const RankMatrix& ranks, std::span<const std::size_t> glr_ranks);

[[nodiscard]] SdtnState init_state(const Shape& shape, const RankMatrix& ranks,
                                   std::span<const std::size_t> glr_ranks, std::uint64_t seed);

[[nodiscard]] LossTerms sdtn_loss_terms(const SdtnState& state, const DenseTensor& x,
                                        const std::optional<Supervision>& sup, const Hyperparams& hp);
[[nodiscard]] double sdtn_loss(const SdtnState& state, const DenseTensor& x, const std::optional<Supervision>& sup,
                               const Hyperparams& hp);

/// Mean over rows of -log(max(p[label-1], 1e-12)). Rows must sum to 1 within 1e-8.
[[nodiscard]] double classification_loss(const Matrix& probs, std::span<const int> labels);

/// Softmax probabilities of the spectral head applied to a feature tensor.
[[nodiscard]] Vector head_probabilities(const SpectralHead& head, const DenseTensor& features);

[[nodiscard]] SdtnGrad sdtn_grad(const SdtnState& state, const DenseTensor& x, const std::optional<Supervision>& sup,
                                 const Hyperparams& hp);

/// Gradient of the classification term with respect to the reconstruction.
/// Also accumulates the head gradients into `grad` when non-null.
[[nodiscard]] DenseTensor head_feature_gradient(const SpectralHead& head, const DenseTensor& features, int label,
                                                double weight, SdtnGrad* grad);

/// Gradient descent on the factors and U/V pairs, continuing from `state`.
/// The supervised head, if any, is held fixed. Throws DivergenceError.
void refine(SdtnState& state, const DenseTensor& x, const Hyperparams& hp,
            const std::optional<Supervision>& sup = std::nullopt);

[[nodiscard]] SdtnState fit(const DenseTensor& x, const RankMatrix& ranks, std::span<const std::size_t> glr_ranks,
                            const Hyperparams& hp, const std::optional<Supervision>& sup = std::nullopt);

/// ||X - fctn_reconstruct(factors)||_F / ||X||_F.
[[nodiscard]] double relative_error(const SdtnState& state, const DenseTensor& x);

[[nodiscard]] DenseTensor extract_features(const SdtnState& state);

/// Energy-threshold rank policy.
struct RankPolicy {
    double eps_trunc = 1e-4;
    double eps_grow = 5e-2;
    std::size_t rank_max = 8;
};

struct Adaptation {
    RankMatrix ranks;
    std::vector<std::size_t> glr_ranks;
    SdtnState state;
    bool changed = false;
};

/// Truncates weak bonds, or grows every bond by one when the fit is too poor.
/// The returned state is warm-started from the old factors.
[[nodiscard]] Adaptation adapt_ranks(const SdtnState& state, const DenseTensor& x, const RankPolicy& policy,
                                     std::uint64_t seed);

struct AdaptiveFit {
    SdtnState state;
    std::vector<RankMatrix> rank_path;
    std::vector<double> error_path;
};

/// Alternates fit/refine and adapt_ranks until the ranks settle or
/// `max_rounds` adaptations have happened.
[[nodiscard]] AdaptiveFit fit_adaptive(const DenseTensor& x, const RankMatrix& ranks,
                                       std::span<const std::size_t> glr_ranks, const Hyperparams& hp,
                                       const RankPolicy& policy, std::size_t max_rounds);

/// Every mode gets the same glr rank, clamped to its admissible maximum.
[[nodiscard]] std::vector<std::size_t> clamp_glr_ranks(const Shape& shape, const RankMatrix& ranks,
                                                       std::size_t wanted);

}  // namespace hsi::sdtn
