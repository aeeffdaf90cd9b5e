#include "hsi/sdtn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "hsi/errors.hpp"

namespace hsi::sdtn {

namespace {

constexpr double kLogClamp = 1e-12;
constexpr std::size_t kStallWindow = 50;
constexpr int kMaxHalvings = 60;

std::size_t spectral_count(const DenseTensor& t) { return t.dim(t.order() - 1); }

Vector pool_spectra(const DenseTensor& features) {
    const std::size_t bands = spectral_count(features);
    const std::size_t pixels = features.size() / bands;
    Vector pooled = Vector::Zero(static_cast<Eigen::Index>(bands));
    const auto d = features.data();
    for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t b = 0; b < bands; ++b) pooled[static_cast<Eigen::Index>(b)] += d[p * bands + b];
    return pooled / static_cast<double>(pixels);
}

Vector softmax(const Vector& logits) {
    const double mx = logits.maxCoeff();
    Vector e = (logits.array() - mx).exp().matrix();
    return e / e.sum();
}

void check_supervision(const Supervision& sup, const DenseTensor& x) {
    if (sup.head == nullptr) throw std::invalid_argument("supervision without a classifier head");
    const auto& h = *sup.head;
    if (static_cast<std::size_t>(h.weight.cols()) != spectral_count(x) || h.bias.size() != h.weight.rows())
        throw std::invalid_argument("classifier head does not match band count");
    if (sup.label < 1 || static_cast<std::size_t>(sup.label) > h.classes())
        throw std::invalid_argument("label " + std::to_string(sup.label) + " out of range");
}

SdtnState stepped(const SdtnState& s, const SdtnGrad& g, double step) {
    SdtnState out = s;
    for (std::size_t k = 0; k < out.factors.factors.size(); ++k) {
        auto dst = out.factors.factors[k].data();
        const auto src = g.factors[k].data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= step * src[i];
        out.glr[k].U -= step * g.U[k];
        out.glr[k].V -= step * g.V[k];
    }
    return out;
}

bool stalled(const std::vector<double>& h, double tol) {
    if (h.size() <= kStallWindow) return false;
    const double then = h[h.size() - 1 - kStallWindow];
    const double now = h.back();
    if (now == 0.0) return true;
    return std::abs(then - now) <= tol * std::max(std::abs(then), std::numeric_limits<double>::min());
}

GradLowRankPair seed_pair(std::size_t k, std::size_t rows, std::size_t cols, std::size_t rank, std::mt19937_64& rng) {
    GradLowRankPair p;
    p.mode = k;
    p.rank = rank;
    p.U = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(rank));
    p.V.resize(static_cast<Eigen::Index>(rank), static_cast<Eigen::Index>(cols));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(rank)));
    for (Eigen::Index i = 0; i < p.V.size(); ++i) p.V.data()[i] = normal(rng);
    return p;
}

}  // namespace

void Hyperparams::validate() const {
    auto nonneg = [](double v, const char* name) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string(name) + " must be >= 0");
    };
    nonneg(alpha, "alpha");
    nonneg(beta, "beta");
    nonneg(gamma, "gamma");
    nonneg(lambda1, "lambda1");
    nonneg(lambda2, "lambda2");
    nonneg(lambda3, "lambda3");
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw std::invalid_argument("lr0 must be > 0");
    if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("decay must lie in (0, 1]");
    if (decay_every == 0) throw std::invalid_argument("decay_every must be positive");
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be > 0");
}

double learning_rate(const Hyperparams& hp, std::size_t iter) {
    return hp.lr0 * std::pow(hp.decay, static_cast<double>(iter / hp.decay_every));
}

void validate_glr_ranks(const Shape& shape, const RankMatrix& ranks, std::span<const std::size_t> glr_ranks) {
    const std::size_t n = shape.order();
    if (ranks.size() != n) throw std::invalid_argument("rank matrix order does not match data order");
    ranks.require_decomposable();
    if (glr_ranks.size() != n) throw std::invalid_argument("need one gradient-domain rank per mode");
    for (std::size_t k = 0; k < n; ++k) {
        if (shape[k] < 2) throw std::invalid_argument("mode " + std::to_string(k) + " needs extent >= 2");
        const std::size_t cap = std::min(shape[k] - 1, rank_product(ranks, k));
        if (glr_ranks[k] < 1 || glr_ranks[k] > cap)
            throw std::invalid_argument("gradient-domain rank for mode " + std::to_string(k) + " must lie in [1, " +
                                        std::to_string(cap) + "]");
    }
}

std::vector<std::size_t> clamp_glr_ranks(const Shape& shape, const RankMatrix& ranks, std::size_t wanted) {
    std::vector<std::size_t> out(shape.order());
    for (std::size_t k = 0; k < shape.order(); ++k) {
        const std::size_t cap = std::min(shape[k] > 1 ? shape[k] - 1 : 1, rank_product(ranks, k));
        out[k] = std::clamp<std::size_t>(wanted, 1, cap);
    }
    return out;
}

SdtnState init_state(const Shape& shape, const RankMatrix& ranks, std::span<const std::size_t> glr_ranks,
                     std::uint64_t seed) {
    validate_glr_ranks(shape, ranks, glr_ranks);
    const std::size_t n = shape.order();
    std::mt19937_64 rng(seed);
    SdtnState s;
    s.factors.ranks = ranks;
    for (std::size_t k = 0; k < n; ++k) {
        const double scale = std::sqrt(1.0 / static_cast<double>(rank_product(ranks, k)));
        std::uniform_real_distribution<double> uni(-scale, scale);
        DenseTensor g(factor_shape(shape, ranks, k));
        for (double& v : g.data()) v = uni(rng);
        s.factors.factors.push_back(std::move(g));
    }
    for (std::size_t k = 0; k < n; ++k)
        s.glr.push_back(seed_pair(k, shape[k] - 1, rank_product(ranks, k), glr_ranks[k], rng));
    return s;
}

LossTerms sdtn_loss_terms(const SdtnState& state, const DenseTensor& x, const std::optional<Supervision>& sup,
                          const Hyperparams& hp) {
    if (x.shape() != state.factors.data_shape())
        throw std::invalid_argument("data shape does not match factor shapes");
    LossTerms t;
    const DenseTensor xhat = fctn_reconstruct(state.factors);
    const auto a = x.data();
    const auto b = xhat.data();
    double rec = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) rec += (a[i] - b[i]) * (a[i] - b[i]);
    t.reconstruction = 0.5 * rec;

    double glr = 0.0, reg = 0.0;
    for (std::size_t k = 0; k < state.factors.factors.size(); ++k) {
        const auto& g = state.factors.factors[k];
        const auto& p = state.glr[k];
        const Matrix resid = diff_operator(g.dim(k)) * unfold(g, k) - p.U * p.V;
        glr += resid.squaredNorm();
        reg += hp.lambda1 * p.U.squaredNorm() + hp.lambda2 * p.V.squaredNorm() + hp.lambda3 * squared_norm(g.data());
    }
    t.low_rank = 0.5 * hp.alpha * glr;
    t.regularization = reg;

    if (sup) {
        check_supervision(*sup, x);
        const Vector p = head_probabilities(*sup->head, xhat);
        t.classification = -hp.beta * std::log(std::max(p[sup->label - 1], kLogClamp));
    }
    return t;
}

double sdtn_loss(const SdtnState& state, const DenseTensor& x, const std::optional<Supervision>& sup,
                 const Hyperparams& hp) {
    return sdtn_loss_terms(state, x, sup, hp).total();
}

double classification_loss(const Matrix& probs, std::span<const int> labels) {
    if (static_cast<std::size_t>(probs.rows()) != labels.size())
        throw std::invalid_argument("probability rows and label count differ");
    if (labels.empty()) throw std::invalid_argument("classification loss of an empty batch");
    const auto m = static_cast<int>(probs.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 1 || y > m) throw std::invalid_argument("label " + std::to_string(y) + " out of range");
        if (std::abs(probs.row(i).sum() - 1.0) > 1e-8)
            throw std::invalid_argument("probability row " + std::to_string(i) + " is not normalized");
        total -= std::log(std::max(probs(i, y - 1), kLogClamp));
    }
    return total / static_cast<double>(labels.size());
}

Vector head_probabilities(const SpectralHead& head, const DenseTensor& features) {
    return softmax(head.weight * pool_spectra(features) + head.bias);
}

DenseTensor head_feature_gradient(const SpectralHead& head, const DenseTensor& features, int label, double weight,
                                  SdtnGrad* grad) {
    const Vector pooled = pool_spectra(features);
    Vector p = softmax(head.weight * pooled + head.bias);
    Vector dlogits = Vector::Zero(p.size());
    if (p[label - 1] >= kLogClamp) {
        dlogits = p;
        dlogits[label - 1] -= 1.0;
        dlogits *= weight;
    }
    if (grad != nullptr) {
        if (grad->head_weight.size() == 0) {
            grad->head_weight = Matrix::Zero(head.weight.rows(), head.weight.cols());
            grad->head_bias = Vector::Zero(head.bias.size());
        }
        grad->head_weight += dlogits * pooled.transpose();
        grad->head_bias += dlogits;
    }
    const Vector dpooled = head.weight.transpose() * dlogits;
    const std::size_t bands = spectral_count(features);
    const std::size_t pixels = features.size() / bands;
    DenseTensor dh(features.shape());
    auto d = dh.data();
    for (std::size_t q = 0; q < pixels; ++q)
        for (std::size_t b = 0; b < bands; ++b)
            d[q * bands + b] = dpooled[static_cast<Eigen::Index>(b)] / static_cast<double>(pixels);
    return dh;
}

SdtnGrad sdtn_grad(const SdtnState& state, const DenseTensor& x, const std::optional<Supervision>& sup,
                   const Hyperparams& hp) {
    if (x.shape() != state.factors.data_shape())
        throw std::invalid_argument("data shape does not match factor shapes");
    const std::size_t n = state.factors.factors.size();
    SdtnGrad g;
    const DenseTensor xhat = fctn_reconstruct(state.factors);
    DenseTensor seed = xhat - x;
    if (sup) {
        check_supervision(*sup, x);
        seed += head_feature_gradient(*sup->head, xhat, sup->label, hp.beta, &g);
    }
    for (std::size_t k = 0; k < n; ++k) {
        const auto& gk = state.factors.factors[k];
        const auto& p = state.glr[k];
        DenseTensor dg = fctn_factor_gradient(state.factors, k, seed);

        const Matrix dk = diff_operator(gk.dim(k));
        const Matrix resid = dk * unfold(gk, k) - p.U * p.V;
        dg += fold(hp.alpha * (dk.transpose() * resid), k, gk.shape());
        dg += (2.0 * hp.lambda3) * gk;

        g.factors.push_back(std::move(dg));
        g.U.push_back(-hp.alpha * resid * p.V.transpose() + 2.0 * hp.lambda1 * p.U);
        g.V.push_back(-hp.alpha * p.U.transpose() * resid + 2.0 * hp.lambda2 * p.V);
    }
    return g;
}

void refine(SdtnState& state, const DenseTensor& x, const Hyperparams& hp, const std::optional<Supervision>& sup) {
    hp.validate();
    double loss = sdtn_loss(state, x, sup, hp);
    if (!std::isfinite(loss)) throw DivergenceError("initial SDTN loss is not finite", state.iter);
    if (state.loss_history.empty()) state.loss_history.push_back(loss);

    double last_step = std::numeric_limits<double>::infinity();
    const std::size_t start = state.loss_history.size();
    for (std::size_t t = 0; t < hp.max_iters; ++t) {
        const SdtnGrad g = sdtn_grad(state, x, sup, hp);
        const double lr = learning_rate(hp, state.iter);
        if (hp.line_search == LineSearch::Schedule) {
            SdtnState next = stepped(state, g, lr);
            const double next_loss = sdtn_loss(next, x, sup, hp);
            if (!std::isfinite(next_loss)) throw DivergenceError("SDTN loss diverged", state.iter);
            state.factors = std::move(next.factors);
            state.glr = std::move(next.glr);
            loss = next_loss;
        } else {
            double step = std::min(lr, 2.0 * last_step);
            bool accepted = false;
            for (int h = 0; h < kMaxHalvings; ++h, step *= 0.5) {
                SdtnState next = stepped(state, g, step);
                const double next_loss = sdtn_loss(next, x, sup, hp);
                if (std::isfinite(next_loss) && next_loss < loss) {
                    state.factors = std::move(next.factors);
                    state.glr = std::move(next.glr);
                    loss = next_loss;
                    last_step = step;
                    accepted = true;
                    break;
                }
            }
            if (!accepted) break;  // no descent direction left at double precision
        }
        ++state.iter;
        state.loss_history.push_back(loss);
        if (state.loss_history.size() - start >= kStallWindow && stalled(state.loss_history, hp.tol)) break;
    }
}

SdtnState fit(const DenseTensor& x, const RankMatrix& ranks, std::span<const std::size_t> glr_ranks,
              const Hyperparams& hp, const std::optional<Supervision>& sup) {
    hp.validate();
    SdtnState s = init_state(x.shape(), ranks, glr_ranks, hp.seed);
    refine(s, x, hp, sup);
    return s;
}

double relative_error(const SdtnState& state, const DenseTensor& x) {
    const double denom = frobenius_norm(x);
    const double num = frobenius_norm(x - fctn_reconstruct(state.factors));
    return denom > 0.0 ? num / denom : num;
}

DenseTensor extract_features(const SdtnState& state) { return fctn_reconstruct(state.factors); }

namespace {

// Re-expresses the bond between factors j and k through the SVD of the
// product of their QR triangles, keeping `keep` components. The product of
// the two factors across the bond is preserved up to the dropped components.
struct BondSpectrum {
    Matrix qj, qk;  // orthonormal columns
    Eigen::JacobiSVD<Matrix> svd;
};

BondSpectrum bond_spectrum(const FactorSet& f, std::size_t j, std::size_t k) {
    // Rows of mj / mk enumerate the shared bond index.
    const Matrix mj = unfold(f.factors[j], k);
    const Matrix mk = unfold(f.factors[k], j);
    auto thin_qr = [](const Matrix& m, Matrix& q) -> Matrix {
        const Matrix a = m.transpose();
        Eigen::HouseholderQR<Matrix> qr(a);
        const Eigen::Index p = std::min(a.rows(), a.cols());
        q = qr.householderQ() * Matrix::Identity(a.rows(), p);
        return q.transpose() * a;  // p x r
    };
    BondSpectrum b;
    const Matrix rj = thin_qr(mj, b.qj);
    const Matrix rk = thin_qr(mk, b.qk);
    b.svd.compute(rj * rk.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    return b;
}

void truncate_bond(FactorSet& f, std::size_t j, std::size_t k, const BondSpectrum& b, std::size_t keep) {
    const auto& s = b.svd.singularValues();
    const auto kp = static_cast<Eigen::Index>(keep);
    const Vector root = s.head(kp).cwiseSqrt();
    const Matrix new_j = (b.qj * b.svd.matrixU().leftCols(kp) * root.asDiagonal()).transpose();
    const Matrix new_k = (b.qk * b.svd.matrixV().leftCols(kp) * root.asDiagonal()).transpose();
    f.ranks.set(j, k, keep);
    const Shape data = f.data_shape();
    f.factors[j] = fold(new_j, k, factor_shape(data, f.ranks, j));
    f.factors[k] = fold(new_k, j, factor_shape(data, f.ranks, k));
}

// Appends one slice along the bond axis of factor `owner` that faces `other`.
DenseTensor grow_axis(const DenseTensor& g, std::size_t axis, double scale, std::mt19937_64& rng) {
    const Matrix m = unfold(g, axis);
    Matrix grown(m.rows() + 1, m.cols());
    grown.topRows(m.rows()) = m;
    std::uniform_real_distribution<double> uni(-scale, scale);
    for (Eigen::Index c = 0; c < m.cols(); ++c) grown(m.rows(), c) = uni(rng);
    std::vector<std::size_t> dims = g.shape().dims();
    dims[axis] += 1;
    return fold(grown, axis, Shape(dims));
}

}  // namespace

Adaptation adapt_ranks(const SdtnState& state, const DenseTensor& x, const RankPolicy& policy, std::uint64_t seed) {
    Adaptation out;
    out.state = state;
    FactorSet& f = out.state.factors;
    const std::size_t n = f.factors.size();

    // A truncation must not by itself push the fit past the growth threshold,
    // otherwise truncate and grow would alternate forever.
    const double trunc_fraction = std::min(policy.eps_trunc, 0.25 * policy.eps_grow * policy.eps_grow);
    bool truncated = false;
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = j + 1; k < n; ++k) {
            const std::size_t r = f.ranks(j, k);
            if (r <= 1) continue;
            const BondSpectrum b = bond_spectrum(f, j, k);
            const auto& s = b.svd.singularValues();
            const double total = s.squaredNorm();
            if (total <= 0.0) continue;
            // Smallest prefix whose discarded tail stays under eps_trunc of the energy.
            std::size_t keep = static_cast<std::size_t>(s.size());
            double tail = 0.0;
            while (keep > 1) {
                const double next_tail = tail + s[static_cast<Eigen::Index>(keep - 1)] * s[static_cast<Eigen::Index>(keep - 1)];
                if (next_tail > trunc_fraction * total) break;
                tail = next_tail;
                --keep;
            }
            if (keep < r) {
                truncate_bond(f, j, k, b, keep);
                truncated = true;
            }
        }
    }

    if (!truncated && relative_error(out.state, x) > policy.eps_grow) {
        std::mt19937_64 rng(seed);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = j + 1; k < n; ++k) {
                if (f.ranks(j, k) >= policy.rank_max) continue;
                const double scale = 1e-2 / std::sqrt(static_cast<double>(rank_product(f.ranks, j)));
                f.factors[j] = grow_axis(f.factors[j], k, scale, rng);
                f.factors[k] = grow_axis(f.factors[k], j, scale, rng);
                f.ranks.set(j, k, f.ranks(j, k) + 1);
                out.changed = true;
            }
        }
    }
    out.changed = out.changed || truncated;
    out.ranks = f.ranks;

    const Shape shape = f.data_shape();
    out.glr_ranks.resize(n);
    for (std::size_t k = 0; k < n; ++k) out.glr_ranks[k] = state.glr[k].rank;
    if (out.changed) {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t cols = rank_product(f.ranks, k);
            const std::size_t cap = std::min(shape[k] - 1, cols);
            out.glr_ranks[k] = std::clamp<std::size_t>(out.glr_ranks[k], 1, cap);
            if (static_cast<std::size_t>(out.state.glr[k].V.cols()) != cols || out.state.glr[k].rank != out.glr_ranks[k])
                out.state.glr[k] = seed_pair(k, shape[k] - 1, cols, out.glr_ranks[k], rng);
        }
        out.state.loss_history.clear();
    }
    return out;
}

AdaptiveFit fit_adaptive(const DenseTensor& x, const RankMatrix& ranks, std::span<const std::size_t> glr_ranks,
                         const Hyperparams& hp, const RankPolicy& policy, std::size_t max_rounds) {
    AdaptiveFit out;
    out.state = fit(x, ranks, glr_ranks, hp);
    out.rank_path.push_back(out.state.factors.ranks);
    out.error_path.push_back(relative_error(out.state, x));
    for (std::size_t round = 0; round < max_rounds; ++round) {
        Adaptation a = adapt_ranks(out.state, x, policy, hp.seed + round + 1);
        if (!a.changed) break;
        out.state = std::move(a.state);
        refine(out.state, x, hp);
        out.rank_path.push_back(out.state.factors.ranks);
        out.error_path.push_back(relative_error(out.state, x));
    }
    return out;
}

}  // namespace hsi::sdtn
