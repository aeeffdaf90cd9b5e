#include "hsi/trn.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <stdexcept>

#include "hsi/errors.hpp"
#include "hsi/fctn.hpp"
#include "hsi/nn/init.hpp"

namespace hsi::trn {

using nn::Var;

Mode parse_mode(const std::string& name) {
    if (name == "trn") return Mode::Trn;
    if (name == "sdtn") return Mode::SdtnOnly;
    if (name == "cnn") return Mode::CnnBaseline;
    throw ConfigError("unknown mode '" + name + "' (expected trn, sdtn or cnn)");
}

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::Trn: return "trn";
        case Mode::SdtnOnly: return "sdtn";
        case Mode::CnnBaseline: return "cnn";
    }
    return "?";
}

void TrnConfig::validate() const {
    auto fail = [](const std::string& why) { throw ConfigError(why); };
    if (patch % 2 == 0) fail("patch size must be odd");
    if (bands == 0) fail("bands must be >= 1");
    if (classes < 2) fail("classes must be >= 2");
    if (kernel3d.size() != 3) fail("kernel3d needs 3 extents (depth, height, width)");
    for (std::size_t k : kernel3d)
        if (k == 0) fail("kernel3d extents must be >= 1");
    if (filters3d == 0 || filters2d == 0 || pointwise_out == 0) fail("filter counts must be >= 1");
    if (kernel2d == 0 || depthwise_kernel == 0) fail("kernel sizes must be >= 1");
    if (attention_reduction == 0) fail("attention reduction must be >= 1");
    try {
        hp.validate();
    } catch (const std::invalid_argument& e) {
        fail(std::string("hyperparams: ") + e.what());
    }
    if (mode != Mode::CnnBaseline) {
        if (patch < 3 || bands < 2) fail("tensor modes need patch >= 3 and bands >= 2 for the difference operator");
        if (sdtn.rank == 0 || sdtn.glr_rank == 0) fail("sdtn ranks must be >= 1");
        if (!(sdtn.prefit_lr > 0.0)) fail("sdtn prefit_lr must be > 0");
        if (!(sdtn.lr_scale >= 0.0) || !std::isfinite(sdtn.lr_scale)) fail("sdtn lr_scale must be >= 0");
    }
}

nn::ConvSpec TrnConfig::spec3d() const { return {kernel3d, 1, filters3d}; }
nn::ConvSpec TrnConfig::spec2d() const { return {{kernel2d, kernel2d}, bands, filters2d}; }
nn::ConvSpec TrnConfig::depth_spec() const {
    return {{depthwise_kernel, depthwise_kernel}, fused_channels(), fused_channels()};
}
nn::ConvSpec TrnConfig::point_spec() const { return {{1, 1}, fused_channels(), pointwise_out}; }
nn::ConvSpec TrnConfig::projection_spec() const { return {{1, 1}, fused_channels(), bands}; }

const DenseTensor& Model::get(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p.value;
    throw std::out_of_range("model has no parameter '" + name + "'");
}

DenseTensor& Model::get(const std::string& name) {
    return const_cast<DenseTensor&>(static_cast<const Model&>(*this).get(name));
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

Model init_model(const TrnConfig& config, std::uint64_t seed) {
    config.validate();
    Model m{config, {}};
    std::mt19937_64 rng(seed);
    auto weight = [&](const std::string& name, const Shape& s, std::size_t fan_in, std::size_t fan_out) {
        m.params.push_back({name, nn::glorot_uniform(s, fan_in, fan_out, rng)});
    };
    auto zeros = [&](const std::string& name, const Shape& s) { m.params.push_back({name, DenseTensor(s)}); };
    const std::size_t P = config.patch, B = config.bands, M = config.classes;
    if (config.mode == Mode::SdtnOnly) {
        zeros("head.w", Shape{M, B});
        zeros("head.b", Shape{M});
        return m;
    }
    const auto s3 = config.spec3d();
    const std::size_t k3 = s3.kernel[0] * s3.kernel[1] * s3.kernel[2];
    weight("conv3d.w", s3.weight_shape(), k3, config.filters3d * k3);
    zeros("conv3d.b", Shape{config.filters3d});
    const auto s2 = config.spec2d();
    const std::size_t k2 = config.kernel2d * config.kernel2d;
    weight("conv2d.w", s2.weight_shape(), B * k2, config.filters2d * k2);
    zeros("conv2d.b", Shape{config.filters2d});
    const std::size_t F = config.fused_channels(), kd = config.depthwise_kernel * config.depthwise_kernel;
    weight("depthwise.w", Shape{F, 1, config.depthwise_kernel, config.depthwise_kernel}, kd, kd);
    weight("pointwise.w", config.point_spec().weight_shape(), F, config.pointwise_out);
    const std::size_t C = config.pointwise_out, R = nn::attention_width(C, config.attention_reduction);
    weight("attention.fc1.w", Shape{R, C}, C, R);
    zeros("attention.fc1.b", Shape{R});
    weight("attention.fc2.w", Shape{C, R}, R, C);
    zeros("attention.fc2.b", Shape{C});
    zeros("classifier.w", Shape{M, C * P * P});
    zeros("classifier.b", Shape{M});
    if (config.mode == Mode::Trn) {
        weight("projection.w", config.projection_spec().weight_shape(), F, B);
        zeros("projection.b", Shape{B});
    }
    return m;
}

namespace {

std::size_t index_of(const Model& m, const std::string& name) {
    for (std::size_t i = 0; i < m.params.size(); ++i)
        if (m.params[i].name == name) return i;
    throw std::out_of_range("model has no parameter '" + name + "'");
}

}  // namespace

ForwardNodes forward_graph(const Model& model, const std::vector<Var>& params, const Var& h) {
    const auto& c = model.config;
    if (h.shape() != Shape{c.patch, c.patch, c.bands})
        throw std::invalid_argument("feature tensor must be [P, P, B] = [" + std::to_string(c.patch) + ", " +
                                    std::to_string(c.patch) + ", " + std::to_string(c.bands) + "]");
    if (params.size() != model.params.size()) throw std::invalid_argument("parameter node count mismatch");
    auto p = [&](const char* name) { return params[index_of(model, name)]; };
    const std::size_t P = c.patch, B = c.bands;
    const Var x = nn::permute(h, {2, 0, 1});  // [B, P, P]
    if (c.mode == Mode::SdtnOnly) return {nn::affine(nn::global_avg_pool(x), p("head.w"), p("head.b")), Var()};

    Var f3 = nn::conv3d(nn::reshape(x, Shape{1, B, P, P}), p("conv3d.w"), p("conv3d.b"), c.spec3d());
    f3 = nn::reshape(f3, Shape{c.filters3d * B, P, P});
    const Var f2 = nn::conv2d(x, p("conv2d.w"), p("conv2d.b"), c.spec2d());
    const Var fused = nn::concat_channels(f3, f2);
    const Var refined = nn::depthwise_separable(fused, p("depthwise.w"), p("pointwise.w"), c.depth_spec(), c.point_spec());
    const Var attended = nn::channel_attention(
        refined, {p("attention.fc1.w"), p("attention.fc1.b"), p("attention.fc2.w"), p("attention.fc2.b")});
    return {nn::affine(attended, p("classifier.w"), p("classifier.b")), fused};
}

std::vector<double> forward(const Model& model, const DenseTensor& h) {
    nn::Graph g;
    std::vector<Var> params;
    for (const auto& p : model.params) params.push_back(g.constant(p.value));
    const auto nodes = forward_graph(model, params, g.constant(h));
    return nn::softmax(nodes.logits.value().data());
}

int argmax_class(const std::vector<double>& probs) {
    if (probs.empty()) throw std::invalid_argument("argmax of an empty vector");
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin()) + 1;
}

Evaluation evaluate_batch(const Model& model, const std::vector<sdtn::SdtnState>& states,
                          const std::vector<Sample>& batch, const sdtn::Hyperparams& hp, bool with_grad) {
    const auto& cfg = model.config;
    if (batch.empty()) throw std::invalid_argument("empty training batch");
    const bool tensor = cfg.mode != Mode::CnnBaseline;
    if (tensor && states.size() != batch.size()) throw std::invalid_argument("need one SDTN state per sample");
    const bool consistency = cfg.mode == Mode::Trn && hp.gamma != 0.0;

    Evaluation ev;
    nn::Graph g;
    std::vector<Var> params;
    for (const auto& p : model.params) params.push_back(g.input(p.value, with_grad));
    std::vector<Var> features;
    Var total;
    auto accumulate = [&](const Var& term) { total = total.valid() ? nn::add(total, term) : term; };
    const double n = static_cast<double>(batch.size());

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Sample& s = batch[i];
        if (s.label < 1 || static_cast<std::size_t>(s.label) > cfg.classes)
            throw std::invalid_argument("sample label " + std::to_string(s.label) + " out of range");
        Var h;
        if (tensor) {
            const auto t = sdtn::sdtn_loss_terms(states[i], s.patch, std::nullopt, hp);
            ev.terms.reconstruction += t.reconstruction;
            ev.terms.low_rank += t.low_rank;
            ev.terms.regularization += t.regularization;
            h = g.input(fctn_reconstruct(states[i].factors), with_grad);
        } else {
            h = g.constant(s.patch);
        }
        features.push_back(h);
        const auto nodes = forward_graph(model, params, h);
        const auto probs = nn::softmax(nodes.logits.value().data());
        ev.correct += argmax_class(probs) == s.label;
        const Var xent = nn::softmax_xent(nodes.logits, s.label);
        ev.terms.classification += hp.beta * xent.value()[0] / n;
        accumulate(nn::scale(xent, hp.beta / n));
        if (consistency) {
            const Var proj = nn::conv2d(nodes.fused, params[index_of(model, "projection.w")],
                                        params[index_of(model, "projection.b")], cfg.projection_spec());
            const Var gap = nn::squared_distance(nn::permute(h, {2, 0, 1}), proj);
            ev.terms.consistency += hp.gamma * gap.value()[0];
            accumulate(nn::scale(gap, hp.gamma));
        }
    }
    if (!with_grad) return ev;

    g.backward(total);
    for (const auto& p : params) ev.grad.params.push_back(p.grad());
    if (tensor) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
            auto sg = sdtn::sdtn_grad(states[i], batch[i].patch, std::nullopt, hp);
            const DenseTensor& dh = features[i].grad();
            for (std::size_t k = 0; k < sg.factors.size(); ++k)
                sg.factors[k] += fctn_factor_gradient(states[i].factors, k, dh);
            ev.grad.states.push_back(std::move(sg));
        }
    }
    return ev;
}

TrnLossTerms trn_loss(const Model& model, const std::vector<sdtn::SdtnState>& states, const std::vector<Sample>& batch,
                      const sdtn::Hyperparams& hp) {
    return evaluate_batch(model, states, batch, hp, false).terms;
}

sdtn::Hyperparams effective_hyperparams(const TrnConfig& config) {
    sdtn::Hyperparams hp = config.hp;
    if (config.mode == Mode::CnnBaseline) hp.alpha = hp.lambda1 = hp.lambda2 = hp.lambda3 = hp.gamma = 0.0;
    if (config.mode == Mode::SdtnOnly) hp.gamma = 0.0;
    return hp;
}

DenseTensor center_spectrum(const DenseTensor& patch) {
    const std::size_t p = patch.dim(0), b = patch.dim(2), mid = p / 2;
    DenseTensor out(Shape{b});
    for (std::size_t k = 0; k < b; ++k) out[k] = patch.at({mid, mid, k});
    return out;
}

namespace {

sdtn::Hyperparams decomposition_hp(const TrnConfig& config, std::size_t iters) {
    sdtn::Hyperparams hp = effective_hyperparams(config);
    hp.max_iters = iters;
    hp.lr0 = config.sdtn.prefit_lr;
    hp.decay = 1.0;
    hp.line_search = sdtn::LineSearch::Backtracking;
    return hp;
}

void check_finite(const TrnLossTerms& t, std::size_t iter) {
    if (!std::isfinite(t.total())) throw DivergenceError("training loss is not finite", iter);
}

}  // namespace

constexpr int kMaxHalvings = 60;

// Moves every parameter against its gradient; tensor parameters scaled by lr_scale.
void apply_step(Trained& t, const TrnGrad& g, double step, double lr_scale) {
    for (std::size_t i = 0; i < t.model.params.size(); ++i) {
        auto p = t.model.params[i].value.data();
        const auto d = g.params[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= step * d[j];
    }
    const double ts = step * lr_scale;
    for (std::size_t i = 0; i < t.states.size(); ++i) {
        auto& st = t.states[i];
        const auto& gs = g.states[i];
        for (std::size_t k = 0; k < st.factors.factors.size(); ++k) {
            auto f = st.factors.factors[k].data();
            const auto d = gs.factors[k].data();
            for (std::size_t j = 0; j < f.size(); ++j) f[j] -= ts * d[j];
        }
        for (std::size_t k = 0; k < st.glr.size(); ++k) {
            st.glr[k].U -= ts * gs.U[k];
            st.glr[k].V -= ts * gs.V[k];
        }
    }
}

Trained train(const std::vector<Sample>& batch, const TrnConfig& config,
              const std::function<void(const TrainRecord&)>& on_record) {
    config.validate();
    if (batch.empty()) throw std::invalid_argument("empty training batch");
    const sdtn::Hyperparams hp = effective_hyperparams(config);
    Trained out{init_model(config, hp.seed), {}, {}, {}};
    const bool tensor = config.mode != Mode::CnnBaseline;

    for (std::size_t i = 0; i < batch.size(); ++i) {
        out.centers.push_back(center_spectrum(batch[i].patch));
        if (!tensor) continue;
        const Shape& shape = batch[i].patch.shape();
        const RankMatrix ranks = RankMatrix::uniform(3, config.sdtn.rank);
        const auto glr = sdtn::clamp_glr_ranks(shape, ranks, config.sdtn.glr_rank);
        auto php = decomposition_hp(config, config.sdtn.prefit_iters);
        php.seed = hp.seed + 1 + i;
        out.states.push_back(sdtn::fit(batch[i].patch, ranks, glr, php));
    }

    const double n = static_cast<double>(batch.size());
    const bool backtrack = hp.line_search == sdtn::LineSearch::Backtracking;
    double last_step = std::numeric_limits<double>::infinity();
    double step = 0.0;
    for (std::size_t iter = 0;; ++iter) {
        const bool last = iter == hp.max_iters;
        Evaluation ev = evaluate_batch(out.model, out.states, batch, hp, !last);
        TrainRecord rec{iter, sdtn::learning_rate(hp, iter), step, ev.terms, static_cast<double>(ev.correct) / n};
        check_finite(ev.terms, iter);
        out.log.push_back(rec);
        if (on_record) on_record(rec);
        if (last) break;

        if (!backtrack) {
            step = rec.lr;
            apply_step(out, ev.grad, step, config.sdtn.lr_scale);
            continue;
        }
        // Try the scheduled step (capped at twice the last accepted one) and halve until the total drops.
        bool accepted = false;
        for (double s = std::min(rec.lr, 2.0 * last_step), h = 0; h < kMaxHalvings; ++h, s *= 0.5) {
            Trained next{out.model, out.states, {}, {}};
            apply_step(next, ev.grad, s, config.sdtn.lr_scale);
            const double total = trn_loss(next.model, next.states, batch, hp).total();
            if (std::isfinite(total) && total < ev.terms.total()) {
                out.model = std::move(next.model);
                out.states = std::move(next.states);
                step = last_step = s;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;  // no descent left at double precision
    }
    return out;
}

std::size_t nearest_sample(const Trained& trained, const DenseTensor& patch) {
    if (trained.centers.empty()) throw std::invalid_argument("trained model has no training samples");
    const DenseTensor c = center_spectrum(patch);
    std::size_t best = 0;
    double best_d = 0.0;
    for (std::size_t i = 0; i < trained.centers.size(); ++i) {
        double d = 0.0;
        for (std::size_t k = 0; k < c.size(); ++k) d += (c[k] - trained.centers[i][k]) * (c[k] - trained.centers[i][k]);
        if (i == 0 || d < best_d) {
            best = i;
            best_d = d;
        }
    }
    return best;
}

int predict_patch(const Trained& trained, const DenseTensor& patch) {
    const auto& cfg = trained.model.config;
    if (cfg.mode == Mode::CnnBaseline) return argmax_class(forward(trained.model, patch));
    sdtn::SdtnState state = trained.states.at(nearest_sample(trained, patch));
    state.loss_history.clear();
    sdtn::refine(state, patch, decomposition_hp(cfg, cfg.sdtn.infer_iters));
    return argmax_class(forward(trained.model, fctn_reconstruct(state.factors)));
}

data::LabelImage predict_map(const Trained& trained, const DenseTensor& cube, const data::LabelImage* mask) {
    const auto& cfg = trained.model.config;
    if (cube.order() != 3 || cube.dim(2) != cfg.bands)
        throw DataError("cube has " + std::to_string(cube.order() == 3 ? cube.dim(2) : 0) + " bands, model expects " +
                        std::to_string(cfg.bands));
    const std::size_t rows = cube.dim(0), cols = cube.dim(1);
    if (mask && (mask->rows != rows || mask->cols != cols)) throw DataError("mask dims differ from the cube");
    data::LabelImage out(rows, cols);
    std::exception_ptr error;
    const long pixels = static_cast<long>(rows * cols);
#pragma omp parallel for schedule(dynamic, 16)
    for (long i = 0; i < pixels; ++i) {
        const std::size_t r = static_cast<std::size_t>(i) / cols, c = static_cast<std::size_t>(i) % cols;
        if (mask && mask->at(r, c) == 0) continue;
        try {
            out.at(r, c) = static_cast<std::uint16_t>(predict_patch(trained, data::extract_patch(cube, r, c, cfg.patch)));
        } catch (...) {
#pragma omp critical
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);
    return out;
}

}  // namespace hsi::trn
