#include "hsi/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "hsi/fctn.hpp"
#include "hsi/nn/graph.hpp"
#include "hsi/nn/ops.hpp"
#include "hsi/sdtn.hpp"
#include "hsi/trn.hpp"

namespace hsi::gradcheck {

namespace {

using nn::Graph;
using nn::Var;

constexpr double kStep = 1e-5;

double rel_error(double a, double n, double f) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-5 * std::max(1.0, std::abs(f))});
}

// Coordinates to perturb, their analytic derivatives and the scalar objective.
struct Problem {
    std::vector<double*> coords;
    std::vector<double> analytic;
    std::function<double()> f;
};

double worst_error(Problem& p, bool corrupt) {
    if (corrupt && !p.analytic.empty()) p.analytic[0] = p.analytic[0] * 1.5 + 1e-3;
    const double f0 = p.f();
    double worst = 0.0;
    for (std::size_t i = 0; i < p.coords.size(); ++i) {
        double& x = *p.coords[i];
        const double keep = x;
        x = keep + kStep;
        const double up = p.f();
        x = keep - kStep;
        const double down = p.f();
        x = keep;
        worst = std::max(worst, rel_error(p.analytic[i], (up - down) / (2 * kStep), f0));
    }
    return worst;
}

DenseTensor random_tensor(const Shape& s, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    DenseTensor t(s);
    for (double& v : t.data()) v = u(rng);
    return t;
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

// One layer instance: inputs are all differentiated; the scalar is <r, layer(inputs)>.
double layer_instance(std::vector<DenseTensor> inputs, const Builder& build, std::mt19937_64& rng, bool corrupt) {
    std::vector<double> r;
    auto reduce = [&](Graph& g, const Var& y) {
        if (y.value().size() == 1) return y;
        if (r.empty()) r = random_tensor(Shape{y.value().size()}, rng).values();
        return nn::affine(y, g.constant(DenseTensor(Shape{1, r.size()}, r)), std::nullopt);
    };
    Graph g;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(g.input(x));
    const Var loss = reduce(g, build(g, vars));
    g.backward(loss);

    Problem p;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto v = inputs[i].data();
        const auto a = vars[i].grad().data();
        for (std::size_t j = 0; j < v.size(); ++j) {
            p.coords.push_back(&v[j]);
            p.analytic.push_back(a[j]);
        }
    }
    p.f = [&] {
        Graph h;
        std::vector<Var> c;
        for (const auto& x : inputs) c.push_back(h.constant(x));
        return reduce(h, build(h, c)).value()[0];
    };
    return worst_error(p, corrupt);
}

double conv3d_instance(std::mt19937_64& rng, bool corrupt) {
    const std::size_t ci = pick(rng, 1, 2), co = pick(rng, 1, 3);
    nn::ConvSpec spec{{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)}, ci, co, pick(rng, 1, 2),
                      rng() % 2 ? nn::Padding::Same : nn::Padding::Valid};
    const Shape xs{ci, pick(rng, 3, 5), pick(rng, 3, 5), pick(rng, 3, 5)};
    return layer_instance({random_tensor(xs, rng), random_tensor(spec.weight_shape(), rng), random_tensor(Shape{co}, rng)},
                          [spec](Graph&, const std::vector<Var>& v) { return nn::conv3d(v[0], v[1], v[2], spec); }, rng,
                          corrupt);
}

double conv2d_instance(std::mt19937_64& rng, bool corrupt) {
    const std::size_t ci = pick(rng, 1, 3), co = pick(rng, 1, 3), k = pick(rng, 1, 3);
    nn::ConvSpec spec{{k, k}, ci, co, pick(rng, 1, 2), rng() % 2 ? nn::Padding::Same : nn::Padding::Valid};
    const Shape xs{ci, pick(rng, 3, 6), pick(rng, 3, 6)};
    return layer_instance({random_tensor(xs, rng), random_tensor(spec.weight_shape(), rng), random_tensor(Shape{co}, rng)},
                          [spec](Graph&, const std::vector<Var>& v) { return nn::conv2d(v[0], v[1], v[2], spec); }, rng,
                          corrupt);
}

double separable_instance(std::mt19937_64& rng, bool corrupt) {
    const std::size_t c = pick(rng, 1, 4), co = pick(rng, 1, 4), k = pick(rng, 1, 3);
    const nn::ConvSpec depth{{k, k}, c, c}, point{{1, 1}, c, co};
    const Shape xs{c, pick(rng, 3, 5), pick(rng, 3, 5)};
    return layer_instance(
        {random_tensor(xs, rng), random_tensor(Shape{c, 1, k, k}, rng), random_tensor(point.weight_shape(), rng)},
        [depth, point](Graph&, const std::vector<Var>& v) { return nn::depthwise_separable(v[0], v[1], v[2], depth, point); },
        rng, corrupt);
}

double attention_instance(std::mt19937_64& rng, bool corrupt) {
    const std::size_t c = pick(rng, 2, 6), r = nn::attention_width(c, pick(rng, 1, 3));
    return layer_instance({random_tensor(Shape{c, pick(rng, 2, 4), pick(rng, 2, 4)}, rng), random_tensor(Shape{r, c}, rng),
                           random_tensor(Shape{r}, rng), random_tensor(Shape{c, r}, rng), random_tensor(Shape{c}, rng)},
                          [](Graph&, const std::vector<Var>& v) {
                              return nn::channel_attention(v[0], {v[1], v[2], v[3], v[4]});
                          },
                          rng, corrupt);
}

double affine_instance(std::mt19937_64& rng, bool corrupt) {
    const std::size_t in = pick(rng, 1, 8), out = pick(rng, 1, 5);
    return layer_instance({random_tensor(Shape{in}, rng), random_tensor(Shape{out, in}, rng), random_tensor(Shape{out}, rng)},
                          [](Graph&, const std::vector<Var>& v) { return nn::affine(v[0], v[1], v[2]); }, rng, corrupt);
}

double elementwise_instance(std::mt19937_64& rng, bool corrupt, bool use_relu) {
    DenseTensor x = random_tensor(Shape{pick(rng, 2, 4), pick(rng, 2, 4)}, rng);
    for (double& v : x.data())
        if (std::abs(v) < 1e-3) v = 0.5;  // keep clear of the relu kink
    return layer_instance({x},
                          [use_relu](Graph&, const std::vector<Var>& v) { return use_relu ? nn::relu(v[0]) : nn::sigmoid(v[0]); },
                          rng, corrupt);
}

double pool_instance(std::mt19937_64& rng, bool corrupt) {
    return layer_instance({random_tensor(Shape{pick(rng, 1, 4), pick(rng, 2, 4), pick(rng, 2, 4)}, rng)},
                          [](Graph&, const std::vector<Var>& v) { return nn::global_avg_pool(v[0]); }, rng, corrupt);
}

double xent_instance(std::mt19937_64& rng, bool corrupt) {
    const std::size_t m = pick(rng, 2, 9);
    const int label = static_cast<int>(pick(rng, 1, m));
    return layer_instance({random_tensor(Shape{m}, rng, 3.0)},
                          [label](Graph&, const std::vector<Var>& v) { return nn::softmax_xent(v[0], label); }, rng, corrupt);
}

// Random decomposition state on a small random cube.
struct SdtnCase {
    DenseTensor x;
    sdtn::SdtnState state;
    sdtn::SpectralHead head;
    int label = 1;
};

SdtnCase sdtn_case(std::mt19937_64& rng) {
    const Shape shape{pick(rng, 2, 4), pick(rng, 2, 4), pick(rng, 2, 4)};
    const RankMatrix ranks = RankMatrix::uniform(3, pick(rng, 1, 2));
    SdtnCase c{random_tensor(shape, rng), sdtn::init_state(shape, ranks, sdtn::clamp_glr_ranks(shape, ranks, 1), rng()), {}, 1};
    for (auto& f : c.state.factors.factors) f = random_tensor(f.shape(), rng);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& p : c.state.glr) {
        for (Eigen::Index j = 0; j < p.U.size(); ++j) p.U.data()[j] = u(rng);
        for (Eigen::Index j = 0; j < p.V.size(); ++j) p.V.data()[j] = u(rng);
    }
    const std::size_t m = pick(rng, 2, 4), b = shape[2];
    c.head.weight = Matrix(m, b);
    c.head.bias = Vector(m);
    for (Eigen::Index j = 0; j < c.head.weight.size(); ++j) c.head.weight.data()[j] = u(rng);
    for (Eigen::Index j = 0; j < c.head.bias.size(); ++j) c.head.bias.data()[j] = u(rng);
    c.label = static_cast<int>(pick(rng, 1, m));
    return c;
}

enum class Term { Reconstruction, LowRank, Regularization, Classification };

// Analytic gradient of one objective term: full gradient minus the gradient
// with that term's weight set to zero. Reconstruction has no weight, so it is
// checked with every other term switched off.
double sdtn_term_instance(std::mt19937_64& rng, bool corrupt, Term term) {
    SdtnCase c = sdtn_case(rng);
    sdtn::Hyperparams on, off;
    on.alpha = 0.7;
    on.beta = 1.3;
    on.lambda1 = 0.2;
    on.lambda2 = 0.3;
    on.lambda3 = 0.4;
    if (term == Term::Reconstruction) on.alpha = on.lambda1 = on.lambda2 = on.lambda3 = 0.0;
    off = on;
    switch (term) {
        case Term::LowRank: off.alpha = 0.0; break;
        case Term::Regularization: off.lambda1 = off.lambda2 = off.lambda3 = 0.0; break;
        case Term::Classification: off.beta = 0.0; break;
        case Term::Reconstruction: break;
    }
    const bool supervised = term == Term::Classification;
    auto sup = [&]() -> std::optional<sdtn::Supervision> {
        if (!supervised) return std::nullopt;
        return sdtn::Supervision{&c.head, c.label};
    };
    const auto g_on = sdtn::sdtn_grad(c.state, c.x, sup(), on);
    std::optional<sdtn::SdtnGrad> g_off;
    if (term != Term::Reconstruction) g_off = sdtn::sdtn_grad(c.state, c.x, sup(), off);

    Problem p;
    auto add = [&](double* x, double a_on, double a_off) {
        p.coords.push_back(x);
        p.analytic.push_back(term == Term::Reconstruction ? a_on : a_on - a_off);
    };
    auto& st = c.state;
    for (std::size_t k = 0; k < st.factors.factors.size(); ++k) {
        auto v = st.factors.factors[k].data();
        for (std::size_t j = 0; j < v.size(); ++j) add(&v[j], g_on.factors[k][j], g_off ? g_off->factors[k][j] : 0.0);
    }
    if (term != Term::Reconstruction) {
        for (std::size_t k = 0; k < st.glr.size(); ++k) {
            for (Eigen::Index j = 0; j < st.glr[k].U.size(); ++j)
                add(&st.glr[k].U.data()[j], g_on.U[k].data()[j], g_off->U[k].data()[j]);
            for (Eigen::Index j = 0; j < st.glr[k].V.size(); ++j)
                add(&st.glr[k].V.data()[j], g_on.V[k].data()[j], g_off->V[k].data()[j]);
        }
    }
    if (supervised) {
        for (Eigen::Index j = 0; j < c.head.weight.size(); ++j)
            add(&c.head.weight.data()[j], g_on.head_weight.data()[j], 0.0);
        for (Eigen::Index j = 0; j < c.head.bias.size(); ++j) add(&c.head.bias.data()[j], g_on.head_bias.data()[j], 0.0);
    }
    p.f = [&] {
        const auto t = sdtn::sdtn_loss_terms(c.state, c.x, sup(), on);
        switch (term) {
            case Term::Reconstruction: return t.reconstruction;
            case Term::LowRank: return t.low_rank;
            case Term::Regularization: return t.regularization;
            case Term::Classification: return t.classification;
        }
        return 0.0;
    };
    return worst_error(p, corrupt);
}

trn::TrnConfig objective_config(trn::Mode mode, std::mt19937_64& rng) {
    trn::TrnConfig c;
    c.patch = 3;
    c.bands = pick(rng, 2, 4);
    c.classes = pick(rng, 2, 3);
    c.filters3d = pick(rng, 1, 2);
    c.kernel3d = {pick(rng, 1, 3), 3, 3};
    c.filters2d = pick(rng, 1, 3);
    c.kernel2d = pick(rng, 1, 3);
    c.depthwise_kernel = 3;
    c.pointwise_out = pick(rng, 2, 4);
    c.attention_reduction = 2;
    c.mode = mode;
    c.hp.alpha = 0.3;
    c.hp.beta = 1.0;
    c.hp.gamma = 0.05;
    c.hp.lambda1 = c.hp.lambda2 = c.hp.lambda3 = 0.01;
    return c;
}

// Joint objective over a two-sample batch: network parameters, factors and U/V.
double objective_instance(std::mt19937_64& rng, bool corrupt, trn::Mode mode) {
    const trn::TrnConfig cfg = objective_config(mode, rng);
    trn::Model model = trn::init_model(cfg, rng());
    for (auto& p : model.params) p.value = random_tensor(p.value.shape(), rng, 0.5);
    const Shape shape{cfg.patch, cfg.patch, cfg.bands};
    std::vector<trn::Sample> batch;
    std::vector<sdtn::SdtnState> states;
    for (int i = 0; i < 2; ++i) {
        DenseTensor patch = random_tensor(shape, rng);
        batch.push_back({patch, static_cast<int>(pick(rng, 1, cfg.classes))});
        if (mode == trn::Mode::CnnBaseline) continue;
        const RankMatrix ranks = RankMatrix::uniform(3, 2);
        auto st = sdtn::init_state(shape, ranks, sdtn::clamp_glr_ranks(shape, ranks, 1), rng());
        for (auto& f : st.factors.factors) f = random_tensor(f.shape(), rng, 0.8);
        std::uniform_real_distribution<double> u(-0.3, 0.3);
        for (auto& p : st.glr) {
            for (Eigen::Index j = 0; j < p.U.size(); ++j) p.U.data()[j] = u(rng);
            for (Eigen::Index j = 0; j < p.V.size(); ++j) p.V.data()[j] = u(rng);
        }
        states.push_back(std::move(st));
    }
    const sdtn::Hyperparams hp = trn::effective_hyperparams(cfg);
    const trn::Evaluation ev = trn::evaluate_batch(model, states, batch, hp, true);

    Problem p;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        auto v = model.params[i].value.data();
        for (std::size_t j = 0; j < v.size(); ++j) {
            p.coords.push_back(&v[j]);
            p.analytic.push_back(ev.grad.params[i][j]);
        }
    }
    for (std::size_t s = 0; s < states.size(); ++s) {
        const auto& g = ev.grad.states[s];
        for (std::size_t k = 0; k < states[s].factors.factors.size(); ++k) {
            auto v = states[s].factors.factors[k].data();
            for (std::size_t j = 0; j < v.size(); ++j) {
                p.coords.push_back(&v[j]);
                p.analytic.push_back(g.factors[k][j]);
            }
        }
        for (std::size_t k = 0; k < states[s].glr.size(); ++k) {
            auto& pair = states[s].glr[k];
            for (Eigen::Index j = 0; j < pair.U.size(); ++j) {
                p.coords.push_back(&pair.U.data()[j]);
                p.analytic.push_back(g.U[k].data()[j]);
            }
            for (Eigen::Index j = 0; j < pair.V.size(); ++j) {
                p.coords.push_back(&pair.V.data()[j]);
                p.analytic.push_back(g.V[k].data()[j]);
            }
        }
    }
    p.f = [&] { return trn::trn_loss(model, states, batch, hp).total(); };
    return worst_error(p, corrupt);
}

using Instance = std::function<double(std::mt19937_64&, bool)>;

const std::vector<std::pair<std::string, Instance>>& registry() {
    static const std::vector<std::pair<std::string, Instance>> r{
        {"layer.conv3d", conv3d_instance},
        {"layer.conv2d", conv2d_instance},
        {"layer.depthwise_separable", separable_instance},
        {"layer.channel_attention", attention_instance},
        {"layer.affine", affine_instance},
        {"layer.relu", [](std::mt19937_64& g, bool c) { return elementwise_instance(g, c, true); }},
        {"layer.sigmoid", [](std::mt19937_64& g, bool c) { return elementwise_instance(g, c, false); }},
        {"layer.global_avg_pool", pool_instance},
        {"loss.cross_entropy", xent_instance},
        {"sdtn.reconstruction", [](std::mt19937_64& g, bool c) { return sdtn_term_instance(g, c, Term::Reconstruction); }},
        {"sdtn.low_rank", [](std::mt19937_64& g, bool c) { return sdtn_term_instance(g, c, Term::LowRank); }},
        {"sdtn.regularization", [](std::mt19937_64& g, bool c) { return sdtn_term_instance(g, c, Term::Regularization); }},
        {"sdtn.classification", [](std::mt19937_64& g, bool c) { return sdtn_term_instance(g, c, Term::Classification); }},
        {"objective.trn", [](std::mt19937_64& g, bool c) { return objective_instance(g, c, trn::Mode::Trn); }},
        {"objective.sdtn_only", [](std::mt19937_64& g, bool c) { return objective_instance(g, c, trn::Mode::SdtnOnly); }},
        {"objective.cnn_baseline", [](std::mt19937_64& g, bool c) { return objective_instance(g, c, trn::Mode::CnnBaseline); }},
    };
    return r;
}

}  // namespace

const std::vector<std::string>& component_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& [name, fn] : registry()) n.push_back(name);
        return n;
    }();
    return names;
}

ComponentResult run_component(const std::string& name, const Settings& settings) {
    for (std::size_t i = 0; i < registry().size(); ++i) {
        const auto& [n, fn] = registry()[i];
        if (n != name) continue;
        // Each component has its own stream so results do not depend on which others run.
        std::mt19937_64 rng(settings.seed * 1000003u + i);
        ComponentResult r{name, settings.instances, 0.0, false};
        for (std::size_t k = 0; k < settings.instances; ++k)
            r.max_rel_error = std::max(r.max_rel_error, fn(rng, settings.corrupt == name));
        r.passed = r.max_rel_error <= settings.tolerance;
        return r;
    }
    throw std::invalid_argument("unknown gradient-check component '" + name + "'");
}

Report run(const Settings& settings) {
    if (!settings.corrupt.empty() &&
        std::find(component_names().begin(), component_names().end(), settings.corrupt) == component_names().end())
        throw std::invalid_argument("unknown gradient-check component '" + settings.corrupt + "'");
    Report rep{settings, {}};
    for (const auto& name : component_names()) rep.components.push_back(run_component(name, settings));
    return rep;
}

bool Report::passed() const {
    return std::all_of(components.begin(), components.end(), [](const auto& c) { return c.passed; });
}

nlohmann::json Report::to_json() const {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : components)
        comps.push_back({{"name", c.name}, {"instances", c.instances}, {"max_rel_error", c.max_rel_error}, {"passed", c.passed}});
    nlohmann::json j{{"tolerance", settings.tolerance}, {"seed", settings.seed}, {"instances", settings.instances},
                     {"components", comps}, {"passed", passed()}};
    if (!settings.corrupt.empty()) j["corrupted"] = settings.corrupt;
    return j;
}

}  // namespace hsi::gradcheck
