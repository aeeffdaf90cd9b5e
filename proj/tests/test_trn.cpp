#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "hsi/errors.hpp"
#include "hsi/fctn.hpp"
#include "hsi/trn.hpp"
#include "oracles.hpp"

using hsi::DenseTensor;
using hsi::RankMatrix;
using hsi::Shape;
using namespace hsi::trn;

namespace {

TrnConfig tiny_config(Mode mode) {
    TrnConfig c;
    c.patch = 3;
    c.bands = 4;
    c.classes = 3;
    c.filters3d = 2;
    c.kernel3d = {3, 3, 3};
    c.filters2d = 2;
    c.kernel2d = 3;
    c.depthwise_kernel = 3;
    c.pointwise_out = 3;
    c.attention_reduction = 2;
    c.mode = mode;
    c.hp.gamma = 0.05;
    c.hp.alpha = 0.3;
    c.hp.lambda1 = c.hp.lambda2 = c.hp.lambda3 = 0.01;
    return c;
}

// Model with every parameter (including the zero-initialized ones) randomized.
Model random_model(const TrnConfig& c, std::mt19937_64& rng) {
    Model m = init_model(c, rng());
    for (auto& p : m.params) p.value = oracle::random_tensor(p.value.shape(), rng, -0.5, 0.5);
    return m;
}

std::vector<Sample> random_batch(const TrnConfig& c, std::size_t n, std::mt19937_64& rng) {
    std::vector<Sample> b;
    for (std::size_t i = 0; i < n; ++i)
        b.push_back({oracle::random_tensor(Shape{c.patch, c.patch, c.bands}, rng, 0.0, 1.0),
                     static_cast<int>(i % c.classes) + 1});
    return b;
}

std::vector<hsi::sdtn::SdtnState> random_states(const TrnConfig& c, std::size_t n, std::mt19937_64& rng) {
    std::vector<hsi::sdtn::SdtnState> s;
    const Shape shape{c.patch, c.patch, c.bands};
    const RankMatrix ranks = RankMatrix::uniform(3, 2);
    const std::vector<std::size_t> glr{1, 1, 1};
    for (std::size_t i = 0; i < n; ++i) {
        auto st = hsi::sdtn::init_state(shape, ranks, glr, rng());
        for (auto& f : st.factors.factors) f = oracle::random_tensor(f.shape(), rng, -0.8, 0.8);
        for (auto& p : st.glr) {
            std::uniform_real_distribution<double> u(-0.3, 0.3);
            for (Eigen::Index j = 0; j < p.U.size(); ++j) p.U.data()[j] = u(rng);
            for (Eigen::Index j = 0; j < p.V.size(); ++j) p.V.data()[j] = u(rng);
        }
        s.push_back(std::move(st));
    }
    return s;
}

double rel_error(double a, double n, double f) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-5 * std::max(1.0, std::abs(f))});
}

// Central differences on every scalar of the joint objective; returns the worst error.
double joint_grad_error(Model m, std::vector<hsi::sdtn::SdtnState> states, const std::vector<Sample>& batch,
                        const hsi::sdtn::Hyperparams& hp) {
    const double h = 1e-5;
    const Evaluation ev = evaluate_batch(m, states, batch, hp, true);
    const double f0 = ev.terms.total();
    auto f = [&] { return trn_loss(m, states, batch, hp).total(); };
    double worst = 0.0;
    auto probe = [&](double& x, double analytic) {
        const double keep = x;
        x = keep + h;
        const double up = f();
        x = keep - h;
        const double down = f();
        x = keep;
        worst = std::max(worst, rel_error(analytic, (up - down) / (2 * h), f0));
    };
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        auto v = m.params[i].value.data();
        for (std::size_t j = 0; j < v.size(); ++j) probe(v[j], ev.grad.params[i][j]);
    }
    for (std::size_t s = 0; s < states.size(); ++s) {
        auto& st = states[s];
        const auto& g = ev.grad.states[s];
        for (std::size_t k = 0; k < st.factors.factors.size(); ++k) {
            auto v = st.factors.factors[k].data();
            for (std::size_t j = 0; j < v.size(); ++j) probe(v[j], g.factors[k][j]);
        }
        for (std::size_t k = 0; k < st.glr.size(); ++k) {
            for (Eigen::Index j = 0; j < st.glr[k].U.size(); ++j) probe(st.glr[k].U.data()[j], g.U[k].data()[j]);
            for (Eigen::Index j = 0; j < st.glr[k].V.size(); ++j) probe(st.glr[k].V.data()[j], g.V[k].data()[j]);
        }
    }
    return worst;
}

// Two-class synthetic scene plus its 10-per-class training batch.
struct SmallProblem {
    hsi::data::HsiScene scene;
    hsi::data::Split split;
    std::vector<Sample> batch;
};

SmallProblem small_problem(std::size_t patch, std::uint64_t seed) {
    hsi::data::SyntheticSpec spec;
    spec.rows = 12;
    spec.cols = 12;
    spec.bands = 6;
    spec.classes = 2;
    spec.seed = seed;
    SmallProblem p{hsi::data::normalize(hsi::data::make_synthetic_scene(spec), hsi::data::Normalization::MinMax), {}, {}};
    p.split = hsi::data::make_split(p.scene, 5, seed);
    for (const auto& px : p.split.train)
        p.batch.push_back({hsi::data::extract_patch(p.scene.cube, px.row, px.col, patch), p.scene.labels.at(px.row, px.col)});
    return p;
}

TrnConfig small_config(Mode mode) {
    TrnConfig c = tiny_config(mode);
    c.patch = 5;
    c.bands = 6;
    c.classes = 2;
    c.filters3d = 2;
    c.filters2d = 4;
    c.pointwise_out = 4;
    c.hp = {};
    c.hp.gamma = 1e-4;
    c.hp.lr0 = 0.05;
    c.hp.decay = 1.0;
    c.hp.max_iters = 25;
    c.hp.line_search = hsi::sdtn::LineSearch::Backtracking;
    c.sdtn.prefit_iters = 60;
    c.sdtn.infer_iters = 5;
    return c;
}

}  // namespace

TEST_CASE("mode names and config validation") {
    CHECK(parse_mode("trn") == Mode::Trn);
    CHECK(parse_mode("sdtn") == Mode::SdtnOnly);
    CHECK(parse_mode("cnn") == Mode::CnnBaseline);
    for (Mode m : {Mode::Trn, Mode::SdtnOnly, Mode::CnnBaseline}) CHECK(parse_mode(mode_name(m)) == m);
    CHECK_THROWS_AS((void)parse_mode("TRN!"), hsi::ConfigError);

    TrnConfig c = tiny_config(Mode::Trn);
    CHECK_NOTHROW(c.validate());
    auto bad = [&](auto edit) {
        TrnConfig d = c;
        edit(d);
        CHECK_THROWS_AS(d.validate(), hsi::ConfigError);
    };
    bad([](TrnConfig& d) { d.patch = 4; });
    bad([](TrnConfig& d) { d.classes = 1; });
    bad([](TrnConfig& d) { d.kernel3d = {3, 3}; });
    bad([](TrnConfig& d) { d.attention_reduction = 0; });
    bad([](TrnConfig& d) { d.hp.lr0 = 0.0; });
    bad([](TrnConfig& d) { d.sdtn.rank = 0; });
    CHECK(c.fused_channels() == 2 * 4 + 2);
}

TEST_CASE("parameter layout per mode") {
    auto names = [](const Model& m) {
        std::vector<std::string> n;
        for (const auto& p : m.params) n.push_back(p.name);
        return n;
    };
    const Model trn = init_model(tiny_config(Mode::Trn), 1);
    const Model cnn = init_model(tiny_config(Mode::CnnBaseline), 1);
    const Model sd = init_model(tiny_config(Mode::SdtnOnly), 1);
    CHECK(names(sd) == std::vector<std::string>{"head.w", "head.b"});
    auto n = names(cnn);
    CHECK(std::find(n.begin(), n.end(), "projection.w") == n.end());
    n.push_back("projection.w");
    n.push_back("projection.b");
    CHECK(names(trn) == n);
    CHECK(trn.get("classifier.w").shape() == Shape{3, 3 * 3 * 3});
    CHECK(trn.get("conv3d.w").shape() == Shape{2, 1, 3, 3, 3});
    CHECK(trn.get("depthwise.w").shape() == Shape{10, 1, 3, 3});
    CHECK_THROWS_AS((void)trn.get("nope"), std::out_of_range);
    // Same seed, same weights.
    CHECK(init_model(tiny_config(Mode::Trn), 1).get("conv2d.w") == trn.get("conv2d.w"));
}

TEST_CASE("fresh model predicts uniform probabilities") {
    std::mt19937_64 rng(3);
    for (Mode mode : {Mode::Trn, Mode::SdtnOnly, Mode::CnnBaseline}) {
        const TrnConfig c = tiny_config(mode);
        const Model m = init_model(c, 7);
        const auto p = forward(m, oracle::random_tensor(Shape{3, 3, 4}, rng));
        REQUIRE(p.size() == 3);
        for (double v : p) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));
    }
}

TEST_CASE("probabilities sum to one and follow the classifier bias") {
    std::mt19937_64 rng(4);
    const TrnConfig c = tiny_config(Mode::Trn);
    for (int rep = 0; rep < 10; ++rep) {
        const Model m = random_model(c, rng);
        const auto p = forward(m, oracle::random_tensor(Shape{3, 3, 4}, rng));
        CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        for (double v : p) CHECK(v > 0.0);
    }
    // Zero classifier weight: logits equal the bias whatever the input.
    Model m = init_model(c, 2);
    m.get("classifier.b")[0] = std::log(2.0);
    const auto p = forward(m, oracle::random_tensor(Shape{3, 3, 4}, rng));
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-14));
    CHECK_THROWS_AS((void)forward(m, DenseTensor(Shape{3, 3, 5})), std::invalid_argument);
}

TEST_CASE("spectral-only forward equals pooled affine softmax by loops") {
    std::mt19937_64 rng(5);
    const TrnConfig c = tiny_config(Mode::SdtnOnly);
    for (int rep = 0; rep < 20; ++rep) {
        const Model m = random_model(c, rng);
        const DenseTensor h = oracle::random_tensor(Shape{3, 3, 4}, rng);
        const DenseTensor& w = m.get("head.w");
        const DenseTensor& b = m.get("head.b");
        std::vector<double> logits(3);
        for (std::size_t k = 0; k < 3; ++k) {
            double z = b[k];
            for (std::size_t band = 0; band < 4; ++band) {
                double mean = 0.0;
                for (std::size_t r = 0; r < 3; ++r)
                    for (std::size_t col = 0; col < 3; ++col) mean += h.at({r, col, band});
                z += w.at({k, band}) * mean / 9.0;
            }
            logits[k] = z;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (double z : logits) sum += std::exp(z - mx);
        const auto p = forward(m, h);
        for (std::size_t k = 0; k < 3; ++k) CHECK(p[k] == doctest::Approx(std::exp(logits[k] - mx) / sum).epsilon(1e-12));
    }
}

TEST_CASE("argmax breaks ties toward the lowest class") {
    CHECK(argmax_class({0.2, 0.4, 0.4}) == 2);
    CHECK(argmax_class({0.5, 0.5}) == 1);
    CHECK(argmax_class({0.1, 0.2, 0.7}) == 3);
    CHECK_THROWS((void)argmax_class({}));
}

TEST_CASE("joint loss terms recomputed independently") {
    std::mt19937_64 rng(6);
    const TrnConfig c = tiny_config(Mode::Trn);
    const auto batch = random_batch(c, 4, rng);
    const auto states = random_states(c, 4, rng);

    SUBCASE("no network terms: sum of the per-patch decomposition losses") {
        auto hp = c.hp;
        hp.beta = 0.0;
        hp.gamma = 0.0;
        const TrnLossTerms t = trn_loss(random_model(c, rng), states, batch, hp);
        double rec = 0, glr = 0, reg = 0;
        for (std::size_t i = 0; i < 4; ++i) {
            const auto s = hsi::sdtn::sdtn_loss_terms(states[i], batch[i].patch, std::nullopt, hp);
            rec += s.reconstruction;
            glr += s.low_rank;
            reg += s.regularization;
        }
        CHECK(t.reconstruction == doctest::Approx(rec).epsilon(1e-14));
        CHECK(t.low_rank == doctest::Approx(glr).epsilon(1e-14));
        CHECK(t.regularization == doctest::Approx(reg).epsilon(1e-14));
        CHECK(t.classification == 0.0);
        CHECK(t.consistency == 0.0);
    }
    SUBCASE("zero classifier and projection") {
        Model m = random_model(c, rng);
        for (const char* name : {"classifier.w", "classifier.b", "projection.w", "projection.b"})
            m.get(name) = DenseTensor(m.get(name).shape());
        const TrnLossTerms t = trn_loss(m, states, batch, c.hp);
        CHECK(t.classification == doctest::Approx(c.hp.beta * std::log(3.0)).epsilon(1e-13));
        // Projection of anything is zero, so the gap is the squared norm of each reconstruction.
        double norm = 0.0;
        for (const auto& s : states) {
            const DenseTensor h = oracle::brute_force_fctn(s.factors);
            for (double v : h.data()) norm += v * v;
        }
        CHECK(t.consistency == doctest::Approx(c.hp.gamma * norm).epsilon(1e-12));
        CHECK(t.total() == doctest::Approx(t.reconstruction + t.low_rank + t.regularization + t.classification +
                                           t.consistency));
    }
    SUBCASE("cross-entropy matches forward probabilities") {
        const Model m = random_model(c, rng);
        double xent = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            const auto p = forward(m, hsi::fctn_reconstruct(states[i].factors));
            xent -= std::log(p[static_cast<std::size_t>(batch[i].label - 1)]);
        }
        CHECK(trn_loss(m, states, batch, c.hp).classification ==
              doctest::Approx(c.hp.beta * xent / 4.0).epsilon(1e-12));
    }
}

TEST_CASE("joint objective gradients match central differences") {
    std::mt19937_64 rng(7);
    for (Mode mode : {Mode::Trn, Mode::SdtnOnly}) {
        const TrnConfig c = tiny_config(mode);
        const auto hp = effective_hyperparams(c);
        double worst = 0.0;
        for (int rep = 0; rep < 20; ++rep)
            worst = std::max(worst, joint_grad_error(random_model(c, rng), random_states(c, 2, rng),
                                                     random_batch(c, 2, rng), hp));
        INFO(mode_name(mode));
        CHECK(worst <= 1e-4);
    }
    const TrnConfig c = tiny_config(Mode::CnnBaseline);
    double worst = 0.0;
    for (int rep = 0; rep < 5; ++rep)
        worst = std::max(worst, joint_grad_error(random_model(c, rng), {}, random_batch(c, 2, rng), effective_hyperparams(c)));
    CHECK(worst <= 1e-4);
}

TEST_CASE("zero consistency weight decouples the projection") {
    std::mt19937_64 rng(8);
    const TrnConfig c = tiny_config(Mode::Trn);
    const auto batch = random_batch(c, 3, rng);
    const auto states = random_states(c, 3, rng);
    const Model m = random_model(c, rng);
    auto hp = c.hp;
    hp.gamma = 0.0;
    const Evaluation ev = evaluate_batch(m, states, batch, hp, true);
    for (std::size_t i = 0; i < m.params.size(); ++i)
        if (m.params[i].name.starts_with("projection"))
            for (double g : ev.grad.params[i].data()) CHECK(g == 0.0);

    // Classification off as well: factor gradients are exactly the decomposition gradients.
    hp.beta = 0.0;
    const Evaluation only = evaluate_batch(m, states, batch, hp, true);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto ref = hsi::sdtn::sdtn_grad(states[i], batch[i].patch, std::nullopt, hp);
        for (std::size_t k = 0; k < 3; ++k) CHECK(only.grad.states[i].factors[k] == ref.factors[k]);
    }
    for (const auto& g : only.grad.params)
        for (double v : g.data()) CHECK(v == 0.0);
}

TEST_CASE("CNN baseline carries no tensor parameters") {
    const TrnConfig c = small_config(Mode::CnnBaseline);
    const auto hp = effective_hyperparams(c);
    CHECK(hp.alpha == 0.0);
    CHECK(hp.gamma == 0.0);
    CHECK(hp.lambda3 == 0.0);
    auto p = small_problem(c.patch, 1);
    const Trained t = train(p.batch, c);
    CHECK(t.states.empty());
    for (const auto& r : t.log) {
        CHECK(r.terms.reconstruction == 0.0);
        CHECK(r.terms.low_rank == 0.0);
        CHECK(r.terms.regularization == 0.0);
        CHECK(r.terms.consistency == 0.0);
    }
    const Evaluation ev = evaluate_batch(t.model, {}, p.batch, hp, true);
    CHECK(ev.grad.states.empty());
    CHECK(effective_hyperparams(small_config(Mode::SdtnOnly)).gamma == 0.0);
}

TEST_CASE("training separates the classes and is deterministic") {
    for (Mode mode : {Mode::CnnBaseline, Mode::Trn}) {
        INFO(mode_name(mode));
        const TrnConfig c = small_config(mode);
        auto p = small_problem(c.patch, 2);
        std::vector<TrainRecord> streamed;
        const Trained a = train(p.batch, c, [&](const TrainRecord& r) { streamed.push_back(r); });
        REQUIRE(!a.log.empty());
        CHECK(streamed.size() == a.log.size());
        CHECK(a.log.back().train_accuracy == 1.0);
        CHECK(a.log.front().step == 0.0);
        // Backtracking only accepts strict decreases.
        for (std::size_t i = 1; i < a.log.size(); ++i) CHECK(a.log[i].terms.total() < a.log[i - 1].terms.total());

        const Trained b = train(p.batch, c);
        REQUIRE(a.log.size() == b.log.size());
        for (std::size_t i = 0; i < a.log.size(); ++i) {
            CHECK(a.log[i].terms.total() == b.log[i].terms.total());
            CHECK(a.log[i].step == b.log[i].step);
        }
        for (std::size_t i = 0; i < a.model.params.size(); ++i) CHECK(a.model.params[i].value == b.model.params[i].value);
    }
}

TEST_CASE("fixed schedule steps at the scheduled rate") {
    TrnConfig c = small_config(Mode::CnnBaseline);
    c.hp.line_search = hsi::sdtn::LineSearch::Schedule;
    c.hp.lr0 = 0.01;
    c.hp.decay = 0.5;
    c.hp.decay_every = 2;
    c.hp.max_iters = 4;
    auto p = small_problem(c.patch, 3);
    const Trained t = train(p.batch, c);
    REQUIRE(t.log.size() == 5);
    CHECK(t.log[1].step == 0.01);
    CHECK(t.log[3].step == 0.005);
    CHECK(t.log[4].lr == 0.0025);
    CHECK_THROWS_AS((void)train({}, c), std::invalid_argument);
}

TEST_CASE("nearest training sample by center spectrum") {
    Trained t;
    for (double v : {0.0, 1.0, 1.0, 3.0}) {
        DenseTensor c(Shape{2});
        c[0] = v;
        t.centers.push_back(c);
    }
    DenseTensor patch(Shape{3, 3, 2});
    patch.at({1, 1, 0}) = 1.2;
    patch.at({0, 0, 0}) = 100.0;  // off-center pixels are ignored
    CHECK(nearest_sample(t, patch) == 1);
    patch.at({1, 1, 0}) = 2.0;
    CHECK(nearest_sample(t, patch) == 1);  // equidistant from samples 1, 2 and 3
    CHECK(center_spectrum(patch)[0] == 2.0);
    CHECK_THROWS((void)nearest_sample(Trained{}, patch));
}

TEST_CASE("classification map") {
    const TrnConfig c = small_config(Mode::Trn);
    auto p = small_problem(c.patch, 4);
    const Trained t = train(p.batch, c);
    const auto map = predict_map(t, p.scene.cube, &p.scene.labels);
    CHECK(map.rows == 12);
    CHECK(map.cols == 12);
    std::size_t ok = 0;
    for (std::size_t r = 0; r < 12; ++r)
        for (std::size_t col = 0; col < 12; ++col) {
            if (p.scene.labels.at(r, col) == 0) CHECK(map.at(r, col) == 0);
            ok += map.at(r, col) == p.scene.labels.at(r, col);
        }
    for (const auto& px : p.split.train) CHECK(map.at(px.row, px.col) == p.scene.labels.at(px.row, px.col));
    CHECK(static_cast<double>(ok) / 144.0 >= 0.9);

    // Unmasked maps assign a class to every pixel.
    const auto full = predict_map(t, p.scene.cube);
    for (auto v : full.data) CHECK((v == 1 || v == 2));
    CHECK_THROWS_AS((void)predict_map(t, DenseTensor(Shape{4, 4, 5})), hsi::DataError);
}

TEST_CASE("constant classifier yields a constant map") {
    const TrnConfig c = small_config(Mode::CnnBaseline);
    auto p = small_problem(c.patch, 5);
    Trained t{init_model(c, 0), {}, {}, {}};
    t.model.get("classifier.b")[1] = 1.0;
    for (const auto& s : p.batch) t.centers.push_back(center_spectrum(s.patch));
    for (auto v : predict_map(t, p.scene.cube).data) CHECK(v == 2);
}

TEST_CASE("permuting class ids permutes the map") {
    const TrnConfig c = small_config(Mode::CnnBaseline);
    auto p = small_problem(c.patch, 6);
    const Trained a = train(p.batch, c);
    auto swapped = p.batch;
    for (auto& s : swapped) s.label = 3 - s.label;
    const Trained b = train(swapped, c);
    const auto ma = predict_map(a, p.scene.cube);
    const auto mb = predict_map(b, p.scene.cube);
    for (std::size_t i = 0; i < ma.data.size(); ++i) CHECK(mb.data[i] == 3 - ma.data[i]);
}
