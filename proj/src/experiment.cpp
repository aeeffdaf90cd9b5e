#include "hsi/experiment.hpp"

#include <set>
#include <sstream>

#include "hsi/errors.hpp"
#include "hsi/eval.hpp"
#include "hsi/fctn.hpp"
#include "hsi/io.hpp"

namespace hsi::experiment {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Typed access to one JSON object that rejects keys it was not asked about.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_.empty() ? "config must be a JSON object" : path_ + " must be an object");
    }

    [[noreturn]] void fail(const std::string& why) const { throw ConfigError(why); }

    std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

    static bool natural(const json& v) {
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    }

    const json* find(const std::string& k) {
        seen_.insert(k);
        const auto it = j_.find(k);
        return it == j_.end() ? nullptr : &*it;
    }

    void size(const std::string& k, std::size_t& out, std::size_t min = 0) {
        if (const json* v = find(k)) {
            if (!natural(*v)) fail(key(k) + " must be a non-negative integer");
            out = v->get<std::size_t>();
        }
        if (out < min) fail(key(k) + " must be >= " + std::to_string(min));
    }

    void u64(const std::string& k, std::uint64_t& out) {
        if (const json* v = find(k)) {
            if (!natural(*v)) fail(key(k) + " must be a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }

    void real(const std::string& k, double& out) {
        if (const json* v = find(k)) {
            if (!v->is_number()) fail(key(k) + " must be a number");
            out = v->get<double>();
        }
        if (!std::isfinite(out)) fail(key(k) + " must be finite");
    }

    void text(const std::string& k, std::string& out) {
        if (const json* v = find(k)) {
            if (!v->is_string()) fail(key(k) + " must be a string");
            out = v->get<std::string>();
        }
    }

    void flag(const std::string& k, bool& out) {
        if (const json* v = find(k)) {
            if (!v->is_boolean()) fail(key(k) + " must be true or false");
            out = v->get<bool>();
        }
    }

    void path(const std::string& k, fs::path& out, const fs::path& base) {
        std::string s;
        text(k, s);
        if (!s.empty()) out = fs::path(s).is_absolute() ? fs::path(s) : base / s;
    }

    std::optional<Section> child(const std::string& k) {
        if (const json* v = find(k)) return Section(*v, key(k));
        return std::nullopt;
    }

    // Call after every read so that typos surface as errors.
    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) fail("unknown config key '" + key(k) + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::string line_search_name(sdtn::LineSearch l) {
    return l == sdtn::LineSearch::Backtracking ? "backtracking" : "schedule";
}

std::string normalization_name(data::Normalization n) {
    switch (n) {
        case data::Normalization::MinMax: return "minmax";
        case data::Normalization::Standardize: return "standardize";
        case data::Normalization::None: return "none";
    }
    return "?";
}

json terms_json(const trn::TrnLossTerms& t) {
    return {{"reconstruction", t.reconstruction}, {"low_rank", t.low_rank},       {"regularization", t.regularization},
            {"classification", t.classification}, {"consistency", t.consistency}, {"total", t.total()}};
}

json pixel_list(const std::vector<data::Pixel>& px) {
    json a = json::array();
    for (const auto& p : px) a.push_back({p.row, p.col});
    return a;
}

void write_json(const fs::path& path, const json& j) { io::write_atomic(path, j.dump(2) + "\n"); }

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::vector<trn::Sample> training_batch(const data::HsiScene& scene, const data::Split& split, std::size_t patch) {
    std::vector<trn::Sample> batch;
    for (const auto& p : split.train)
        batch.push_back({data::extract_patch(scene.cube, p.row, p.col, patch), scene.labels.at(p.row, p.col)});
    return batch;
}

}  // namespace

ExperimentConfig parse_config(const json& j, const fs::path& base) {
    ExperimentConfig c;
    Section root(j, "");
    root.u64("seed", c.seed);
    root.path("out", c.out, base);
    if (!root.find("out")) c.out = base / c.out;
    std::string mode = trn::mode_name(c.trn.mode);
    root.text("mode", mode);
    c.trn.mode = trn::parse_mode(mode);
    root.text("map", c.map);
    if (c.map != "labeled" && c.map != "full") root.fail("map must be \"labeled\" or \"full\"");

    if (auto d = root.child("data")) {
        d->path("cube", c.cube, base);
        d->path("labels", c.labels, base);
        if (d->find("classes")) {
            std::size_t k = 0;
            d->size("classes", k, 1);
            c.classes = k;
        }
        std::string norm = normalization_name(c.normalization);
        d->text("normalization", norm);
        c.normalization = data::parse_normalization(norm);
        d->finish();
    }
    if (auto s = root.child("split")) {
        s->size("n_per_class", c.n_per_class, 1);
        s->finish();
    }
    if (auto n = root.child("network")) {
        auto& t = c.trn;
        n->size("patch", t.patch, 1);
        n->size("filters3d", t.filters3d, 1);
        if (const json* k = n->find("kernel3d")) {
            if (!k->is_array() || k->size() != 3) n->fail("network.kernel3d must be an array of 3 positive integers");
            for (const auto& e : *k)
                if (!Section::natural(e) || e.get<std::size_t>() == 0)
                    n->fail("network.kernel3d must be an array of 3 positive integers");
            t.kernel3d = k->get<std::vector<std::size_t>>();
        }
        n->size("filters2d", t.filters2d, 1);
        n->size("kernel2d", t.kernel2d, 1);
        n->size("depthwise_kernel", t.depthwise_kernel, 1);
        n->size("pointwise_out", t.pointwise_out, 1);
        n->size("attention_reduction", t.attention_reduction, 1);
        n->finish();
    }
    if (auto h = root.child("hyperparams")) {
        auto& hp = c.trn.hp;
        h->real("alpha", hp.alpha);
        h->real("beta", hp.beta);
        h->real("gamma", hp.gamma);
        h->real("lambda1", hp.lambda1);
        h->real("lambda2", hp.lambda2);
        h->real("lambda3", hp.lambda3);
        h->real("lr0", hp.lr0);
        h->real("decay", hp.decay);
        h->size("decay_every", hp.decay_every, 1);
        h->size("max_iters", hp.max_iters);
        h->real("tol", hp.tol);
        std::string ls = line_search_name(hp.line_search);
        h->text("line_search", ls);
        if (ls == "schedule")
            hp.line_search = sdtn::LineSearch::Schedule;
        else if (ls == "backtracking")
            hp.line_search = sdtn::LineSearch::Backtracking;
        else
            h->fail("hyperparams.line_search must be \"schedule\" or \"backtracking\"");
        h->finish();
    }
    if (auto s = root.child("sdtn")) {
        auto& t = c.trn.sdtn;
        s->size("rank", t.rank, 1);
        s->size("glr_rank", t.glr_rank, 1);
        s->size("prefit_iters", t.prefit_iters);
        s->real("prefit_lr", t.prefit_lr);
        s->size("infer_iters", t.infer_iters);
        s->real("lr_scale", t.lr_scale);
        s->finish();
    }
    if (auto d = root.child("decompose")) {
        auto& t = c.decompose;
        d->text("target", t.target);
        if (t.target != "cube" && t.target != "patches") d->fail("decompose.target must be \"cube\" or \"patches\"");
        if (const json* px = d->find("pixels")) {
            if (!px->is_array()) d->fail("decompose.pixels must be an array of [row, col] pairs");
            for (const auto& p : *px) {
                if (!p.is_array() || p.size() != 2 || !Section::natural(p[0]) || !Section::natural(p[1]))
                    d->fail("decompose.pixels must be an array of [row, col] pairs");
                t.pixels.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>()});
            }
        }
        if (t.target == "patches" && t.pixels.empty()) d->fail("decompose.pixels is required for target \"patches\"");
        d->size("rank", t.rank, 1);
        d->size("glr_rank", t.glr_rank, 1);
        d->flag("adapt", t.adapt);
        d->real("eps_trunc", t.policy.eps_trunc);
        d->real("eps_grow", t.policy.eps_grow);
        d->size("rank_max", t.policy.rank_max, 1);
        d->size("adapt_rounds", t.adapt_rounds);
        if (!(t.policy.eps_trunc >= 0.0) || !(t.policy.eps_grow > 0.0)) d->fail("decompose eps values must be positive");
        d->finish();
    }
    if (auto g = root.child("gradcheck")) {
        auto& t = c.gradcheck;
        g->size("instances", t.instances, 1);
        g->real("tolerance", t.tolerance);
        g->text("corrupt", t.corrupt);
        if (!(t.tolerance > 0.0)) g->fail("gradcheck.tolerance must be > 0");
        const auto& names = gradcheck::component_names();
        if (!t.corrupt.empty() && std::find(names.begin(), names.end(), t.corrupt) == names.end())
            g->fail("gradcheck.corrupt names no component: '" + t.corrupt + "'");
        g->finish();
    }
    root.finish();

    // Everything except the data-derived sizes can be checked now.
    trn::TrnConfig probe = c.trn;
    probe.bands = 2;
    probe.classes = 2;
    probe.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::string text;
    try {
        text = io::read_text(path);
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j, path.parent_path());
}

json to_json(const ExperimentConfig& c) {
    const auto& t = c.trn;
    const auto& hp = t.hp;
    json j;
    j["seed"] = c.seed;
    j["out"] = c.out.string();
    j["mode"] = trn::mode_name(t.mode);
    j["map"] = c.map;
    j["data"] = {{"cube", c.cube.string()}, {"labels", c.labels.string()}, {"normalization", normalization_name(c.normalization)}};
    if (c.classes) j["data"]["classes"] = *c.classes;
    j["split"] = {{"n_per_class", c.n_per_class}};
    j["network"] = {{"patch", t.patch},
                    {"filters3d", t.filters3d},
                    {"kernel3d", t.kernel3d},
                    {"filters2d", t.filters2d},
                    {"kernel2d", t.kernel2d},
                    {"depthwise_kernel", t.depthwise_kernel},
                    {"pointwise_out", t.pointwise_out},
                    {"attention_reduction", t.attention_reduction}};
    j["hyperparams"] = {{"alpha", hp.alpha},         {"beta", hp.beta},       {"gamma", hp.gamma},
                        {"lambda1", hp.lambda1},     {"lambda2", hp.lambda2}, {"lambda3", hp.lambda3},
                        {"lr0", hp.lr0},             {"decay", hp.decay},     {"decay_every", hp.decay_every},
                        {"max_iters", hp.max_iters}, {"tol", hp.tol},         {"line_search", line_search_name(hp.line_search)}};
    j["sdtn"] = {{"rank", t.sdtn.rank},           {"glr_rank", t.sdtn.glr_rank},       {"prefit_iters", t.sdtn.prefit_iters},
                 {"prefit_lr", t.sdtn.prefit_lr}, {"infer_iters", t.sdtn.infer_iters}, {"lr_scale", t.sdtn.lr_scale}};
    const auto& d = c.decompose;
    j["decompose"] = {{"target", d.target},
                      {"pixels", pixel_list(d.pixels)},
                      {"rank", d.rank},
                      {"glr_rank", d.glr_rank},
                      {"adapt", d.adapt},
                      {"eps_trunc", d.policy.eps_trunc},
                      {"eps_grow", d.policy.eps_grow},
                      {"rank_max", d.policy.rank_max},
                      {"adapt_rounds", d.adapt_rounds}};
    j["gradcheck"] = {{"instances", c.gradcheck.instances}, {"tolerance", c.gradcheck.tolerance}, {"corrupt", c.gradcheck.corrupt}};
    return j;
}

std::string model_digest(const ExperimentConfig& cfg) {
    json j = to_json(cfg);
    for (const char* k : {"out", "map", "decompose", "gradcheck"}) j.erase(k);
    j["hyperparams"].erase("max_iters");  // stopping early yields a compatible model
    return archive::fnv1a64_hex(j.dump());
}

data::HsiScene load_scene(const ExperimentConfig& cfg) {
    if (cfg.cube.empty() || cfg.labels.empty()) throw ConfigError("config lacks data.cube or data.labels");
    return data::normalize(data::load_scene(cfg.cube, cfg.labels, cfg.classes), cfg.normalization);
}

trn::TrnConfig resolved_trn(const ExperimentConfig& cfg, const data::HsiScene& scene) {
    trn::TrnConfig t = cfg.trn;
    t.bands = scene.bands();
    t.classes = scene.classes;
    t.hp.seed = cfg.seed;
    try {
        t.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(e.what()) + " (with " + std::to_string(t.bands) + " bands and " +
                          std::to_string(t.classes) + " classes from the data)");
    }
    return t;
}

void save_checkpoint(const fs::path& path, const trn::Trained& t, const std::string& digest) {
    archive::Archive a;
    json names = json::array();
    for (const auto& p : t.model.params) {
        names.push_back(p.name);
        a.put("param/" + p.name, p.value);
    }
    a.meta = {{"kind", "checkpoint"}, {"digest", digest}, {"mode", trn::mode_name(t.model.config.mode)},
              {"params", names},      {"samples", t.centers.size()}};
    for (std::size_t i = 0; i < t.centers.size(); ++i) a.put("center/" + std::to_string(i), t.centers[i]);
    for (std::size_t i = 0; i < t.states.size(); ++i) archive::put_state(a, "state" + std::to_string(i), t.states[i]);
    archive::write(path, a);
}

trn::Trained load_checkpoint(const fs::path& path, const trn::TrnConfig& config, const std::string& digest) {
    const archive::Archive a = archive::read(path);
    try {
        if (a.meta.at("kind") != "checkpoint") throw DataError(path.string() + ": not a checkpoint archive");
        const std::string stored = a.meta.at("digest").get<std::string>();
        if (stored != digest)
            throw CheckpointMismatch(path.string() + ": checkpoint was trained under config digest " + stored +
                                     ", current config has " + digest);
        trn::Trained t{trn::init_model(config, 0), {}, {}, {}};
        for (auto& p : t.model.params) {
            const DenseTensor& v = a.get("param/" + p.name);
            if (v.shape() != p.value.shape()) throw CheckpointMismatch(path.string() + ": parameter " + p.name + " has the wrong shape");
            p.value = v;
        }
        const std::size_t n = a.meta.at("samples").get<std::size_t>();
        for (std::size_t i = 0; i < n; ++i) {
            t.centers.push_back(a.get("center/" + std::to_string(i)));
            if (config.mode != trn::Mode::CnnBaseline) t.states.push_back(archive::get_state(a, "state" + std::to_string(i)));
        }
        return t;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": bad checkpoint manifest: " + e.what());
    }
}

json record_json(const trn::TrainRecord& r) {
    json j{{"iter", r.iter}, {"lr", r.lr}, {"step", r.step}};
    j.update(terms_json(r.terms));
    j["train_accuracy"] = r.train_accuracy;
    return j;
}

json cmd_decompose(const ExperimentConfig& cfg) {
    const data::HsiScene scene = load_scene(cfg);
    const auto& d = cfg.decompose;
    std::vector<std::pair<std::string, DenseTensor>> targets;
    if (d.target == "cube") {
        targets.emplace_back("cube", scene.cube);
    } else {
        for (const auto& p : d.pixels) {
            if (p.row >= scene.rows() || p.col >= scene.cols())
                throw DataError("decompose pixel (" + std::to_string(p.row) + ", " + std::to_string(p.col) +
                                ") lies outside the " + std::to_string(scene.rows()) + "x" + std::to_string(scene.cols()) +
                                " scene");
            targets.emplace_back("pixel " + std::to_string(p.row) + " " + std::to_string(p.col),
                                 data::extract_patch(scene.cube, p.row, p.col, cfg.trn.patch));
        }
    }

    archive::Archive arch;
    json reports = json::array();
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto& [name, x] = targets[i];
        const RankMatrix ranks = RankMatrix::uniform(x.order(), d.rank);
        const auto glr = sdtn::clamp_glr_ranks(x.shape(), ranks, d.glr_rank);
        sdtn::Hyperparams hp = cfg.trn.hp;
        hp.seed = cfg.seed + i;
        json rep{{"name", name}, {"shape", x.shape().dims()}};
        sdtn::SdtnState s;
        if (d.adapt) {
            auto fit = sdtn::fit_adaptive(x, ranks, glr, hp, d.policy, d.adapt_rounds);
            json path = json::array();
            for (const auto& r : fit.rank_path) path.push_back(r.entries());
            rep["rank_path"] = path;
            rep["error_path"] = fit.error_path;
            s = std::move(fit.state);
        } else {
            s = sdtn::fit(x, ranks, glr, hp);
        }
        const auto t = sdtn::sdtn_loss_terms(s, x, std::nullopt, hp);
        std::vector<std::size_t> glr_used;
        for (const auto& p : s.glr) glr_used.push_back(p.rank);
        rep["ranks"] = s.factors.ranks.entries();
        rep["glr_ranks"] = glr_used;
        rep["iterations"] = s.iter;
        rep["initial_loss"] = s.loss_history.front();
        rep["final_loss"] = s.loss_history.back();
        rep["loss_history"] = s.loss_history;
        rep["terms"] = {{"reconstruction", t.reconstruction}, {"low_rank", t.low_rank}, {"regularization", t.regularization},
                        {"total", t.total()}};
        rep["relative_error"] = sdtn::relative_error(s, x);
        rep["parameters"] = s.factors.parameter_count();
        reports.push_back(rep);
        archive::put_state(arch, "target" + std::to_string(i), s);
    }
    arch.meta["kind"] = "factors";
    json names = json::array();
    for (const auto& t : targets) names.push_back(t.first);
    arch.meta["targets"] = names;

    json report{{"command", "decompose"}, {"seed", cfg.seed}, {"targets", reports}};
    ensure_dir(cfg.out);
    archive::write(cfg.out / "factors.hsiarch", arch);
    write_json(cfg.out / "decompose.json", report);
    return report;
}

json cmd_train(const ExperimentConfig& cfg, std::ostream* progress) {
    const data::HsiScene scene = load_scene(cfg);
    const trn::TrnConfig tc = resolved_trn(cfg, scene);
    const data::Split split = data::make_split(scene, cfg.n_per_class, cfg.seed);
    const auto batch = training_batch(scene, split, tc.patch);

    std::string log;
    const trn::Trained t = trn::train(batch, tc, [&](const trn::TrainRecord& r) {
        log += record_json(r).dump() + "\n";
        if (progress && (r.iter % 10 == 0 || r.iter == tc.hp.max_iters))
            *progress << "iter " << r.iter << "  total " << r.terms.total() << "  train acc " << r.train_accuracy << "\n";
    });

    const std::string digest = model_digest(cfg);
    json report{{"command", "train"},
                {"mode", trn::mode_name(tc.mode)},
                {"config_digest", digest},
                {"seed", cfg.seed},
                {"bands", tc.bands},
                {"classes", tc.classes},
                {"train_samples", split.train.size()},
                {"test_samples", split.test.size()},
                {"network_parameters", t.model.parameter_count()},
                {"iterations", t.log.back().iter},
                {"final", record_json(t.log.back())}};
    ensure_dir(cfg.out);
    io::write_atomic(cfg.out / "train_log.jsonl", log);
    save_checkpoint(cfg.out / "checkpoint.hsiarch", t, digest);
    write_json(cfg.out / "train.json", report);
    return report;
}

json cmd_evaluate(const ExperimentConfig& cfg, const std::optional<fs::path>& checkpoint) {
    const data::HsiScene scene = load_scene(cfg);
    const trn::TrnConfig tc = resolved_trn(cfg, scene);
    const data::Split split = data::make_split(scene, cfg.n_per_class, cfg.seed);
    const std::string digest = model_digest(cfg);
    const trn::Trained t = load_checkpoint(checkpoint.value_or(cfg.out / "checkpoint.hsiarch"), tc, digest);

    const data::LabelImage map = trn::predict_map(t, scene.cube, cfg.map == "labeled" ? &scene.labels : nullptr);
    const eval::ConfusionMatrix cm = eval::confusion_at(map, scene.labels, split.test, scene.classes);
    std::vector<double> per_class;
    try {
        per_class = eval::per_class(cm);
    } catch (const std::domain_error& e) {
        throw DataError(std::string("cannot score the test split: ") + e.what());
    }
    const double oa = eval::oa(cm), aa = eval::aa(cm);
    double kappa = 0.0;
    try {
        kappa = eval::kappa(cm);
    } catch (const std::domain_error& e) {
        throw DataError(std::string("cannot score the test split: ") + e.what());
    }
    json counts = json::array();
    for (std::size_t i = 0; i < cm.classes(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < cm.classes(); ++j) row.push_back(cm.at(i, j));
        counts.push_back(row);
    }
    json display_pc = json::array();
    for (double v : per_class) display_pc.push_back(eval::percent2(v));
    json report{{"command", "evaluate"},
                {"mode", trn::mode_name(tc.mode)},
                {"config_digest", digest},
                {"seed", cfg.seed},
                {"test_samples", split.test.size()},
                {"oa", oa},
                {"aa", aa},
                {"kappa", kappa},
                {"per_class", per_class},
                {"counts", counts},
                {"display", {{"oa", eval::percent2(oa)}, {"aa", eval::percent2(aa)}, {"kappa", eval::percent2(kappa)},
                             {"per_class", display_pc}}},
                {"map", {{"file", "map.ppm"}, {"rows", map.rows}, {"cols", map.cols}, {"pixels", cfg.map}}}};
    ensure_dir(cfg.out);
    io::write_atomic(cfg.out / "map.ppm", eval::render_map(map));
    write_json(cfg.out / "metrics.json", report);
    return report;
}

json cmd_gradcheck(const ExperimentConfig& cfg) {
    gradcheck::Settings s = cfg.gradcheck;
    s.seed = cfg.seed;
    json report = gradcheck::run(s).to_json();
    report["command"] = "gradcheck";
    ensure_dir(cfg.out);
    write_json(cfg.out / "gradcheck.json", report);
    return report;
}

}  // namespace hsi::experiment
