#include "bhedge/config.hpp"

#include <cmath>
#include <fmt/format.h>
#include <fstream>

namespace bhedge {

using nlohmann::json;

namespace {

json constant(double v) { return {{"form", "constant"}, {"value", v}}; }
json affine(double c, double cx) { return {{"form", "affine"}, {"c", c}, {"x", cx}}; }

json lognormal_model() {
    return {{"r", constant(0.03)},     {"b0", constant(0.0)}, {"sigma0", constant(0.0)},
            {"b1", constant(0.03)},    {"sigma1", constant(0.2)}, {"marks", json::array()},
            {"rho", 0.0},              {"x0", 0.0},           {"s1_0", 1.0},
            {"prior", {{"kind", "dirac"}}}};
}

json log_axis(double lo, double hi, int n) { return {{"lo", lo}, {"hi", hi}, {"n", n}, {"spacing", "log"}}; }

json base_doc() {
    return {{"schema_version", kSchemaVersion},
            {"grid", {{"T", 1.0}, {"n_steps", 100}}},
            {"n_paths", 10000},
            {"seed", 42},
            {"claim", {{"type", "call"}, {"strike", 1.0}}},
            {"observation", "full"},
            {"filter", {{"n_particles", 0}, {"ess_threshold", 0.5}}},
            {"surface",
             {{"n_paths", 4000},
              {"t_nodes", 11},
              {"sh1", log_axis(0.4, 2.5, 41)},
              {"estimator", "automatic"},
              {"control_variates", true}}},
            {"hedge", {{"perturbation_scale", 1.5}, {"brackets", "one-step"}}},
            {"box", {{"x", {0.0, 0.0}}, {"s1", {0.5, 2.0}}, {"n_per_axis", 5}}},
            {"export", {{"max_paths", 200}}},
            {"output", "out"}};
}

// b1(x) making the growth-optimal fraction equal pi_bar at x = 0 and x = 1
// for the hidden-factor marks below.
double hidden_factor_b1(double r, double sigma1, double pi_bar, double x) {
    const double marks[2][2] = {{0.5, -0.15}, {1.0, 0.10 * x}};
    double b1 = r + pi_bar * sigma1 * sigma1;
    for (const auto& mk : marks) b1 += mk[0] * pi_bar * mk[1] * mk[1] / (1.0 + pi_bar * mk[1]);
    return b1;
}

} // namespace

std::vector<std::string> fixture_names() {
    return {"lognormal-call", "single-mark", "jump-hidden-factor", "tree-oracle", "constant-claim", "injected-drift"};
}

json fixture_json(const std::string& name) {
    json d = base_doc();
    d["fixture"] = name;
    if (name == "lognormal-call") {
        d["model"] = lognormal_model();
        // fine enough to resolve deltas one step before maturity
        d["surface"]["t_nodes"] = 21;
        d["surface"]["sh1"] = log_axis(0.4, 2.5, 141);
    } else if (name == "constant-claim") {
        d["model"] = lognormal_model();
        d["claim"] = {{"type", "constant"}, {"value", 1.0}};
    } else if (name == "injected-drift") {
        d["model"] = lognormal_model();
        d["theta1_shift"] = 0.25;
    } else if (name == "single-mark") {
        json m = lognormal_model();
        m["r"] = constant(0.02);
        m["b1"] = constant(0.12);
        m["sigma1"] = constant(0.0);
        m["marks"] = json::array({{{"intensity", 1.0}, {"k0", constant(0.0)}, {"k1", constant(0.5)}}});
        d["model"] = m;
        d["surface"]["sh1"] = log_axis(0.5, 6.0, 41);
    } else if (name == "jump-hidden-factor") {
        const double r = 0.02, s1 = 0.25, pi_bar = 0.5;
        const double b_lo = hidden_factor_b1(r, s1, pi_bar, 0.0), b_hi = hidden_factor_b1(r, s1, pi_bar, 1.0);
        json m = lognormal_model();
        m["r"] = constant(r);
        m["sigma1"] = constant(s1);
        m["b1"] = affine(b_lo, b_hi - b_lo);
        m["b0"] = affine(0.5, -1.0);  // compensates the flip of mark 0
        m["marks"] = json::array({
            {{"name", "common"}, {"intensity", 0.5}, {"k0", affine(1.0, -2.0)}, {"k1", constant(-0.15)}},
            {{"name", "factor"}, {"intensity", 1.0}, {"k0", constant(0.0)}, {"k1", affine(0.0, 0.10)}},
        });
        m["prior"] = {{"kind", "discrete"}, {"values", {0.0, 1.0}}, {"probs", {0.5, 0.5}}};
        d["model"] = m;
        d["observation"] = "prices";
        d["surface"]["x"] = json::array({0.0, 1.0});
        d["surface"]["t_nodes"] = 51;
        d["surface"]["sh1"] = log_axis(0.3, 3.2, 141);
        d["box"]["x"] = {0.0, 1.0};
    } else if (name == "tree-oracle") {
        json m = lognormal_model();
        m["r"] = constant(0.01);
        m["sigma1"] = affine(0.2, 0.1);
        m["b1"] = affine(0.06, 0.04);
        m["b0"] = affine(1.0, -2.0);
        m["marks"] = json::array({{{"intensity", 1.0}, {"k0", affine(1.0, -2.0)}, {"k1", affine(-0.1, -0.1)}}});
        m["prior"] = {{"kind", "discrete"}, {"values", {0.0, 1.0}}, {"probs", {0.5, 0.5}}};
        d["model"] = m;
        d["grid"]["n_steps"] = 3;
        d["observation"] = "prices";
        d["surface"]["x"] = json::array({0.0, 1.0});
        d["surface"]["t_nodes"] = 4;
        d["surface"]["sh1"] = log_axis(0.3, 3.2, 71);
        d["box"]["x"] = {0.0, 1.0};
    } else {
        throw ConfigError(fmt::format("unknown fixture '{}'", name));
    }
    return d;
}

json coefficient_json(const Coefficient& c) {
    switch (c.form) {
    case Coefficient::Form::constant:
        return constant(c.c);
    case Coefficient::Form::mean_reverting:
        return {{"form", "mean-reverting"}, {"kappa", c.kappa}, {"level", c.level}};
    case Coefficient::Form::affine:
        break;
    }
    return {{"form", "affine"}, {"c", c.c}, {"x", c.cx}, {"s1", c.cs}, {"t", c.ct}};
}

namespace {

double num(const json& j, const char* key, const std::string& where, double fallback = NAN) {
    if (!j.contains(key)) {
        if (std::isnan(fallback)) throw ConfigError(fmt::format("{}: missing '{}'", where, key));
        return fallback;
    }
    if (!j.at(key).is_number()) throw ConfigError(fmt::format("{}: '{}' must be a number", where, key));
    return j.at(key).get<double>();
}

std::vector<double> parse_axis(const json& j, const std::string& where) {
    if (j.is_array()) {
        std::vector<double> v;
        for (const auto& e : j) {
            if (!e.is_number()) throw ConfigError(where + ": axis entries must be numbers");
            v.push_back(e.get<double>());
        }
        for (std::size_t i = 1; i < v.size(); ++i)
            if (!(v[i] > v[i - 1])) throw ConfigError(where + ": axis must be strictly increasing");
        return v;
    }
    if (!j.is_object()) throw ConfigError(where + ": axis must be a list or {lo, hi, n}");
    const double lo = num(j, "lo", where), hi = num(j, "hi", where);
    const int n = static_cast<int>(num(j, "n", where));
    const std::string spacing = j.value("spacing", "linear");
    if (n < 1 || (n > 1 && !(hi > lo))) throw ConfigError(where + ": need n >= 1 and hi > lo");
    if (spacing != "linear" && spacing != "log") throw ConfigError(where + ": spacing must be linear or log");
    if (spacing == "log" && !(lo > 0.0)) throw ConfigError(where + ": log spacing needs lo > 0");
    std::vector<double> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double u = n == 1 ? 0.0 : static_cast<double>(i) / (n - 1);
        v[static_cast<std::size_t>(i)] = spacing == "log" ? lo * std::pow(hi / lo, u) : lo + (hi - lo) * u;
    }
    v.back() = hi;
    return v;
}

} // namespace

Coefficient parse_coefficient(const json& j, const std::string& where) {
    if (j.is_number()) return Coefficient::constant(j.get<double>());
    if (!j.is_object()) throw ConfigError(where + ": coefficient must be a number or an object");
    const std::string form = j.value("form", "constant");
    if (form == "constant") return Coefficient::constant(num(j, "value", where));
    if (form == "affine")
        return Coefficient::affine(num(j, "c", where, 0.0), num(j, "x", where, 0.0), num(j, "s1", where, 0.0),
                                   num(j, "t", where, 0.0));
    if (form == "mean-reverting") return Coefficient::mean_reverting(num(j, "kappa", where), num(j, "level", where));
    throw ConfigError(fmt::format("{}: unknown coefficient form '{}'", where, form));
}

json model_json(const MarketModel& m) {
    json marks = json::array();
    for (int k = 0; k < m.n_marks(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        marks.push_back({{"intensity", m.jumps.intensities[ku]},
                         {"k0", coefficient_json(m.k0[ku])},
                         {"k1", coefficient_json(m.k1[ku])}});
    }
    json prior;
    switch (m.prior.kind) {
    case XPrior::Kind::dirac:
        prior = {{"kind", "dirac"}};
        break;
    case XPrior::Kind::discrete:
        prior = {{"kind", "discrete"}, {"values", m.prior.values}, {"probs", m.prior.probs}};
        break;
    case XPrior::Kind::gaussian:
        prior = {{"kind", "gaussian"}, {"mean", m.prior.mean}, {"sd", m.prior.sd}};
        break;
    }
    return {{"r", coefficient_json(m.r)},
            {"b0", coefficient_json(m.b0)},
            {"sigma0", coefficient_json(m.sigma0)},
            {"b1", coefficient_json(m.b1)},
            {"sigma1", coefficient_json(m.sigma1)},
            {"marks", marks},
            {"rho", m.rho},
            {"x0", m.x0},
            {"s1_0", m.s1_0},
            {"prior", prior}};
}

MarketModel parse_model(const json& j) {
    if (!j.is_object()) throw ConfigError("model must be an object");
    MarketModel m;
    for (const char* key : {"r", "b0", "sigma0", "b1", "sigma1"})
        if (!j.contains(key)) throw ConfigError(fmt::format("model: missing coefficient '{}'", key));
    m.r = parse_coefficient(j.at("r"), "model.r");
    m.b0 = parse_coefficient(j.at("b0"), "model.b0");
    m.sigma0 = parse_coefficient(j.at("sigma0"), "model.sigma0");
    m.b1 = parse_coefficient(j.at("b1"), "model.b1");
    m.sigma1 = parse_coefficient(j.at("sigma1"), "model.sigma1");
    if (m.r.uses_s1()) throw ConfigError("model.r may not depend on s1");
    m.rho = j.value("rho", 0.0);
    m.x0 = j.value("x0", 0.0);
    m.s1_0 = j.value("s1_0", 1.0);
    const json marks = j.value("marks", json::array());
    if (!marks.is_array()) throw ConfigError("model.marks must be a list");
    if (marks.size() > static_cast<std::size_t>(kMaxMarks))
        throw ConfigError(fmt::format("model.marks: at most {} marks", kMaxMarks));
    for (std::size_t k = 0; k < marks.size(); ++k) {
        const std::string where = fmt::format("model.marks[{}]", k);
        const json& mk = marks[k];
        m.jumps.marks.push_back(static_cast<double>(k));
        m.jumps.intensities.push_back(num(mk, "intensity", where));
        m.k0.push_back(mk.contains("k0") ? parse_coefficient(mk.at("k0"), where + ".k0") : Coefficient::constant(0.0));
        m.k1.push_back(mk.contains("k1") ? parse_coefficient(mk.at("k1"), where + ".k1") : Coefficient::constant(0.0));
    }
    try {
        check_measure(m.jumps);
    } catch (const MalformedMeasure& e) {
        throw ConfigError(std::string("model.marks: ") + e.what());
    }
    const json prior = j.value("prior", json{{"kind", "dirac"}});
    const std::string kind = prior.value("kind", "dirac");
    if (kind == "dirac") {
        m.prior.kind = XPrior::Kind::dirac;
    } else if (kind == "discrete") {
        m.prior.kind = XPrior::Kind::discrete;
        m.prior.values = prior.value("values", std::vector<double>{});
        m.prior.probs = prior.value("probs", std::vector<double>{});
        if (m.prior.values.empty() || m.prior.values.size() != m.prior.probs.size())
            throw ConfigError("model.prior: discrete prior needs matching non-empty values and probs");
    } else if (kind == "gaussian") {
        m.prior.kind = XPrior::Kind::gaussian;
        m.prior.mean = num(prior, "mean", "model.prior");
        m.prior.sd = num(prior, "sd", "model.prior");
    } else {
        throw ConfigError(fmt::format("model.prior: unknown kind '{}'", kind));
    }
    return m;
}

ScenarioConfig parse_config(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    if (doc.contains("schema_version") && doc.at("schema_version") != kSchemaVersion)
        throw ConfigError(fmt::format("unsupported schema_version {} (expected {})", doc.at("schema_version").dump(),
                                      kSchemaVersion));
    json d = doc.contains("fixture") ? fixture_json(doc.at("fixture").get<std::string>()) : base_doc();
    for (const auto& [key, val] : doc.items()) {
        if (key == "model" && d.contains("model") && val.is_object()) {
            for (const auto& [mk, mv] : val.items()) d["model"][mk] = mv;  // coefficients replace whole
        } else if (val.is_object() && d.contains(key) && d[key].is_object()) {
            d[key].merge_patch(val);
        } else {
            d[key] = val;
        }
    }
    if (!d.contains("model")) throw ConfigError("config names neither a fixture nor a model");
    if (!d.contains("seed") || !d.at("seed").is_number_integer())
        throw ConfigError("config needs an integer seed");

    ScenarioConfig c;
    try {
        c.fixture = d.value("fixture", "inline");
        c.model = parse_model(d.at("model"));
        c.grid.T = num(d.at("grid"), "T", "grid");
        c.grid.n_steps = static_cast<int>(num(d.at("grid"), "n_steps", "grid"));
        if (!(c.grid.T > 0.0) || c.grid.n_steps < 1) throw ConfigError("grid: need T > 0 and n_steps >= 1");
        c.n_paths = d.value("n_paths", 10000);
        if (c.n_paths < 2) throw ConfigError("n_paths must be at least 2");
        c.seed = d.at("seed").get<std::uint64_t>();

        const json& cl = d.at("claim");
        const std::string type = cl.value("type", "call");
        c.claim.maturity = c.grid.T;
        if (type == "call") {
            c.claim.form = Claim::Form::call_on_s1hat;
            c.claim.strike = cl.value("strike", 1.0);
        } else if (type == "identity") {
            c.claim.form = Claim::Form::identity_s1hat;
        } else if (type == "constant") {
            c.claim.form = Claim::Form::constant;
            c.claim.value = cl.value("value", 1.0);
        } else {
            throw ConfigError(fmt::format("claim: unknown type '{}'", type));
        }

        const std::string obs = d.value("observation", "full");
        if (obs == "full")
            c.observation = Observation::full;
        else if (obs == "prices")
            c.observation = Observation::prices;
        else
            throw ConfigError(fmt::format("observation must be 'full' or 'prices', got '{}'", obs));

        const json& f = d.at("filter");
        c.filter.n_particles = f.value("n_particles", 0);
        c.filter.ess_fraction = f.value("ess_threshold", 0.5);
        c.filter.jump_tol_rel = f.value("jump_tol_rel", 1e-9);
        if (c.filter.n_particles < 0) throw ConfigError("filter.n_particles must be >= 0");

        const json& s = d.at("surface");
        c.surface.n_paths = s.value("n_paths", 4000);
        c.surface.seed = s.contains("seed") ? s.at("seed").get<std::uint64_t>() : mix_key(c.seed, 0x5u);
        c.surface.control_variates = s.value("control_variates", true);
        const std::string est = s.value("estimator", "automatic");
        if (est == "automatic")
            c.surface.estimator = Estimator::automatic;
        else if (est == "plain")
            c.surface.estimator = Estimator::plain;
        else if (est == "conditional")
            c.surface.estimator = Estimator::conditional;
        else
            throw ConfigError(fmt::format("surface.estimator: unknown '{}'", est));
        if (s.contains("t")) {
            c.surface.axes.t = parse_axis(s.at("t"), "surface.t");
        } else {
            const int nt = s.value("t_nodes", 11);
            if (nt < 2) throw ConfigError("surface.t_nodes must be >= 2");
            // uniform in sqrt(T - t): the price bends fastest near maturity
            for (int k = 0; k < nt; ++k) {
                const double u = 1.0 - static_cast<double>(k) / (nt - 1);
                const int idx = static_cast<int>(std::lround(c.grid.n_steps * (1.0 - u * u)));
                const double t = c.grid.t(idx);
                if (c.surface.axes.t.empty() || t > c.surface.axes.t.back()) c.surface.axes.t.push_back(t);
            }
        }
        for (const char* ax : {"x", "s1", "sh0", "sh1"}) {
            if (!s.contains(ax)) continue;
            auto v = parse_axis(s.at(ax), fmt::format("surface.{}", ax));
            const std::string a = ax;
            (a == "x" ? c.surface.axes.x : a == "s1" ? c.surface.axes.s1 : a == "sh0" ? c.surface.axes.sh0 : c.surface.axes.sh1) =
                std::move(v);
        }

        c.theta1_shift = d.value("theta1_shift", 0.0);
        c.perturbation_scale = d.at("hedge").value("perturbation_scale", 1.5);
        const std::string br = d.at("hedge").value("brackets", "one-step");
        if (br == "one-step")
            c.brackets = Brackets::one_step;
        else if (br == "continuous")
            c.brackets = Brackets::continuous;
        else
            throw ConfigError(fmt::format("hedge.brackets must be 'one-step' or 'continuous', got '{}'", br));

        const json& b = d.at("box");
        c.box.t_lo = 0.0;
        c.box.t_hi = c.grid.T;
        const auto bx = b.value("x", std::vector<double>{c.model.x0, c.model.x0});
        const auto bs = b.value("s1", std::vector<double>{c.model.s1_0, c.model.s1_0});
        if (bx.size() != 2 || bs.size() != 2) throw ConfigError("box.x and box.s1 must be [lo, hi]");
        c.box.x_lo = bx[0];
        c.box.x_hi = bx[1];
        c.box.s1_lo = bs[0];
        c.box.s1_hi = bs[1];
        c.box.n_per_axis = b.value("n_per_axis", 5);

        c.export_max_paths = d.at("export").value("max_paths", 200);
        c.output_dir = d.value("output", "out");
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    c.resolved = d;
    return c;
}

ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path));
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: {}", path, e.what()));
    }
    return parse_config(doc);
}

std::uint64_t config_hash(const json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace bhedge
