#include "bhedge/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <sstream>

namespace bhedge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

class Csv {
public:
    Csv(const fs::path& path, const std::string& header) : f_(path) {
        if (!f_) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
        f_ << header << '\n';
    }
    void row(std::initializer_list<std::string> cells) {
        bool first = true;
        for (const auto& c : cells) {
            if (!first) f_ << ',';
            f_ << c;
            first = false;
        }
        f_ << '\n';
    }

private:
    std::ofstream f_;
};

template <class F>
auto stage(const char* name, F&& f) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

} // namespace

Scenario::Scenario(ScenarioConfig cfg, std::string out_dir, Exec exec)
    : cfg_(std::move(cfg)), out_(std::move(out_dir)), exec_(exec) {
    fs::create_directories(out_);
}

void Scenario::add(std::string name, double stat, double threshold, bool pass) {
    checks_.push_back({std::move(name), stat, threshold, pass});
}

bool Scenario::passed() const {
    return std::all_of(checks_.begin(), checks_.end(), [](const Check& c) { return c.pass; });
}

const GopSpec& Scenario::gop() {
    if (!gop_) stage("gop", [&] { gop_.emplace(cfg_.model, cfg_.theta1_shift); });
    return *gop_;
}

const PathBundle& Scenario::paths() {
    if (!paths_) {
        const GopSpec& g = gop();
        stage("simulate", [&] {
            paths_ = simulate_paths(cfg_.model, cfg_.grid, cfg_.n_paths, cfg_.seed, exec_);
            simulate_gop_and_benchmark(*paths_, g, exec_);
        });
    }
    return *paths_;
}

std::uint64_t Scenario::surface_key() const {
    const json& r = cfg_.resolved;
    json k = {{"model", r.at("model")}, {"grid", r.at("grid")},         {"claim", r.at("claim")},
              {"surface", r.at("surface")}, {"seed", r.at("seed")}, {"theta1_shift", cfg_.theta1_shift}};
    return config_hash(k);
}

const PriceSurface& Scenario::surface() {
    if (!surface_) {
        const GopSpec& g = gop();
        stage("price", [&] {
            const std::uint64_t key = surface_key();
            surface_ = load_surface(out_, key);
            if (!surface_) {
                surface_ = estimate_price_function(g, cfg_.claim, cfg_.grid, cfg_.surface, exec_);
                save_surface(*surface_, out_, key);
            }
        });
        artifacts_.push_back("surface.csv");
        artifacts_.push_back("surface.meta.json");
    }
    return *surface_;
}

void Scenario::validate() {
    stage("validate", [&] {
        const ValidationReport rep = validate_model(cfg_.model, cfg_.box);
        Csv csv(fs::path(out_) / "validation.csv", "condition,t,x,s1,value");
        for (const auto& v : rep.violations) csv.row({v.condition, num(v.t), num(v.x), num(v.s1), num(v.value)});
        artifacts_.push_back("validation.csv");
        add("model_violations", static_cast<double>(rep.violations.size()), 0.0, rep.passed());
        if (!rep.passed()) return;
        const GopSpec& g = gop();
        double foc = 0.0, resid = 0.0;
        auto pts = cfg_.box.points();
        const auto extra = cfg_.box.sample(1000, mix_key(cfg_.seed, 0x2u));
        pts.insert(pts.end(), extra.begin(), extra.end());
        for (const auto& p : pts) {
            const GopState st = g.at(p[0], p[1], p[2]);
            if (cfg_.theta1_shift == 0.0) {
                foc = std::max(foc, std::abs(gop_foc(cfg_.model, st.pi_star, p[0], p[1], p[2])));
                std::vector<double> psi(st.psi.begin(), st.psi.begin() + st.n_marks);
                resid = std::max(resid, std::abs(risk_premium_residual(cfg_.model, st.theta1, psi, p[0], p[1], p[2])));
            }
        }
        add("gop_foc_max", foc, 1e-12, foc <= 1e-12);
        add("risk_premium_residual_max", resid, 1e-10, resid <= 1e-10);
    });
}

void Scenario::gop_table() {
    const GopSpec& g = gop();
    stage("gop", [&] {
        std::string header = "t,x,s1,pi_star,theta1,foc";
        for (int k = 0; k < cfg_.model.n_marks(); ++k) header += fmt::format(",psi_{0},k_theta_{0}", k);
        std::ofstream f(fs::path(out_) / "gop.csv");
        f << header << '\n';
        for (const auto& p : cfg_.box.points()) {
            const GopState st = g.at(p[0], p[1], p[2]);
            f << num(p[0]) << ',' << num(p[1]) << ',' << num(p[2]) << ',' << num(st.pi_star) << ',' << num(st.theta1)
              << ',' << num(gop_foc(cfg_.model, st.pi_star, p[0], p[1], p[2]));
            for (int k = 0; k < st.n_marks; ++k)
                f << ',' << num(st.psi[static_cast<std::size_t>(k)]) << ',' << num(st.k_theta[static_cast<std::size_t>(k)]);
            f << '\n';
        }
        artifacts_.push_back("gop.csv");
    });
}

void Scenario::simulate() {
    const PathBundle& b = paths();
    stage("simulate", [&] {
        const int np = std::min(b.n_paths, cfg_.export_max_paths);
        const int N = b.grid.n_steps;
        Csv csv(fs::path(out_) / "paths.csv", "path_id,step,t,X,S0,S1,jump_mark");
        Csv bcsv(fs::path(out_) / "benchmarked.csv", "path_id,step,gop,s0hat,s1hat");
        for (int p = 0; p < np; ++p) {
            const auto jumps = b.path_jumps(p);
            for (int i = 0; i <= N; ++i) {
                std::string marks;
                for (const auto& e : jumps)
                    if (e.step + 1 == i) marks += (marks.empty() ? "" : ";") + std::to_string(e.mark);
                const std::size_t n = b.node(p, i);
                csv.row({std::to_string(p), std::to_string(i), num(b.grid.t(i)), num(b.x[n]), num(b.s0[n]), num(b.s1[n]),
                         marks});
                bcsv.row({std::to_string(p), std::to_string(i), num(b.gop[n]), num(b.s0hat[n]), num(b.s1hat[n])});
            }
        }
        artifacts_.push_back("paths.csv");
        artifacts_.push_back("benchmarked.csv");
        const std::pair<const char*, Benchmarked> comps[] = {{"s0hat", Benchmarked::s0hat}, {"s1hat", Benchmarked::s1hat}};
        for (const auto& [name, comp] : comps) {
            const DriftStats d = martingale_drift_check(b, comp, exec_);
            const std::string file = fmt::format("drift_{}.csv", name);
            Csv dc(fs::path(out_) / file, "step,mean,se,z");
            for (const auto& s : d.steps) dc.row({std::to_string(s.step), num(s.mean), num(s.se), num(s.z)});
            artifacts_.push_back(file);
            add(fmt::format("martingale_{}_max_z", name), d.max_abs_z, 3.0, d.max_abs_z <= 3.0);
        }
    });
}

void Scenario::price() { surface(); }

void Scenario::hedge(Observation scheme) {
    const PathBundle& b = paths();
    const PriceSurface& s = surface();
    const GopSpec& g = gop();
    stage(scheme == Observation::full ? "hedge(full)" : "hedge(partial)", [&] {
        HedgeConfig hc;
        hc.scheme = scheme;
        hc.filter = cfg_.filter;
        hc.brackets = cfg_.brackets;
        hc.seed = mix_key(cfg_.seed, 0x7u);
        const HedgeRun run = hedge_paths(b, g, s, cfg_.claim, hc, exec_);
        const HedgeReport rep = hedge_report(run, b, 1.0);
        const HedgeReport pert = hedge_report(run, b, cfg_.perturbation_scale);
        const std::string tag = scheme == Observation::full ? "full" : "partial";
        const int N = run.n_steps;
        const int np = std::min(run.n_paths, cfg_.export_max_paths);

        Csv csv(fs::path(out_) / fmt::format("hedge_{}.csv", tag), "path_id,step,V,C,delta0,delta1,eta");
        for (int p = 0; p < np; ++p) {
            for (int i = 0; i <= N; ++i) {
                const std::size_t n = run.node(p, i);
                const double c = run.value[n] - run.gains[n];
                if (i < N) {
                    const std::size_t k = run.inc(p, i);
                    csv.row({std::to_string(p), std::to_string(i), num(run.value[n]), num(c), num(run.delta0[k]),
                             num(run.delta1[k]), num(run.eta[k])});
                } else {
                    csv.row({std::to_string(p), std::to_string(i), num(run.value[n]), num(c), "", "", ""});
                }
            }
        }
        artifacts_.push_back(fmt::format("hedge_{}.csv", tag));

        Csv rc(fs::path(out_) / fmt::format("hedge_risk_{}.csv", tag), "step,t,risk,se");
        for (int i = 0; i <= N; ++i)
            rc.row({std::to_string(i), num(b.grid.t(i)), num(rep.risk_path[static_cast<std::size_t>(i)]),
                    num(rep.risk_path_se[static_cast<std::size_t>(i)])});
        artifacts_.push_back(fmt::format("hedge_risk_{}.csv", tag));

        const fs::path summary = fs::path(out_) / "hedge_summary.csv";
        const bool fresh = !fs::exists(summary) ||
                           std::find(artifacts_.begin(), artifacts_.end(), "hedge_summary.csv") == artifacts_.end();
        std::ofstream hs(summary, fresh ? std::ios::trunc : std::ios::app);
        if (fresh) {
            hs << "scheme,quantity,value,se\n";
            artifacts_.push_back("hedge_summary.csv");
        }
        auto put = [&](const std::string& q, double v, double se) {
            hs << tag << ',' << q << ',' << num(v) << ',' << num(se) << '\n';
        };
        put("H0", rep.h0, 0.0);
        put("risk0", rep.risk0.mean, rep.risk0.se);
        put("risk0_zero_strategy", rep.risk0_zero.mean, rep.risk0_zero.se);
        put("risk0_gap", rep.risk_gap.mean, rep.risk_gap.se);
        put("gkw_residual_mean", rep.residual.mean, rep.residual.se);
        put("max_cost_spread", rep.max_cost_spread, 0.0);
        put("replication_error", rep.replication_error, 0.0);
        for (const auto& o : rep.orthogonality) put("z_" + o.name, o.z, 0.0);
        for (const auto& o : pert.orthogonality) put(fmt::format("z_scaled_{}", o.name), o.z, 0.0);
        put("singular_steps", run.singular_steps, 0.0);
        put("multi_jump_steps", run.multi_jump_steps, 0.0);

        add(tag + "_replication_error", rep.replication_error, 1e-12, rep.replication_error <= 1e-12);
        add(tag + "_risk_vs_zero_z", rep.risk_gap.z(), 3.0, rep.risk_gap.z() <= 3.0);
        add(tag + "_orthogonality_max_z", rep.max_abs_z, 3.0, rep.max_abs_z <= 3.0);
        // the perturbation test needs a strategy whose gains are not rounding noise
        const double gain_tol = 1e-12 * std::max(1.0, std::abs(run.h0));
        const bool moving =
            std::any_of(run.gains.begin(), run.gains.end(), [&](double g) { return std::abs(g) > gain_tol; });
        if (moving)
            add(tag + "_perturbed_orthogonality_max_z", pert.max_abs_z, 3.0, pert.max_abs_z > 3.0);
        if (scheme == Observation::full) {
            add("full_partial_degeneracy", run.max_full_partial_gap, 0.0, run.max_full_partial_gap == 0.0);
        } else {
            add("filter_weight_error", run.max_weight_error, 1e-12, run.max_weight_error <= 1e-12);
            Csv fc(fs::path(out_) / "filter.csv", "path_id,step,post_mean,post_sd,ess");
            for (int p = 0; p < np; ++p)
                for (int i = 0; i <= N; ++i) {
                    const std::size_t n = run.node(p, i);
                    fc.row({std::to_string(p), std::to_string(i), num(run.post_mean[n]), num(run.post_sd[n]), num(run.ess[n])});
                }
            artifacts_.push_back("filter.csv");
        }
    });
}

void Scenario::filter() {
    const PathBundle& b = paths();
    const GopSpec& g = gop();
    stage("filter", [&] {
        const FilterTrajectories ft = filter_paths(b, g, cfg_.filter, mix_key(cfg_.seed, 0x7u), exec_);
        const int np = std::min(b.n_paths, cfg_.export_max_paths);
        Csv fc(fs::path(out_) / "filter.csv", "path_id,step,post_mean,post_sd,ess");
        for (int p = 0; p < np; ++p)
            for (int i = 0; i <= b.grid.n_steps; ++i) {
                const std::size_t n = b.node(p, i);
                fc.row({std::to_string(p), std::to_string(i), num(ft.mean[n]), num(ft.sd[n]), num(ft.ess[n])});
            }
        artifacts_.push_back("filter.csv");
        add("filter_weight_error", ft.max_weight_error, 1e-12, ft.max_weight_error <= 1e-12);
    });
}

void Scenario::measures() {
    const PathBundle& b = paths();
    const GopSpec& g = gop();
    stage("measures", [&] {
        const std::size_t first = checks_.size();
        const GirsanovSpec spec = GirsanovSpec::from_gop(g);
        double resid = 0.0;
        auto pts = cfg_.box.points();
        const auto extra = cfg_.box.sample(1000, mix_key(cfg_.seed, 0x3u));
        pts.insert(pts.end(), extra.begin(), extra.end());
        for (const auto& p : pts)
            resid = std::max(resid, std::abs(martingale_measure_residual(cfg_.model, spec, p[0], p[1], p[2])));
        // a deliberately shifted numeraire is not expected to satisfy the identity
        if (cfg_.theta1_shift == 0.0) add("measure_residual_max", resid, 1e-10, resid <= 1e-10);
        const DensityPaths d = girsanov_density_path(b, cfg_.model, spec, exec_);
        const double zl = std::abs(d.terminal.z_against(1.0));
        add("density_mean_z", zl, 3.0, zl <= 3.0);
        add("density_min", d.min_l, 0.0, d.min_l > 0.0);
        const MeanSe drift = reweighted_drift(b, d);
        add("reweighted_drift_z", std::abs(drift.z()), 3.0, std::abs(drift.z()) <= 3.0);
        const MeasureConditions mc = measure_conditions_check(g, cfg_.box);
        add("measure_conditions_sup_psi", mc.sup_psi, 1.0, mc.passed);

        Csv csv(fs::path(out_) / "measures.csv", "check,statistic,threshold,pass");
        for (std::size_t i = first; i < checks_.size(); ++i) {
            const Check& c = checks_[i];
            csv.row({c.name, num(c.statistic), num(c.threshold), c.pass ? "pass" : "fail"});
        }
        csv.row({"sup_theta1", num(mc.sup_theta), "", ""});
        csv.row({"nu_total", num(mc.nu_total), "", ""});
        for (const auto& w : mc.warnings) csv.row({"warning: " + w, "", "", ""});
        artifacts_.push_back("measures.csv");
    });
}

void Scenario::run_all() {
    validate();
    if (!passed()) return;
    gop_table();
    simulate();
    price();
    hedge(Observation::full);
    hedge(Observation::prices);
    measures();
}

void Scenario::write_summary() const {
    Csv csv(fs::path(out_) / "summary.csv", "check,statistic,threshold,pass");
    for (const auto& c : checks_) csv.row({c.name, num(c.statistic), num(c.threshold), c.pass ? "pass" : "fail"});
}

void Scenario::write_manifest(double wall_seconds) const {
    json m = {{"fixture", cfg_.fixture},
              {"schema_version", kSchemaVersion},
              {"config_hash", fmt::format("{:016x}", config_hash(cfg_.resolved))},
              {"seed", cfg_.seed},
              {"n_paths", cfg_.n_paths},
              {"version", "0.1.0"},
              {"wall_seconds", wall_seconds},
              {"artifacts", artifacts_},
              {"config", cfg_.resolved}};
    std::ofstream(fs::path(out_) / "manifest.json") << m.dump(2) << '\n';
}

int emit_report(const std::string& dir, std::ostream& out) {
    const fs::path p = fs::path(dir) / "summary.csv";
    std::ifstream in(p);
    if (!in) throw IncompleteRun(fmt::format("incomplete run: {} not found", p.string()));
    std::string line;
    std::getline(in, line);
    if (line != "check,statistic,threshold,pass") throw IncompleteRun(fmt::format("incomplete run: {} is malformed", p.string()));
    std::ostringstream rep;
    int fails = 0, total = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        if (cells.size() != 4) throw IncompleteRun(fmt::format("incomplete run: bad row '{}'", line));
        const bool ok = cells[3] == "pass";
        fails += ok ? 0 : 1;
        ++total;
        rep << fmt::format("{:<4}  {:<36} {:>24}  threshold {}\n", ok ? "PASS" : "FAIL", cells[0], cells[1], cells[2]);
    }
    if (total == 0) throw IncompleteRun("incomplete run: summary.csv has no checks");
    rep << fmt::format("{} of {} checks passed\n", total - fails, total);
    std::ofstream(fs::path(dir) / "report.txt") << rep.str();
    out << rep.str();
    return fails == 0 ? 0 : 1;
}

void save_surface(const PriceSurface& s, const std::string& dir, std::uint64_t key) {
    Csv csv(fs::path(dir) / "surface.csv", "t,x,s1,sh0,sh1,g,se");
    for (std::size_t f = 0; f < s.size(); ++f) {
        const StatePoint p = s.node_point(f);
        csv.row({num(p.t), num(p.x), num(p.s1), num(p.sh0), num(p.sh1), num(s.values()[f]), num(s.std_errors()[f])});
    }
    const auto& a = s.axes();
    json meta = {{"key", fmt::format("{:016x}", key)},
                 {"n_paths", s.n_paths()},
                 {"seed", s.seed()},
                 {"estimator", s.estimator()},
                 {"axes", {{"t", a.t}, {"x", a.x}, {"s1", a.s1}, {"sh0", a.sh0}, {"sh1", a.sh1}}}};
    std::ofstream(fs::path(dir) / "surface.meta.json") << meta.dump(2) << '\n';
}

std::optional<PriceSurface> load_surface(const std::string& dir, std::uint64_t key) {
    std::ifstream mf(fs::path(dir) / "surface.meta.json");
    std::ifstream cf(fs::path(dir) / "surface.csv");
    if (!mf || !cf) return std::nullopt;
    json meta;
    try {
        meta = json::parse(mf);
        if (meta.at("key").get<std::string>() != fmt::format("{:016x}", key)) return std::nullopt;
        SurfaceAxes a;
        a.t = meta.at("axes").at("t").get<std::vector<double>>();
        a.x = meta.at("axes").at("x").get<std::vector<double>>();
        a.s1 = meta.at("axes").at("s1").get<std::vector<double>>();
        a.sh0 = meta.at("axes").at("sh0").get<std::vector<double>>();
        a.sh1 = meta.at("axes").at("sh1").get<std::vector<double>>();
        std::vector<double> g, se;
        std::string line;
        std::getline(cf, line);
        while (std::getline(cf, line)) {
            if (line.empty()) continue;
            std::vector<double> cells;
            std::stringstream ss(line);
            std::string c;
            while (std::getline(ss, c, ',')) {
                // strtod, unlike stod, accepts subnormal values
                char* end = nullptr;
                cells.push_back(std::strtod(c.c_str(), &end));
                if (end == c.c_str() || *end != '\0') return std::nullopt;
            }
            if (cells.size() != 7) return std::nullopt;
            g.push_back(cells[5]);
            se.push_back(cells[6]);
        }
        if (g.size() != a.t.size() * a.x.size() * a.s1.size() * a.sh0.size() * a.sh1.size()) return std::nullopt;
        return PriceSurface(std::move(a), std::move(g), std::move(se), meta.at("n_paths").get<int>(),
                            meta.at("seed").get<std::uint64_t>(), meta.at("estimator").get<std::string>());
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

} // namespace bhedge
