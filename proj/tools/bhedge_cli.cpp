#include <CLI11.hpp>
#include <chrono>
#include <fmt/format.h>
#include <fstream>
#include <iostream>

#include "bhedge/scenario.hpp"

using namespace bhedge;
using nlohmann::json;

namespace {

struct Common {
    std::string config, fixture, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> paths;
    bool serial = false;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--config", c.config, "scenario config (JSON)");
    sub->add_option("--fixture", c.fixture, "built-in fixture name");
    sub->add_option("--seed", c.seed, "override the config seed");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--paths", c.paths, "override the number of simulated paths");
    sub->add_flag("--serial", c.serial, "use the serial reference kernels");
}

ScenarioConfig resolve(const Common& c) {
    json doc = json::object();
    if (!c.config.empty()) {
        std::ifstream in(c.config);
        if (!in) throw ConfigError(fmt::format("cannot open config '{}'", c.config));
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError(fmt::format("{}: {}", c.config, e.what()));
        }
    }
    if (!c.fixture.empty()) doc["fixture"] = c.fixture;
    if (c.config.empty() && c.fixture.empty()) throw ConfigError("give --config or --fixture");
    if (c.seed) doc["seed"] = *c.seed;
    if (c.paths) doc["n_paths"] = *c.paths;
    if (!c.out.empty()) doc["output"] = c.out;
    return parse_config(doc);
}

int finish(Scenario& s, std::chrono::steady_clock::time_point t0) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    s.write_summary();
    s.write_manifest(wall);
    return emit_report(s.out_dir(), std::cout);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Benchmarked risk-minimization engine"};
    app.require_subcommand(1);
    Common c;
    double gt = 0.0, gx = 0.0, gs1 = 1.0;
    std::string report_dir;

    const char* stages[][2] = {{"validate", "check model well-posedness and the numeraire first-order condition"},
                               {"simulate", "simulate paths, benchmark them and test the martingale property"},
                               {"price", "estimate the price surface"},
                               {"hedge", "hedge the claim under the configured observation scheme"},
                               {"filter", "run the hidden-factor filter on every path"},
                               {"measures", "Girsanov density and martingale-measure checks"},
                               {"run", "full pipeline"}};
    std::vector<CLI::App*> subs;
    for (const auto& st : stages) {
        subs.push_back(app.add_subcommand(st[0], st[1]));
        add_common(subs.back(), c);
    }
    CLI::App* gop_cmd = app.add_subcommand("gop", "numeraire fraction and market price of risk");
    add_common(gop_cmd, c);
    CLI::Option* ot = gop_cmd->add_option("--t", gt, "time");
    gop_cmd->add_option("--x", gx, "factor value");
    gop_cmd->add_option("--s1", gs1, "risky asset price");
    CLI::App* config_cmd = app.add_subcommand("config", "print the fully resolved configuration");
    add_common(config_cmd, c);
    CLI::App* report_cmd = app.add_subcommand("report", "summarize a finished run directory");
    report_cmd->add_option("--out", report_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (report_cmd->parsed()) return emit_report(report_dir, std::cout);

        const auto t0 = std::chrono::steady_clock::now();
        ScenarioConfig cfg = resolve(c);
        if (config_cmd->parsed()) {
            std::cout << cfg.resolved.dump(2) << '\n';
            return 0;
        }
        const std::string out = cfg.output_dir;
        Scenario s(std::move(cfg), out, c.serial ? Exec::serial : Exec::parallel);

        if (gop_cmd->parsed()) {
            if (ot->count() > 0) {
                const GopState st = s.gop().at(gt, gx, gs1);
                std::cout << fmt::format("pi_star {:.17g}\ntheta1 {:.17g}\nfoc {:.3g}\n", st.pi_star, st.theta1,
                                         gop_foc(s.config().model, st.pi_star, gt, gx, gs1));
                for (int k = 0; k < st.n_marks; ++k)
                    std::cout << fmt::format("psi_{0} {1:.17g}\nk_theta_{0} {2:.17g}\n", k,
                                             st.psi[static_cast<std::size_t>(k)], st.k_theta[static_cast<std::size_t>(k)]);
                return 0;
            }
            s.gop_table();
            s.validate();
            return finish(s, t0);
        }
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "validate") s.validate();
        else if (name == "simulate") s.simulate();
        else if (name == "price") s.price();
        else if (name == "hedge") s.hedge(s.config().observation);
        else if (name == "filter") s.filter();
        else if (name == "measures") s.measures();
        else if (name == "run") s.run_all();
        return finish(s, t0);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const StageError& e) {
        std::cerr << "stage " << e.what() << '\n';
        return 1;
    } catch (const IncompleteRun& e) {
        std::cerr << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
