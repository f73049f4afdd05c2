#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bhedge/config.hpp"
#include "bhedge/filtering.hpp"
#include "bhedge/hedging.hpp"
#include "bhedge/measures.hpp"

namespace bhedge {

class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

class IncompleteRun : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Check {
    std::string name;
    double statistic = 0.0;
    double threshold = 0.0;
    bool pass = true;
};

// Pipeline state for one config. Stages compute their inputs on demand and
// write their artifacts into the output directory.
class Scenario {
public:
    Scenario(ScenarioConfig cfg, std::string out_dir, Exec exec = Exec::parallel);

    const ScenarioConfig& config() const { return cfg_; }
    const std::string& out_dir() const { return out_; }

    const GopSpec& gop();
    const PathBundle& paths();
    const PriceSurface& surface();

    void validate();
    void gop_table();
    void simulate();
    void price();
    void hedge(Observation scheme);
    void filter();
    void measures();
    void run_all();

    const std::vector<Check>& checks() const { return checks_; }
    bool passed() const;
    void write_summary() const;
    void write_manifest(double wall_seconds) const;

private:
    void add(std::string name, double stat, double threshold, bool pass);
    std::uint64_t surface_key() const;

    ScenarioConfig cfg_;
    std::string out_;
    Exec exec_;
    std::optional<GopSpec> gop_;
    std::optional<PathBundle> paths_;
    std::optional<PriceSurface> surface_;
    std::vector<Check> checks_;
    std::vector<std::string> artifacts_;
};

// Reads summary.csv in dir, writes report.txt, returns the exit code
// (0 all checks pass, 1 otherwise). Throws IncompleteRun when artifacts are missing.
int emit_report(const std::string& dir, std::ostream& out);

// Writes a surface checkpoint (surface.csv + surface.meta.json).
void save_surface(const PriceSurface& s, const std::string& dir, std::uint64_t key);
// Loads a checkpoint if present and its key matches.
std::optional<PriceSurface> load_surface(const std::string& dir, std::uint64_t key);

} // namespace bhedge
