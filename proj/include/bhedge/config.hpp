#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "bhedge/hedging.hpp"
#include "bhedge/market.hpp"
#include "bhedge/pricing.hpp"

namespace bhedge {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kSchemaVersion = 1;

struct ScenarioConfig {
    std::string fixture;
    MarketModel model;
    TimeGrid grid;
    int n_paths = 10000;
    std::uint64_t seed = 42;
    Claim claim;
    Observation observation = Observation::prices;
    FilterSettings filter;
    SurfaceSpec surface;
    double theta1_shift = 0.0;
    double perturbation_scale = 1.5;
    Brackets brackets = Brackets::one_step;
    StateBox box;
    int export_max_paths = 200;
    std::string output_dir = "out";
    nlohmann::json resolved;  // fully expanded config, used for hashing
};

std::vector<std::string> fixture_names();
// Built-in fixture as a config document.
nlohmann::json fixture_json(const std::string& name);

// Fixture defaults overlaid with the document's own keys.
ScenarioConfig parse_config(const nlohmann::json& doc);
ScenarioConfig load_config(const std::string& path);

nlohmann::json coefficient_json(const Coefficient& c);
Coefficient parse_coefficient(const nlohmann::json& j, const std::string& where);
nlohmann::json model_json(const MarketModel& m);
MarketModel parse_model(const nlohmann::json& j);

// FNV-1a over the canonical dump
std::uint64_t config_hash(const nlohmann::json& j);

} // namespace bhedge
