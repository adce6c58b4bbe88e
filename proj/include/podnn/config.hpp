#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "podnn/mechanisms.hpp"
#include "podnn/trainer.hpp"

namespace podnn {

// User-facing configuration mistakes (bad file, unknown key, bad value).
// The CLI maps these to exit code 1; everything else is an internal error.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Resolved run configuration: dataset source, mechanisms, trainer settings,
// numeric precision and output layout.
struct RunConfig {
    // dataset
    std::string dataset_source = "synthetic";  // "synthetic" | "idx"
    int synthetic_count = 2000;
    int height = 16;
    int width = 16;
    std::string idx_images;  // for source "idx"; relative paths resolve
                             // against $PODNN_DATA_ROOT
    int idx_limit = 0;       // optional cap on loaded images, 0 = all

    std::vector<MechanismSpec> mechanisms;
    std::vector<double> proportions;

    TrainConfig trainer;

    std::string precision = "f32";  // "f32" | "f64"
    std::string output_dir = "run";
    int sample_every = 0;  // PGM sample cadence in iterations, 0 = off

    void validate() const;
};

// Strict parsing: unknown keys anywhere are rejected with their location.
RunConfig parse_run_config(const nlohmann::json& j);

// Load from file, then apply flat dotted overrides ("trainer.seed=7").
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// Apply one "key.path=value" override onto raw JSON.
void apply_override(nlohmann::json& j, const std::string& assignment);

nlohmann::json run_config_to_json(const RunConfig& cfg);

nlohmann::json mechanism_to_json(const MechanismSpec& spec);
MechanismSpec mechanism_from_json(const nlohmann::json& j, const std::string& where);

// $PODNN_DATA_ROOT-aware path resolution for dataset files.
std::string resolve_data_path(const std::string& path);

} // namespace podnn
