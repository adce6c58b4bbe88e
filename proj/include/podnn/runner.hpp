#pragma once

#include <string>

#include <json.hpp>

#include "podnn/config.hpp"
#include "podnn/metrics.hpp"
#include "podnn/trainer.hpp"

namespace podnn {

// One complete training run. When `out_dir` is non-empty a self-describing
// run directory is produced:
//   config.json    resolved configuration (reproduces the run bit-for-bit)
//   metrics.csv    one row per iteration (byte-stable across reruns)
//   timing.csv     per-iteration wall time (kept apart from metrics.csv)
//   summary.json   convergence outcome
//   checkpoints/   parameter archives at convergence and at the end
//   samples/       input/output grids every sample_every iterations
struct RunArtifacts {
    RunResult result;
    MetricsTable metrics;
    nlohmann::json summary;
};

RunArtifacts execute_run(const RunConfig& cfg, const std::string& out_dir);

// Inversion quality of designated experts on the full transformed dataset:
// per mechanism, the mean squared error between the designated expert's
// output and the ground-truth pre-image on surviving pixels. `designation`
// maps expert -> mechanism (-1 entries are skipped).
std::vector<double> measure_designated_inversion(const RunConfig& cfg,
                                                 const std::string& checkpoint_path,
                                                 const std::vector<int>& designation);

} // namespace podnn
