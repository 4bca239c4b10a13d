#pragma once

#include <cstdint>
#include <string>

#include "mmtouch/cnn.hpp"
#include "mmtouch/csp.hpp"
#include "mmtouch/dsp.hpp"
#include "mmtouch/geometry.hpp"
#include "mmtouch/radar_config.hpp"
#include "mmtouch/sim.hpp"

namespace mmtouch {

struct FeatureConfig {
    int half_window = 30;  // 61-frame window
    int r_max = 110;
};

struct SessionPlan {
    GridSpec train_grid;  // 31 x 16 base grid
    GridSpec valtest_grid{15, 30, 1.0, 1.0, {2.5, 1.5}, 240, 60};  // offset by (0.5, 0.5) cm
    int train_sessions = 5;
    int valtest_sessions = 3;
    int paper_train_sessions = 50;
    int paper_valtest_sessions = 15;
};

struct BenchmarkConfig {
    int n_trials = 1000;
    int warmup = 20;
};

/// Everything a run needs. Every field has a default reproducing the
/// testbed setup; a JSON file may override any subset.
struct RunConfig {
    std::uint64_t seed = 20231107;
    RadarConfig radar;
    DspConfig dsp;
    CspConfig csp;
    SimulationConfig sim;
    SessionPlan sessions;
    FeatureConfig features;
    ModelConfig model;
    TrainConfig training;
    BenchmarkConfig benchmark;

    /// Cross-section checks; throws ConfigError.
    void validate() const;

    /// Model configuration with the input shape derived from the feature settings.
    ModelConfig model_config() const;

    void apply_paper_scale();

    std::string to_json() const;
    /// Unknown keys are rejected with ConfigError.
    static RunConfig from_json(const std::string& text);
    static RunConfig load(const std::string& path);
};

}  // namespace mmtouch
