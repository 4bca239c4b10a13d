#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mmtouch/cnn.hpp"
#include "mmtouch/csp.hpp"
#include "mmtouch/features.hpp"
#include "mmtouch/metrics.hpp"
#include "mmtouch/run_config.hpp"

namespace mmtouch {

/// Artifact locations inside a run directory.
struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path config() const { return root / "config.json"; }
    std::filesystem::path dataset() const { return root / "dataset"; }
    std::filesystem::path ranges() const { return root / "csp_ranges.csv"; }
    std::filesystem::path calibration() const { return root / "calibration.json"; }
    std::filesystem::path eval_csv(Method m) const;
    std::filesystem::path metrics_json(Method m) const;
    std::filesystem::path model() const { return root / "model.bin"; }
    std::filesystem::path train_history() const { return root / "train_history.csv"; }
    std::filesystem::path train_report() const { return root / "train_report.json"; }
    std::filesystem::path latency_csv() const { return root / "latency.csv"; }
    std::filesystem::path latency_summary() const { return root / "latency_summary.csv"; }
    std::filesystem::path report() const { return root / "report.csv"; }
    std::filesystem::path rmse_csv(Method m) const;
    std::filesystem::path rmse_svg(Method m) const;
    std::filesystem::path error_cdf() const { return root / "error_cdf.csv"; }
};

const char* method_name(Method m);
Method parse_method(const std::string& s);

/// Uncalibrated window-averaged per-sensor ranges of one touch.
struct RangeRecord {
    Split split = Split::train;
    TouchEvent event;
    Vec2 gt_cm;
    std::vector<std::optional<double>> ranges_cm;  // empty = no valid range
};

void write_range_csv(const std::filesystem::path& path, const std::vector<RangeRecord>& records);
/// Throws DependencyError if the file is missing and FormatError if malformed.
std::vector<RangeRecord> read_range_csv(const std::filesystem::path& path);

/// One row of csp_eval.csv / cnn_eval.csv.
struct EvalRow {
    EvalRecord record;
    std::string status = "ok";  // ok | not_converged | unavailable
    double residual_cm2 = 0.0;
    int iterations = 0;
};

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows);
std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path);
void write_metrics_json(const std::filesystem::path& path, const Metrics& m);

/// Stage drivers. Each reads its inputs from and writes its outputs to the
/// run directory and logs progress lines to `log`.

struct SimulateSummary {
    SplitCounts counts;
    int r_max_formula = 0;
    double wall_clock_s = 0.0;
};

/// Records the train and val/test sessions, writes the dataset container,
/// the per-event CSP ranges and a config snapshot.
SimulateSummary run_simulate(const RunConfig& config, const std::filesystem::path& run_dir,
                             std::ostream& log);

/// Calibration from the train-split rows of csp_ranges.csv.
CalibrationTable run_calibrate(const RunConfig& config, const std::filesystem::path& run_dir,
                               std::ostream& log);

/// CSP positioning of the test split. Throws DependencyError without a calibration.
Metrics run_csp_eval(const RunConfig& config, const std::filesystem::path& run_dir,
                     std::ostream& log);

/// Train on the train split, select on val.
TrainReport run_train(const RunConfig& config, const std::filesystem::path& run_dir,
                      std::ostream& log);

/// CNN positioning of the test split.
Metrics run_cnn_eval(const RunConfig& config, const std::filesystem::path& run_dir,
                     std::ostream& log);

struct LatencyResult {
    Method method = Method::cnn;
    LatencyStats stats;
};

/// Single-threaded per-event latency: CNN forward pass and/or CSP
/// multilateration from the stored ranges.
std::vector<LatencyResult> run_bench_latency(const RunConfig& config,
                                             const std::filesystem::path& run_dir,
                                             const std::vector<Method>& methods, std::ostream& log);

/// Test split as network inputs, streamed from the dataset container.
TrainingSet load_training_set(const std::filesystem::path& dataset_dir, Split split,
                              InputMode mode);

/// Summary table, RMSE heatmaps and error CDF from the per-event CSVs of
/// the requested methods. Throws DependencyError if an evaluation is missing.
void run_report(const RunConfig& config, const std::filesystem::path& run_dir,
                const std::vector<Method>& methods, std::ostream& log);

/// Fixed-format number used throughout the CSV artifacts.
std::string format_number(double v);

}  // namespace mmtouch
