#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmtouch/dsp.hpp"
#include "mmtouch/geometry.hpp"
#include "mmtouch/radar_config.hpp"
#include "mmtouch/sim.hpp"

namespace mmtouch {

struct CspConfig {
    double consensus_tolerance_cm = 2.0 * RadarConfig{}.oversampled_bin_cm();
    int window_frames = 5;
    int nls_max_iterations = 200;
    double nls_convergence_tol_cm = 1e-10;
    int min_valid_sensors = 3;

    void validate() const;
};

/// Per-sensor range offsets r_cal,i (cm), subtracted from raw range estimates.
struct CalibrationTable {
    std::vector<double> offsets_cm;

    static CalibrationTable zeros(int n_sensors) {
        return {std::vector<double>(static_cast<std::size_t>(n_sensors), 0.0)};
    }
    double operator[](int i) const { return offsets_cm.at(static_cast<std::size_t>(i)); }
    int size() const { return static_cast<int>(offsets_cm.size()); }

    /// JSON object {"<sensor_index>": offset_cm, ...}.
    std::string to_json() const;
    static CalibrationTable from_json(const std::string& text);
    void save(const std::string& path) const;
    static CalibrationTable load(const std::string& path);
};

struct SensorRangeEstimate {
    int sensor_index = 0;
    int frame_index = 0;
    std::optional<double> range_cm;  // empty when the antennas disagree
};

enum class Method { csp, cnn };

struct PositionEstimate {
    Vec2 position_cm;
    Method method = Method::csp;
    int event_id = 0;
    double residual_cm2 = 0.0;  // NLS objective at the solution (CSP only)
    int n_sensors_used = 0;
    bool converged = true;
    int iterations = 0;
};

/// Consensus gate on already-quantized ranges: returns bf_range - calibration
/// when every pair of per-antenna ranges agrees within `tolerance_cm`.
std::optional<double> consensus_range(std::span<const double> per_rx_ranges_cm, double bf_range_cm,
                                      double tolerance_cm, double calibration_cm);

/// Oversampled bin of the strongest return, times the bin width.
double peak_range_cm(std::span<const cdouble> profile, double bin_cm);

/// Argmax ranging on the per-antenna and beamformed profiles followed by the
/// consensus gate and calibration.
SensorRangeEstimate estimate_ranges(const PerRxProfiles& per_rx, const BeamformedProfile& bf,
                                    const CspConfig& config, const CalibrationTable& calib,
                                    const RadarConfig& radar);

/// Mean of the valid entries; empty if none are valid.
std::optional<double> window_average_ranges(std::span<const std::optional<double>> history);

/// One training touch: ground truth and the uncalibrated averaged range per sensor.
struct CalibrationSample {
    Vec2 gt_cm;
    std::vector<std::optional<double>> ranges_cm;
};

/// r_cal,i = mean over samples of (r_bar_i - |r_GT - r_i|), valid entries only.
/// Throws Error if a sensor has no valid entry.
CalibrationTable estimate_calibration(std::span<const CalibrationSample> samples,
                                      const SensorArray& sensors);

/// NLS objective sum_i (|r_i - p| - range_i)^2 over valid sensors.
double nls_objective(Vec2 p, std::span<const std::optional<double>> ranges_cm,
                     const SensorArray& sensors);

/// Multilateration by Levenberg-Marquardt from a range-weighted sensor
/// centroid and the four quadrant centres of the sensor bounding box; the
/// lowest objective wins. Returns nullopt with fewer than min_valid_sensors
/// valid ranges. Throws GeometryError if the valid sensors are collinear.
std::optional<PositionEstimate> solve_nls(std::span<const std::optional<double>> ranges_cm,
                                          const SensorArray& sensors, const CspConfig& config);

/// End-to-end CSP for one touch: runs the DSP chain of every sensor from the
/// first frame to the event frame, window-averages the calibrated ranges and
/// solves the NLS problem.
std::optional<PositionEstimate> locate_event_csp(const SessionRecording& recording,
                                                 const TouchEvent& event,
                                                 const CalibrationTable& calib,
                                                 const DspConfig& dsp, const CspConfig& config);

}  // namespace mmtouch
