#pragma once

#include <cstdint>
#include <vector>

#include "mmtouch/common.hpp"
#include "mmtouch/geometry.hpp"
#include "mmtouch/radar_config.hpp"

namespace mmtouch {

enum class ScattererKind { target, clutter };

/// Point reflector. Clutter uses `position_cm` as an absolute, static
/// position. Target scatterers ride on the target body: they sit
/// `axial_offset_cm` behind the body reference point along the arm axis.
struct Scatterer {
    Vec2 position_cm;
    double axial_offset_cm = 0.0;
    double amplitude = 1.0;
    ScattererKind kind = ScattererKind::clutter;
};

/// Pose of the target body at one instant: finger tip position and the unit
/// axis pointing from the finger toward the robot base.
struct PathKeyframe {
    double time_s = 0.0;
    Vec2 position_cm;
    Vec2 axis{0.0, 1.0};
};

/// Simulated world seen by a sensor array. Target motion is a piecewise-linear
/// path (clamped at both ends) plus i.i.d. rigid-body jitter per frame tick.
struct Scene {
    SensorArray sensors;
    std::vector<Scatterer> scatterers;
    std::vector<PathKeyframe> target_path;
    double jitter_std_cm = 0.0;
    std::uint64_t jitter_seed = 0;
    std::vector<double> stream_start_s;  // per sensor, empty = all streams start at t = 0
    std::vector<double> range_bias_cm;   // per sensor, added to every range; empty = none
    bool inverse_square = false;
    double reference_range_cm = 10.0;  // range at which inverse-square gain is 1

    /// Body pose at time t. Returns a pose at the origin if the path is empty.
    PathKeyframe target_pose(double time_s) const;

    /// Absolute scatterer positions at time t, jitter included.
    std::vector<Vec2> scatterer_positions(double time_s, const RadarConfig& radar) const;

    /// Acquisition time of `frame` on sensor `sensor`'s own clock origin.
    double frame_time(int sensor, int frame, const RadarConfig& radar) const;
};

/// Real-valued IF capture of one frame, samples stored [rx][chirp][sample].
struct IFFrame {
    int frame_index = 0;
    int sensor_index = 0;
    int n_samples = 0;
    int n_chirps = 0;
    int n_rx = 0;
    std::vector<double> samples;

    IFFrame() = default;
    IFFrame(int n_samples, int n_chirps, int n_rx)
        : n_samples(n_samples),
          n_chirps(n_chirps),
          n_rx(n_rx),
          samples(static_cast<std::size_t>(n_samples) * n_chirps * n_rx, 0.0) {}

    std::size_t offset(int s, int c, int j) const {
        return (static_cast<std::size_t>(j) * n_chirps + c) * n_samples + s;
    }
    double& at(int s, int c, int j) { return samples[offset(s, c, j)]; }
    double at(int s, int c, int j) const { return samples[offset(s, c, j)]; }
};

/// Beat-signal synthesis for one sensor and frame:
///   x(s, c, j) = sum_k A_k cos(2 pi (R_k / dr) s / N_IF + 4 pi R_k f_c / c) + n(s, c, j)
/// All antennas and chirps see the same tone set; noise is independent per
/// sample and seeded by (noise_seed, sensor, frame). Throws RangeError if a
/// scatterer lies beyond the unambiguous range.
IFFrame synthesize_if_frame(const Scene& scene, int sensor_index, int frame_index,
                            const RadarConfig& radar, double noise_std,
                            std::uint64_t noise_seed = 0);

/// Metal finger on a robot arm.
struct TargetModel {
    double finger_amplitude = 1.0;
    int n_arm = 3;
    double arm_offset_min_cm = 1.0;
    double arm_offset_max_cm = 4.0;
    double arm_amplitude_ratio = 2.0;  // arm scatterer amplitude / finger amplitude
    Vec2 robot_base_cm{17.15, 30.0};
    double jitter_std_cm = 0.1;
    double hover_cm = 5.0;  // approach/retract travel along the arm axis
    int approach_frames = 15;
    int dwell_frames = 31;
    int retract_frames = 15;

    int cycle_frames() const { return approach_frames + dwell_frames + retract_frames; }
    void validate() const;
};

/// Static reflectors scattered around the display (bezel, fixtures, desk).
struct ClutterModel {
    int count = 4;
    double amplitude = 3.0;
    double max_radius_cm = 45.0;  // around the display center
    double keep_out_cm = 2.0;     // clearance from the touch area and the sensors
    std::uint64_t seed = 7;
};

std::vector<Scatterer> make_target_scatterers(const TargetModel& target);
std::vector<Scatterer> make_clutter_scatterers(const ClutterModel& clutter,
                                               const SensorArray& sensors,
                                               const DisplayGeometry& geom,
                                               const RadarConfig& radar);

/// Unit vector from `touch_point` toward the robot base.
Vec2 arm_axis(Vec2 touch_point_cm, const TargetModel& target);

/// Single-touch scene: approach, dwell centred on `touch_time_s`, retract.
/// Throws GeometryError when the touch point lies outside the touch area.
Scene make_touch_scene(Vec2 touch_point_cm, const TargetModel& target, const ClutterModel& clutter,
                       const SensorArray& sensors, const DisplayGeometry& geom,
                       const RadarConfig& radar, double touch_time_s = 0.0);

/// Raster grid of touch points, in touch-area coordinates (cm from the corner).
struct GridSpec {
    int rows = 16;
    int cols = 31;
    double spacing_x_cm = 1.0;
    double spacing_y_cm = 1.0;
    Vec2 origin_cm{2.0, 1.0};
    int lead_in_frames = 240;  // idle frames so the clutter filter settles
    int lead_out_frames = 60;

    int n_points() const { return rows * cols; }
    Vec2 point(int row, int col) const {
        return {origin_cm.x + col * spacing_x_cm, origin_cm.y + row * spacing_y_cm};
    }
};

struct SimulationConfig {
    DisplayGeometry geometry;
    SensorArray sensors;
    TargetModel target;
    ClutterModel clutter;
    double noise_std = 1.3;  // per-frame single-target range sigma of about 0.2 cm
    bool unsynchronized_streams = true;  // random per-sensor start offset in [0, 1/f_r)
    std::vector<double> sensor_range_bias_cm;
    bool inverse_square = false;
};

/// One data-collection session: a lazily synthesized multi-sensor IF stream
/// plus the touchscreen ground truth. Frames are regenerated on demand from
/// the seeded scene, so `frame(i, f)` is a pure function of (seed, i, f).
class SessionRecording {
public:
    SessionRecording(Scene scene, RadarConfig radar, double noise_std, std::uint64_t noise_seed,
                     int n_frames, std::vector<TouchEvent> events, int session_id);

    const Scene& scene() const { return scene_; }
    const RadarConfig& radar() const { return radar_; }
    double noise_std() const { return noise_std_; }
    std::uint64_t noise_seed() const { return noise_seed_; }
    int session_id() const { return session_id_; }
    int n_frames() const { return n_frames_; }
    int n_sensors() const { return scene_.sensors.size(); }
    const std::vector<TouchEvent>& events() const { return events_; }

    IFFrame frame(int sensor, int frame_index) const;

    /// Sensor-local frame index of a touchscreen timestamp:
    /// round((t_GT - stream_start_i) * f_r).
    int frame_index_at(double time_s, int sensor) const;

private:
    Scene scene_;
    RadarConfig radar_;
    double noise_std_;
    std::uint64_t noise_seed_;
    int n_frames_;
    std::vector<TouchEvent> events_;
    int session_id_;
};

/// Simulates the robot touching every grid point in raster order. Throws
/// GeometryError if the grid leaves the touch area.
SessionRecording run_session(const GridSpec& grid, const SimulationConfig& sim,
                             const RadarConfig& radar, std::uint64_t seed, int session_id = 0);

}  // namespace mmtouch
