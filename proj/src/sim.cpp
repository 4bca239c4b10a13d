#include "mmtouch/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace mmtouch {

namespace {

Vec2 normalized(Vec2 v) {
    const double n = v.norm();
    return n > 0.0 ? (1.0 / n) * v : Vec2{0.0, 1.0};
}

}  // namespace

PathKeyframe Scene::target_pose(double time_s) const {
    if (target_path.empty()) return {time_s, {0.0, 0.0}, {0.0, 1.0}};
    if (time_s <= target_path.front().time_s) return target_path.front();
    if (time_s >= target_path.back().time_s) return target_path.back();
    auto hi = std::upper_bound(target_path.begin(), target_path.end(), time_s,
                               [](double t, const PathKeyframe& k) { return t < k.time_s; });
    auto lo = std::prev(hi);
    const double span = hi->time_s - lo->time_s;
    const double w = span > 0.0 ? (time_s - lo->time_s) / span : 0.0;
    PathKeyframe out;
    out.time_s = time_s;
    out.position_cm = lo->position_cm + w * (hi->position_cm - lo->position_cm);
    out.axis = normalized(lo->axis + w * (hi->axis - lo->axis));
    return out;
}

std::vector<Vec2> Scene::scatterer_positions(double time_s, const RadarConfig& radar) const {
    const PathKeyframe pose = target_pose(time_s);
    Vec2 jitter;
    if (jitter_std_cm > 0.0) {
        const auto tick = static_cast<std::int64_t>(std::llround(time_s * radar.frame_rate_hz));
        std::mt19937_64 rng(derive_seed(jitter_seed, static_cast<std::uint64_t>(tick)));
        std::normal_distribution<double> n01(0.0, jitter_std_cm);
        jitter.x = n01(rng);
        jitter.y = n01(rng);
    }
    std::vector<Vec2> out;
    out.reserve(scatterers.size());
    for (const auto& s : scatterers) {
        if (s.kind == ScattererKind::clutter)
            out.push_back(s.position_cm);
        else
            out.push_back(pose.position_cm + s.axial_offset_cm * pose.axis + jitter);
    }
    return out;
}

double Scene::frame_time(int sensor, int frame, const RadarConfig& radar) const {
    const double start =
        stream_start_s.empty() ? 0.0 : stream_start_s.at(static_cast<std::size_t>(sensor));
    return start + frame / radar.frame_rate_hz;
}

IFFrame synthesize_if_frame(const Scene& scene, int sensor_index, int frame_index,
                            const RadarConfig& radar, double noise_std,
                            std::uint64_t noise_seed) {
    if (sensor_index < 0 || sensor_index >= scene.sensors.size())
        throw RangeError("sensor index out of range");
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");

    const int n = radar.n_if_samples;
    const double dr_cm = radar.range_bin_cm();
    const double r_max_cm = radar.max_unambiguous_range_cm();
    const double bias =
        scene.range_bias_cm.empty() ? 0.0 : scene.range_bias_cm.at(static_cast<std::size_t>(sensor_index));
    const Vec2 sensor = scene.sensors[sensor_index];
    const double t = scene.frame_time(sensor_index, frame_index, radar);

    std::vector<double> tone(static_cast<std::size_t>(n), 0.0);
    const auto positions = scene.scatterer_positions(t, radar);
    for (std::size_t k = 0; k < positions.size(); ++k) {
        const double range_cm = distance(positions[k], sensor) + bias;
        if (!(range_cm >= 0.0 && range_cm < r_max_cm))
            throw RangeError("scatterer at " + std::to_string(range_cm) +
                             " cm violates the unambiguous range of " + std::to_string(r_max_cm) +
                             " cm");
        double amp = scene.scatterers[k].amplitude;
        if (scene.inverse_square) {
            const double q = scene.reference_range_cm / std::max(range_cm, 1e-3);
            amp *= q * q;
        }
        const double cycles_per_sample = range_cm / dr_cm / n;
        const double phase = 4.0 * kPi * (range_cm * 1e-2) * radar.carrier_hz / kSpeedOfLight;
        for (int s = 0; s < n; ++s)
            tone[static_cast<std::size_t>(s)] += amp * std::cos(2.0 * kPi * cycles_per_sample * s + phase);
    }

    IFFrame frame(n, radar.n_chirps, radar.n_rx);
    frame.frame_index = frame_index;
    frame.sensor_index = sensor_index;
    if (noise_std > 0.0) {
        std::mt19937_64 rng(derive_seed(noise_seed, static_cast<std::uint64_t>(sensor_index),
                                        static_cast<std::uint64_t>(frame_index)));
        std::normal_distribution<double> noise(0.0, noise_std);
        for (int j = 0; j < radar.n_rx; ++j)
            for (int c = 0; c < radar.n_chirps; ++c)
                for (int s = 0; s < n; ++s) frame.at(s, c, j) = tone[static_cast<std::size_t>(s)] + noise(rng);
    } else {
        for (int j = 0; j < radar.n_rx; ++j)
            for (int c = 0; c < radar.n_chirps; ++c)
                std::copy(tone.begin(), tone.end(), frame.samples.begin() + static_cast<std::ptrdiff_t>(frame.offset(0, c, j)));
    }
    return frame;
}

void TargetModel::validate() const {
    if (!(finger_amplitude > 0.0)) throw ConfigError("target: finger amplitude must be positive");
    if (n_arm < 0) throw ConfigError("target: n_arm must be non-negative");
    if (n_arm > 0 && !(arm_amplitude_ratio > 0.0))
        throw ConfigError("target: arm amplitude ratio must be positive");
    if (arm_offset_min_cm > arm_offset_max_cm)
        throw ConfigError("target: arm offset range is inverted");
    if (!(jitter_std_cm >= 0.0) || !(hover_cm >= 0.0))
        throw ConfigError("target: jitter and hover distance must be non-negative");
    if (approach_frames < 0 || dwell_frames < 1 || retract_frames < 0)
        throw ConfigError("target: approach/retract frames must be >= 0 and dwell >= 1");
}

std::vector<Scatterer> make_target_scatterers(const TargetModel& target) {
    target.validate();
    std::vector<Scatterer> out;
    out.push_back({{}, 0.0, target.finger_amplitude, ScattererKind::target});
    for (int k = 0; k < target.n_arm; ++k) {
        const double w = target.n_arm > 1 ? static_cast<double>(k) / (target.n_arm - 1) : 0.0;
        const double offset =
            target.arm_offset_min_cm + w * (target.arm_offset_max_cm - target.arm_offset_min_cm);
        out.push_back({{}, offset, target.arm_amplitude_ratio * target.finger_amplitude,
                       ScattererKind::target});
    }
    return out;
}

std::vector<Scatterer> make_clutter_scatterers(const ClutterModel& clutter,
                                               const SensorArray& sensors,
                                               const DisplayGeometry& geom,
                                               const RadarConfig& radar) {
    if (clutter.count < 0) throw ConfigError("clutter: count must be non-negative");
    if (clutter.count > 0 && !(clutter.amplitude > 0.0))
        throw ConfigError("clutter: amplitude must be positive");
    std::mt19937_64 rng(derive_seed(clutter.seed, 0x636c7574ULL));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Vec2 center = geom.center();
    const double r_lim = radar.max_unambiguous_range_cm() - 1.0;

    std::vector<Scatterer> out;
    int attempts = 0;
    while (static_cast<int>(out.size()) < clutter.count) {
        if (++attempts > 100000) throw ConfigError("clutter: cannot place scatterers with these limits");
        const double rad = clutter.max_radius_cm * std::sqrt(unit(rng));
        const double ang = 2.0 * kPi * unit(rng);
        const Vec2 p = center + Vec2{rad * std::cos(ang), rad * std::sin(ang)};
        if (geom.contains(p, clutter.keep_out_cm)) continue;
        bool ok = true;
        for (const auto& s : sensors.positions_cm) {
            const double d = distance(p, s);
            if (d < clutter.keep_out_cm || d >= r_lim) ok = false;
        }
        if (!ok) continue;
        out.push_back({p, 0.0, clutter.amplitude, ScattererKind::clutter});
    }
    return out;
}

Vec2 arm_axis(Vec2 touch_point_cm, const TargetModel& target) {
    return normalized(target.robot_base_cm - touch_point_cm);
}

namespace {

void append_touch_path(std::vector<PathKeyframe>& path, Vec2 p, const TargetModel& target,
                       double t_start, double frame_period) {
    const Vec2 axis = arm_axis(p, target);
    const Vec2 hover = p + target.hover_cm * axis;
    const double t_touch = t_start + target.approach_frames * frame_period;
    const double t_lift = t_touch + target.dwell_frames * frame_period;
    const double t_end = t_lift + target.retract_frames * frame_period;
    path.push_back({t_start, hover, axis});
    path.push_back({t_touch, p, axis});
    path.push_back({t_lift, p, axis});
    path.push_back({t_end, hover, axis});
}

}  // namespace

Scene make_touch_scene(Vec2 touch_point_cm, const TargetModel& target, const ClutterModel& clutter,
                       const SensorArray& sensors, const DisplayGeometry& geom,
                       const RadarConfig& radar, double touch_time_s) {
    if (!geom.contains(touch_point_cm))
        throw GeometryError("touch point lies outside the touch area");
    sensors.validate();
    Scene scene;
    scene.sensors = sensors;
    scene.scatterers = make_target_scatterers(target);
    auto clut = make_clutter_scatterers(clutter, sensors, geom, radar);
    scene.scatterers.insert(scene.scatterers.end(), clut.begin(), clut.end());
    scene.jitter_std_cm = target.jitter_std_cm;
    const double period = radar.frame_period_s();
    const double t_start = touch_time_s - (target.approach_frames + 0.5 * target.dwell_frames) * period;
    append_touch_path(scene.target_path, touch_point_cm, target, t_start, period);
    return scene;
}

SessionRecording::SessionRecording(Scene scene, RadarConfig radar, double noise_std,
                                   std::uint64_t noise_seed, int n_frames,
                                   std::vector<TouchEvent> events, int session_id)
    : scene_(std::move(scene)),
      radar_(radar),
      noise_std_(noise_std),
      noise_seed_(noise_seed),
      n_frames_(n_frames),
      events_(std::move(events)),
      session_id_(session_id) {
    for (const auto& e : events_)
        for (int i = 0; i < n_sensors(); ++i) {
            const int f = frame_index_at(e.time_s, i);
            if (f < 0 || f >= n_frames_)
                throw RangeError("touch event " + std::to_string(e.event_id) +
                                 " falls outside the recording");
        }
}

IFFrame SessionRecording::frame(int sensor, int frame_index) const {
    if (frame_index < 0 || frame_index >= n_frames_) throw RangeError("frame index out of range");
    return synthesize_if_frame(scene_, sensor, frame_index, radar_, noise_std_, noise_seed_);
}

int SessionRecording::frame_index_at(double time_s, int sensor) const {
    const double start =
        scene_.stream_start_s.empty() ? 0.0 : scene_.stream_start_s.at(static_cast<std::size_t>(sensor));
    return static_cast<int>(std::lround((time_s - start) * radar_.frame_rate_hz));
}

SessionRecording run_session(const GridSpec& grid, const SimulationConfig& sim,
                             const RadarConfig& radar, std::uint64_t seed, int session_id) {
    radar.validate();
    sim.geometry.validate();
    sim.sensors.validate();
    sim.target.validate();
    if (grid.rows < 1 || grid.cols < 1) throw ConfigError("grid: rows and cols must be >= 1");
    if (grid.lead_in_frames < 0 || grid.lead_out_frames < 0)
        throw ConfigError("grid: lead-in/lead-out frames must be non-negative");
    if (sim.sensors.size() != radar.n_sensors)
        throw ConfigError("sensor array size does not match radar.n_sensors");

    const auto& geom = sim.geometry;
    const Vec2 first = grid.point(0, 0);
    const Vec2 last = grid.point(grid.rows - 1, grid.cols - 1);
    constexpr double tol = 1e-9;
    if (first.x < -tol || first.y < -tol || last.x > geom.length_cm + tol ||
        last.y > geom.width_cm + tol)
        throw GeometryError("grid exceeds the " + std::to_string(geom.length_cm) + " x " +
                            std::to_string(geom.width_cm) + " cm touch area");

    Scene scene;
    scene.sensors = sim.sensors;
    scene.scatterers = make_target_scatterers(sim.target);
    auto clut = make_clutter_scatterers(sim.clutter, sim.sensors, geom, radar);
    scene.scatterers.insert(scene.scatterers.end(), clut.begin(), clut.end());
    scene.jitter_std_cm = sim.target.jitter_std_cm;
    scene.jitter_seed = derive_seed(seed, 2);
    scene.range_bias_cm = sim.sensor_range_bias_cm;
    if (!scene.range_bias_cm.empty() && static_cast<int>(scene.range_bias_cm.size()) != radar.n_sensors)
        throw ConfigError("sensor_range_bias_cm must have one entry per sensor");
    scene.inverse_square = sim.inverse_square;

    const double period = radar.frame_period_s();
    scene.stream_start_s.assign(static_cast<std::size_t>(radar.n_sensors), 0.0);
    if (sim.unsynchronized_streams) {
        std::mt19937_64 rng(derive_seed(seed, 3));
        std::uniform_real_distribution<double> u(0.0, period);
        for (auto& s : scene.stream_start_s) s = u(rng);
    }

    const int cycle = sim.target.cycle_frames();
    std::vector<TouchEvent> events;
    events.reserve(static_cast<std::size_t>(grid.n_points()));
    int k = 0;
    for (int row = 0; row < grid.rows; ++row) {
        for (int col = 0; col < grid.cols; ++col, ++k) {
            const Vec2 touch = grid.point(row, col);
            const Vec2 p = geom.touch_to_radar(touch);
            const double t_start = (grid.lead_in_frames + static_cast<double>(k) * cycle) * period;
            append_touch_path(scene.target_path, p, sim.target, t_start, period);

            TouchEvent e;
            e.event_id = k;
            e.session_id = session_id;
            e.row = row;
            e.col = col;
            e.rel_x = geom.length_cm > 0.0 ? std::clamp(touch.x / geom.length_cm, 0.0, 1.0) : 0.0;
            e.rel_y = geom.width_cm > 0.0 ? std::clamp(touch.y / geom.width_cm, 0.0, 1.0) : 0.0;
            e.time_s = t_start + (sim.target.approach_frames + 0.5 * sim.target.dwell_frames) * period;
            events.push_back(e);
        }
    }
    const int n_frames = grid.lead_in_frames + grid.n_points() * cycle + grid.lead_out_frames;
    return SessionRecording(std::move(scene), radar, sim.noise_std, derive_seed(seed, 1), n_frames,
                            std::move(events), session_id);
}

}  // namespace mmtouch
