#include "mmtouch/csp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mmtouch {

void CspConfig::validate() const {
    if (!(consensus_tolerance_cm >= 0.0)) throw ConfigError("csp: consensus tolerance must be >= 0");
    if (window_frames < 1) throw ConfigError("csp: window_frames must be >= 1");
    if (nls_max_iterations < 1) throw ConfigError("csp: nls_max_iterations must be >= 1");
    if (!(nls_convergence_tol_cm > 0.0)) throw ConfigError("csp: nls_convergence_tol_cm must be > 0");
    if (min_valid_sensors < 3) throw ConfigError("csp: min_valid_sensors must be >= 3");
}

std::string CalibrationTable::to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < offsets_cm.size(); ++i) j[std::to_string(i)] = offsets_cm[i];
    return j.dump(2);
}

CalibrationTable CalibrationTable::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("calibration: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("calibration: expected a JSON object");
    CalibrationTable t;
    t.offsets_cm.assign(j.size(), std::numeric_limits<double>::quiet_NaN());
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::size_t idx = 0;
        try {
            idx = std::stoul(it.key());
        } catch (const std::exception&) {
            throw FormatError("calibration: sensor keys must be integers");
        }
        if (idx >= t.offsets_cm.size() || !it.value().is_number())
            throw FormatError("calibration: sensor indices must be 0..N-1 with numeric offsets");
        t.offsets_cm[idx] = it.value().get<double>();
    }
    for (double v : t.offsets_cm)
        if (!std::isfinite(v)) throw FormatError("calibration: offsets must be finite");
    return t;
}

void CalibrationTable::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << to_json() << '\n';
}

CalibrationTable CalibrationTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("missing calibration table " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::optional<double> consensus_range(std::span<const double> per_rx, double bf_range_cm,
                                      double tolerance_cm, double calibration_cm) {
    for (std::size_t j = 0; j < per_rx.size(); ++j)
        for (std::size_t k = j + 1; k < per_rx.size(); ++k)
            if (!(std::abs(per_rx[j] - per_rx[k]) <= tolerance_cm)) return std::nullopt;
    return bf_range_cm - calibration_cm;
}

double peak_range_cm(std::span<const cdouble> profile, double bin_cm) {
    std::size_t best = 0;
    double best_pow = -1.0;
    for (std::size_t r = 0; r < profile.size(); ++r) {
        const double p = std::norm(profile[r]);
        if (p > best_pow) {
            best_pow = p;
            best = r;
        }
    }
    return bin_cm * static_cast<double>(best);
}

SensorRangeEstimate estimate_ranges(const PerRxProfiles& per_rx, const BeamformedProfile& bf,
                                    const CspConfig& config, const CalibrationTable& calib,
                                    const RadarConfig& radar) {
    if (per_rx.sensor_index != bf.sensor_index || per_rx.frame_index != bf.frame_index)
        throw ShapeError("per-RX and beamformed profiles come from different frames");
    const double bin = radar.oversampled_bin_cm();
    std::vector<double> rx_ranges(static_cast<std::size_t>(per_rx.n_rx));
    for (int j = 0; j < per_rx.n_rx; ++j)
        rx_ranges[static_cast<std::size_t>(j)] = peak_range_cm(
            std::span(per_rx.values).subspan(static_cast<std::size_t>(j) * per_rx.n_bins,
                                             static_cast<std::size_t>(per_rx.n_bins)),
            bin);
    SensorRangeEstimate out;
    out.sensor_index = bf.sensor_index;
    out.frame_index = bf.frame_index;
    out.range_cm = consensus_range(rx_ranges, peak_range_cm(bf.values, bin),
                                   config.consensus_tolerance_cm, calib[bf.sensor_index]);
    return out;
}

std::optional<double> window_average_ranges(std::span<const std::optional<double>> history) {
    double sum = 0.0;
    int n_val = 0;
    for (const auto& h : history)
        if (h) {
            sum += *h;
            ++n_val;
        }
    if (n_val == 0) return std::nullopt;
    return sum / n_val;
}

CalibrationTable estimate_calibration(std::span<const CalibrationSample> samples,
                                      const SensorArray& sensors) {
    const int n = sensors.size();
    std::vector<double> sum(static_cast<std::size_t>(n), 0.0);
    std::vector<long> count(static_cast<std::size_t>(n), 0);
    for (const auto& s : samples) {
        if (static_cast<int>(s.ranges_cm.size()) != n)
            throw ShapeError("calibration sample has the wrong number of sensors");
        for (int i = 0; i < n; ++i) {
            const auto& r = s.ranges_cm[static_cast<std::size_t>(i)];
            if (!r) continue;
            sum[static_cast<std::size_t>(i)] += *r - distance(s.gt_cm, sensors[i]);
            ++count[static_cast<std::size_t>(i)];
        }
    }
    CalibrationTable t;
    for (int i = 0; i < n; ++i) {
        if (count[static_cast<std::size_t>(i)] == 0)
            throw Error("calibration failed: sensor " + std::to_string(i) + " has no valid range");
        t.offsets_cm.push_back(sum[static_cast<std::size_t>(i)] /
                               static_cast<double>(count[static_cast<std::size_t>(i)]));
    }
    return t;
}

double nls_objective(Vec2 p, std::span<const std::optional<double>> ranges,
                     const SensorArray& sensors) {
    double f = 0.0;
    for (int i = 0; i < sensors.size(); ++i) {
        const auto& r = ranges[static_cast<std::size_t>(i)];
        if (!r) continue;
        const double e = distance(sensors[i], p) - *r;
        f += e * e;
    }
    return f;
}

namespace {

struct Anchor {
    Vec2 pos;
    double range;
};

double objective(Vec2 p, const std::vector<Anchor>& a) {
    double f = 0.0;
    for (const auto& x : a) {
        const double e = distance(x.pos, p) - x.range;
        f += e * e;
    }
    return f;
}

bool collinear(const std::vector<Anchor>& a) {
    double best = -1.0;
    Vec2 p0, p1;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = i + 1; k < a.size(); ++k)
            if (distance(a[i].pos, a[k].pos) > best) {
                best = distance(a[i].pos, a[k].pos);
                p0 = a[i].pos;
                p1 = a[k].pos;
            }
    const Vec2 d = p1 - p0;
    const double len = d.norm();
    if (len == 0.0) return true;
    for (const auto& x : a) {
        const Vec2 v = x.pos - p0;
        if (std::abs(d.x * v.y - d.y * v.x) / len > 1e-9) return false;
    }
    return true;
}

Vec2 nudge_off_sensors(Vec2 p, const std::vector<Anchor>& a, Vec2 center) {
    for (const auto& x : a) {
        if (distance(p, x.pos) < 1e-9) {
            Vec2 dir = center - p;
            const double n = dir.norm();
            dir = n > 0.0 ? (1.0 / n) * dir : Vec2{1.0, 0.0};
            p = p + 1e-6 * dir;
        }
    }
    return p;
}

struct LmResult {
    Vec2 p;
    double cost;
    int iterations;
    bool converged;
};

LmResult levenberg_marquardt(Vec2 p, const std::vector<Anchor>& a, const CspConfig& cfg,
                             Vec2 center) {
    p = nudge_off_sensors(p, a, center);
    double cost = objective(p, a);
    double lambda = 1e-3;
    for (int it = 1; it <= cfg.nls_max_iterations; ++it) {
        // Normal equations of the 2-parameter problem.
        double a00 = 0, a01 = 0, a11 = 0, g0 = 0, g1 = 0;
        for (const auto& x : a) {
            const Vec2 d = p - x.pos;
            const double n = d.norm();
            const double jx = d.x / n, jy = d.y / n;
            const double r = n - x.range;
            a00 += jx * jx;
            a01 += jx * jy;
            a11 += jy * jy;
            g0 += jx * r;
            g1 += jy * r;
        }
        if (std::hypot(g0, g1) == 0.0) return {p, cost, it, true};
        for (;;) {
            const double m00 = a00 + lambda * std::max(a00, 1e-12);
            const double m11 = a11 + lambda * std::max(a11, 1e-12);
            const double det = m00 * m11 - a01 * a01;
            const Vec2 step{(-g0 * m11 + g1 * a01) / det, (-g1 * m00 + g0 * a01) / det};
            const Vec2 cand = nudge_off_sensors(p + step, a, center);
            const double c = objective(cand, a);
            const bool small = step.norm() < cfg.nls_convergence_tol_cm;
            if (c <= cost) {
                p = cand;
                cost = c;
                lambda = std::max(lambda * 0.1, 1e-15);
                if (small) return {p, cost, it, true};
                break;
            }
            if (small) return {p, cost, it, true};
            lambda *= 10.0;
            if (lambda > 1e15) return {p, cost, it, true};
        }
    }
    return {p, cost, cfg.nls_max_iterations, false};
}

}  // namespace

std::optional<PositionEstimate> solve_nls(std::span<const std::optional<double>> ranges,
                                          const SensorArray& sensors, const CspConfig& config) {
    if (static_cast<int>(ranges.size()) != sensors.size())
        throw ShapeError("one range slot per sensor is required");
    std::vector<Anchor> anchors;
    for (int i = 0; i < sensors.size(); ++i)
        if (const auto& r = ranges[static_cast<std::size_t>(i)]) anchors.push_back({sensors[i], *r});
    if (static_cast<int>(anchors.size()) < config.min_valid_sensors) return std::nullopt;
    if (collinear(anchors)) throw GeometryError("valid sensors are collinear");

    double xmin = anchors[0].pos.x, xmax = xmin, ymin = anchors[0].pos.y, ymax = ymin;
    for (const auto& s : sensors.positions_cm) {
        xmin = std::min(xmin, s.x);
        xmax = std::max(xmax, s.x);
        ymin = std::min(ymin, s.y);
        ymax = std::max(ymax, s.y);
    }
    const Vec2 center{0.5 * (xmin + xmax), 0.5 * (ymin + ymax)};

    std::vector<Vec2> starts;
    Vec2 wc;
    double wsum = 0.0;
    for (const auto& x : anchors) {
        const double w = 1.0 / std::max(x.range, 1e-6);
        wc = wc + w * x.pos;
        wsum += w;
    }
    starts.push_back((1.0 / wsum) * wc);
    const double qx = 0.25 * (xmax - xmin), qy = 0.25 * (ymax - ymin);
    for (double sx : {-1.0, 1.0})
        for (double sy : {-1.0, 1.0}) starts.push_back({center.x + sx * qx, center.y + sy * qy});

    std::optional<LmResult> best;
    for (const Vec2& s : starts) {
        const LmResult r = levenberg_marquardt(s, anchors, config, center);
        if (!best || r.cost < best->cost) best = r;
    }
    PositionEstimate est;
    est.position_cm = best->p;
    est.method = Method::csp;
    est.residual_cm2 = best->cost;
    est.n_sensors_used = static_cast<int>(anchors.size());
    est.converged = best->converged;
    est.iterations = best->iterations;
    return est;
}

std::optional<PositionEstimate> locate_event_csp(const SessionRecording& recording,
                                                 const TouchEvent& event,
                                                 const CalibrationTable& calib,
                                                 const DspConfig& dsp, const CspConfig& config) {
    config.validate();
    const RadarConfig& radar = recording.radar();
    if (calib.size() != recording.n_sensors())
        throw DependencyError("calibration table does not cover every sensor");
    std::vector<std::optional<double>> ranges;
    for (int i = 0; i < recording.n_sensors(); ++i) {
        const int f_n = recording.frame_index_at(event.time_s, i);
        SensorChain chain(radar, dsp);
        std::vector<std::optional<double>> history;
        for (int f = 0; f <= f_n; ++f) {
            const auto out = chain.push(recording.frame(i, f));
            if (f > f_n - config.window_frames)
                history.push_back(estimate_ranges(out.per_rx, out.beamformed, config, calib, radar).range_cm);
        }
        ranges.push_back(window_average_ranges(history));
    }
    auto est = solve_nls(ranges, recording.scene().sensors, config);
    if (est) est->event_id = event.event_id;
    return est;
}

}  // namespace mmtouch
