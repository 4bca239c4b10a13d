#include "mmtouch/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mmtouch {

using json = nlohmann::ordered_json;

namespace {

json vec2_json(Vec2 v) { return json::array({v.x, v.y}); }

// Reads the keys of one JSON object and rejects the ones nobody asked for.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown configuration key " + path_ + "." + it.key());
    }

    template <typename T>
    void get(const char* key, T& dst) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        try {
            dst = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(path_ + "." + key + ": wrong value type");
        }
    }
    void get_vec2(const char* key, Vec2& dst) {
        std::vector<double> v;
        get(key, v);
        if (!j_.contains(key)) return;
        if (v.size() != 2) throw ConfigError(path_ + "." + key + ": expected [x, y]");
        dst = {v[0], v[1]};
    }
    template <typename Fn>
    void sub(const char* key, Fn&& fn) {
        if (!j_.contains(key)) return;
        seen_.insert(key);
        Section s(j_.at(key), path_ + "." + key);
        fn(s);
    }
    template <typename Parse, typename T>
    void get_enum(const char* key, T& dst, Parse parse) {
        std::string s;
        get(key, s);
        if (j_.contains(key)) dst = parse(s);
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json grid_json(const GridSpec& g) {
    return {{"rows", g.rows},
            {"cols", g.cols},
            {"spacing_x_cm", g.spacing_x_cm},
            {"spacing_y_cm", g.spacing_y_cm},
            {"origin_cm", vec2_json(g.origin_cm)},
            {"lead_in_frames", g.lead_in_frames},
            {"lead_out_frames", g.lead_out_frames}};
}

void read_grid(Section& s, GridSpec& g) {
    s.get("rows", g.rows);
    s.get("cols", g.cols);
    s.get("spacing_x_cm", g.spacing_x_cm);
    s.get("spacing_y_cm", g.spacing_y_cm);
    s.get_vec2("origin_cm", g.origin_cm);
    s.get("lead_in_frames", g.lead_in_frames);
    s.get("lead_out_frames", g.lead_out_frames);
}

}  // namespace

void RunConfig::validate() const {
    radar.validate();
    dsp.validate();
    csp.validate();
    sim.geometry.validate();
    sim.sensors.validate();
    sim.target.validate();
    training.validate();
    if (dsp.oversampling != radar.oversampling)
        throw ConfigError("dsp.oversampling must equal radar.oversampling");
    if (sim.sensors.size() != radar.n_sensors)
        throw ConfigError("sensor count does not match radar.n_sensors");
    if (!(sim.noise_std >= 0.0)) throw ConfigError("simulation.noise_std must be non-negative");
    if (features.half_window < 0) throw ConfigError("features.half_window must be non-negative");
    if (features.r_max < 1 || features.r_max > radar.n_range_bins())
        throw ConfigError("features.r_max must lie in [1, N_os * N_IF / 2]");
    if (sessions.train_sessions < 0 || sessions.valtest_sessions < 0)
        throw ConfigError("session counts must be non-negative");
    if (benchmark.n_trials < 1 || benchmark.warmup < 0)
        throw ConfigError("benchmark.n_trials must be >= 1 and warmup >= 0");
    model_config().validate();
}

ModelConfig RunConfig::model_config() const {
    ModelConfig m = model;
    m.input_frames = 2 * features.half_window + 1;
    m.input_bins = features.r_max;
    m.input_channels = m.input_mode == InputMode::magnitude ? radar.n_sensors : 2 * radar.n_sensors;
    return m;
}

void RunConfig::apply_paper_scale() {
    sessions.train_sessions = sessions.paper_train_sessions;
    sessions.valtest_sessions = sessions.paper_valtest_sessions;
}

std::string RunConfig::to_json() const {
    json sensors = json::array();
    for (const auto& p : sim.sensors.positions_cm) sensors.push_back(vec2_json(p));
    const auto& t = sim.target;
    const auto& c = sim.clutter;
    const auto& g = sim.geometry;
    json j = {
        {"seed", seed},
        {"radar",
         {{"chirp_bandwidth_hz", radar.chirp_bandwidth_hz},
          {"carrier_hz", radar.carrier_hz},
          {"frame_rate_hz", radar.frame_rate_hz},
          {"n_if_samples", radar.n_if_samples},
          {"n_chirps", radar.n_chirps},
          {"n_rx", radar.n_rx},
          {"n_sensors", radar.n_sensors},
          {"oversampling", radar.oversampling}}},
        {"dsp", {{"oversampling", dsp.oversampling}, {"window", to_string(dsp.window)}, {"mti_beta", dsp.mti_beta}}},
        {"csp",
         {{"consensus_tolerance_cm", csp.consensus_tolerance_cm},
          {"window_frames", csp.window_frames},
          {"nls_max_iterations", csp.nls_max_iterations},
          {"nls_convergence_tol_cm", csp.nls_convergence_tol_cm},
          {"min_valid_sensors", csp.min_valid_sensors}}},
        {"geometry",
         {{"length_cm", g.length_cm},
          {"width_cm", g.width_cm},
          {"offset_x_cm", g.offset_x_cm},
          {"offset_y_cm", g.offset_y_cm},
          {"grid_dx_cm", g.grid_dx_cm},
          {"grid_dy_cm", g.grid_dy_cm}}},
        {"sensors", sensors},
        {"simulation",
         {{"noise_std", sim.noise_std},
          {"unsynchronized_streams", sim.unsynchronized_streams},
          {"inverse_square", sim.inverse_square},
          {"sensor_range_bias_cm", sim.sensor_range_bias_cm},
          {"target",
           {{"finger_amplitude", t.finger_amplitude},
            {"n_arm", t.n_arm},
            {"arm_offset_min_cm", t.arm_offset_min_cm},
            {"arm_offset_max_cm", t.arm_offset_max_cm},
            {"arm_amplitude_ratio", t.arm_amplitude_ratio},
            {"robot_base_cm", vec2_json(t.robot_base_cm)},
            {"jitter_std_cm", t.jitter_std_cm},
            {"hover_cm", t.hover_cm},
            {"approach_frames", t.approach_frames},
            {"dwell_frames", t.dwell_frames},
            {"retract_frames", t.retract_frames}}},
          {"clutter",
           {{"count", c.count},
            {"amplitude", c.amplitude},
            {"max_radius_cm", c.max_radius_cm},
            {"keep_out_cm", c.keep_out_cm},
            {"seed", c.seed}}},
          {"train_grid", grid_json(sessions.train_grid)},
          {"valtest_grid", grid_json(sessions.valtest_grid)},
          {"train_sessions", sessions.train_sessions},
          {"valtest_sessions", sessions.valtest_sessions},
          {"paper_train_sessions", sessions.paper_train_sessions},
          {"paper_valtest_sessions", sessions.paper_valtest_sessions}}},
        {"features", {{"half_window", features.half_window}, {"r_max", features.r_max}}},
        {"model",
         {{"conv_filters", model.conv_filters},
          {"kernel", model.kernel},
          {"pool", model.pool},
          {"dense_units", model.dense_units},
          {"padding", to_string(model.padding)},
          {"input_mode", to_string(model.input_mode)}}},
        {"training",
         {{"learning_rate", training.learning_rate},
          {"adam_beta1", training.adam_beta1},
          {"adam_beta2", training.adam_beta2},
          {"adam_epsilon", training.adam_epsilon},
          {"batch_size", training.batch_size},
          {"epochs", training.epochs},
          {"seed", training.seed},
          {"verbose", training.verbose}}},
        {"benchmark", {{"n_trials", benchmark.n_trials}, {"warmup", benchmark.warmup}}},
    };
    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig r;
    {
        Section root(j, "config");
        root.get("seed", r.seed);
        root.sub("radar", [&](Section& s) {
            s.get("chirp_bandwidth_hz", r.radar.chirp_bandwidth_hz);
            s.get("carrier_hz", r.radar.carrier_hz);
            s.get("frame_rate_hz", r.radar.frame_rate_hz);
            s.get("n_if_samples", r.radar.n_if_samples);
            s.get("n_chirps", r.radar.n_chirps);
            s.get("n_rx", r.radar.n_rx);
            s.get("n_sensors", r.radar.n_sensors);
            s.get("oversampling", r.radar.oversampling);
        });
        r.dsp.oversampling = r.radar.oversampling;
        root.sub("dsp", [&](Section& s) {
            s.get("oversampling", r.dsp.oversampling);
            s.get_enum("window", r.dsp.window, parse_window);
            s.get("mti_beta", r.dsp.mti_beta);
        });
        r.csp.consensus_tolerance_cm = 2.0 * r.radar.oversampled_bin_cm();
        root.sub("csp", [&](Section& s) {
            s.get("consensus_tolerance_cm", r.csp.consensus_tolerance_cm);
            s.get("window_frames", r.csp.window_frames);
            s.get("nls_max_iterations", r.csp.nls_max_iterations);
            s.get("nls_convergence_tol_cm", r.csp.nls_convergence_tol_cm);
            s.get("min_valid_sensors", r.csp.min_valid_sensors);
        });
        root.sub("geometry", [&](Section& s) {
            auto& g = r.sim.geometry;
            s.get("length_cm", g.length_cm);
            s.get("width_cm", g.width_cm);
            s.get("offset_x_cm", g.offset_x_cm);
            s.get("offset_y_cm", g.offset_y_cm);
            s.get("grid_dx_cm", g.grid_dx_cm);
            s.get("grid_dy_cm", g.grid_dy_cm);
        });
        if (j.contains("sensors")) {
            std::vector<std::vector<double>> pts;
            root.get("sensors", pts);
            r.sim.sensors.positions_cm.clear();
            for (const auto& p : pts) {
                if (p.size() != 2) throw ConfigError("config.sensors: expected [[x, y], ...]");
                r.sim.sensors.positions_cm.push_back({p[0], p[1]});
            }
        }
        root.sub("simulation", [&](Section& s) {
            s.get("noise_std", r.sim.noise_std);
            s.get("unsynchronized_streams", r.sim.unsynchronized_streams);
            s.get("inverse_square", r.sim.inverse_square);
            s.get("sensor_range_bias_cm", r.sim.sensor_range_bias_cm);
            s.sub("target", [&](Section& t) {
                auto& m = r.sim.target;
                t.get("finger_amplitude", m.finger_amplitude);
                t.get("n_arm", m.n_arm);
                t.get("arm_offset_min_cm", m.arm_offset_min_cm);
                t.get("arm_offset_max_cm", m.arm_offset_max_cm);
                t.get("arm_amplitude_ratio", m.arm_amplitude_ratio);
                t.get_vec2("robot_base_cm", m.robot_base_cm);
                t.get("jitter_std_cm", m.jitter_std_cm);
                t.get("hover_cm", m.hover_cm);
                t.get("approach_frames", m.approach_frames);
                t.get("dwell_frames", m.dwell_frames);
                t.get("retract_frames", m.retract_frames);
            });
            s.sub("clutter", [&](Section& c) {
                auto& m = r.sim.clutter;
                c.get("count", m.count);
                c.get("amplitude", m.amplitude);
                c.get("max_radius_cm", m.max_radius_cm);
                c.get("keep_out_cm", m.keep_out_cm);
                c.get("seed", m.seed);
            });
            s.sub("train_grid", [&](Section& g) { read_grid(g, r.sessions.train_grid); });
            s.sub("valtest_grid", [&](Section& g) { read_grid(g, r.sessions.valtest_grid); });
            s.get("train_sessions", r.sessions.train_sessions);
            s.get("valtest_sessions", r.sessions.valtest_sessions);
            s.get("paper_train_sessions", r.sessions.paper_train_sessions);
            s.get("paper_valtest_sessions", r.sessions.paper_valtest_sessions);
        });
        root.sub("features", [&](Section& s) {
            s.get("half_window", r.features.half_window);
            s.get("r_max", r.features.r_max);
        });
        root.sub("model", [&](Section& s) {
            s.get("conv_filters", r.model.conv_filters);
            s.get("kernel", r.model.kernel);
            s.get("pool", r.model.pool);
            s.get("dense_units", r.model.dense_units);
            s.get_enum("padding", r.model.padding, parse_padding);
            s.get_enum("input_mode", r.model.input_mode, parse_input_mode);
        });
        root.sub("training", [&](Section& s) {
            s.get("learning_rate", r.training.learning_rate);
            s.get("adam_beta1", r.training.adam_beta1);
            s.get("adam_beta2", r.training.adam_beta2);
            s.get("adam_epsilon", r.training.adam_epsilon);
            s.get("batch_size", r.training.batch_size);
            s.get("epochs", r.training.epochs);
            s.get("seed", r.training.seed);
            s.get("verbose", r.training.verbose);
        });
        root.sub("benchmark", [&](Section& s) {
            s.get("n_trials", r.benchmark.n_trials);
            s.get("warmup", r.benchmark.warmup);
        });
    }
    r.validate();
    return r;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

}  // namespace mmtouch
