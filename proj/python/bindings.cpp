#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <sstream>

#include "mmtouch/pipeline.hpp"

namespace py = pybind11;
using namespace mmtouch;

namespace {

RunConfig make_config(const std::optional<std::string>& config_json, std::optional<std::uint64_t> seed,
                      bool paper_scale) {
    RunConfig c = config_json ? RunConfig::from_json(*config_json) : RunConfig{};
    if (seed) c.seed = *seed;
    if (paper_scale) c.apply_paper_scale();
    c.validate();
    return c;
}

RunConfig run_config(const std::filesystem::path& run_dir, const std::optional<std::string>& config_json) {
    if (config_json) return make_config(config_json, std::nullopt, false);
    const auto snapshot = RunPaths{run_dir}.config();
    if (std::filesystem::exists(snapshot)) return RunConfig::load(snapshot.string());
    return RunConfig{};
}

std::vector<Method> methods_of(const std::string& m) {
    if (m == "both") return {Method::csp, Method::cnn};
    return {parse_method(m)};
}

py::dict metrics_dict(const Metrics& m) {
    py::dict d;
    d["method"] = m.method;
    d["n_events"] = m.n_events;
    d["n_unavailable"] = m.n_unavailable;
    d["median_error_cm"] = m.median_error_cm;
    d["p90_error_cm"] = m.p90_error_cm;
    d["median_pointwise_rmse_cm"] = m.median_pointwise_rmse_cm;
    d["p90_pointwise_rmse_cm"] = m.p90_pointwise_rmse_cm;
    d["errors_cm"] = m.errors_cm;
    return d;
}

py::array_t<std::complex<double>> range_fft(py::array_t<double, py::array::c_style | py::array::forcecast> x,
                                            const std::string& window) {
    if (x.ndim() != 3) throw ShapeError("expected samples shaped (n_rx, n_chirps, n_samples)");
    const auto n_rx = static_cast<int>(x.shape(0));
    const auto n_chirps = static_cast<int>(x.shape(1));
    const auto n_samples = static_cast<int>(x.shape(2));
    IFFrame f(n_samples, n_chirps, n_rx);
    std::copy_n(x.data(), f.samples.size(), f.samples.begin());
    DspConfig dsp;
    dsp.window = parse_window(window);
    const auto p = compute_range_fft(f, dsp);
    py::array_t<std::complex<double>> out({n_rx, n_chirps, p.n_bins});
    std::copy(p.values.begin(), p.values.end(), out.mutable_data());
    return out;
}

SensorArray sensor_array(const std::optional<std::vector<std::pair<double, double>>>& sensors) {
    SensorArray s;
    if (sensors) {
        s.positions_cm.clear();
        for (auto [x, y] : *sensors) s.positions_cm.push_back({x, y});
    }
    return s;
}

}  // namespace

PYBIND11_MODULE(_mmtouch, m) {
    m.doc() = "Radar touch localization: simulation, CSP and CNN positioning, evaluation.";

    auto error = py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
    py::register_exception<GeometryError>(m, "GeometryError", error.ptr());
    py::register_exception<RangeError>(m, "RangeError", error.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
    py::register_exception<FormatError>(m, "FormatError", error.ptr());
    py::register_exception<DependencyError>(m, "DependencyError", error.ptr());
    py::register_exception<TrainingError>(m, "TrainingError", error.ptr());

    m.def("range_bin_cm", [] { return RadarConfig{}.range_bin_cm(); });
    m.def("oversampled_bin_cm", [] { return RadarConfig{}.oversampled_bin_cm(); });

    m.def(
        "default_config",
        [](bool paper_scale) { return make_config(std::nullopt, std::nullopt, paper_scale).to_json(); },
        py::arg("paper_scale") = false, "Default run configuration as JSON text.");
    m.def(
        "validate_config", [](const std::string& text) { return RunConfig::from_json(text).to_json(); },
        py::arg("config_json"), "Parse, validate and re-serialize a configuration.");

    m.def("range_fft", &range_fft, py::arg("samples"), py::arg("window") = "hann",
          "Oversampled range FFT of one IF frame shaped (n_rx, n_chirps, n_samples).");

    m.def(
        "solve_nls",
        [](const std::vector<std::optional<double>>& ranges,
           const std::optional<std::vector<std::pair<double, double>>>& sensors) -> py::object {
            const auto est = solve_nls(ranges, sensor_array(sensors), CspConfig{});
            if (!est) return py::none();
            return py::make_tuple(est->position_cm.x, est->position_cm.y);
        },
        py::arg("ranges_cm"), py::arg("sensors_cm") = py::none(),
        "Multilateration from per-sensor ranges; None for an unavailable estimate.");

    m.def(
        "estimate_calibration",
        [](const std::vector<std::pair<double, double>>& gt,
           const std::vector<std::vector<std::optional<double>>>& ranges,
           const std::optional<std::vector<std::pair<double, double>>>& sensors) {
            if (gt.size() != ranges.size()) throw ShapeError("one range row per ground-truth point");
            std::vector<CalibrationSample> samples;
            for (std::size_t n = 0; n < gt.size(); ++n) samples.push_back({{gt[n].first, gt[n].second}, ranges[n]});
            return estimate_calibration(samples, sensor_array(sensors)).offsets_cm;
        },
        py::arg("gt_cm"), py::arg("ranges_cm"), py::arg("sensors_cm") = py::none());

    m.def("percentile", &percentile_nearest_rank, py::arg("values"), py::arg("p"));

    m.def(
        "simulate",
        [](const std::filesystem::path& run_dir, std::optional<std::string> config_json,
           std::optional<std::uint64_t> seed, bool paper_scale) {
            std::ostringstream log;
            const auto s = run_simulate(make_config(config_json, seed, paper_scale), run_dir, log);
            py::dict d;
            d["train"] = s.counts.train;
            d["val"] = s.counts.val;
            d["test"] = s.counts.test;
            d["r_max_formula"] = s.r_max_formula;
            return d;
        },
        py::arg("run_dir"), py::arg("config_json") = py::none(), py::arg("seed") = py::none(),
        py::arg("paper_scale") = false);
    m.def(
        "calibrate",
        [](const std::filesystem::path& run_dir, std::optional<std::string> config_json) {
            std::ostringstream log;
            return run_calibrate(run_config(run_dir, config_json), run_dir, log).offsets_cm;
        },
        py::arg("run_dir"), py::arg("config_json") = py::none());
    m.def(
        "csp_eval",
        [](const std::filesystem::path& run_dir, std::optional<std::string> config_json) {
            std::ostringstream log;
            return metrics_dict(run_csp_eval(run_config(run_dir, config_json), run_dir, log));
        },
        py::arg("run_dir"), py::arg("config_json") = py::none());
    m.def(
        "train",
        [](const std::filesystem::path& run_dir, std::optional<std::string> config_json) {
            std::ostringstream log;
            const auto r = run_train(run_config(run_dir, config_json), run_dir, log);
            py::dict d;
            d["best_epoch"] = r.best_epoch;
            d["initial_val_loss"] = r.initial_val_loss;
            d["val_median_error_cm"] = r.val_median_error_cm;
            d["val_p90_error_cm"] = r.val_p90_error_cm;
            py::list epochs;
            for (const auto& e : r.epochs) epochs.append(py::make_tuple(e.epoch, e.train_loss, e.val_loss));
            d["epochs"] = epochs;
            return d;
        },
        py::arg("run_dir"), py::arg("config_json") = py::none());
    m.def(
        "cnn_eval",
        [](const std::filesystem::path& run_dir, std::optional<std::string> config_json) {
            std::ostringstream log;
            return metrics_dict(run_cnn_eval(run_config(run_dir, config_json), run_dir, log));
        },
        py::arg("run_dir"), py::arg("config_json") = py::none());
    m.def(
        "bench_latency",
        [](const std::filesystem::path& run_dir, const std::string& method, std::optional<std::string> config_json) {
            std::ostringstream log;
            py::dict d;
            for (const auto& r : run_bench_latency(run_config(run_dir, config_json), run_dir, methods_of(method), log))
                d[method_name(r.method)] = py::make_tuple(r.stats.median_ms, r.stats.p90_ms);
            return d;
        },
        py::arg("run_dir"), py::arg("method") = "both", py::arg("config_json") = py::none());
    m.def(
        "report",
        [](const std::filesystem::path& run_dir, const std::string& method, std::optional<std::string> config_json) {
            std::ostringstream log;
            run_report(run_config(run_dir, config_json), run_dir, methods_of(method), log);
            return log.str();
        },
        py::arg("run_dir"), py::arg("method") = "both", py::arg("config_json") = py::none());

    py::class_<Model>(m, "Model")
        .def_static("load", [](const std::string& path) { return load_model(path); }, py::arg("path"))
        .def_property_readonly("parameter_count", [](const Model& net) { return net.parameter_count(); })
        .def_property_readonly("input_shape",
                               [](const Model& net) {
                                   const auto& s = net.shapes().input;
                                   return py::make_tuple(s.h, s.w, s.c);
                               })
        .def(
            "predict",
            [](const Model& net, py::array_t<std::complex<float>, py::array::c_style | py::array::forcecast> feature) {
                if (feature.ndim() != 3) throw ShapeError("expected a feature shaped (frames, bins, sensors)");
                FeatureTensor t;
                t.n_frames = static_cast<int>(feature.shape(0));
                t.n_bins = static_cast<int>(feature.shape(1));
                t.n_sensors = static_cast<int>(feature.shape(2));
                t.values.assign(feature.data(), feature.data() + feature.size());
                const auto x = featurize_input(t, net.config().input_mode);
                Workspace<float> ws;
                const auto y = net.forward(x, ws);
                return py::make_tuple(y[0], y[1]);
            },
            py::arg("feature"), "Touch position (x, y) in cm from a complex feature tensor.");

    m.def(
        "load_features",
        [](const std::string& dataset_dir, const std::string& split) {
            const auto d = load_dataset(dataset_dir, parse_split(split));
            py::array_t<std::complex<float>> x({static_cast<py::ssize_t>(d.size()), static_cast<py::ssize_t>(d.n_frames),
                                                static_cast<py::ssize_t>(d.n_bins), static_cast<py::ssize_t>(d.n_sensors)});
            py::array_t<double> y({static_cast<py::ssize_t>(d.size()), py::ssize_t{2}});
            auto* xp = x.mutable_data();
            auto* yp = y.mutable_data();
            for (const auto& t : d.items) {
                xp = std::copy(t.values.begin(), t.values.end(), xp);
                *yp++ = t.label_cm.x;
                *yp++ = t.label_cm.y;
            }
            return py::make_tuple(x, y);
        },
        py::arg("dataset_dir"), py::arg("split"), "Features (N, frames, bins, sensors) and labels (N, 2) of a split.");
}
