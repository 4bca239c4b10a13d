#include "mmtouch/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mmtouch {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name, const fs::path& path) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw FormatError(path.string() + ": missing column " + name);
    }
};

CsvTable read_csv(const fs::path& path, const std::string& what) {
    std::ifstream in(path);
    if (!in) throw DependencyError(path.string() + " not found; run " + what + " first");
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
    t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto row = split_csv_line(line);
        if (row.size() != t.header.size())
            throw FormatError(path.string() + ": row with " + std::to_string(row.size()) + " fields, expected " +
                              std::to_string(t.header.size()));
        t.rows.push_back(std::move(row));
    }
    return t;
}

double parse_double(const std::string& s, const fs::path& path) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": bad number '" + s + "'");
    }
}

int parse_int(const std::string& s, const fs::path& path) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(path.string() + ": bad integer '" + s + "'");
    }
}

std::string dataset_metadata(const RunConfig& c) {
    const auto& g = c.sim.geometry;
    json m = {
        {"seed", c.seed},
        {"half_window", c.features.half_window},
        {"r_max", c.features.r_max},
        {"r_max_formula", compute_r_max(g, c.radar)},
        {"geometry",
         {{"length_cm", g.length_cm},
          {"width_cm", g.width_cm},
          {"offset_x_cm", g.offset_x_cm},
          {"offset_y_cm", g.offset_y_cm}}},
        {"train_sessions", c.sessions.train_sessions},
        {"valtest_sessions", c.sessions.valtest_sessions},
    };
    return m.dump();
}

Vec2 event_gt(const TouchEvent& e, const DisplayGeometry& geom) { return gt_to_radar_coords(e, geom); }

std::vector<std::optional<double>> calibrated(const std::vector<std::optional<double>>& raw,
                                              const CalibrationTable& calib) {
    if (static_cast<int>(raw.size()) != calib.size())
        throw ConfigError("calibration table has " + std::to_string(calib.size()) + " sensors, ranges have " +
                          std::to_string(raw.size()));
    std::vector<std::optional<double>> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
        if (raw[i]) out[i] = *raw[i] - calib[static_cast<int>(i)];
    return out;
}

}  // namespace

fs::path RunPaths::eval_csv(Method m) const { return root / (std::string(method_name(m)) + "_eval.csv"); }
fs::path RunPaths::metrics_json(Method m) const {
    return root / (std::string(method_name(m)) + "_metrics.json");
}
fs::path RunPaths::rmse_csv(Method m) const {
    return root / ("rmse_heatmap_" + std::string(method_name(m)) + ".csv");
}
fs::path RunPaths::rmse_svg(Method m) const {
    return root / ("rmse_heatmap_" + std::string(method_name(m)) + ".svg");
}

const char* method_name(Method m) { return m == Method::csp ? "csp" : "cnn"; }

Method parse_method(const std::string& s) {
    if (s == "csp") return Method::csp;
    if (s == "cnn") return Method::cnn;
    throw ConfigError("unknown method '" + s + "'");
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_range_csv(const fs::path& path, const std::vector<RangeRecord>& records) {
    std::size_t n_sensors = records.empty() ? 0 : records.front().ranges_cm.size();
    auto out = open_out(path);
    out << "split,session_id,event_id,row,col,rel_x,rel_y,time_s,gt_x_cm,gt_y_cm";
    for (std::size_t i = 0; i < n_sensors; ++i) out << ",range" << i << "_cm";
    out << '\n';
    for (const auto& r : records) {
        if (r.ranges_cm.size() != n_sensors) throw ShapeError("range records disagree on the sensor count");
        const auto& e = r.event;
        out << split_name(r.split) << ',' << e.session_id << ',' << e.event_id << ',' << e.row << ',' << e.col
            << ',' << format_number(e.rel_x) << ',' << format_number(e.rel_y) << ',' << format_number(e.time_s)
            << ',' << format_number(r.gt_cm.x) << ',' << format_number(r.gt_cm.y);
        for (const auto& v : r.ranges_cm) {
            out << ',';
            if (v) out << format_number(*v);
        }
        out << '\n';
    }
}

std::vector<RangeRecord> read_range_csv(const fs::path& path) {
    const CsvTable t = read_csv(path, "simulate");
    const std::size_t c_split = t.column("split", path), c_sess = t.column("session_id", path),
                      c_ev = t.column("event_id", path), c_row = t.column("row", path), c_col = t.column("col", path),
                      c_rx = t.column("rel_x", path), c_ry = t.column("rel_y", path), c_t = t.column("time_s", path),
                      c_gx = t.column("gt_x_cm", path), c_gy = t.column("gt_y_cm", path);
    std::vector<std::size_t> c_range;
    for (std::size_t i = 0;; ++i) {
        const std::string name = "range" + std::to_string(i) + "_cm";
        bool found = false;
        for (std::size_t k = 0; k < t.header.size(); ++k)
            if (t.header[k] == name) {
                c_range.push_back(k);
                found = true;
            }
        if (!found) break;
    }
    std::vector<RangeRecord> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        RangeRecord r;
        try {
            r.split = parse_split(row[c_split]);
        } catch (const ConfigError&) {
            throw FormatError(path.string() + ": unknown split '" + row[c_split] + "'");
        }
        r.event.session_id = parse_int(row[c_sess], path);
        r.event.event_id = parse_int(row[c_ev], path);
        r.event.row = parse_int(row[c_row], path);
        r.event.col = parse_int(row[c_col], path);
        r.event.rel_x = parse_double(row[c_rx], path);
        r.event.rel_y = parse_double(row[c_ry], path);
        r.event.time_s = parse_double(row[c_t], path);
        r.gt_cm = {parse_double(row[c_gx], path), parse_double(row[c_gy], path)};
        for (std::size_t k : c_range)
            r.ranges_cm.push_back(row[k].empty() ? std::nullopt : std::optional(parse_double(row[k], path)));
        out.push_back(std::move(r));
    }
    return out;
}

void write_eval_csv(const fs::path& path, const std::vector<EvalRow>& rows) {
    auto out = open_out(path);
    out << "session_id,event_id,row,col,gt_x_cm,gt_y_cm,est_x_cm,est_y_cm,error_cm,status,residual_cm2,iterations\n";
    for (const auto& r : rows) {
        const auto& e = r.record;
        out << e.session_id << ',' << e.event_id << ',' << e.grid.row << ',' << e.grid.col << ','
            << format_number(e.gt_cm.x) << ',' << format_number(e.gt_cm.y) << ',';
        if (e.estimate_cm)
            out << format_number(e.estimate_cm->x) << ',' << format_number(e.estimate_cm->y) << ','
                << format_number(distance(*e.estimate_cm, e.gt_cm));
        else
            out << ",,";
        out << ',' << r.status << ',' << format_number(r.residual_cm2) << ',' << r.iterations << '\n';
    }
}

std::vector<EvalRow> read_eval_csv(const fs::path& path) {
    const CsvTable t = read_csv(path, "the evaluation stage");
    const std::size_t c_sess = t.column("session_id", path), c_ev = t.column("event_id", path),
                      c_row = t.column("row", path), c_col = t.column("col", path), c_gx = t.column("gt_x_cm", path),
                      c_gy = t.column("gt_y_cm", path), c_ex = t.column("est_x_cm", path),
                      c_ey = t.column("est_y_cm", path), c_st = t.column("status", path),
                      c_res = t.column("residual_cm2", path), c_it = t.column("iterations", path);
    std::vector<EvalRow> out;
    for (const auto& row : t.rows) {
        EvalRow r;
        r.record.session_id = parse_int(row[c_sess], path);
        r.record.event_id = parse_int(row[c_ev], path);
        r.record.grid = {parse_int(row[c_row], path), parse_int(row[c_col], path)};
        r.record.gt_cm = {parse_double(row[c_gx], path), parse_double(row[c_gy], path)};
        if (!row[c_ex].empty())
            r.record.estimate_cm = Vec2{parse_double(row[c_ex], path), parse_double(row[c_ey], path)};
        r.status = row[c_st];
        r.residual_cm2 = parse_double(row[c_res], path);
        r.iterations = parse_int(row[c_it], path);
        out.push_back(std::move(r));
    }
    return out;
}

void write_metrics_json(const fs::path& path, const Metrics& m) {
    json j = {{"method", m.method},
              {"n_events", m.n_events},
              {"n_unavailable", m.n_unavailable},
              {"median_error_cm", m.median_error_cm},
              {"p90_error_cm", m.p90_error_cm},
              {"median_pointwise_rmse_cm", m.median_pointwise_rmse_cm},
              {"p90_pointwise_rmse_cm", m.p90_pointwise_rmse_cm},
              {"n_grid_points", m.rmse_map.size()}};
    auto out = open_out(path);
    out << j.dump(2) << '\n';
}

SimulateSummary run_simulate(const RunConfig& c, const fs::path& run_dir, std::ostream& log) {
    c.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const RunPaths paths{run_dir};
    fs::create_directories(run_dir);
    open_out(paths.config()) << c.to_json() << '\n';

    const int W = c.features.half_window;
    const int R = c.features.r_max;
    const int S = c.radar.n_sensors;
    const std::string meta = dataset_metadata(c);
    const std::string ddir = paths.dataset().string();
    if (fs::exists(paths.dataset() / "manifest.json")) fs::remove(paths.dataset() / "manifest.json");
    DatasetWriter w_train(ddir, Split::train, 2 * W + 1, R, S, meta);
    DatasetWriter w_val(ddir, Split::val, 2 * W + 1, R, S, meta);
    DatasetWriter w_test(ddir, Split::test, 2 * W + 1, R, S, meta);

    std::vector<RangeRecord> ranges;
    SimulateSummary summary;
    summary.r_max_formula = compute_r_max(c.sim.geometry, c.radar);

    auto do_session = [&](const GridSpec& grid, std::uint64_t seed, int session_id, bool is_train) {
        const auto ts = std::chrono::steady_clock::now();
        const SessionRecording rec = run_session(grid, c.sim, c.radar, seed, session_id);
        const ProcessedSession proc = process_session(rec, c.dsp, c.csp, R);
        for (const auto& e : rec.events()) {
            const Split split = is_train ? Split::train : valtest_split_of(e);
            RangeRecord r;
            r.split = split;
            r.event = e;
            r.gt_cm = event_gt(e, c.sim.geometry);
            r.ranges_cm = event_ranges(proc, e, c.csp.window_frames);
            ranges.push_back(std::move(r));
            const FeatureTensor t = assemble_feature(proc, e, W, R, c.sim.geometry);
            (split == Split::train ? w_train : split == Split::val ? w_val : w_test).append(t);
            (split == Split::train ? summary.counts.train : split == Split::val ? summary.counts.val
                                                                                : summary.counts.test) += 1;
        }
        log << "simulate: session " << session_id << (is_train ? " (train, " : " (val/test, ")
            << rec.events().size() << " touches, " << rec.n_frames() << " frames) in " << seconds_since(ts)
            << " s\n" << std::flush;
    };

    for (int s = 0; s < c.sessions.train_sessions; ++s)
        do_session(c.sessions.train_grid, derive_seed(c.seed, 100, static_cast<std::uint64_t>(s)), s, true);
    for (int k = 0; k < c.sessions.valtest_sessions; ++k)
        do_session(c.sessions.valtest_grid, derive_seed(c.seed, 200, static_cast<std::uint64_t>(k)),
                   c.sessions.train_sessions + k, false);

    w_train.finish();
    w_val.finish();
    w_test.finish();
    write_range_csv(paths.ranges(), ranges);
    summary.wall_clock_s = seconds_since(t0);
    log << "simulate: " << summary.counts.train << " train / " << summary.counts.val << " val / "
        << summary.counts.test << " test events; R_max formula " << summary.r_max_formula << ", configured "
        << R << "\n";
    return summary;
}

CalibrationTable run_calibrate(const RunConfig& c, const fs::path& run_dir, std::ostream& log) {
    c.validate();
    const RunPaths paths{run_dir};
    const auto records = read_range_csv(paths.ranges());
    std::vector<CalibrationSample> samples;
    for (const auto& r : records)
        if (r.split == Split::train) samples.push_back({r.gt_cm, r.ranges_cm});
    if (samples.empty()) throw DependencyError("csp_ranges.csv holds no train-split events");
    const CalibrationTable table = estimate_calibration(samples, c.sim.sensors);
    table.save(paths.calibration().string());
    log << "calibrate: " << samples.size() << " train events; offsets (cm):";
    for (double v : table.offsets_cm) log << ' ' << v;
    log << '\n';
    return table;
}

Metrics run_csp_eval(const RunConfig& c, const fs::path& run_dir, std::ostream& log) {
    c.validate();
    const RunPaths paths{run_dir};
    if (!fs::exists(paths.calibration()))
        throw DependencyError("missing calibration: " + paths.calibration().string() + " (run calibrate first)");
    const CalibrationTable calib = CalibrationTable::load(paths.calibration().string());
    const auto records = read_range_csv(paths.ranges());
    std::vector<EvalRow> rows;
    std::vector<EvalRecord> recs;
    for (const auto& r : records) {
        if (r.split != Split::test) continue;
        EvalRow row;
        row.record.event_id = r.event.event_id;
        row.record.session_id = r.event.session_id;
        row.record.grid = {r.event.row, r.event.col};
        row.record.gt_cm = r.gt_cm;
        std::optional<PositionEstimate> est;
        try {
            est = solve_nls(calibrated(r.ranges_cm, calib), c.sim.sensors, c.csp);
        } catch (const GeometryError&) {
            est.reset();
        }
        if (est) {
            row.record.estimate_cm = est->position_cm;
            row.status = est->converged ? "ok" : "not_converged";
            row.residual_cm2 = est->residual_cm2;
            row.iterations = est->iterations;
        } else {
            row.status = "unavailable";
        }
        recs.push_back(row.record);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DependencyError("csp_ranges.csv holds no test-split events");
    write_eval_csv(paths.eval_csv(Method::csp), rows);
    const Metrics m = evaluate(recs, "csp");
    write_metrics_json(paths.metrics_json(Method::csp), m);
    log << "csp-eval: " << m.n_events << " test events, " << m.n_unavailable << " unavailable; median "
        << m.median_error_cm << " cm, p90 " << m.p90_error_cm << " cm\n";
    return m;
}

TrainingSet load_training_set(const fs::path& dataset_dir, Split split, InputMode mode) {
    DatasetReader r(dataset_dir.string(), split);
    TrainingSet s;
    s.n = r.size();
    const int ch = mode == InputMode::magnitude ? r.n_sensors() : 2 * r.n_sensors();
    s.input_size = static_cast<std::size_t>(r.n_frames()) * r.n_bins() * ch;
    s.inputs.reserve(s.n * s.input_size);
    FeatureTensor t;
    while (r.next(t)) {
        const auto x = featurize_input(t, mode);
        s.inputs.insert(s.inputs.end(), x.begin(), x.end());
        s.labels.push_back(static_cast<float>(t.label_cm.x));
        s.labels.push_back(static_cast<float>(t.label_cm.y));
        s.events.push_back(t.event);
    }
    return s;
}

TrainReport run_train(const RunConfig& c, const fs::path& run_dir, std::ostream& log) {
    c.validate();
    const RunPaths paths{run_dir};
    const ModelConfig mc = c.model_config();
    const TrainingSet tr = load_training_set(paths.dataset(), Split::train, mc.input_mode);
    const TrainingSet val = load_training_set(paths.dataset(), Split::val, mc.input_mode);
    log << "train: " << tr.n << " train / " << val.n << " val samples, input " << mc.input_frames << "x"
        << mc.input_bins << "x" << mc.input_channels << ", " << parameter_count(mc) << " parameters\n"
        << std::flush;
    Model model(mc);
    model.init_uniform(c.training.seed);
    auto [trained, report] = train(std::move(model), tr, val, c.training);
    save_model(trained, paths.model().string());

    auto hist = open_out(paths.train_history());
    hist << "epoch,train_loss,val_loss\n";
    for (const auto& e : report.epochs)
        hist << e.epoch << ',' << format_number(e.train_loss) << ',' << format_number(e.val_loss) << '\n';
    json j = {{"n_train", tr.n},
              {"n_val", val.n},
              {"parameters", trained.parameter_count()},
              {"initial_val_loss", report.initial_val_loss},
              {"best_epoch", report.best_epoch},
              {"best_val_loss", report.best_epoch >= 0 ? report.epochs[static_cast<std::size_t>(report.best_epoch)].val_loss
                                                        : report.initial_val_loss},
              {"val_median_error_cm", report.val_median_error_cm},
              {"val_p90_error_cm", report.val_p90_error_cm},
              {"wall_clock_s", report.wall_clock_s}};
    open_out(paths.train_report()) << j.dump(2) << '\n';
    log << "train: best epoch " << report.best_epoch << ", val median " << report.val_median_error_cm
        << " cm, p90 " << report.val_p90_error_cm << " cm, " << report.wall_clock_s << " s\n";
    return report;
}

Metrics run_cnn_eval(const RunConfig& c, const fs::path& run_dir, std::ostream& log) {
    c.validate();
    const RunPaths paths{run_dir};
    if (!fs::exists(paths.model()))
        throw DependencyError("missing model: " + paths.model().string() + " (run train first)");
    const Model model = load_model(paths.model().string());
    const TrainingSet test = load_training_set(paths.dataset(), Split::test, model.config().input_mode);
    if (test.n == 0) throw DependencyError("the dataset holds no test-split events");
    if (test.input_size != model.input_size())
        throw ShapeError("model input shape does not match the dataset features");
    std::vector<EvalRow> rows;
    std::vector<EvalRecord> recs;
    Workspace<float> ws;
    for (std::size_t i = 0; i < test.n; ++i) {
        const auto y = model.forward(test.input(i), ws);
        const TouchEvent& e = test.events[i];
        EvalRow row;
        row.record.event_id = e.event_id;
        row.record.session_id = e.session_id;
        row.record.grid = {e.row, e.col};
        row.record.gt_cm = event_gt(e, c.sim.geometry);
        row.record.estimate_cm = Vec2{static_cast<double>(y[0]), static_cast<double>(y[1])};
        recs.push_back(row.record);
        rows.push_back(std::move(row));
    }
    write_eval_csv(paths.eval_csv(Method::cnn), rows);
    const Metrics m = evaluate(recs, "cnn");
    write_metrics_json(paths.metrics_json(Method::cnn), m);
    log << "cnn-eval: " << m.n_events << " test events; median " << m.median_error_cm << " cm, p90 "
        << m.p90_error_cm << " cm\n";
    return m;
}

std::vector<LatencyResult> run_bench_latency(const RunConfig& c, const fs::path& run_dir,
                                             const std::vector<Method>& methods, std::ostream& log) {
    c.validate();
    const RunPaths paths{run_dir};
    std::vector<LatencyResult> results;
    for (Method m : methods) {
        LatencyResult res;
        res.method = m;
        if (m == Method::cnn) {
            if (!fs::exists(paths.model()))
                throw DependencyError("missing model: " + paths.model().string() + " (run train first)");
            const Model model = load_model(paths.model().string());
            const TrainingSet test = load_training_set(paths.dataset(), Split::test, model.config().input_mode);
            res.stats = benchmark_inference(model, test, c.benchmark.n_trials, c.benchmark.warmup);
        } else {
            if (!fs::exists(paths.calibration()))
                throw DependencyError("missing calibration: " + paths.calibration().string() +
                                      " (run calibrate first)");
            const CalibrationTable calib = CalibrationTable::load(paths.calibration().string());
            std::vector<std::vector<std::optional<double>>> inputs;
            for (const auto& r : read_range_csv(paths.ranges()))
                if (r.split == Split::test) inputs.push_back(r.ranges_cm);
            if (inputs.empty()) throw DependencyError("csp_ranges.csv holds no test-split events");
            volatile double sink = 0.0;
            auto once = [&](std::size_t i) {
                try {
                    const auto est = solve_nls(calibrated(inputs[i % inputs.size()], calib), c.sim.sensors, c.csp);
                    if (est) sink = sink + est->position_cm.x;
                } catch (const GeometryError&) {
                }
            };
            for (int i = 0; i < c.benchmark.warmup; ++i) once(static_cast<std::size_t>(i));
            for (int i = 0; i < c.benchmark.n_trials; ++i) {
                const auto a = std::chrono::steady_clock::now();
                once(static_cast<std::size_t>(i));
                const auto b = std::chrono::steady_clock::now();
                res.stats.samples_ms.push_back(std::chrono::duration<double, std::milli>(b - a).count());
            }
            res.stats.median_ms = percentile_nearest_rank(res.stats.samples_ms, 0.5);
            res.stats.p90_ms = percentile_nearest_rank(res.stats.samples_ms, 0.9);
        }
        log << "bench-latency: " << method_name(m) << " median " << res.stats.median_ms << " ms, p90 "
            << res.stats.p90_ms << " ms over " << res.stats.samples_ms.size() << " trials\n";
        results.push_back(std::move(res));
    }

    const double budget_ms = 1000.0 / (2.0 * c.radar.frame_rate_hz);
    constexpr double reference_ms = 2.0;
    auto out = open_out(paths.latency_csv());
    out << "method,trial,latency_ms\n";
    for (const auto& r : results)
        for (std::size_t i = 0; i < r.stats.samples_ms.size(); ++i)
            out << method_name(r.method) << ',' << i << ',' << format_number(r.stats.samples_ms[i]) << '\n';
    auto sum = open_out(paths.latency_summary());
    sum << "method,n_trials,median_ms,p90_ms,budget_ms,reference_ms,within_budget\n";
    for (const auto& r : results)
        sum << method_name(r.method) << ',' << r.stats.samples_ms.size() << ',' << format_number(r.stats.median_ms)
            << ',' << format_number(r.stats.p90_ms) << ',' << format_number(budget_ms) << ','
            << format_number(reference_ms) << ',' << (r.stats.median_ms < budget_ms ? "true" : "false") << '\n';
    return results;
}

}  // namespace mmtouch
