#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "mmtouch/pipeline.hpp"

namespace mmtouch {

namespace fs = std::filesystem;

namespace {

std::ofstream open_report(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

// Viridis sampled at five stops, linearly interpolated.
std::string colour(double t) {
    static constexpr std::array<std::array<double, 3>, 5> stops{{{68, 1, 84},
                                                                 {59, 82, 139},
                                                                 {33, 145, 140},
                                                                 {94, 201, 98},
                                                                 {253, 231, 37}}};
    t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
    const double f = t - static_cast<double>(i);
    char buf[16];
    int rgb[3];
    for (int k = 0; k < 3; ++k)
        rgb[k] = static_cast<int>(std::lround(stops[i][static_cast<std::size_t>(k)] * (1.0 - f) +
                                              stops[i + 1][static_cast<std::size_t>(k)] * f));
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
    return buf;
}

void write_heatmap_csv(const fs::path& path, const Metrics& m) {
    auto out = open_report(path);
    out << "row,col,gt_x_cm,gt_y_cm,count,rmse_cm\n";
    for (const auto& [key, p] : m.rmse_map)
        out << key.row << ',' << key.col << ',' << format_number(p.gt_cm.x) << ',' << format_number(p.gt_cm.y)
            << ',' << p.count << ',' << format_number(p.rmse_cm) << '\n';
}

void write_heatmap_svg(const fs::path& path, const Metrics& m, double vmax) {
    int min_row = 0, max_row = 0, min_col = 0, max_col = 0;
    bool first = true;
    for (const auto& [key, p] : m.rmse_map) {
        if (first) {
            min_row = max_row = key.row;
            min_col = max_col = key.col;
            first = false;
        }
        min_row = std::min(min_row, key.row);
        max_row = std::max(max_row, key.row);
        min_col = std::min(min_col, key.col);
        max_col = std::max(max_col, key.col);
    }
    constexpr int cell = 20, margin = 40, legend = 90;
    const int nc = max_col - min_col + 1, nr = max_row - min_row + 1;
    const int width = 2 * margin + nc * cell + legend;
    const int height = 2 * margin + nr * cell;
    auto out = open_report(path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    out << "<text x=\"" << margin << "\" y=\"" << margin / 2 << "\">Pointwise RMSE (cm), "
        << m.method << "</text>\n";
    for (const auto& [key, p] : m.rmse_map) {
        const int x = margin + (key.col - min_col) * cell;
        const int y = margin + (key.row - min_row) * cell;
        out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
            << "\" fill=\"" << colour(vmax > 0.0 ? p.rmse_cm / vmax : 0.0) << "\"><title>row " << key.row
            << " col " << key.col << ": " << fixed(p.rmse_cm, 3) << " cm</title></rect>\n";
    }
    const int lx = margin + nc * cell + 20;
    const int lh = nr * cell;
    constexpr int steps = 32;
    for (int s = 0; s < steps; ++s) {
        const double t = 1.0 - (s + 0.5) / steps;
        out << "<rect x=\"" << lx << "\" y=\"" << margin + s * lh / steps << "\" width=\"14\" height=\""
            << lh / steps + 1 << "\" fill=\"" << colour(t) << "\"/>\n";
    }
    out << "<text x=\"" << lx + 18 << "\" y=\"" << margin + 10 << "\">" << fixed(vmax, 2) << "</text>\n";
    out << "<text x=\"" << lx + 18 << "\" y=\"" << margin + lh << "\">0</text>\n";
    out << "</svg>\n";
}

}  // namespace

void run_report(const RunConfig& c, const fs::path& run_dir, const std::vector<Method>& methods,
                std::ostream& log) {
    c.validate();
    const RunPaths paths{run_dir};
    std::vector<Metrics> all;
    for (Method m : methods) {
        const auto rows = read_eval_csv(paths.eval_csv(m));
        std::vector<EvalRecord> recs;
        recs.reserve(rows.size());
        for (const auto& r : rows) recs.push_back(r.record);
        all.push_back(evaluate(recs, method_name(m)));
    }

    // Latency columns are filled from latency_summary.csv when bench-latency ran.
    std::vector<std::pair<std::string, std::string>> latency;  // method -> "median,p90"
    if (std::ifstream in(paths.latency_summary()); in) {
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            std::vector<std::string> f;
            std::size_t a = 0;
            for (std::size_t b; (b = line.find(',', a)) != std::string::npos; a = b + 1) f.push_back(line.substr(a, b - a));
            f.push_back(line.substr(a));
            if (f.size() >= 4) latency.emplace_back(f[0], f[2] + "," + f[3]);
        }
    }
    auto latency_of = [&](const std::string& method) -> std::string {
        for (const auto& [k, v] : latency)
            if (k == method) return v;
        return ",";
    };

    const double budget_ms = 1000.0 / (2.0 * c.radar.frame_rate_hz);
    auto out = open_report(paths.report());
    out << "method,median_pointwise_rmse_cm,p90_pointwise_rmse_cm,median_error_cm,p90_error_cm,n_events,"
           "n_unavailable,latency_median_ms,latency_p90_ms,latency_budget_ms,latency_reference_ms\n";
    for (const auto& m : all)
        out << m.method << ',' << format_number(m.median_pointwise_rmse_cm) << ','
            << format_number(m.p90_pointwise_rmse_cm) << ',' << format_number(m.median_error_cm) << ','
            << format_number(m.p90_error_cm) << ',' << m.n_events << ',' << m.n_unavailable << ','
            << latency_of(m.method) << ',' << format_number(budget_ms) << ',' << format_number(2.0) << '\n';

    double vmax = 0.0;
    for (const auto& m : all)
        for (const auto& [k, p] : m.rmse_map) vmax = std::max(vmax, p.rmse_cm);
    for (std::size_t i = 0; i < all.size(); ++i) {
        write_heatmap_csv(paths.rmse_csv(methods[i]), all[i]);
        write_heatmap_svg(paths.rmse_svg(methods[i]), all[i], vmax);
    }

    auto cdf = open_report(paths.error_cdf());
    cdf << "method,rank,error_cm,cdf\n";
    for (const auto& m : all) {
        auto e = m.errors_cm;
        std::sort(e.begin(), e.end());
        // Unavailable events count in the denominator so the curve tops out below 1.
        const double n = static_cast<double>(m.n_events);
        for (std::size_t k = 0; k < e.size(); ++k)
            cdf << m.method << ',' << k + 1 << ',' << format_number(e[k]) << ',' << format_number((k + 1) / n)
                << '\n';
    }

    log << "report:\n";
    log << "  method  median_rmse  p90_rmse  median_err  p90_err  (cm)\n";
    for (const auto& m : all)
        log << "  " << m.method << "     " << fixed(m.median_pointwise_rmse_cm, 3) << "        "
            << fixed(m.p90_pointwise_rmse_cm, 3) << "     " << fixed(m.median_error_cm, 3) << "       "
            << fixed(m.p90_error_cm, 3) << '\n';
    for (const auto& [k, v] : latency) {
        const double median = std::stod(v.substr(0, v.find(',')));
        log << "  latency " << k << ": median " << fixed(median, 3) << " ms (budget " << fixed(budget_ms, 2)
            << " ms, reference 2 ms)\n";
    }
}

}  // namespace mmtouch
