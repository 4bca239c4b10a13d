#include "mmtouch/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace mmtouch {

double percentile_nearest_rank(std::vector<double> values, double p) {
    if (values.empty()) throw Error("percentile of an empty sample");
    if (!(p > 0.0 && p <= 1.0)) throw ConfigError("percentile must lie in (0, 1]");
    std::sort(values.begin(), values.end());
    // Tolerate p * n landing a hair above an integer through rounding.
    const double rank = std::ceil(p * static_cast<double>(values.size()) - 1e-9);
    const auto k = static_cast<std::size_t>(std::max(1.0, rank));
    return values[std::min(k, values.size()) - 1];
}

Metrics evaluate(std::span<const EvalRecord> records, const std::string& method) {
    if (records.empty()) throw Error("evaluate: no events");
    Metrics m;
    m.method = method;
    m.n_events = records.size();
    struct Acc {
        double sq = 0.0;
        int n = 0;
        Vec2 gt;
    };
    std::map<GridKey, Acc> acc;
    for (const auto& r : records) {
        if (!r.estimate_cm) {
            ++m.n_unavailable;
            continue;
        }
        const double e = distance(*r.estimate_cm, r.gt_cm);
        m.errors_cm.push_back(e);
        Acc& a = acc[r.grid];
        a.sq += e * e;
        a.gt = a.gt + r.gt_cm;
        ++a.n;
    }
    if (m.errors_cm.empty()) throw Error("evaluate: every event is unavailable");
    m.median_error_cm = percentile_nearest_rank(m.errors_cm, 0.5);
    m.p90_error_cm = percentile_nearest_rank(m.errors_cm, 0.9);
    std::vector<double> rmse;
    for (const auto& [key, a] : acc) {
        PointwiseRmse p;
        p.count = a.n;
        p.rmse_cm = std::sqrt(a.sq / a.n);
        p.gt_cm = (1.0 / a.n) * a.gt;
        m.rmse_map[key] = p;
        rmse.push_back(p.rmse_cm);
    }
    m.median_pointwise_rmse_cm = percentile_nearest_rank(rmse, 0.5);
    m.p90_pointwise_rmse_cm = percentile_nearest_rank(rmse, 0.9);
    return m;
}

}  // namespace mmtouch
