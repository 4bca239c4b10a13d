#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmtouch/common.hpp"

namespace mmtouch {

/// Nearest-rank percentile: the ceil(p * n)-th smallest value (1-based),
/// p in (0, 1]. Throws Error on empty input.
double percentile_nearest_rank(std::vector<double> values, double p);

struct GridKey {
    int row = 0;
    int col = 0;
    friend auto operator<=>(const GridKey&, const GridKey&) = default;
};

/// One evaluated touch. `estimate_cm` is empty when positioning was unavailable.
struct EvalRecord {
    int event_id = 0;
    int session_id = 0;
    GridKey grid;
    Vec2 gt_cm;
    std::optional<Vec2> estimate_cm;
};

struct PointwiseRmse {
    double rmse_cm = 0.0;
    int count = 0;
    Vec2 gt_cm;  // mean GT position of the grid point
};

struct Metrics {
    std::string method;
    std::vector<double> errors_cm;  // available events, input order
    std::size_t n_events = 0;
    std::size_t n_unavailable = 0;
    double median_error_cm = 0.0;
    double p90_error_cm = 0.0;
    std::map<GridKey, PointwiseRmse> rmse_map;
    double median_pointwise_rmse_cm = 0.0;
    double p90_pointwise_rmse_cm = 0.0;
};

/// Euclidean errors, their median / 90th percentile and the per-grid-point
/// RMSE map. Throws Error if no event has an estimate.
Metrics evaluate(std::span<const EvalRecord> records, const std::string& method);

}  // namespace mmtouch
