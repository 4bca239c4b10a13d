#pragma once

#include <vector>

#include "mmtouch/common.hpp"
#include "mmtouch/radar_config.hpp"

namespace mmtouch {

/// Touch area placement relative to radar 0. The touch area spans
/// [d_x0, d_x0 + d_l] x [-d_y0 - d_w, -d_y0] in radar coordinates.
struct DisplayGeometry {
    double length_cm = 34.3;  // d_l
    double width_cm = 17.8;   // d_w
    double offset_x_cm = 1.0;  // d_x0
    double offset_y_cm = 1.0;  // d_y0
    double grid_dx_cm = 1.0;
    double grid_dy_cm = 1.0;

    void validate() const;

    /// Radar-coordinate point of a touch-screen coordinate (cm from the
    /// touch-area corner, y growing away from radar 0).
    Vec2 touch_to_radar(Vec2 touch_cm) const;
    bool contains(Vec2 radar_cm, double tol_cm = 1e-9) const;
    Vec2 center() const;

    friend bool operator==(const DisplayGeometry&, const DisplayGeometry&) = default;
};

struct SensorArray {
    std::vector<Vec2> positions_cm{{0.0, 0.0}, {35.8, 0.9}, {36.4, -19.8}, {0.6, -20.2}};

    int size() const { return static_cast<int>(positions_cm.size()); }
    const Vec2& operator[](int i) const { return positions_cm[static_cast<std::size_t>(i)]; }

    /// Throws GeometryError on coincident sensors.
    void validate() const;
    Vec2 centroid() const;
};

/// Ground-truth record of one touch as reported by the touchscreen.
struct TouchEvent {
    int event_id = 0;
    int session_id = 0;
    int row = 0;
    int col = 0;
    double rel_x = 0.0;  // p_t,x in [0, 1]
    double rel_y = 0.0;  // p_t,y in [0, 1]
    double time_s = 0.0;  // t_GT on the touchscreen clock
};

/// Relative touch coordinates to radar coordinates:
/// (p_x * d_l + d_x0, -p_y * d_w - d_y0). Throws RangeError outside [0, 1]^2.
Vec2 gt_to_radar_coords(const TouchEvent& event, const DisplayGeometry& geom);

/// ceil(N_os * sqrt(d_l^2 + d_w^2) / dr): largest oversampled bin a touch can occupy.
int compute_r_max(const DisplayGeometry& geom, const RadarConfig& radar);

}  // namespace mmtouch
