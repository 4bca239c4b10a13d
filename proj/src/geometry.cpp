#include "mmtouch/geometry.hpp"

#include <cmath>
#include <string>

namespace mmtouch {

void DisplayGeometry::validate() const {
    if (!(length_cm >= 0.0) || !(width_cm >= 0.0))
        throw ConfigError("geometry: touch-area dimensions must be non-negative");
    if (!(grid_dx_cm > 0.0) || !(grid_dy_cm > 0.0))
        throw ConfigError("geometry: grid spacing must be positive");
}

Vec2 DisplayGeometry::touch_to_radar(Vec2 touch_cm) const {
    return {touch_cm.x + offset_x_cm, -touch_cm.y - offset_y_cm};
}

bool DisplayGeometry::contains(Vec2 p, double tol_cm) const {
    return p.x >= offset_x_cm - tol_cm && p.x <= offset_x_cm + length_cm + tol_cm &&
           p.y <= -offset_y_cm + tol_cm && p.y >= -offset_y_cm - width_cm - tol_cm;
}

Vec2 DisplayGeometry::center() const {
    return {offset_x_cm + 0.5 * length_cm, -offset_y_cm - 0.5 * width_cm};
}

void SensorArray::validate() const {
    if (positions_cm.empty()) throw GeometryError("sensor array is empty");
    for (std::size_t i = 0; i < positions_cm.size(); ++i)
        for (std::size_t k = i + 1; k < positions_cm.size(); ++k)
            if (distance(positions_cm[i], positions_cm[k]) < 1e-9)
                throw GeometryError("sensors " + std::to_string(i) + " and " + std::to_string(k) +
                                    " coincide");
}

Vec2 SensorArray::centroid() const {
    Vec2 c;
    for (const auto& p : positions_cm) c = c + p;
    return (1.0 / static_cast<double>(positions_cm.size())) * c;
}

Vec2 gt_to_radar_coords(const TouchEvent& event, const DisplayGeometry& geom) {
    if (!(event.rel_x >= 0.0 && event.rel_x <= 1.0 && event.rel_y >= 0.0 && event.rel_y <= 1.0))
        throw RangeError("relative touch coordinates must lie in [0, 1]");
    return {event.rel_x * geom.length_cm + geom.offset_x_cm,
            -event.rel_y * geom.width_cm - geom.offset_y_cm};
}

int compute_r_max(const DisplayGeometry& geom, const RadarConfig& radar) {
    const double diag = std::hypot(geom.length_cm, geom.width_cm);
    return static_cast<int>(std::ceil(radar.oversampling * diag / radar.range_bin_cm()));
}

}  // namespace mmtouch
