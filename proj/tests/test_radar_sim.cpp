#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "mmtouch/geometry.hpp"
#include "mmtouch/sim.hpp"

using namespace mmtouch;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Magnitudes of the zero-padded DFT of one chirp, first half only.
std::vector<double> dft_magnitude(const IFFrame& f, int c, int j, int n_fft) {
    std::vector<double> out(static_cast<std::size_t>(n_fft / 2));
    for (int r = 0; r < n_fft / 2; ++r) {
        std::complex<double> acc = 0.0;
        for (int s = 0; s < f.n_samples; ++s)
            acc += f.at(s, c, j) * std::polar(1.0, -2.0 * kPi * r * s / n_fft);
        out[static_cast<std::size_t>(r)] = std::abs(acc);
    }
    return out;
}

int argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

Scene point_scene(std::vector<std::pair<Vec2, double>> points) {
    Scene s;
    for (auto [p, a] : points) s.scatterers.push_back({p, 0.0, a, ScattererKind::clutter});
    return s;
}

}  // namespace

TEST_CASE("range bin width of the default radar") {
    RadarConfig r;
    CHECK_THAT(r.range_bin_cm(), WithinRel(3.0754, 1e-4));
    CHECK_THAT(r.oversampled_bin_cm(), WithinRel(3.0754 / 8, 1e-4));
    CHECK(r.n_range_bins() == 256);
    CHECK(r.fft_size() == 512);
    CHECK_THAT(r.max_unambiguous_range_cm(), WithinRel(98.41, 1e-3));
}

TEST_CASE("single scatterer at 16 range bins peaks at oversampled bin 128") {
    RadarConfig radar;
    const Scene s = point_scene({{{16.0 * radar.range_bin_cm(), 0.0}, 1.0}});
    const IFFrame f = synthesize_if_frame(s, 0, 0, radar, 0.0);
    for (int j = 0; j < radar.n_rx; ++j)
        for (int c = 0; c < radar.n_chirps; ++c) CHECK(argmax(dft_magnitude(f, c, j, 512)) == 128);
}

TEST_CASE("two scatterers 4 cm apart give two local maxima near bins 26 and 36") {
    RadarConfig radar;
    const Scene s = point_scene({{{10.0, 0.0}, 1.0}, {{14.0, 0.0}, 1.0}});
    const auto mag = dft_magnitude(synthesize_if_frame(s, 0, 0, radar, 0.0), 0, 0, 512);
    std::vector<int> peaks;
    for (int r = 1; r + 1 < static_cast<int>(mag.size()); ++r)
        if (mag[r] > mag[r - 1] && mag[r] >= mag[r + 1] && mag[r] > 0.5 * mag[argmax(mag)]) peaks.push_back(r);
    REQUIRE(peaks.size() == 2);
    CHECK(std::abs(peaks[0] - 26) <= 1);
    CHECK(std::abs(peaks[1] - 36) <= 1);
}

TEST_CASE("empty scene without noise is an all-zero frame") {
    RadarConfig radar;
    const IFFrame f = synthesize_if_frame(Scene{}, 2, 7, radar, 0.0);
    CHECK(f.samples.size() == 64u * 8u * 3u);
    CHECK(std::all_of(f.samples.begin(), f.samples.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("IF synthesis is a superposition of scatterers") {
    RadarConfig radar;
    const Scene a = point_scene({{{12.3, -4.0}, 1.5}, {{30.0, -10.0}, 0.7}});
    const Scene b = point_scene({{{20.0, -15.0}, 2.0}});
    Scene ab = a;
    ab.scatterers.insert(ab.scatterers.end(), b.scatterers.begin(), b.scatterers.end());
    for (int i = 0; i < 4; ++i) {
        const auto fa = synthesize_if_frame(a, i, 3, radar, 0.0);
        const auto fb = synthesize_if_frame(b, i, 3, radar, 0.0);
        const auto fab = synthesize_if_frame(ab, i, 3, radar, 0.0);
        for (std::size_t k = 0; k < fab.samples.size(); ++k)
            CHECK_THAT(fab.samples[k], WithinAbs(fa.samples[k] + fb.samples[k], 1e-12 * 4.2));
    }
}

TEST_CASE("scaling amplitudes scales every IF sample") {
    RadarConfig radar;
    const double alpha = 2.5;
    Scene a = point_scene({{{12.3, -4.0}, 1.0}, {{30.0, -10.0}, 0.7}});
    Scene b = a;
    for (auto& s : b.scatterers) s.amplitude *= alpha;
    const auto fa = synthesize_if_frame(a, 1, 0, radar, 0.0);
    const auto fb = synthesize_if_frame(b, 1, 0, radar, 0.0);
    for (std::size_t k = 0; k < fa.samples.size(); ++k)
        CHECK_THAT(fb.samples[k], WithinAbs(alpha * fa.samples[k], 1e-12));
}

TEST_CASE("static scene repeats the same frame") {
    RadarConfig radar;
    const Scene s = point_scene({{{12.3, -4.0}, 1.0}, {{40.0, -30.0}, 3.0}});
    const auto f0 = synthesize_if_frame(s, 0, 0, radar, 0.0);
    for (int f : {1, 17, 500}) CHECK(synthesize_if_frame(s, 0, f, radar, 0.0).samples == f0.samples);
}

TEST_CASE("argmax bin tracks range to one oversampled bin") {
    RadarConfig radar;
    for (double r = 3.0; r < 60.0; r += 0.77) {
        const Scene s = point_scene({{{r, 0.0}, 1.0}});
        const int peak = argmax(dft_magnitude(synthesize_if_frame(s, 0, 0, radar, 0.0), 0, 0, 512));
        CHECK(std::abs(peak - std::lround(r / radar.oversampled_bin_cm())) <= 1);
    }
}

TEST_CASE("scatterer beyond the unambiguous range is rejected") {
    RadarConfig radar;
    const Scene s = point_scene({{{120.0, 0.0}, 1.0}});
    CHECK_THROWS_AS(synthesize_if_frame(s, 0, 0, radar, 0.0), RangeError);
}

TEST_CASE("noise is seeded per sensor and frame") {
    RadarConfig radar;
    const Scene s = point_scene({{{20.0, -5.0}, 1.0}});
    const auto a = synthesize_if_frame(s, 1, 4, radar, 0.3, 99);
    CHECK(synthesize_if_frame(s, 1, 4, radar, 0.3, 99).samples == a.samples);
    CHECK(synthesize_if_frame(s, 1, 5, radar, 0.3, 99).samples != a.samples);
    CHECK(synthesize_if_frame(s, 2, 4, radar, 0.3, 99).samples != a.samples);
    const auto clean = synthesize_if_frame(s, 1, 4, radar, 0.0);
    double sq = 0.0;
    for (std::size_t k = 0; k < a.samples.size(); ++k) sq += std::pow(a.samples[k] - clean.samples[k], 2);
    CHECK_THAT(std::sqrt(sq / a.samples.size()), WithinAbs(0.3, 0.03));
}

TEST_CASE("default target is one finger plus three arm scatterers") {
    const auto t = make_target_scatterers(TargetModel{});
    REQUIRE(t.size() == 4);
    CHECK(t[0].axial_offset_cm == 0.0);
    CHECK(t[0].amplitude == 1.0);
    for (int k = 1; k < 4; ++k) {
        CHECK(t[k].amplitude == 2.0);
        CHECK(t[k].kind == ScattererKind::target);
    }
    CHECK(t[1].axial_offset_cm == 1.0);
    CHECK(t[2].axial_offset_cm == 2.5);
    CHECK(t[3].axial_offset_cm == 4.0);
}

TEST_CASE("touch scene composition") {
    RadarConfig radar;
    DisplayGeometry g;
    SensorArray sensors;
    const Vec2 p = g.touch_to_radar({10.0, 5.0});

    SECTION("no clutter leaves only target scatterers") {
        ClutterModel none;
        none.count = 0;
        const Scene s = make_touch_scene(p, TargetModel{}, none, sensors, g, radar);
        CHECK(s.scatterers.size() == 4);
    }
    SECTION("zero arm offsets put every target scatterer on the touch point") {
        TargetModel t;
        t.arm_offset_min_cm = t.arm_offset_max_cm = 0.0;
        t.jitter_std_cm = 0.0;
        ClutterModel none;
        none.count = 0;
        const Scene s = make_touch_scene(p, t, none, sensors, g, radar, 1.0);
        for (const Vec2& q : s.scatterer_positions(1.0, radar)) CHECK(q == p);
    }
    SECTION("default clutter is static and outside the touch area") {
        const Scene s = make_touch_scene(p, TargetModel{}, ClutterModel{}, sensors, g, radar);
        REQUIRE(s.scatterers.size() == 8);
        const auto a = s.scatterer_positions(0.0, radar);
        const auto b = s.scatterer_positions(0.3, radar);
        for (std::size_t k = 4; k < 8; ++k) {
            CHECK(a[k] == b[k]);
            CHECK_FALSE(g.contains(a[k]));
        }
    }
    SECTION("touch outside the area is a geometry error") {
        CHECK_THROWS_AS(make_touch_scene({-5.0, 3.0}, TargetModel{}, ClutterModel{}, sensors, g, radar),
                        GeometryError);
    }
    SECTION("target dwells on the touch point") {
        TargetModel t;
        t.jitter_std_cm = 0.0;
        const Scene s = make_touch_scene(p, t, ClutterModel{}, sensors, g, radar, 2.0);
        CHECK(distance(s.target_pose(2.0).position_cm, p) < 1e-12);
        CHECK_THAT(distance(s.target_pose(-10.0).position_cm, p), WithinAbs(t.hover_cm, 1e-12));
    }
}

TEST_CASE("sessions on the base grid") {
    RadarConfig radar;
    SimulationConfig sim;

    SECTION("31 x 16 grid yields 496 touch events in raster order") {
        const auto rec = run_session(GridSpec{}, sim, radar, 5);
        REQUIRE(rec.events().size() == 496);
        CHECK(rec.events()[0].row == 0);
        CHECK(rec.events()[30].col == 30);
        CHECK(rec.events()[31].row == 1);
        CHECK(rec.n_frames() == 240 + 496 * 61 + 60);
        for (const auto& e : rec.events()) {
            CHECK(e.rel_x >= 0.0);
            CHECK(e.rel_x <= 1.0);
            CHECK(e.rel_y >= 0.0);
            CHECK(e.rel_y <= 1.0);
        }
    }
    SECTION("1 x 1 grid yields one event at the configured point") {
        GridSpec g;
        g.rows = g.cols = 1;
        g.origin_cm = {7.0, 4.0};
        const auto rec = run_session(g, sim, radar, 5);
        REQUIRE(rec.events().size() == 1);
        const auto& e = rec.events()[0];
        CHECK_THAT(e.rel_x * sim.geometry.length_cm, WithinAbs(7.0, 1e-12));
        CHECK_THAT(e.rel_y * sim.geometry.width_cm, WithinAbs(4.0, 1e-12));
    }
    SECTION("same seed gives bit-identical frames") {
        GridSpec g;
        g.rows = g.cols = 2;
        const auto a = run_session(g, sim, radar, 11);
        const auto b = run_session(g, sim, radar, 11);
        const auto c = run_session(g, sim, radar, 12);
        for (int f : {0, 100, 250, 300}) {
            CHECK(a.frame(2, f).samples == b.frame(2, f).samples);
            CHECK(a.frame(2, f).samples != c.frame(2, f).samples);
        }
    }
    SECTION("unsynchronized stream starts lie within one frame period") {
        const auto rec = run_session(GridSpec{2, 2}, sim, radar, 3);
        for (double s : rec.scene().stream_start_s) {
            CHECK(s >= 0.0);
            CHECK(s < radar.frame_period_s());
        }
    }
    SECTION("grid leaving the touch area is rejected") {
        GridSpec g;
        g.cols = 40;
        CHECK_THROWS_AS(run_session(g, sim, radar, 1), GeometryError);
    }
}
