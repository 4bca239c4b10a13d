#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "mmtouch/csp.hpp"

using namespace mmtouch;
using Catch::Matchers::WithinAbs;
using Ranges = std::vector<std::optional<double>>;

namespace {

Ranges exact_ranges(Vec2 p, const SensorArray& s) {
    Ranges r;
    for (const auto& q : s.positions_cm) r.push_back(distance(p, q));
    return r;
}

// Minimum of the objective over a 0.01 cm grid spanning +-half_cm around c.
double grid_minimum(Vec2 c, const Ranges& r, const SensorArray& s, double half_cm) {
    double best = std::numeric_limits<double>::infinity();
    const int n = static_cast<int>(std::lround(half_cm / 0.01));
    for (int i = -n; i <= n; ++i)
        for (int k = -n; k <= n; ++k) best = std::min(best, nls_objective({c.x + 0.01 * i, c.y + 0.01 * k}, r, s));
    return best;
}

}  // namespace

TEST_CASE("consensus gate examples") {
    const std::vector<double> close{10.0, 10.2, 10.3};
    const auto v = consensus_range(close, 10.1, 0.5, 0.4);
    REQUIRE(v);
    CHECK_THAT(*v, WithinAbs(9.7, 1e-12));

    const std::vector<double> split{10.0, 10.2, 12.0};
    CHECK_FALSE(consensus_range(split, 10.1, 0.5, 0.0));

    const std::vector<double> equal{7.25, 7.25, 7.25};
    CHECK(*consensus_range(equal, 7.5, 0.0, 0.0) == 7.5);
}

TEST_CASE("consensus gate is permutation invariant and monotone in the tolerance") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(9.0, 11.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> r{u(rng), u(rng), u(rng)};
        const double tol = 0.1 * (trial % 20);
        const bool valid = consensus_range(r, 10.0, tol, 0.0).has_value();
        std::sort(r.begin(), r.end());
        do {
            CHECK(consensus_range(r, 10.0, tol, 0.0).has_value() == valid);
        } while (std::next_permutation(r.begin(), r.end()));
        if (valid)
            for (double bigger : {tol + 0.01, tol + 1.0}) CHECK(consensus_range(r, 10.0, bigger, 0.0).has_value());
    }
}

TEST_CASE("window average of valid entries") {
    const Ranges h{10.0, std::nullopt, 11.0, std::nullopt, 12.0};
    CHECK(*window_average_ranges(h) == 11.0);
    const Ranges none(5);
    CHECK_FALSE(window_average_ranges(none));
    const Ranges same(5, 9.5);
    CHECK(*window_average_ranges(same) == 9.5);
}

TEST_CASE("calibration is the mean range error") {
    SensorArray s;
    const Vec2 gt{10.0, -5.0};
    auto sample = [&](std::vector<double> err) {
        CalibrationSample c;
        c.gt_cm = gt;
        for (int i = 0; i < 4; ++i) c.ranges_cm.push_back(distance(gt, s[i]) + err[static_cast<std::size_t>(i)]);
        return c;
    };
    SECTION("constant error") {
        const std::vector<CalibrationSample> v{sample({0.7, 0.7, 0.7, 0.7})};
        for (double o : estimate_calibration(v, s).offsets_cm) CHECK_THAT(o, WithinAbs(0.7, 1e-12));
    }
    SECTION("two-point mean") {
        const std::vector<CalibrationSample> v{sample({0.5, 0.5, 0.5, 0.5}), sample({0.9, 0.9, 0.9, 0.9})};
        for (double o : estimate_calibration(v, s).offsets_cm) CHECK_THAT(o, WithinAbs(0.7, 1e-12));
    }
    SECTION("invalid entries are skipped") {
        auto a = sample({0.5, 0.5, 0.5, 0.5});
        auto b = sample({0.9, 2.0, 0.9, 0.9});
        b.ranges_cm[1].reset();
        const std::vector<CalibrationSample> v{a, b};
        CHECK_THAT(estimate_calibration(v, s)[1], WithinAbs(0.5, 1e-12));
    }
    SECTION("a sensor without any valid range fails") {
        auto a = sample({0.5, 0.5, 0.5, 0.5});
        a.ranges_cm[2].reset();
        const std::vector<CalibrationSample> v{a};
        CHECK_THROWS_AS(estimate_calibration(v, s), Error);
    }
}

TEST_CASE("calibration matches a brute-force mean and recovers a noisy bias") {
    SensorArray s;
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> ux(1.0, 35.3), uy(-18.8, -1.0);
    std::normal_distribution<double> noise(0.0, 0.2);
    std::vector<CalibrationSample> v;
    std::vector<double> brute(4, 0.0);
    for (int n = 0; n < 1000; ++n) {
        CalibrationSample c;
        c.gt_cm = {ux(rng), uy(rng)};
        for (int i = 0; i < 4; ++i) {
            const double e = 1.2 + noise(rng);
            c.ranges_cm.push_back(distance(c.gt_cm, s[i]) + e);
            brute[static_cast<std::size_t>(i)] += *c.ranges_cm.back() - distance(c.gt_cm, s[i]);
        }
        v.push_back(c);
    }
    const auto t = estimate_calibration(v, s);
    for (int i = 0; i < 4; ++i) {
        CHECK_THAT(t[i], WithinAbs(brute[static_cast<std::size_t>(i)] / 1000.0, 1e-12));
        CHECK_THAT(t[i], WithinAbs(1.2, 0.02));
    }
}

TEST_CASE("calibration table JSON") {
    CalibrationTable t{{0.8, -1.25, 0.0, 3.5}};
    CHECK(CalibrationTable::from_json(t.to_json()).offsets_cm == t.offsets_cm);
    CHECK(t.to_json().find("\"0\"") != std::string::npos);
    CHECK_THROWS_AS(CalibrationTable::from_json("[1, 2]"), FormatError);
    CHECK_THROWS_AS(CalibrationTable::from_json("{\"0\": 1, \"5\": 2}"), FormatError);
    CHECK_THROWS_AS(CalibrationTable::load("/nonexistent/calibration.json"), DependencyError);
}

TEST_CASE("NLS recovers the position from exact ranges") {
    SensorArray s;
    CspConfig cfg;
    const auto est = solve_nls(exact_ranges({17.0, -10.0}, s), s, cfg);
    REQUIRE(est);
    CHECK(distance(est->position_cm, {17.0, -10.0}) < 1e-6);
    CHECK(est->residual_cm2 < 1e-10);
    CHECK(est->n_sensors_used == 4);
}

TEST_CASE("NLS on random sensor layouts") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-30.0, 30.0);
    CspConfig cfg;
    for (int trial = 0; trial < 50; ++trial) {
        SensorArray s;
        for (auto& p : s.positions_cm) p = {u(rng), u(rng)};
        const Vec2 gt{u(rng) * 0.5, u(rng) * 0.5};
        const auto r = exact_ranges(gt, s);
        const auto est = solve_nls(r, s, cfg);
        REQUIRE(est);
        CHECK(distance(est->position_cm, gt) < 1e-6);

        // Translation equivariance.
        const Vec2 t{u(rng), u(rng)};
        SensorArray moved = s;
        for (auto& p : moved.positions_cm) p = p + t;
        const auto est2 = solve_nls(r, moved, cfg);
        REQUIRE(est2);
        CHECK(distance(est2->position_cm, est->position_cm + t) < 1e-6);
    }
}

TEST_CASE("NLS with biased ranges reaches the grid-search minimum") {
    SensorArray s;
    CspConfig cfg;
    const Vec2 gt{20.0, -8.0};
    Ranges r = exact_ranges(gt, s);
    for (auto& v : r) *v += 0.5;
    const auto est = solve_nls(r, s, cfg);
    REQUIRE(est);
    CHECK(distance(est->position_cm, gt) > 1e-3);
    CHECK(est->residual_cm2 <= grid_minimum(gt, r, s, 1.5) + 1e-4);
    CHECK_THAT(est->residual_cm2, WithinAbs(nls_objective(est->position_cm, r, s), 1e-12));
}

TEST_CASE("NLS never ends above its starting objective") {
    SensorArray s;
    CspConfig cfg;
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Ranges r = exact_ranges({5.0 + trial * 0.5, -3.0 - trial * 0.25}, s);
        for (auto& v : r) *v += n(rng);
        const auto est = solve_nls(r, s, cfg);
        REQUIRE(est);
        CHECK(est->residual_cm2 <= nls_objective(s.centroid(), r, s) + 1e-12);
    }
}

TEST_CASE("NLS availability and geometry checks") {
    SensorArray s;
    CspConfig cfg;
    Ranges r = exact_ranges({10.0, -10.0}, s);
    SECTION("two valid ranges are not enough") {
        r[0].reset();
        r[3].reset();
        CHECK_FALSE(solve_nls(r, s, cfg));
    }
    SECTION("three valid ranges suffice") {
        r[2].reset();
        const auto est = solve_nls(r, s, cfg);
        REQUIRE(est);
        CHECK(est->n_sensors_used == 3);
        CHECK(distance(est->position_cm, {10.0, -10.0}) < 1e-6);
    }
    SECTION("collinear sensors") {
        SensorArray line;
        line.positions_cm = {{0, 0}, {10, 0}, {20, 0}, {30, 0}};
        CHECK_THROWS_AS(solve_nls(exact_ranges({5.0, -5.0}, line), line, cfg), GeometryError);
    }
    SECTION("target on a sensor") {
        const auto est = solve_nls(exact_ranges(s[0], s), s, cfg);
        REQUIRE(est);
        CHECK(distance(est->position_cm, s[0]) < 1e-5);
    }
}

TEST_CASE("end-to-end CSP on a noise-free point target") {
    RadarConfig radar;
    DspConfig dsp;
    CspConfig cfg;
    SimulationConfig sim;
    sim.noise_std = 0.0;
    sim.target.n_arm = 0;
    sim.clutter.count = 0;
    GridSpec g;
    g.rows = 2;
    g.cols = 3;
    g.origin_cm = {6.0, 5.0};
    g.spacing_x_cm = 9.0;
    g.spacing_y_cm = 6.0;
    g.lead_in_frames = 60;
    const auto rec = run_session(g, sim, radar, 21);
    const auto zero = CalibrationTable::zeros(4);
    for (const auto& e : rec.events()) {
        const auto est = locate_event_csp(rec, e, zero, dsp, cfg);
        REQUIRE(est);
        const Vec2 gt = gt_to_radar_coords(e, sim.geometry);
        CHECK(distance(est->position_cm, gt) < radar.oversampled_bin_cm());
        CHECK(est->event_id == e.event_id);
    }
}

TEST_CASE("end-to-end CSP without any moving target is unavailable") {
    RadarConfig radar;
    SimulationConfig sim;
    sim.noise_std = 0.5;
    sim.target.finger_amplitude = 1e-9;
    sim.target.n_arm = 0;
    GridSpec g;
    g.rows = g.cols = 1;
    g.origin_cm = {10.0, 8.0};
    g.lead_in_frames = 60;
    const auto rec = run_session(g, sim, radar, 4);
    CHECK_FALSE(locate_event_csp(rec, rec.events()[0], CalibrationTable::zeros(4), DspConfig{}, CspConfig{}));
}
