#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "mmtouch/features.hpp"
#include "mmtouch/run_config.hpp"

using namespace mmtouch;
namespace fs = std::filesystem;
using Catch::Matchers::WithinAbs;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mmtouch_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

FeatureTensor random_feature(std::mt19937_64& rng, int frames, int bins, int sensors, int id) {
    std::normal_distribution<float> g;
    FeatureTensor t;
    t.n_frames = frames;
    t.n_bins = bins;
    t.n_sensors = sensors;
    t.values.resize(static_cast<std::size_t>(frames) * bins * sensors);
    for (auto& v : t.values) v = {g(rng), g(rng)};
    t.event.event_id = id;
    t.event.session_id = id / 10;
    t.event.row = id % 3;
    t.event.col = id % 7;
    t.event.rel_x = 0.01 * id;
    t.event.rel_y = 0.5;
    t.event.time_s = 1.5 * id;
    t.label_cm = {1.0 + id, -2.0 - id};
    return t;
}

ProcessedSession small_session(const GridSpec& g, std::uint64_t seed, int session_id, int keep_bins = 110) {
    RadarConfig radar;
    SimulationConfig sim;
    const auto rec = run_session(g, sim, radar, seed, session_id);
    return process_session(rec, DspConfig{}, CspConfig{}, keep_bins);
}

}  // namespace

TEST_CASE("ground truth to radar coordinates") {
    DisplayGeometry g;
    g.offset_y_cm = 1.5;
    auto at = [&](double x, double y) {
        TouchEvent e;
        e.rel_x = x;
        e.rel_y = y;
        return gt_to_radar_coords(e, g);
    };
    CHECK(at(0, 0) == Vec2{1.0, -1.5});
    CHECK_THAT(at(1, 1).x, WithinAbs(35.3, 1e-12));
    CHECK_THAT(at(1, 1).y, WithinAbs(-19.3, 1e-12));
    CHECK_THAT(at(0.5, 0.5).x, WithinAbs(18.15, 1e-12));
    CHECK_THAT(at(0.5, 0.5).y, WithinAbs(-10.4, 1e-12));
    CHECK_THROWS_AS(at(1.2, 0.5), RangeError);
    CHECK_THROWS_AS(at(0.5, -0.1), RangeError);
}

TEST_CASE("ground-truth transform is affine") {
    DisplayGeometry g;
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> u(0, 1024);
    for (int k = 0; k < 100; ++k) {
        TouchEvent a, b, m;
        // Dyadic coordinates keep the midpoint exact in binary.
        a.rel_x = u(rng) / 1024.0;
        a.rel_y = u(rng) / 1024.0;
        b.rel_x = u(rng) / 1024.0;
        b.rel_y = u(rng) / 1024.0;
        m.rel_x = 0.5 * (a.rel_x + b.rel_x);
        m.rel_y = 0.5 * (a.rel_y + b.rel_y);
        const Vec2 pa = gt_to_radar_coords(a, g), pb = gt_to_radar_coords(b, g), pm = gt_to_radar_coords(m, g);
        CHECK_THAT(pm.x, WithinAbs(0.5 * (pa.x + pb.x), 1e-12));
        CHECK_THAT(pm.y, WithinAbs(0.5 * (pa.y + pb.y), 1e-12));
    }
}

TEST_CASE("R_max from the display diagonal") {
    RadarConfig radar;
    DisplayGeometry g;
    CHECK(compute_r_max(g, radar) == 101);
    g.length_cm = g.width_cm = 0.0;
    CHECK(compute_r_max(g, radar) == 0);
}

TEST_CASE("feature tensor assembly") {
    GridSpec g;
    g.rows = 1;
    g.cols = 2;
    const ProcessedSession s = small_session(g, 3, 0);
    DisplayGeometry geom;

    SECTION("default shape is 61 x 110 x 4 with a label inside the touch area") {
        for (const auto& e : s.events) {
            const auto t = assemble_feature(s, e, 30, 110, geom);
            CHECK(t.n_frames == 61);
            CHECK(t.n_bins == 110);
            CHECK(t.n_sensors == 4);
            CHECK(t.values.size() == 61u * 110u * 4u);
            CHECK(geom.contains(t.label_cm));
            CHECK(t.label_cm == gt_to_radar_coords(e, geom));
        }
    }
    SECTION("half window 0 keeps the touch frame only") {
        const auto t = assemble_feature(s, s.events[0], 0, 110, geom);
        CHECK(t.n_frames == 1);
        for (int i = 0; i < 4; ++i) {
            const int f = s.frame_index_at(s.events[0].time_s, i);
            for (int r = 0; r < 110; ++r) CHECK(t.at(0, r, i) == s.profile(i, f)[r]);
        }
    }
    SECTION("window entries come from each sensor's own frame index") {
        const auto t = assemble_feature(s, s.events[1], 30, 110, geom);
        for (int i = 0; i < 4; ++i) {
            const int f = s.frame_index_at(s.events[1].time_s, i);
            CHECK(t.at(0, 7, i) == s.profile(i, f - 30)[7]);
            CHECK(t.at(60, 109, i) == s.profile(i, f + 30)[109]);
        }
    }
    SECTION("assembly is deterministic") {
        const ProcessedSession again = small_session(g, 3, 0);
        CHECK(assemble_feature(s, s.events[0], 30, 110, geom).values ==
              assemble_feature(again, again.events[0], 30, 110, geom).values);
    }
    SECTION("window leaving the recording is a range error") {
        CHECK_THROWS_AS(assemble_feature(s, s.events[0], 400, 110, geom), RangeError);
    }
    SECTION("all-zero session gives an all-zero tensor") {
        ProcessedSession z = s;
        std::fill(z.beamformed.begin(), z.beamformed.end(), cfloat{});
        const auto t = assemble_feature(z, z.events[0], 30, 110, geom);
        for (const auto& v : t.values) CHECK(v == cfloat{});
        CHECK(t.label_cm == gt_to_radar_coords(z.events[0], geom));
    }
}

TEST_CASE("split protocol counts") {
    auto events = [](int rows, int cols) {
        std::vector<TouchEvent> v;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) v.push_back({r * cols + c, 0, r, c, 0.0, 0.0, 0.0});
        return v;
    };
    const std::vector<std::vector<TouchEvent>> train(50, events(16, 31));
    const std::vector<std::vector<TouchEvent>> valtest(15, events(15, 30));
    const SplitCounts c = count_splits(train, valtest);
    CHECK(c.train == 24800);
    CHECK(c.val == 3600);
    CHECK(c.test == 3150);
}

TEST_CASE("build_dataset partitions by grid") {
    DisplayGeometry geom;
    std::mt19937_64 rng(2);
    auto session = [&](int id, int rows, int cols) {
        SessionFeatures s;
        s.session_id = id;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                auto t = random_feature(rng, 3, 5, 4, r * cols + c);
                t.event.row = r;
                t.event.col = c;
                t.event.session_id = id;
                s.features.push_back(t);
            }
        return s;
    };
    SECTION("one base-grid session of 2 x 2") {
        const auto d = build_dataset({session(0, 2, 2)}, {}, geom);
        CHECK(d.train.size() == 4);
        CHECK(d.val.size() == 0);
        CHECK(d.test.size() == 0);
    }
    SECTION("offset-grid rows alternate between val and test") {
        const auto d = build_dataset({session(0, 2, 2)}, {session(1, 5, 3), session(2, 5, 3)}, geom);
        CHECK(d.val.size() == 2 * 3 * 3);
        CHECK(d.test.size() == 2 * 2 * 3);
        std::set<int> val_rows, test_rows;
        for (const auto& t : d.val.items) val_rows.insert(t.event.row);
        for (const auto& t : d.test.items) test_rows.insert(t.event.row);
        CHECK(val_rows == std::set<int>{0, 2, 4});
        CHECK(test_rows == std::set<int>{1, 3});
    }
    SECTION("geometry and shape mismatches are rejected") {
        auto other = session(1, 1, 1);
        other.geometry.offset_x_cm = 2.0;
        CHECK_THROWS_AS(build_dataset({session(0, 1, 1)}, {other}, geom), ConfigError);
        auto odd = session(1, 1, 1);
        odd.features[0] = random_feature(rng, 4, 5, 4, 0);
        CHECK_THROWS_AS(build_dataset({session(0, 1, 1)}, {odd}, geom), ConfigError);
    }
}

TEST_CASE("base and offset grids never share a point") {
    SessionPlan plan;
    DisplayGeometry geom;
    std::set<std::pair<long, long>> base;
    auto key = [](Vec2 p) { return std::pair{std::lround(p.x * 1000), std::lround(p.y * 1000)}; };
    for (int r = 0; r < plan.train_grid.rows; ++r)
        for (int c = 0; c < plan.train_grid.cols; ++c) base.insert(key(plan.train_grid.point(r, c)));
    for (int r = 0; r < plan.valtest_grid.rows; ++r)
        for (int c = 0; c < plan.valtest_grid.cols; ++c) {
            const Vec2 p = plan.valtest_grid.point(r, c);
            CHECK(base.count(key(p)) == 0);
            CHECK(geom.contains(geom.touch_to_radar(p)));
        }
}

TEST_CASE("dataset container round trip") {
    const fs::path dir = temp_dir("container");
    std::mt19937_64 rng(4);
    Dataset d;
    d.split = Split::val;
    d.n_frames = 3;
    d.n_bins = 5;
    d.n_sensors = 4;
    d.metadata_json = R"({"r_max_formula": 101})";
    for (int i = 0; i < 7; ++i) d.items.push_back(random_feature(rng, 3, 5, 4, i));
    save_dataset(d, dir.string());

    const Dataset back = load_dataset(dir.string(), Split::val);
    REQUIRE(back.size() == 7);
    CHECK(back.n_frames == 3);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(back.items[i].values == d.items[i].values);
        CHECK(back.items[i].label_cm == d.items[i].label_cm);
        CHECK(back.items[i].event.event_id == d.items[i].event.event_id);
        CHECK(back.items[i].event.time_s == d.items[i].event.time_s);
    }
    CHECK(back.metadata_json.find("101") != std::string::npos);

    SECTION("empty dataset") {
        Dataset e;
        e.split = Split::test;
        e.n_frames = 61;
        e.n_bins = 110;
        e.n_sensors = 4;
        save_dataset(e, dir.string());
        CHECK(load_dataset(dir.string(), Split::test).size() == 0);
        CHECK(load_dataset(dir.string(), Split::val).size() == 7);
    }
    SECTION("missing split") {
        CHECK_THROWS_AS(load_dataset(dir.string(), Split::train), DependencyError);
        CHECK_THROWS_AS(load_dataset((dir / "nowhere").string(), Split::val), DependencyError);
    }
    SECTION("corrupted payload byte") {
        std::fstream f(dir / "val.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(100);
        char c = 0;
        f.read(&c, 1);
        f.seekp(100);
        c = static_cast<char>(c ^ 0x5a);
        f.write(&c, 1);
        f.close();
        CHECK_THROWS_AS(load_dataset(dir.string(), Split::val), FormatError);
    }
    SECTION("truncated blob") {
        fs::resize_file(dir / "val.bin", fs::file_size(dir / "val.bin") - 8);
        CHECK_THROWS_AS(load_dataset(dir.string(), Split::val), FormatError);
    }
    SECTION("streaming reader yields the same records") {
        DatasetReader r(dir.string(), Split::val);
        CHECK(r.size() == 7);
        FeatureTensor t;
        std::size_t n = 0;
        while (r.next(t)) CHECK(t.values == d.items[n++].values);
        CHECK(n == 7);
    }
}

TEST_CASE("manifest records little-endian complex64 sections") {
    const fs::path dir = temp_dir("manifest");
    Dataset d;
    d.split = Split::train;
    d.n_frames = 2;
    d.n_bins = 3;
    d.n_sensors = 4;
    std::mt19937_64 rng(5);
    d.items.push_back(random_feature(rng, 2, 3, 4, 1));
    save_dataset(d, dir.string());
    std::ifstream in(dir / "manifest.json");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("\"byte_order\": \"little\"") != std::string::npos);
    CHECK(text.find("\"complex64\"") != std::string::npos);
    CHECK(fs::file_size(dir / "train.bin") == 2 * 3 * 4 * 8 + 16 + 16 + 24);
}

TEST_CASE("event ranges average the last frames of each sensor") {
    GridSpec g;
    g.rows = g.cols = 1;
    const ProcessedSession s = small_session(g, 8, 0, 256);
    const auto& e = s.events[0];
    const auto r = event_ranges(s, e, 5);
    REQUIRE(r.size() == 4);
    for (int i = 0; i < 4; ++i) {
        const int f = s.frame_index_at(e.time_s, i);
        std::vector<std::optional<double>> h;
        for (int m = 0; m < 5; ++m) h.push_back(s.raw_range(i, f - m));
        CHECK(r[static_cast<std::size_t>(i)] == window_average_ranges(h));
        REQUIRE(r[static_cast<std::size_t>(i)]);
        const Vec2 gt = gt_to_radar_coords(e, DisplayGeometry{});
        CHECK(std::abs(*r[static_cast<std::size_t>(i)] - distance(gt, SensorArray{}[i])) < 3.0);
    }
}

TEST_CASE("default noise gives a per-frame single-target range spread near 0.2 cm") {
    RunConfig c;
    c.sim.target.n_arm = 0;
    c.sim.clutter.count = 0;
    GridSpec g;
    g.rows = 3;
    g.cols = 4;
    g.spacing_x_cm = 8.0;
    g.spacing_y_cm = 5.0;
    g.origin_cm = {4.0, 3.0};
    const auto rec = run_session(g, c.sim, c.radar, 7);
    const auto s = process_session(rec, c.dsp, c.csp, c.features.r_max);
    double sq = 0.0;
    long n = 0;
    for (const auto& e : s.events)
        for (int i = 0; i < s.n_sensors; ++i) {
            const int f0 = s.frame_index_at(e.time_s, i);
            std::vector<double> v;
            for (int f = f0 - 10; f <= f0 + 10; ++f)
                if (const auto r = s.raw_range(i, f)) v.push_back(*r);
            double mean = 0.0;
            for (double x : v) mean += x / static_cast<double>(v.size());
            for (double x : v) {
                sq += (x - mean) * (x - mean);
                ++n;
            }
        }
    const double sigma = std::sqrt(sq / static_cast<double>(n));
    CHECK(sigma > 0.18);
    CHECK(sigma < 0.22);
}
