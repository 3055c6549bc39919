#include <doctest.h>

#include <cmath>
#include <random>

#include "gazeassist/error.hpp"
#include "gazeassist/features.hpp"

using namespace gaze;
using features::FeatureConfig;

namespace {

// Distance from the center to the (x_max, y_max) corner over the distance from
// the center to the gaze point, computed from raw coordinates.
double oracle_ratio(double x0, double y0, double x1, double y1, double gx, double gy) {
    const double cx = x0 + (x1 - x0) * 0.5;
    const double cy = y0 + (y1 - y0) * 0.5;
    const double d1 = std::sqrt((x1 - cx) * (x1 - cx) + (y1 - cy) * (y1 - cy));
    const double d2 = std::sqrt((gx - cx) * (gx - cx) + (gy - cy) * (gy - cy));
    const double r = d1 / (d2 > 1e-6 ? d2 : 1e-6);
    return r > 10.0 ? 10.0 : r;
}

perception::ObjectTrack constant_track(std::size_t n, Box b) {
    perception::ObjectTrack t;
    t.object_id = "cup";
    t.label = "cup";
    t.boxes.assign(n, b);
    return t;
}

std::vector<std::optional<AlignedGaze>> constant_gaze(std::size_t n, Point p) {
    return std::vector<std::optional<AlignedGaze>>(n, AlignedGaze{p, false});
}

}  // namespace

TEST_SUITE("features") {
    TEST_CASE("half diagonal") {
        CHECK(features::half_diagonal({100, 100, 300, 200}) == doctest::Approx(111.8034).epsilon(1e-6));
        CHECK(features::half_diagonal({0, 0, 10, 10}) == doctest::Approx(7.0711).epsilon(1e-5));
        CHECK(features::half_diagonal({0, 0, 2, 2}) == doctest::Approx(1.41421).epsilon(1e-5));
    }

    TEST_CASE("gaze ratio examples") {
        CHECK(features::gaze_ratio({100, 100, 300, 200}, {260, 230}) == doctest::Approx(1.11803).epsilon(1e-5));
        CHECK(features::gaze_ratio({100, 100, 300, 200}, {200, 150}) == 10.0);
        CHECK(features::gaze_ratio({0, 0, 10, 10}, {1005, 5}) == doctest::Approx(0.0070711).epsilon(1e-4));
    }

    TEST_CASE("gaze ratio matches the geometric oracle on random pairs") {
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> u(0.0, 1000.0);
        std::uniform_real_distribution<double> size(1.0, 400.0);
        for (int i = 0; i < 1000; ++i) {
            const double x0 = u(rng), y0 = u(rng);
            const Box b{x0, y0, x0 + size(rng), y0 + size(rng)};
            const Point g{u(rng), u(rng)};
            CHECK(std::abs(features::gaze_ratio(b, g) - oracle_ratio(b.x_min, b.y_min, b.x_max, b.y_max, g.x, g.y)) <
                  1e-9);
        }
    }

    TEST_CASE("translation and scale invariance") {
        std::mt19937_64 rng(12);
        std::uniform_real_distribution<double> u(0.0, 1000.0);
        std::uniform_real_distribution<double> size(5.0, 300.0);
        std::uniform_real_distribution<double> shift(-500.0, 500.0);
        std::uniform_real_distribution<double> scale(0.1, 10.0);
        for (int i = 0; i < 1000; ++i) {
            const double x0 = u(rng), y0 = u(rng);
            const Box b{x0, y0, x0 + size(rng), y0 + size(rng)};
            const Point g{u(rng), u(rng)};
            const double r = features::gaze_ratio(b, g);

            const double dx = shift(rng), dy = shift(rng);
            CHECK(std::abs(features::gaze_ratio({b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy},
                                                {g.x + dx, g.y + dy}) -
                           r) < 1e-9);

            if (r >= 10.0) continue;  // clamped cases are excluded from scale invariance
            const double s = scale(rng);
            const Point c = b.center();
            auto sc = [&](double v, double cv) { return cv + s * (v - cv); };
            const Box bs{sc(b.x_min, c.x), sc(b.y_min, c.y), sc(b.x_max, c.x), sc(b.y_max, c.y)};
            CHECK(std::abs(features::gaze_ratio(bs, {sc(g.x, c.x), sc(g.y, c.y)}) - r) < 1e-9);
        }
    }

    TEST_CASE("ratio decreases radially away from the center") {
        const Box b{100, 100, 300, 200};
        double prev = features::gaze_ratio(b, {200.0 + 1e-3, 150.0});
        for (double d = 1.0; d < 800.0; d += 7.3) {
            const double r = features::gaze_ratio(b, {200.0 + d * 0.6, 150.0 + d * 0.8});
            CHECK(r <= prev);
            if (prev < 10.0) CHECK(r < prev);
            prev = r;
        }
    }

    TEST_CASE("feature frames normalize gaze by default") {
        FeatureConfig cfg;
        const auto f = features::feature_frame({0, 0, 10, 10}, {544, 540}, cfg);
        CHECK(f.gx == doctest::Approx(0.5));
        CHECK(f.gy == doctest::Approx(0.5));
        cfg.normalize_gaze = false;
        const auto raw = features::feature_frame({0, 0, 10, 10}, {544, 540}, cfg);
        CHECK(raw.gx == 544);
        CHECK(raw.gy == 540);
    }

    TEST_CASE("window counts") {
        CHECK(features::window_starts(100, 30, 10) == std::vector<std::size_t>{0, 10, 20, 30, 40, 50, 60, 70});
        CHECK(features::window_starts(30, 30, 10).size() == 1);
        CHECK(features::window_starts(29, 30, 10).empty());
    }

    TEST_CASE("window starts agree with brute-force slicing") {
        std::mt19937_64 rng(5);
        std::uniform_int_distribution<int> T(0, 300), sw(1, 60), stride(1, 25);
        for (int i = 0; i < 200; ++i) {
            const int t = T(rng), w = sw(rng), s = stride(rng);
            std::vector<std::size_t> expect;
            for (int start = 0; start + w <= t; ++start) {
                if (start % s == 0) expect.push_back(static_cast<std::size_t>(start));
            }
            CHECK(features::window_starts(static_cast<std::size_t>(t), w, s) == expect);
        }
    }

    TEST_CASE("window labels use the majority rule") {
        std::vector<std::optional<bool>> m(30, false);
        CHECK(features::label_window(m) == 0);
        for (int i = 0; i < 15; ++i) m[i] = true;
        CHECK(features::label_window(m) == 1);
        m[14] = false;
        CHECK(features::label_window(m) == 0);
        for (int i = 0; i < 20; ++i) m[i] = true;
        CHECK(features::label_window(m) == 1);
        m[3] = std::nullopt;
        CHECK_THROWS_AS(features::label_window(m), DataError);
    }

    TEST_CASE("cut windows: shape, labels and absent gaze") {
        FeatureConfig cfg;
        const Box b{100, 100, 300, 200};
        const auto track = constant_track(100, b);
        auto gaze = constant_gaze(100, {260, 230});
        std::vector<std::optional<bool>> marks(100, false);
        for (int i = 0; i < 40; ++i) marks[i] = true;

        auto ws = features::cut_windows(track, gaze, cfg, marks);
        REQUIRE(ws.size() == 8);
        CHECK(ws[0].values.size() == 30 * 3);
        CHECK(ws[0].row(0)[2] == doctest::Approx(1.11803).epsilon(1e-5));
        CHECK(*ws[0].label == 1);
        CHECK(*ws[1].label == 1);  // frames 10..39: all marked
        CHECK(*ws[2].label == 1);  // 20 of 30
        CHECK(*ws[3].label == 0);  // 10 of 30

        gaze[45] = std::nullopt;
        ws = features::cut_windows(track, gaze, cfg);
        for (const auto& w : ws) {
            CHECK_FALSE(w.label);
            CHECK((w.start_frame + 30 <= 45 || w.start_frame > 45));
        }
        CHECK(ws.size() == 5);  // starts 20, 30, 40 contain frame 45

        marks.pop_back();
        CHECK_THROWS_AS(features::cut_windows(track, gaze, cfg, marks), DataError);
    }

    TEST_CASE("batches keep the row-major layout") {
        FeatureConfig cfg;
        cfg.sw = 4;
        cfg.stride = 4;
        const auto track = constant_track(8, {0, 0, 100, 100});
        const auto ws = features::cut_windows(track, constant_gaze(8, {50, 60}), cfg);
        const auto batch = features::make_batch(ws, false);
        CHECK(batch.bs == 2);
        CHECK(batch.sw == 4);
        CHECK(batch.at(1, 3, 2) == ws[1].row(3)[2]);
        CHECK(batch.labels.empty());
        CHECK_THROWS(features::make_batch(ws, true));
    }

    TEST_CASE("config validation") {
        FeatureConfig cfg;
        cfg.sw = 0;
        CHECK_THROWS_AS(cfg.validate(), ConfigError);
    }
}
