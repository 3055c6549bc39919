#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "gazeassist/error.hpp"
#include "gazeassist/perception.hpp"
#include "gazeassist/world.hpp"

using namespace gaze;

namespace {

std::vector<std::int64_t> frame_clock(std::size_t n) {
    std::vector<std::int64_t> t;
    for (std::size_t i = 0; i < n; ++i) t.push_back(static_cast<std::int64_t>(i) * perception::kFramePeriodUs);
    return t;
}

FrameRecord frame(std::int64_t idx, std::vector<Detection> dets) {
    return FrameRecord{idx, idx * perception::kFramePeriodUs, std::nullopt, std::move(dets)};
}

}  // namespace

TEST_SUITE("perception") {
    TEST_CASE("mean of the samples inside one frame") {
        const std::vector<GazeSample> g{{0, 10, 10}, {8'000, 12, 10}, {16'000, 14, 10}, {24'000, 12, 14}};
        const auto out = perception::align_gaze_to_frames(g, frame_clock(1));
        REQUIRE(out[0]);
        CHECK(out[0]->point.x == doctest::Approx(12.0));
        CHECK(out[0]->point.y == doctest::Approx(11.0));
        CHECK_FALSE(out[0]->carried);
    }

    TEST_CASE("single sample per frame passes through") {
        const std::vector<GazeSample> g{{100, 3.5, 7.25}, {33'433, 400, 500}};
        const auto out = perception::align_gaze_to_frames(g, frame_clock(2));
        CHECK(out[0]->point.x == 3.5);
        CHECK(out[0]->point.y == 7.25);
        CHECK(out[1]->point.x == 400);
    }

    TEST_CASE("empty frames carry, leading empty frames are absent") {
        const std::vector<GazeSample> g{{40'000, 5, 5}};
        const auto out = perception::align_gaze_to_frames(g, frame_clock(4));
        CHECK_FALSE(out[0]);
        REQUIRE(out[1]);
        CHECK_FALSE(out[1]->carried);
        REQUIRE(out[2]);
        CHECK(out[2]->carried);
        CHECK(out[2]->point.x == 5);
        CHECK(out[3]->point.y == 5);
    }

    TEST_CASE("off-screen samples are excluded from the mean") {
        const std::vector<GazeSample> g{{0, 10, 10, true}, {8'000, 900, 900, false}};
        const auto out = perception::align_gaze_to_frames(g, frame_clock(1));
        CHECK(out[0]->point.x == 10);
    }

    TEST_CASE("unsorted input is a stream-order error") {
        const std::vector<GazeSample> g{{10, 1, 1}, {5, 1, 1}};
        CHECK_THROWS_AS(perception::align_gaze_to_frames(g, frame_clock(2)), StreamOrderError);
        const std::vector<std::int64_t> bad{0, 40'000, 30'000};
        CHECK_THROWS_AS(perception::align_gaze_to_frames({}, bad), StreamOrderError);
    }

    TEST_CASE("alignment matches a brute-force mean on random streams") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> pos(0.0, 1000.0);
        std::uniform_int_distribution<int> gap(1, 20'000);
        std::bernoulli_distribution off(0.1);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<GazeSample> g;
            std::int64_t t = gap(rng);
            for (int i = 0; i < 300; ++i) {
                g.push_back({t, pos(rng), pos(rng), !off(rng)});
                t += gap(rng);
            }
            const auto times = frame_clock(static_cast<std::size_t>(t / perception::kFramePeriodUs) + 2);
            const auto out = perception::align_gaze_to_frames(g, times);
            REQUIRE(out.size() == times.size());
            std::optional<Point> prev;
            for (std::size_t f = 0; f < times.size(); ++f) {
                const auto end = f + 1 < times.size() ? times[f + 1] : times[f] + perception::kFramePeriodUs;
                double sx = 0, sy = 0;
                int n = 0;
                for (const auto& s : g) {
                    if (s.on_screen && s.t_us >= times[f] && s.t_us < end) {
                        sx += s.gx;
                        sy += s.gy;
                        ++n;
                    }
                }
                if (n) prev = Point{sx / n, sy / n};
                REQUIRE(out[f].has_value() == prev.has_value());
                if (prev) {
                    CHECK(std::abs(out[f]->point.x - prev->x) < 1e-9);
                    CHECK(std::abs(out[f]->point.y - prev->y) < 1e-9);
                    CHECK(out[f]->carried == (n == 0));
                }
            }
        }
    }

    TEST_CASE("gaze reader flags out-of-image samples as off screen") {
        std::istringstream in(R"({"t_us":0,"gx":10,"gy":10,"on_screen":true}
{"t_us":8333,"gx":2000,"gy":10,"on_screen":true}
{"t_us":16666,"gx":5,"gy":5}
)");
        const auto g = perception::read_gaze_stream(in);
        REQUIRE(g.size() == 3);
        CHECK(g[0].on_screen);
        CHECK_FALSE(g[1].on_screen);
        CHECK(g[2].on_screen);
    }

    TEST_CASE("gaze reader rejects malformed and unsorted lines") {
        std::istringstream bad(R"({"t_us":0,"gx":10,"gy":10}
{"t_us":8333,"gx":
)");
        try {
            perception::read_gaze_stream(bad);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
        std::istringstream unsorted(R"({"t_us":10,"gx":1,"gy":1}
{"t_us":10,"gx":1,"gy":1}
)");
        CHECK_THROWS_AS(perception::read_gaze_stream(unsorted), StreamOrderError);
    }

    TEST_CASE("detection stream: three valid lines") {
        std::istringstream in(R"({"frame_idx":0,"t_us":0,"detections":[{"id":"a","label":"cup","box":[10,10,50,50]}]}
{"frame_idx":1,"t_us":33333,"detections":[]}
{"frame_idx":2,"t_us":66666,"detections":[{"id":"a","label":"cup","box":[11,10,51,50]},{"id":"b","label":"kettle","box":[100,100,200,220]}]}
)");
        const auto frames = perception::ingest_detection_stream(in);
        REQUIRE(frames.size() == 3);
        CHECK(frames[2].detections.size() == 2);
        CHECK(frames[2].detections[1].box == Box{100, 100, 200, 220});
    }

    TEST_CASE("detection stream: malformed line 2 names the line") {
        std::istringstream in(R"({"frame_idx":0,"t_us":0,"detections":[]}
{"frame_idx":1,"t_us":33333,"detections":[{"id":"a","label":"cup","box":[1,2,3]}]}
)");
        try {
            perception::ingest_detection_stream(in);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }

    TEST_CASE("detection stream: repeated frame_idx is rejected") {
        std::istringstream in(R"({"frame_idx":0,"t_us":0,"detections":[]}
{"frame_idx":0,"t_us":33333,"detections":[]}
)");
        CHECK_THROWS_AS(perception::ingest_detection_stream(in), StreamOrderError);
    }

    TEST_CASE("stream writers round-trip through the readers") {
        std::vector<GazeSample> g{{0, 1.5, 2.5, true}, {8333, 0, 0, false}};
        std::vector<FrameRecord> f{frame(0, {{"a", "cup", {1, 2, 30, 40}}}), frame(1, {})};
        std::stringstream gs, fs;
        perception::write_gaze_stream(gs, g);
        perception::write_frame_stream(fs, f);
        const auto g2 = perception::read_gaze_stream(gs);
        const auto f2 = perception::ingest_detection_stream(fs);
        REQUIRE(g2.size() == 2);
        CHECK(g2[0].gx == 1.5);
        CHECK_FALSE(g2[1].on_screen);
        REQUIRE(f2.size() == 2);
        CHECK(f2[0].detections[0].box == Box{1, 2, 30, 40});
    }

    TEST_CASE("mock detector passes ground truth through") {
        world::WorldState w;
        world::WorldObject cup;
        cup.label = "cup";
        cup.kind = world::ObjectKind::container;
        cup.box = Box{100, 100, 300, 200};
        w.objects["cup"] = cup;
        const auto d = perception::mock_detect(w, {});
        REQUIRE(d.size() == 1);
        CHECK(d[0].label == "cup");
        CHECK(d[0].box == Box{100, 100, 300, 200});

        CHECK(perception::mock_detect(world::WorldState{}, {}).empty());

        world::WorldObject bowl;
        bowl.label = "bowl";
        bowl.cell = {2, 2};
        w.objects["bowl"] = bowl;
        const auto two = perception::mock_detect(w, {});
        REQUIRE(two.size() == 2);
        CHECK(two[0].object_id != two[1].object_id);
        CHECK(perception::mock_detect(w, {})[1].box == two[1].box);
    }

    TEST_CASE("tracking by id") {
        std::vector<FrameRecord> frames;
        for (int i = 0; i < 10; ++i) frames.push_back(frame(i, {{"a", "cup", {10, 10, 50, 50}}}));
        const auto tracks = perception::track_objects(frames);
        REQUIRE(tracks.size() == 1);
        CHECK(tracks.at("a").boxes.size() == 10);
        CHECK(tracks.at("a").observed_frames() == 10);
    }

    TEST_CASE("short gaps hold the last box, long gaps stay empty") {
        std::vector<FrameRecord> frames;
        for (int i = 0; i < 12; ++i) {
            const bool gap = (i >= 2 && i < 5) || (i >= 6);
            frames.push_back(frame(i, gap ? std::vector<Detection>{}
                                          : std::vector<Detection>{{"a", "cup", {10, 10, 50, 50}}}));
        }
        const auto& t = perception::track_objects(frames).at("a");
        for (int i = 2; i < 5; ++i) {
            REQUIRE(t.boxes[i]);
            CHECK(*t.boxes[i] == Box{10, 10, 50, 50});
        }
        int held = 0;
        for (int i = 6; i < 12; ++i) held += t.boxes[i] ? 1 : 0;
        CHECK(held < 5);
        CHECK_FALSE(t.boxes[11]);
    }

    TEST_CASE("two labels give two tracks; anonymous detections match by IoU") {
        std::vector<FrameRecord> frames;
        for (int i = 0; i < 5; ++i) {
            const double dx = i * 2.0;
            frames.push_back(frame(i, {{"", "cup", {10 + dx, 10, 60 + dx, 60}}, {"", "kettle", {300, 300, 400, 420}}}));
        }
        const auto tracks = perception::track_objects(frames);
        REQUIRE(tracks.size() == 2);
        for (const auto& [id, t] : tracks) CHECK(t.observed_frames() == 5);
    }

    TEST_CASE("mock-detector tracking is lossless") {
        world::WorldState w;
        for (auto [label, r, c] : {std::tuple{"cup", 1, 1}, {"bowl", 2, 3}, {"kettle", 4, 0}}) {
            world::WorldObject o;
            o.label = label;
            o.cell = {r, c};
            w.objects[label] = o;
        }
        std::vector<FrameRecord> frames;
        for (int i = 0; i < 20; ++i) frames.push_back(frame(i, perception::mock_detect(w, {})));
        const auto tracks = perception::track_objects(frames);
        CHECK(tracks.size() == w.objects.size());
        for (const auto& [id, t] : tracks) {
            for (const auto& b : t.boxes) CHECK(*b == world::object_box(w.at(id), {}));
        }
    }

    TEST_CASE("stream statistics") {
        std::vector<GazeSample> g;
        for (int i = 0; i < 120; ++i) g.push_back({i * perception::kGazePeriodUs, 10, 10, i % 10 != 0});
        std::vector<FrameRecord> f;
        for (int i = 0; i < 30; ++i) f.push_back(frame(i, {{"a", "cup", {1, 1, 5, 5}}}));
        const auto s = perception::stream_stats(g, f);
        CHECK(s.gaze_samples == 120);
        CHECK(s.on_screen_samples == 108);
        CHECK(s.gaze_rate_hz == doctest::Approx(120.0).epsilon(0.01));
        CHECK(s.frame_rate_hz == doctest::Approx(30.0).epsilon(0.01));
        CHECK(s.tracks == 1);
    }
}
