#include <doctest.h>

#include <cmath>
#include <set>

#include "gazeassist/error.hpp"
#include "gazeassist/eval.hpp"
#include "gazeassist/synthetic.hpp"
#include "helpers.hpp"

using namespace gaze;

namespace {

synth::SyntheticProfile small_profile() {
    synth::SyntheticProfile p;
    p.n_subjects = 2;
    p.repetitions = 5;
    p.seed = 42;
    return p;
}

// Constant box, gaze inside for the frames listed in `in`, far away otherwise,
// absent where `blink` is set.
struct BaselineFixture {
    perception::ObjectTrack track;
    std::vector<std::optional<AlignedGaze>> gaze;

    explicit BaselineFixture(std::size_t n) {
        track.object_id = track.label = "cup";
        track.boxes.assign(n, Box{100, 100, 200, 200});
        gaze.assign(n, AlignedGaze{{800, 800}, false});
    }
    void inside(std::size_t a, std::size_t b) {
        for (auto i = a; i < b; ++i) gaze[i] = AlignedGaze{{150, 150}, false};
    }
    int predict(std::size_t start = 0, int sw = 30) const {
        const std::vector<std::size_t> starts{start};
        return eval::fixation_baseline(track, gaze, starts, sw).at(0);
    }
};

}  // namespace

TEST_SUITE("synthetic") {
    TEST_CASE("generation is deterministic for a seed") {
        const auto a = synth::generate_dataset(small_profile());
        const auto b = synth::generate_dataset(small_profile());
        REQUIRE(a.trials.size() == b.trials.size());
        CHECK(a.trials.size() == 2 * 5 * 2);
        for (std::size_t i = 0; i < a.trials.size(); ++i) {
            CHECK(a.trials[i].trial_id == b.trials[i].trial_id);
            REQUIRE(a.trials[i].gaze.size() == b.trials[i].gaze.size());
            for (std::size_t k = 0; k < a.trials[i].gaze.size(); ++k) {
                CHECK(a.trials[i].gaze[k].gx == b.trials[i].gaze[k].gx);
            }
        }
        auto other = small_profile();
        other.seed = 43;
        CHECK(synth::generate_dataset(other).trials[0].gaze[5].gx != a.trials[0].gaze[5].gx);
    }

    TEST_CASE("marked frames sit near their target; unconscious trials carry no marks") {
        const auto d = synth::generate_dataset(small_profile());
        const SceneGeometry g;
        for (const auto& t : d.trials) {
            if (!t.intent) {
                for (const auto& m : t.marks) CHECK_FALSE(m);
                continue;
            }
            std::vector<std::int64_t> times;
            for (const auto& f : t.frames) times.push_back(f.t_us);
            const auto aligned = perception::align_gaze_to_frames(t.gaze, times);
            int marked = 0;
            for (std::size_t i = 0; i < t.marks.size(); ++i) {
                if (!t.marks[i] || !aligned[i] || aligned[i]->carried) continue;
                ++marked;
                const auto box = world::object_box(t.world.at(*t.marks[i]), g);
                const Point c = box.center();
                // Averaged samples of a fixation: well within 3 sigma of the center.
                CHECK(std::hypot(aligned[i]->point.x - c.x, aligned[i]->point.y - c.y) < 3.0 * t.sigma_px);
            }
            CHECK(marked > 0);
        }
    }

    TEST_CASE("dataset files round trip") {
        testutil::TempDir dir;
        const auto d = synth::generate_dataset(small_profile());
        synth::write_dataset(d, dir.path);
        const auto back = synth::load_dataset(dir.path);
        REQUIRE(back.trials.size() == d.trials.size());
        const auto a = eval::prepare_trials(d);
        const auto b = eval::prepare_trials(back);
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].key.trial == b[i].key.trial);
            REQUIRE(a[i].windows.size() == b[i].windows.size());
            for (std::size_t k = 0; k < a[i].windows.size(); ++k) {
                CHECK(a[i].windows[k].label == b[i].windows[k].label);
                for (std::size_t v = 0; v < a[i].windows[k].values.size(); ++v) {
                    CHECK(std::abs(a[i].windows[k].values[v] - b[i].windows[k].values[v]) < 1e-6);
                }
            }
        }
    }

    TEST_CASE("separable fixture") {
        const auto ws = synth::separable_windows(40, 30, 1);
        int pos = 0;
        for (const auto& w : ws) {
            pos += *w.label;
            CHECK(w.values.size() == 90);
        }
        CHECK(pos > 0);
        CHECK(pos < 40);
    }
}

TEST_SUITE("eval") {
    TEST_CASE("accuracy") {
        const std::vector<int> p{1, 0, 1, 1}, l{1, 1, 1, 0};
        CHECK(eval::accuracy(p, l) == 0.5);
        CHECK_THROWS_AS(eval::accuracy(std::vector<int>{}, std::vector<int>{}), DataError);
        CHECK_THROWS_AS(eval::accuracy(p, std::vector<int>{1}), DataError);
    }

    TEST_CASE("baseline dwell rule") {
        CHECK(eval::BaselineConfig{}.min_run_frames() == 15);

        BaselineFixture fix(30);
        fix.inside(5, 23);  // 600 ms
        CHECK(fix.predict() == 1);

        BaselineFixture split(30);
        split.inside(2, 14);  // 400 ms
        split.gaze[14] = std::nullopt;
        split.gaze[15] = std::nullopt;
        split.inside(16, 28);  // 400 ms
        CHECK(split.predict() == 0);

        BaselineFixture never(30);
        CHECK(never.predict() == 0);

        BaselineFixture margin(30);
        for (auto& g : margin.gaze) g = AlignedGaze{{215, 150}, false};
        CHECK(margin.predict() == 1);
        for (auto& g : margin.gaze) g = AlignedGaze{{225, 150}, false};
        CHECK(margin.predict() == 0);

        BaselineFixture carried(30);
        for (auto& g : carried.gaze) g = AlignedGaze{{150, 150}, true};
        CHECK(carried.predict() == 0);
    }

    TEST_CASE("five-fold holds out one repetition per fold") {
        std::vector<eval::TrialKey> keys;
        for (int s = 0; s < 3; ++s) {
            for (int r = 0; r < 5; ++r) {
                for (int k = 0; k < 2; ++k) {
                    keys.push_back({"s" + std::to_string(s), "t" + std::to_string(s) + std::to_string(r) + std::to_string(k), r});
                }
            }
        }
        const auto splits = eval::five_fold_by_trial(keys);
        REQUIRE(splits.size() == 5);
        for (std::size_t f = 0; f < 5; ++f) {
            CHECK(splits[f].test.size() == 6);
            for (auto i : splits[f].test) CHECK(keys[i].repetition == static_cast<int>(f));
            for (auto i : splits[f].train) CHECK(keys[i].repetition != static_cast<int>(f));
        }
        CHECK_NOTHROW(eval::check_partition(splits, keys.size()));

        auto broken = splits;
        broken[0].train.push_back(broken[0].test.front());
        CHECK_THROWS_AS(eval::check_partition(broken, keys.size()), DataError);

        const std::vector<eval::TrialKey> four(keys.begin(), keys.begin() + 8);
        CHECK_THROWS_AS(eval::five_fold_by_trial(four), DataError);

        const auto lo = eval::loso(keys);
        REQUIRE(lo.size() == 3);
        for (const auto& s : lo) {
            std::set<std::string> test_subj;
            for (auto i : s.test) test_subj.insert(keys[i].subject);
            CHECK(test_subj.size() == 1);
            for (auto i : s.train) CHECK(test_subj.count(keys[i].subject) == 0);
        }
        CHECK_NOTHROW(eval::check_partition(lo, keys.size()));
        const std::vector<eval::TrialKey> one(keys.begin(), keys.begin() + 10);
        CHECK_THROWS_AS(eval::loso(one), DataError);
    }

    TEST_CASE("leakage check") {
        const auto prepared = eval::prepare_trials(synth::generate_dataset(small_profile()));
        const auto keys = eval::keys_of(prepared);
        const auto splits = eval::five_fold_by_trial(keys);
        for (const auto& s : splits) CHECK_NOTHROW(eval::check_no_leakage(s, prepared, false));
        auto leaky = splits[0];
        leaky.train.push_back(leaky.test.front());
        CHECK_THROWS_AS(eval::check_no_leakage(leaky, prepared, false), DataError);
        for (const auto& p : prepared) CHECK(p.windows.size() == p.baseline.size());
    }

    TEST_CASE("cross-validation report") {
        const auto prepared = eval::prepare_trials(synth::generate_dataset(small_profile()));
        eval::EvalConfig cfg;
        cfg.train.epochs = 1;
        CHECK_THROWS_AS(eval::cross_validate(prepared, "kfold", cfg), ConfigError);
        const auto r = eval::cross_validate(prepared, "loso", cfg);
        REQUIRE(r.folds.size() == 2);
        for (const auto& f : r.folds) {
            CHECK(f.test_windows > 0);
            CHECK((f.network_accuracy >= 0.0 && f.network_accuracy <= 1.0));
        }
        const double m = (r.folds[0].network_accuracy + r.folds[1].network_accuracy) / 2;
        CHECK(r.network_mean() == doctest::Approx(m));
        CHECK(r.network_std() ==
              doctest::Approx(std::abs(r.folds[0].network_accuracy - r.folds[1].network_accuracy) / std::sqrt(2.0)));
        CHECK(r.table().find("Fixation baseline") != std::string::npos);
        CHECK(r.to_json()["mode"] == "loso");
    }

    TEST_CASE("scripted sessions and stage chaining") {
        const auto sessions = eval::scripted_sessions();
        REQUIRE(sessions.size() == 5);
        eval::PipelineConfig pc;
        pc.model = testutil::session_model();
        pc.make_client = [] { return std::make_shared<inference::MockLlmClient>(); };
        pc.log_dir = testutil::log_dir();
        pc.id_prefix = "unit-eval";
        const auto report = eval::run_system_eval(sessions, pc);
        const auto total = report.total();
        CHECK(total.overall.str() == "5/5");
        CHECK(total.recognition.str() == "5/5");
        CHECK(total.plan.str() == "5/5");
        CHECK(total.execution.str() == "5/5");
        for (const auto& s : report.sessions) CHECK(s.terminal == service::Phase::done);

        // A session whose world lacks the water source cannot be planned, so
        // execution is not credited either.
        auto broken = eval::scripted_session("water-plants");
        broken.world.objects.at("kettle").contents->amount = 0.0;
        const std::vector<eval::ScriptedSession> one{broken};
        pc.log_dir.reset();
        const auto r = eval::run_system_eval(one, pc);
        CHECK(r.total().recognition.s == 1);
        CHECK(r.total().plan.s == 0);
        CHECK(r.total().execution.s == 0);
    }
}
