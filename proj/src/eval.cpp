#include "gazeassist/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "gazeassist/error.hpp"

namespace gaze::eval {

using nlohmann::json;

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.empty()) throw DataError("accuracy of an empty prediction set");
    if (predictions.size() != labels.size()) {
        throw DataError("accuracy needs equal-length predictions and labels");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

int BaselineConfig::min_run_frames() const {
    const double frames = static_cast<double>(dwell_us) * 30.0 / 1e6;
    return std::max(1, static_cast<int>(std::ceil(frames - 1e-9)));
}

std::vector<bool> in_box_frames(const perception::ObjectTrack& track,
                                std::span<const std::optional<AlignedGaze>> gaze, double margin_px) {
    std::vector<bool> out(gaze.size(), false);
    for (std::size_t t = 0; t < gaze.size(); ++t) {
        if (!gaze[t] || gaze[t]->carried || t >= track.boxes.size() || !track.boxes[t]) continue;
        out[t] = track.boxes[t]->contains(gaze[t]->point, margin_px);
    }
    return out;
}

int fixation_window(const std::vector<bool>& in_box, std::size_t start, int sw, int min_run_frames) {
    int run = 0;
    const std::size_t end = std::min(in_box.size(), start + static_cast<std::size_t>(sw));
    for (std::size_t t = start; t < end; ++t) {
        run = in_box[t] ? run + 1 : 0;
        if (run >= min_run_frames) return 1;
    }
    return 0;
}

std::vector<int> fixation_baseline(const perception::ObjectTrack& track,
                                   std::span<const std::optional<AlignedGaze>> gaze,
                                   std::span<const std::size_t> window_starts, int sw,
                                   const BaselineConfig& config) {
    const auto in_box = in_box_frames(track, gaze, config.margin_px);
    std::vector<int> out;
    out.reserve(window_starts.size());
    for (std::size_t s : window_starts) out.push_back(fixation_window(in_box, s, sw, config.min_run_frames()));
    return out;
}

// ---- splits -----------------------------------------------------------------

std::vector<Split> five_fold_by_trial(std::span<const TrialKey> trials, int folds) {
    std::set<int> reps;
    for (const auto& t : trials) reps.insert(t.repetition);
    if (folds < 2) throw ConfigError("need at least two folds");
    if (static_cast<int>(reps.size()) < folds) {
        throw DataError("five-fold split needs " + std::to_string(folds) + " repetitions, found " +
                        std::to_string(reps.size()));
    }
    // Repetition indices beyond the fold count wrap around.
    std::vector<int> rep_list(reps.begin(), reps.end());
    std::map<int, int> fold_of;
    for (std::size_t i = 0; i < rep_list.size(); ++i) fold_of[rep_list[i]] = static_cast<int>(i) % folds;
    std::vector<Split> splits(static_cast<std::size_t>(folds));
    for (int f = 0; f < folds; ++f) splits[static_cast<std::size_t>(f)].name = "fold" + std::to_string(f + 1);
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const int f = fold_of.at(trials[i].repetition);
        for (int k = 0; k < folds; ++k) {
            auto& s = splits[static_cast<std::size_t>(k)];
            (k == f ? s.test : s.train).push_back(i);
        }
    }
    return splits;
}

std::vector<Split> loso(std::span<const TrialKey> trials) {
    std::vector<std::string> subjects;
    for (const auto& t : trials) {
        if (std::find(subjects.begin(), subjects.end(), t.subject) == subjects.end()) {
            subjects.push_back(t.subject);
        }
    }
    if (subjects.size() < 2) throw DataError("leave-one-subject-out needs at least two subjects");
    std::vector<Split> splits;
    for (const auto& s : subjects) {
        Split sp;
        sp.name = s;
        for (std::size_t i = 0; i < trials.size(); ++i) (trials[i].subject == s ? sp.test : sp.train).push_back(i);
        splits.push_back(std::move(sp));
    }
    return splits;
}

void check_partition(std::span<const Split> splits, std::size_t n_trials) {
    std::vector<int> tested(n_trials, 0);
    for (const auto& s : splits) {
        std::vector<int> seen(n_trials, 0);
        for (auto i : s.train) {
            if (i >= n_trials || seen[i]++) throw DataError(s.name + ": bad or repeated training trial");
        }
        for (auto i : s.test) {
            if (i >= n_trials) throw DataError(s.name + ": test trial out of range");
            if (seen[i]++) throw DataError(s.name + ": trial " + std::to_string(i) + " is in train and test");
            ++tested[i];
        }
        if (std::any_of(seen.begin(), seen.end(), [](int c) { return c == 0; })) {
            throw DataError(s.name + ": train and test do not cover every trial");
        }
        if (s.test.empty()) throw DataError(s.name + ": empty test set");
    }
    for (std::size_t i = 0; i < n_trials; ++i) {
        if (tested[i] != 1) {
            throw DataError("trial " + std::to_string(i) + " is tested " + std::to_string(tested[i]) + " times");
        }
    }
}

// ---- prepared data ----------------------------------------------------------

std::vector<PreparedTrial> prepare_trials(const synth::Dataset& dataset,
                                          const features::FeatureConfig& features,
                                          const BaselineConfig& baseline) {
    features.validate();
    std::vector<PreparedTrial> out;
    out.reserve(dataset.trials.size());
    for (const auto& t : dataset.trials) {
        PreparedTrial p;
        p.key = TrialKey{t.subject_id, t.trial_id, t.repetition};
        std::vector<std::int64_t> times;
        times.reserve(t.frames.size());
        for (const auto& f : t.frames) times.push_back(f.t_us);
        const auto gaze = perception::align_gaze_to_frames(t.gaze, times);
        const auto tracks = perception::track_objects(t.frames);
        for (const auto& [id, track] : tracks) {
            const auto marks = synth::object_marks(t, track.label);
            auto windows = features::cut_windows(track, gaze, features, marks);
            std::vector<std::size_t> starts;
            for (const auto& w : windows) starts.push_back(static_cast<std::size_t>(w.start_frame));
            const auto base = fixation_baseline(track, gaze, starts, features.sw, baseline);
            p.baseline.insert(p.baseline.end(), base.begin(), base.end());
            for (auto& w : windows) p.windows.push_back(std::move(w));
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<TrialKey> keys_of(std::span<const PreparedTrial> trials) {
    std::vector<TrialKey> keys;
    for (const auto& t : trials) keys.push_back(t.key);
    return keys;
}

void check_no_leakage(const Split& split, std::span<const PreparedTrial> trials, bool by_subject) {
    std::set<std::pair<std::string, std::string>> train_trials;
    std::set<std::string> train_subjects;
    for (auto i : split.train) {
        for (std::size_t w = 0; w < trials[i].windows.size(); ++w) {
            train_trials.insert({trials[i].key.subject, trials[i].key.trial});
            train_subjects.insert(trials[i].key.subject);
        }
    }
    for (auto i : split.test) {
        const auto& k = trials[i].key;
        if (train_trials.count({k.subject, k.trial})) {
            throw DataError(split.name + ": test trial " + k.subject + "/" + k.trial + " has training windows");
        }
        if (by_subject && train_subjects.count(k.subject)) {
            throw DataError(split.name + ": test subject " + k.subject + " has training windows");
        }
    }
}

EvalConfig::EvalConfig() {
    train.epochs = 6;
    train.eval_metrics = false;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation.
double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string pct(double x) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(2) << 100.0 * x;
    return o.str();
}

}  // namespace

double CvReport::network_mean() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.network_accuracy);
    return mean_of(v);
}
double CvReport::network_std() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.network_accuracy);
    return std_of(v);
}
double CvReport::baseline_mean() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.baseline_accuracy);
    return mean_of(v);
}
double CvReport::baseline_std() const {
    std::vector<double> v;
    for (const auto& f : folds) v.push_back(f.baseline_accuracy);
    return std_of(v);
}

json CvReport::to_json() const {
    json folds_j = json::array();
    for (const auto& f : folds) {
        folds_j.push_back({{"name", f.name},
                           {"train_windows", f.train_windows},
                           {"test_windows", f.test_windows},
                           {"network_accuracy", f.network_accuracy},
                           {"baseline_accuracy", f.baseline_accuracy},
                           {"seconds", f.seconds}});
    }
    return json{{"mode", mode},
                {"folds", folds_j},
                {"network", {{"mean", network_mean()}, {"std", network_std()}}},
                {"baseline", {{"mean", baseline_mean()}, {"std", baseline_std()}}}};
}

std::string CvReport::table() const {
    std::ostringstream o;
    o << (mode == "loso" ? "Leave-one-subject-out" : "Five-fold by repetition") << "\n";
    o << std::left << std::setw(10) << "split" << std::right << std::setw(8) << "train" << std::setw(7)
      << "test" << std::setw(12) << "network %" << std::setw(12) << "fixation %" << "\n";
    for (const auto& f : folds) {
        o << std::left << std::setw(10) << f.name << std::right << std::setw(8) << f.train_windows
          << std::setw(7) << f.test_windows << std::setw(12) << pct(f.network_accuracy) << std::setw(12)
          << pct(f.baseline_accuracy) << "\n";
    }
    o << "\nMethod                Accuracy (%)\n";
    o << "Fixation baseline     " << pct(baseline_mean()) << " +/- " << pct(baseline_std()) << "\n";
    o << "Intent network        " << pct(network_mean()) << " +/- " << pct(network_std()) << "\n";
    return o.str();
}

CvReport cross_validate(std::span<const PreparedTrial> trials, const std::string& mode,
                        const EvalConfig& config, const Progress& progress) {
    const auto keys = keys_of(trials);
    std::vector<Split> splits;
    if (mode == "fivefold") {
        splits = five_fold_by_trial(keys);
    } else if (mode == "loso") {
        splits = loso(keys);
    } else {
        throw ConfigError("unknown evaluation mode '" + mode + "'");
    }
    check_partition(splits, trials.size());

    CvReport report;
    report.mode = mode;
    for (const auto& split : splits) {
        check_no_leakage(split, trials, mode == "loso");
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<features::FeatureWindow> train;
        for (auto i : split.train) train.insert(train.end(), trials[i].windows.begin(), trials[i].windows.end());
        std::vector<features::FeatureWindow> test;
        std::vector<int> labels;
        std::vector<int> baseline;
        for (auto i : split.test) {
            test.insert(test.end(), trials[i].windows.begin(), trials[i].windows.end());
            baseline.insert(baseline.end(), trials[i].baseline.begin(), trials[i].baseline.end());
        }
        for (const auto& w : test) labels.push_back(*w.label);

        const auto trained = net::train(train, config.train, config.model);
        const auto preds = net::predict_all(test, trained.params);
        std::vector<int> decided;
        for (const auto& p : preds) decided.push_back(p.decided ? 1 : 0);

        FoldResult r;
        r.name = split.name;
        r.train_windows = train.size();
        r.test_windows = test.size();
        r.network_accuracy = accuracy(decided, labels);
        r.baseline_accuracy = accuracy(baseline, labels);
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (progress) progress(r);
        report.folds.push_back(r);
    }
    return report;
}

// ---- scripted sessions ------------------------------------------------------

namespace {

struct SceneSpec {
    std::string family;
    std::vector<std::pair<std::string, world::Cell>> objects;
};

const std::vector<SceneSpec>& scene_specs() {
    static const std::vector<SceneSpec> specs{
        {"fetch", {{"banana", {2, 1}}, {"apple", {3, 3}}, {"book", {2, 3}}}},
        {"put-into", {{"banana", {2, 0}}, {"bowl", {2, 2}}, {"book", {3, 3}}}},
        {"water-plants", {{"kettle", {2, 0}}, {"plant", {3, 2}}, {"cup", {2, 3}}}},
        {"toggle-switch", {{"switch", {2, 2}}, {"book", {3, 0}}, {"apple", {3, 3}}}},
        {"pour-water", {{"kettle", {2, 1}}, {"cup", {3, 2}}, {"bowl", {2, 3}}}},
    };
    return specs;
}

}  // namespace

ScriptedSession scripted_session(const std::string& family, std::uint64_t seed,
                                 const SceneGeometry& geometry) {
    const auto& fam = synth::task_family(family);
    const auto spec = std::find_if(scene_specs().begin(), scene_specs().end(),
                                   [&](const SceneSpec& s) { return s.family == family; });
    ScriptedSession s;
    s.family = family;
    s.expected_intention = fam.intention;
    for (const auto& [label, cell] : spec->objects) {
        auto o = synth::catalog_object(label);
        o.cell = cell;
        s.world.objects.emplace(label, std::move(o));
    }

    const double w = geometry.width_px;
    const double h = geometry.height_px;
    const Point neutral{w * 11.0 / 12.0, h / 2.0};  // centre of the empty right column
    const Point agree{w / 2.0, h * 0.86};
    synth::GazeScript g(seed, 15.0, geometry);
    g.fixate(neutral, 1'000'000);
    for (const auto& label : fam.targets) {
        const Box box = world::object_box(s.world.at(label), geometry);
        g.saccade(box.center(), 70'000);
        for (int k = 0; k < 3; ++k) {
            if (k) g.blink(150'000);
            g.fixate(box.center(), 600'000);
        }
    }
    g.saccade(neutral, 70'000);
    g.fixate(neutral, 3'500'000);
    g.saccade(agree, 70'000);
    g.fixate(agree, 3'000'000);

    const auto n_frames = static_cast<std::size_t>(g.now() / perception::kFramePeriodUs);
    s.frames = synth::scene_frames(s.world, geometry, n_frames);
    s.gaze = g.render(static_cast<std::int64_t>(n_frames) * perception::kFramePeriodUs);

    using world::Location;
    if (family == "fetch") {
        s.predicate = "banana is in the user zone";
        s.check = [](const world::WorldState& ws) {
            return ws.at("banana").location.type == Location::Type::user_zone && !ws.gripper.holding;
        };
    } else if (family == "put-into") {
        s.predicate = "banana is inside the bowl";
        s.check = [](const world::WorldState& ws) {
            return ws.at("banana").location == Location{Location::Type::inside, "bowl"};
        };
    } else if (family == "water-plants") {
        s.predicate = "plant is watered";
        s.check = [](const world::WorldState& ws) { return ws.at("plant").watered; };
    } else if (family == "toggle-switch") {
        s.predicate = "switch is on";
        s.check = [](const world::WorldState& ws) { return ws.at("switch").switch_on; };
    } else {
        s.predicate = "cup holds 150 ml water, kettle 50 ml";
        s.check = [](const world::WorldState& ws) {
            const auto& cup = ws.at("cup").contents;
            const auto& kettle = ws.at("kettle").contents;
            return cup && kettle && cup->substance == "water" && cup->amount == 150.0 &&
                   kettle->amount == 50.0 && ws.at("kettle").location.type == Location::Type::table;
        };
    }
    return s;
}

std::vector<ScriptedSession> scripted_sessions(std::uint64_t seed, const SceneGeometry& geometry) {
    std::vector<ScriptedSession> out;
    for (const auto& f : synth::task_families()) out.push_back(scripted_session(f.name, seed, geometry));
    return out;
}

void drive(service::Session& session, std::span<const GazeSample> gaze, std::span<const FrameRecord> frames) {
    std::size_t gi = 0;
    std::int64_t last = 0;
    for (const auto& f : frames) {
        while (gi < gaze.size() && gaze[gi].t_us < f.t_us) {
            session.push_gaze(gaze[gi]);
            last = gaze[gi++].t_us;
        }
        session.push_frame(f);
        last = std::max(last, f.t_us);
    }
    while (gi < gaze.size()) {
        session.push_gaze(gaze[gi]);
        last = gaze[gi++].t_us;
    }
    session.end_of_stream(last + perception::kFramePeriodUs);
}

StageRow StageReport::total() const {
    StageRow t;
    t.family = "total";
    for (const auto& r : rows) {
        for (auto [dst, src] : {std::pair{&t.overall, &r.overall}, std::pair{&t.recognition, &r.recognition},
                                std::pair{&t.plan, &r.plan}, std::pair{&t.execution, &r.execution}}) {
            dst->s += src->s;
            dst->all += src->all;
        }
    }
    return t;
}

json StageReport::to_json() const {
    json rows_j = json::array();
    auto row_json = [](const StageRow& r) {
        return json{{"family", r.family},
                    {"overall", r.overall.str()},
                    {"recognition", r.recognition.str()},
                    {"plan", r.plan.str()},
                    {"execution", r.execution.str()}};
    };
    for (const auto& r : rows) rows_j.push_back(row_json(r));
    json sessions_j = json::array();
    for (const auto& s : sessions) {
        sessions_j.push_back({{"family", s.family},
                              {"session", s.session_id},
                              {"terminal", service::to_string(s.terminal)},
                              {"recognized", s.recognized},
                              {"planned", s.planned},
                              {"executed", s.executed},
                              {"attempts", s.attempts}});
    }
    return json{{"rows", rows_j}, {"total", row_json(total())}, {"sessions", sessions_j}};
}

std::string StageReport::table() const {
    std::ostringstream o;
    o << std::left << std::setw(16) << "Task" << std::right << std::setw(10) << "Overall" << std::setw(13)
      << "Recognition" << std::setw(8) << "Plan" << std::setw(11) << "Execution" << "\n";
    auto line = [&](const StageRow& r) {
        o << std::left << std::setw(16) << r.family << std::right << std::setw(10) << r.overall.str()
          << std::setw(13) << r.recognition.str() << std::setw(8) << r.plan.str() << std::setw(11)
          << r.execution.str() << "\n";
    };
    for (const auto& r : rows) line(r);
    line(total());
    return o.str();
}

StageReport run_system_eval(std::span<const ScriptedSession> sessions, const PipelineConfig& pipeline) {
    if (!pipeline.model || !pipeline.make_client) throw ConfigError("pipeline needs a model and a client");
    StageReport report;
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < sessions.size(); ++i) {
        const auto& sc = sessions[i];
        const std::string id = pipeline.id_prefix + "-" + std::to_string(i + 1) + "-" + sc.family;
        service::EventSink sink;
        if (pipeline.log_dir) sink = service::file_sink(*pipeline.log_dir / (id + ".jsonl"), id);
        service::Session session(id, pipeline.session,
                                 service::SessionDeps{pipeline.model, pipeline.make_client(), sc.world}, sink);
        drive(session, sc.gaze, sc.frames);

        SessionOutcome out;
        out.family = sc.family;
        out.session_id = id;
        out.terminal = session.phase();
        out.recognized = session.accepted() &&
                         session.accepted()->description == sc.expected_intention;
        out.planned = out.recognized && session.plan().has_value();
        out.executed = out.planned && session.execution() && session.execution()->success &&
                       sc.check(session.world());
        out.attempts = session.execution() ? session.execution()->attempts : 0;
        out.events = session.events();

        if (!row_of.count(sc.family)) {
            row_of[sc.family] = report.rows.size();
            report.rows.push_back(StageRow{sc.family, {}, {}, {}, {}});
        }
        auto& row = report.rows[row_of[sc.family]];
        row.overall.all += 1;
        row.recognition.all += 1;
        if (out.recognized) {
            row.recognition.s += 1;
            row.plan.all += 1;
        }
        if (out.planned) {
            row.plan.s += 1;
            row.execution.all += 1;
        }
        if (out.executed) {
            row.execution.s += 1;
            row.overall.s += 1;
        }
        report.sessions.push_back(std::move(out));
    }
    return report;
}

net::ModelParams train_session_model(const synth::SyntheticProfile& profile, int epochs, std::uint64_t seed) {
    const auto dataset = synth::generate_dataset(profile);
    const auto prepared = prepare_trials(dataset);
    std::vector<features::FeatureWindow> windows;
    for (const auto& t : prepared) windows.insert(windows.end(), t.windows.begin(), t.windows.end());
    net::TrainConfig tc;
    tc.epochs = epochs;
    tc.seed = seed;
    tc.eval_metrics = false;
    net::ModelConfig mc;
    mc.seed = seed;
    return net::train(windows, tc, mc).params;
}

}  // namespace gaze::eval
