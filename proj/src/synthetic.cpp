#include "gazeassist/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "gazeassist/error.hpp"

namespace gaze::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void SyntheticProfile::validate() const {
    const auto range = [](std::int64_t lo, std::int64_t hi, const char* what) {
        if (lo <= 0 || hi < lo) throw ConfigError(std::string("bad duration range for ") + what);
    };
    if (!(jitter_sigma_px > 0.0)) throw ConfigError("jitter sigma must be positive");
    range(intent_fix_min_us, intent_fix_max_us, "intent fixations");
    range(glance_min_us, glance_max_us, "glances");
    range(saccade_min_us, saccade_max_us, "saccades");
    range(blink_min_us, blink_max_us, "blinks");
    range(free_fix_min_us, free_fix_max_us, "free fixations");
    range(linger_min_us, linger_max_us, "lingers");
    if (intent_fixations_min < 1 || intent_fixations_max < intent_fixations_min) {
        throw ConfigError("bad fixation count range");
    }
    if (sigma_spread < 0.0 || sigma_spread >= 1.0 || duration_spread < 0.0 ||
        duration_spread >= 1.0) {
        throw ConfigError("subject spreads must lie in [0, 1)");
    }
    if (n_subjects < 1 || repetitions < 1) throw ConfigError("need at least one subject and trial");
    if (objects_per_scene < 2) throw ConfigError("scenes need at least two objects");
    if (unconscious_duration_us < 2'000'000) throw ConfigError("trials must last at least 2 s");
    geometry.validate();
}

const std::vector<TaskFamily>& task_families() {
    static const std::vector<TaskFamily> families{
        {"fetch", {"banana"}, "fetch the banana"},
        {"put-into", {"banana", "bowl"}, "put the banana into the bowl"},
        {"water-plants", {"kettle", "plant"}, "water the plant"},
        {"toggle-switch", {"switch"}, "toggle the switch"},
        {"pour-water", {"kettle", "cup"}, "pour water into the cup"},
    };
    return families;
}

const TaskFamily& task_family(const std::string& name) {
    for (const auto& f : task_families()) {
        if (f.name == name) return f;
    }
    throw ConfigError("unknown task family '" + name + "'");
}

world::WorldObject catalog_object(const std::string& label) {
    using world::Contents;
    using world::ObjectKind;
    world::WorldObject o;
    o.label = label;
    if (label == "bowl") {
        o.kind = ObjectKind::container;
        o.contents = Contents{"", 0.0, 500.0};
    } else if (label == "box") {
        o.kind = ObjectKind::container;
    } else if (label == "cup") {
        o.kind = ObjectKind::container;
        o.contents = Contents{"", 0.0, 150.0};
    } else if (label == "kettle") {
        o.kind = ObjectKind::vessel;
        o.contents = Contents{"water", 200.0, 1000.0};
    } else if (label == "plant") {
        o.kind = ObjectKind::plant;
        o.contents = Contents{"", 0.0, 100.0};
    } else if (label == "switch") {
        o.kind = ObjectKind::switch_;
    } else {
        o.kind = ObjectKind::item;
    }
    return o;
}

// ---- gaze script ------------------------------------------------------------

GazeScript::GazeScript(std::uint64_t seed, double sigma_px, SceneGeometry geometry)
    : rng_(seed), sigma_(sigma_px), geometry_(geometry) {}

void GazeScript::fixate(Point p, std::int64_t dur_us, std::optional<std::string> mark) {
    segments_.push_back({Segment::Kind::fixation, now_, now_ + dur_us, p, p, std::move(mark)});
    now_ += dur_us;
    pos_ = p;
}

void GazeScript::saccade(Point to, std::int64_t dur_us) {
    segments_.push_back({Segment::Kind::saccade, now_, now_ + dur_us, pos_, to, std::nullopt});
    now_ += dur_us;
    pos_ = to;
}

void GazeScript::blink(std::int64_t dur_us, std::optional<std::string> mark) {
    segments_.push_back({Segment::Kind::blink, now_, now_ + dur_us, pos_, pos_, std::move(mark)});
    now_ += dur_us;
}

void GazeScript::hold(Point p, std::int64_t dur_us) {
    segments_.push_back({Segment::Kind::hold, now_, now_ + dur_us, p, p, std::nullopt});
    now_ += dur_us;
    pos_ = p;
}

std::vector<GazeSample> GazeScript::render(std::int64_t end_us) {
    std::vector<GazeSample> out;
    std::normal_distribution<double> n01(0.0, 1.0);
    std::size_t si = 0;
    const double w = geometry_.width_px;
    const double h = geometry_.height_px;
    for (std::int64_t t = 0; t < end_us; t += perception::kGazePeriodUs) {
        while (si < segments_.size() && segments_[si].t1 <= t) ++si;
        if (si >= segments_.size()) {
            // Past the script: keep holding the final point.
            out.push_back({t, std::clamp(pos_.x, 0.0, w), std::clamp(pos_.y, 0.0, h), true});
            continue;
        }
        const Segment& s = segments_[si];
        GazeSample g{t, 0.0, 0.0, true};
        switch (s.kind) {
            case Segment::Kind::blink:
                g.on_screen = false;
                break;
            case Segment::Kind::hold:
                g.gx = s.a.x;
                g.gy = s.a.y;
                break;
            case Segment::Kind::saccade: {
                const double u = static_cast<double>(t - s.t0) / static_cast<double>(s.t1 - s.t0);
                g.gx = s.a.x + u * (s.b.x - s.a.x);
                g.gy = s.a.y + u * (s.b.y - s.a.y);
                break;
            }
            case Segment::Kind::fixation: {
                // Radially truncated at 3 sigma.
                double dx, dy;
                do {
                    dx = sigma_ * n01(rng_);
                    dy = sigma_ * n01(rng_);
                } while (dx * dx + dy * dy > 9.0 * sigma_ * sigma_);
                g.gx = s.a.x + dx;
                g.gy = s.a.y + dy;
                break;
            }
        }
        if (g.on_screen) {
            g.gx = std::clamp(g.gx, 0.0, w);
            g.gy = std::clamp(g.gy, 0.0, h);
        }
        out.push_back(g);
    }
    return out;
}

std::vector<std::optional<std::string>> GazeScript::frame_marks(std::size_t n_frames) const {
    std::vector<std::optional<std::string>> marks(n_frames);
    std::size_t si = 0;
    for (std::size_t f = 0; f < n_frames; ++f) {
        const std::int64_t a = static_cast<std::int64_t>(f) * perception::kFramePeriodUs;
        const std::int64_t b = a + perception::kFramePeriodUs;
        while (si < segments_.size() && segments_[si].t1 <= a) ++si;
        std::optional<std::string> label;
        bool ok = si < segments_.size();
        for (std::size_t k = si; ok && k < segments_.size() && segments_[k].t0 < b; ++k) {
            const auto& m = segments_[k].mark;
            if (!m || (label && *label != *m)) {
                ok = false;
            } else {
                label = m;
            }
            if (k + 1 == segments_.size() && segments_[k].t1 < b) ok = false;
        }
        if (ok && label) marks[f] = label;
    }
    return marks;
}

// ---- trial scripting --------------------------------------------------------

namespace {

struct TrialRng {
    std::mt19937_64 rng;

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
    std::int64_t duration(std::int64_t lo, std::int64_t hi, double mult) {
        return static_cast<std::int64_t>(
            std::llround(static_cast<double>(std::uniform_int_distribution<std::int64_t>(lo, hi)(rng)) * mult));
    }
    bool chance(double p) { return uniform(0.0, 1.0) < p; }
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }
};

std::uint64_t trial_seed(std::uint64_t seed, int subject, int trial) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(subject), static_cast<std::uint32_t>(trial)};
    std::uint32_t parts[2];
    seq.generate(parts, parts + 2);
    return (static_cast<std::uint64_t>(parts[0]) << 32) | parts[1];
}

world::WorldState make_scene(const TaskFamily& family, int n_objects, TrialRng& r) {
    static const std::vector<std::string> pool{"banana", "bowl", "kettle", "plant", "switch",
                                               "cup",    "apple", "book",  "box"};
    std::vector<std::string> labels = family.targets;
    std::vector<std::string> rest;
    for (const auto& l : pool) {
        if (std::find(labels.begin(), labels.end(), l) == labels.end()) rest.push_back(l);
    }
    std::shuffle(rest.begin(), rest.end(), r.rng);
    for (std::size_t i = 0; labels.size() < static_cast<std::size_t>(n_objects); ++i) {
        labels.push_back(rest[i]);
    }
    std::vector<world::Cell> cells;
    for (int row = 1; row <= 4; ++row) {
        for (int col = 0; col < 6; ++col) cells.push_back({row, col});
    }
    std::shuffle(cells.begin(), cells.end(), r.rng);
    world::WorldState w;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto o = catalog_object(labels[i]);
        o.cell = cells[i];
        w.objects.emplace(o.label, std::move(o));
    }
    return w;
}

std::vector<Box> scene_boxes(const world::WorldState& w, const SceneGeometry& g) {
    std::vector<Box> boxes;
    for (const auto& [label, o] : w.objects) boxes.push_back(world::object_box(o, g));
    return boxes;
}

Point free_point(const std::vector<Box>& boxes, const SceneGeometry& g, TrialRng& r) {
    for (;;) {
        const Point p{r.uniform(40.0, g.width_px - 40.0), r.uniform(40.0, g.height_px - 40.0)};
        const bool clear = std::none_of(boxes.begin(), boxes.end(),
                                        [&](const Box& b) { return b.contains(p, 60.0); });
        if (clear) return p;
    }
}

Point glance_point(const Box& b, TrialRng& r) {
    const Point c = b.center();
    return {c.x + r.uniform(-0.35, 0.35) * b.width(), c.y + r.uniform(-0.35, 0.35) * b.height()};
}

Point periphery_point(const Box& b, TrialRng& r) {
    const Point c = b.center();
    const double theta = r.uniform(0.0, 2.0 * std::numbers::pi);
    const double u = r.uniform(0.8, 1.0);
    return {c.x + u * b.width() / 2.0 * std::cos(theta), c.y + u * b.height() / 2.0 * std::sin(theta)};
}

struct ScanContext {
    const SyntheticProfile& p;
    const world::WorldState& world;
    std::vector<std::string> linger_labels;  // objects eligible for peripheral lingering
    double dm;
};

void scan(GazeScript& s, TrialRng& r, const ScanContext& ctx, std::int64_t until) {
    const auto& p = ctx.p;
    const auto boxes = scene_boxes(ctx.world, p.geometry);
    std::vector<std::string> labels;
    for (const auto& [label, o] : ctx.world.objects) labels.push_back(label);
    while (s.now() < until) {
        const double u = r.uniform(0.0, 1.0);
        Point target;
        std::int64_t dur;
        if (u < p.glance_rate) {
            const auto& o = ctx.world.at(labels[r.index(labels.size())]);
            target = glance_point(world::object_box(o, p.geometry), r);
            dur = r.duration(p.glance_min_us, p.glance_max_us, ctx.dm);
        } else if (u < p.glance_rate + p.linger_rate && !ctx.linger_labels.empty()) {
            const auto& o = ctx.world.at(ctx.linger_labels[r.index(ctx.linger_labels.size())]);
            target = periphery_point(world::object_box(o, p.geometry), r);
            dur = r.duration(p.linger_min_us, p.linger_max_us, ctx.dm);
        } else {
            target = free_point(boxes, p.geometry, r);
            dur = r.duration(p.free_fix_min_us, p.free_fix_max_us, ctx.dm);
        }
        s.saccade(target, r.duration(p.saccade_min_us, p.saccade_max_us, 1.0));
        s.fixate(target, dur);
        if (r.chance(0.1)) s.blink(r.duration(p.blink_min_us, p.blink_max_us, 1.0));
    }
}

void target_episode(GazeScript& s, TrialRng& r, const SyntheticProfile& p, const Box& box,
                    const std::string& label, double dm) {
    s.saccade(box.center(), r.duration(p.saccade_min_us, p.saccade_max_us, 1.0));
    const int n = std::uniform_int_distribution<int>(p.intent_fixations_min,
                                                     p.intent_fixations_max)(r.rng);
    for (int k = 0; k < n; ++k) {
        s.fixate(box.center(), r.duration(p.intent_fix_min_us, p.intent_fix_max_us, dm), label);
        if (k + 1 < n && r.chance(p.blink_rate)) {
            s.blink(r.duration(p.blink_min_us, p.blink_max_us, 1.0), label);
        }
    }
}

Trial make_trial(const SyntheticProfile& p, const SubjectTraits& subject, int subject_idx,
                 int repetition, bool intent) {
    const auto& families = task_families();
    const TaskFamily& family = families[static_cast<std::size_t>(repetition) % families.size()];
    const int trial_idx = 2 * repetition + (intent ? 0 : 1);
    TrialRng r{std::mt19937_64(trial_seed(p.seed, subject_idx, trial_idx))};

    Trial t;
    t.subject_id = subject.id;
    char tid[16];
    std::snprintf(tid, sizeof tid, "t%02d", trial_idx + 1);
    t.trial_id = tid;
    t.repetition = repetition;
    t.intent = intent;
    t.task = family.name;
    if (intent) t.targets = family.targets;
    t.sigma_px = p.jitter_sigma_px * subject.sigma_mult;
    t.world = make_scene(family, p.objects_per_scene, r);

    GazeScript s(r.rng(), t.sigma_px, p.geometry);
    ScanContext ctx{p, t.world, {}, subject.duration_mult};
    for (const auto& [label, o] : t.world.objects) {
        if (std::find(t.targets.begin(), t.targets.end(), label) == t.targets.end()) {
            ctx.linger_labels.push_back(label);
        }
    }
    const auto boxes = scene_boxes(t.world, p.geometry);
    s.hold(free_point(boxes, p.geometry, r), 1);
    if (intent) {
        scan(s, r, ctx, s.now() + r.duration(300'000, 1'000'000, 1.0));
        for (std::size_t i = 0; i < family.targets.size(); ++i) {
            const auto& label = family.targets[i];
            target_episode(s, r, p, world::object_box(t.world.at(label), p.geometry), label,
                           subject.duration_mult);
            if (i + 1 < family.targets.size() && r.chance(0.5)) {
                scan(s, r, ctx, s.now() + 1);
            }
        }
        scan(s, r, ctx, s.now() + r.duration(500'000, 1'200'000, 1.0));
    } else {
        scan(s, r, ctx, p.unconscious_duration_us);
    }

    const auto n_frames = static_cast<std::size_t>(s.now() / perception::kFramePeriodUs);
    t.frames = scene_frames(t.world, p.geometry, n_frames);
    t.gaze = s.render(static_cast<std::int64_t>(n_frames) * perception::kFramePeriodUs);
    t.marks = s.frame_marks(n_frames);
    return t;
}

}  // namespace

std::vector<FrameRecord> scene_frames(const world::WorldState& world, const SceneGeometry& geometry,
                                      std::size_t n_frames) {
    const auto dets = perception::mock_detect(world, geometry);
    std::vector<FrameRecord> frames(n_frames);
    for (std::size_t f = 0; f < n_frames; ++f) {
        frames[f].frame_idx = static_cast<std::int64_t>(f);
        frames[f].t_us = static_cast<std::int64_t>(f) * perception::kFramePeriodUs;
        frames[f].detections = dets;
    }
    return frames;
}

Dataset generate_dataset(const SyntheticProfile& profile) {
    profile.validate();
    Dataset d;
    d.profile = profile;
    std::mt19937_64 rng(profile.seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int s = 0; s < profile.n_subjects; ++s) {
        SubjectTraits t;
        char sid[16];
        std::snprintf(sid, sizeof sid, "s%02d", s + 1);
        t.id = sid;
        t.sigma_mult = 1.0 + profile.sigma_spread * u(rng);
        t.duration_mult = 1.0 + profile.duration_spread * u(rng);
        d.subjects.push_back(t);
    }
    for (int s = 0; s < profile.n_subjects; ++s) {
        for (int rep = 0; rep < profile.repetitions; ++rep) {
            d.trials.push_back(make_trial(profile, d.subjects[static_cast<std::size_t>(s)], s, rep, true));
            d.trials.push_back(make_trial(profile, d.subjects[static_cast<std::size_t>(s)], s, rep, false));
        }
    }
    return d;
}

std::vector<std::optional<bool>> object_marks(const Trial& trial, const std::string& object_id) {
    std::vector<std::optional<bool>> out(trial.marks.size());
    for (std::size_t f = 0; f < trial.marks.size(); ++f) {
        out[f] = trial.marks[f].has_value() && *trial.marks[f] == object_id;
    }
    return out;
}

// ---- dataset I/O ------------------------------------------------------------

namespace {

json profile_json(const SyntheticProfile& p) {
    return json{{"jitter_sigma_px", p.jitter_sigma_px},
                {"intent_fix_us", {p.intent_fix_min_us, p.intent_fix_max_us}},
                {"intent_fixations", {p.intent_fixations_min, p.intent_fixations_max}},
                {"glance_us", {p.glance_min_us, p.glance_max_us}},
                {"saccade_us", {p.saccade_min_us, p.saccade_max_us}},
                {"blink_us", {p.blink_min_us, p.blink_max_us}},
                {"free_fix_us", {p.free_fix_min_us, p.free_fix_max_us}},
                {"linger_us", {p.linger_min_us, p.linger_max_us}},
                {"glance_rate", p.glance_rate},
                {"linger_rate", p.linger_rate},
                {"blink_rate", p.blink_rate},
                {"unconscious_duration_us", p.unconscious_duration_us},
                {"sigma_spread", p.sigma_spread},
                {"duration_spread", p.duration_spread},
                {"n_subjects", p.n_subjects},
                {"repetitions", p.repetitions},
                {"objects_per_scene", p.objects_per_scene},
                {"seed", p.seed},
                {"geometry", {p.geometry.width_px, p.geometry.height_px}}};
}

SyntheticProfile profile_from_json(const json& j) {
    SyntheticProfile p;
    const auto pair = [&](const char* key, std::int64_t& lo, std::int64_t& hi) {
        lo = j.at(key).at(0).get<std::int64_t>();
        hi = j.at(key).at(1).get<std::int64_t>();
    };
    p.jitter_sigma_px = j.at("jitter_sigma_px").get<double>();
    pair("intent_fix_us", p.intent_fix_min_us, p.intent_fix_max_us);
    p.intent_fixations_min = j.at("intent_fixations").at(0).get<int>();
    p.intent_fixations_max = j.at("intent_fixations").at(1).get<int>();
    pair("glance_us", p.glance_min_us, p.glance_max_us);
    pair("saccade_us", p.saccade_min_us, p.saccade_max_us);
    pair("blink_us", p.blink_min_us, p.blink_max_us);
    pair("free_fix_us", p.free_fix_min_us, p.free_fix_max_us);
    pair("linger_us", p.linger_min_us, p.linger_max_us);
    p.glance_rate = j.at("glance_rate").get<double>();
    p.linger_rate = j.at("linger_rate").get<double>();
    p.blink_rate = j.at("blink_rate").get<double>();
    p.unconscious_duration_us = j.at("unconscious_duration_us").get<std::int64_t>();
    p.sigma_spread = j.at("sigma_spread").get<double>();
    p.duration_spread = j.at("duration_spread").get<double>();
    p.n_subjects = j.at("n_subjects").get<int>();
    p.repetitions = j.at("repetitions").get<int>();
    p.objects_per_scene = j.at("objects_per_scene").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.geometry.width_px = j.at("geometry").at(0).get<int>();
    p.geometry.height_px = j.at("geometry").at(1).get<int>();
    return p;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

}  // namespace

void write_dataset(const Dataset& dataset, const fs::path& root) {
    fs::create_directories(root / "subjects");
    json subjects = json::array();
    for (const auto& s : dataset.subjects) {
        subjects.push_back({{"id", s.id}, {"sigma_mult", s.sigma_mult},
                            {"duration_mult", s.duration_mult}});
    }
    write_text(root / "dataset.json",
               json{{"format", "gaze-dataset-v1"},
                    {"profile", profile_json(dataset.profile)},
                    {"subjects", subjects}}
                       .dump(2) +
                   "\n");
    for (const auto& t : dataset.trials) {
        const fs::path dir = root / "subjects" / t.subject_id / "trials" / t.trial_id;
        fs::create_directories(dir);
        {
            std::ofstream out(dir / "gaze.jsonl", std::ios::binary);
            perception::write_gaze_stream(out, t.gaze);
        }
        {
            std::ofstream out(dir / "frames.jsonl", std::ios::binary);
            perception::write_frame_stream(out, t.frames);
        }
        std::string marks;
        for (std::size_t f = 0; f < t.marks.size(); ++f) {
            marks += json{{"frame_idx", f},
                          {"intent", t.marks[f].has_value()},
                          {"object", t.marks[f] ? json(*t.marks[f]) : json(nullptr)}}
                         .dump() +
                     "\n";
        }
        write_text(dir / "marks.jsonl", marks);
        write_text(dir / "meta.json", json{{"subject", t.subject_id},
                                           {"trial", t.trial_id},
                                           {"repetition", t.repetition},
                                           {"intent", t.intent},
                                           {"task", t.task},
                                           {"targets", t.targets},
                                           {"sigma_px", t.sigma_px},
                                           {"world", world::world_to_json(t.world)}}
                                              .dump(2) +
                                          "\n");
    }
}

Dataset load_dataset(const fs::path& root) {
    Dataset d;
    try {
        auto in = open_in(root / "dataset.json");
        const json meta = json::parse(in);
        if (meta.value("format", "") != "gaze-dataset-v1") {
            throw DataError(root.string() + " is not a gaze dataset");
        }
        d.profile = profile_from_json(meta.at("profile"));
        for (const auto& s : meta.at("subjects")) {
            d.subjects.push_back({s.at("id").get<std::string>(), s.at("sigma_mult").get<double>(),
                                  s.at("duration_mult").get<double>()});
        }
    } catch (const json::exception& e) {
        throw DataError("bad dataset.json: " + std::string(e.what()));
    }

    std::vector<fs::path> subject_dirs;
    for (const auto& e : fs::directory_iterator(root / "subjects")) {
        if (e.is_directory()) subject_dirs.push_back(e.path());
    }
    std::sort(subject_dirs.begin(), subject_dirs.end());
    for (const auto& sdir : subject_dirs) {
        std::vector<fs::path> trial_dirs;
        for (const auto& e : fs::directory_iterator(sdir / "trials")) {
            if (e.is_directory()) trial_dirs.push_back(e.path());
        }
        std::sort(trial_dirs.begin(), trial_dirs.end());
        for (const auto& dir : trial_dirs) {
            Trial t;
            try {
                auto min = open_in(dir / "meta.json");
                const json meta = json::parse(min);
                t.subject_id = meta.at("subject").get<std::string>();
                t.trial_id = meta.at("trial").get<std::string>();
                t.repetition = meta.at("repetition").get<int>();
                t.intent = meta.at("intent").get<bool>();
                t.task = meta.at("task").get<std::string>();
                t.targets = meta.at("targets").get<std::vector<std::string>>();
                t.sigma_px = meta.at("sigma_px").get<double>();
                t.world = world::world_from_json(meta.at("world"));
            } catch (const json::exception& e) {
                throw DataError("bad meta.json in " + dir.string() + ": " + e.what());
            }
            auto gin = open_in(dir / "gaze.jsonl");
            t.gaze = perception::read_gaze_stream(gin, d.profile.geometry);
            auto fin = open_in(dir / "frames.jsonl");
            t.frames = perception::ingest_detection_stream(fin, d.profile.geometry);
            auto kin = open_in(dir / "marks.jsonl");
            std::string line;
            std::size_t n = 0;
            while (std::getline(kin, line)) {
                ++n;
                if (line.empty()) continue;
                const json m = json::parse(line, nullptr, false);
                if (m.is_discarded() || !m.contains("frame_idx") ||
                    m["frame_idx"].get<std::size_t>() != t.marks.size()) {
                    throw ParseError(n, "bad intent mark in " + (dir / "marks.jsonl").string());
                }
                if (m.value("intent", false) && m.contains("object") && m["object"].is_string()) {
                    t.marks.push_back(m["object"].get<std::string>());
                } else {
                    t.marks.push_back(std::nullopt);
                }
            }
            if (t.marks.size() != t.frames.size()) {
                throw DataError("intent marks do not cover every frame in " + dir.string());
            }
            d.trials.push_back(std::move(t));
        }
    }
    if (d.trials.empty()) throw DataError("dataset at " + root.string() + " has no trials");
    return d;
}

std::vector<features::FeatureWindow> separable_windows(std::size_t n, int sw, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(0.1, 0.9);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<features::FeatureWindow> out;
    for (std::size_t i = 0; i < n; ++i) {
        features::FeatureWindow w;
        w.object_id = "obj" + std::to_string(i);
        w.start_frame = 0;
        w.sw = sw;
        const bool intent = i % 2 == 0;
        const double gx = pos(rng);
        const double gy = pos(rng);
        for (int t = 0; t < sw; ++t) {
            w.values.push_back(std::clamp(gx + 0.01 * noise(rng), 0.0, 1.0));
            w.values.push_back(std::clamp(gy + 0.01 * noise(rng), 0.0, 1.0));
            w.values.push_back(intent ? 8.0 + 0.1 * noise(rng)
                                      : std::max(0.0, 0.1 + 0.01 * noise(rng)));
        }
        w.label = intent ? 1 : 0;
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace gaze::synth
