#pragma once

// Parametric gaze generator standing in for recorded subjects: scripted
// fixations, glances, saccades and blinks over simulated tabletop scenes.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gazeassist/features.hpp"
#include "gazeassist/perception.hpp"
#include "gazeassist/world.hpp"

namespace gaze::synth {

struct SyntheticProfile {
    double jitter_sigma_px = 15.0;
    std::int64_t intent_fix_min_us = 300'000;
    std::int64_t intent_fix_max_us = 900'000;
    int intent_fixations_min = 2;  // fixations per target episode
    int intent_fixations_max = 3;
    std::int64_t glance_min_us = 80'000;
    std::int64_t glance_max_us = 200'000;
    std::int64_t saccade_min_us = 50'000;
    std::int64_t saccade_max_us = 100'000;
    std::int64_t blink_min_us = 120'000;
    std::int64_t blink_max_us = 250'000;
    std::int64_t free_fix_min_us = 300'000;
    std::int64_t free_fix_max_us = 900'000;
    // Unfocused fixations on an object's periphery while scanning.
    std::int64_t linger_min_us = 600'000;
    std::int64_t linger_max_us = 1'300'000;
    double glance_rate = 0.35;  // share of scanning events that are object glances
    double linger_rate = 0.30;  // share that are peripheral lingers
    double blink_rate = 0.35;   // chance of a blink between episode fixations
    std::int64_t unconscious_duration_us = 6'000'000;
    // Per-subject multipliers are drawn uniformly from [1 - spread, 1 + spread].
    double sigma_spread = 0.3;
    double duration_spread = 0.2;
    int n_subjects = 8;
    int repetitions = 5;  // each repetition yields one intent and one unconscious trial
    int objects_per_scene = 3;
    std::uint64_t seed = 42;
    SceneGeometry geometry;

    void validate() const;
};

struct SubjectTraits {
    std::string id;
    double sigma_mult = 1.0;
    double duration_mult = 1.0;
};

struct TaskFamily {
    std::string name;
    std::vector<std::string> targets;  // in gaze order
    std::string intention;
};

// fetch, put-into, water-plants, toggle-switch, pour-water.
const std::vector<TaskFamily>& task_families();
const TaskFamily& task_family(const std::string& name);

// Catalog entry for a label (kind and contents).
world::WorldObject catalog_object(const std::string& label);

struct Trial {
    std::string subject_id;
    std::string trial_id;
    int repetition = 0;  // 0-based
    bool intent = false;
    std::string task;
    std::vector<std::string> targets;
    double sigma_px = 0.0;  // subject jitter sigma
    world::WorldState world;
    std::vector<GazeSample> gaze;
    std::vector<FrameRecord> frames;
    std::vector<std::optional<std::string>> marks;  // per frame: target being fixated
};

struct Dataset {
    SyntheticProfile profile;
    std::vector<SubjectTraits> subjects;
    std::vector<Trial> trials;
};

Dataset generate_dataset(const SyntheticProfile& profile);

// subjects/<sid>/trials/<tid>/{gaze.jsonl, frames.jsonl, marks.jsonl, meta.json}
void write_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

// Static scene at 30 Hz: every frame carries the mock detections of `world`.
std::vector<FrameRecord> scene_frames(const world::WorldState& world, const SceneGeometry& geometry,
                                      std::size_t n_frames);

// Per-frame intent marks for one object.
std::vector<std::optional<bool>> object_marks(const Trial& trial, const std::string& object_id);

// Builds gaze traces from fixation/saccade/blink segments.
class GazeScript {
public:
    GazeScript(std::uint64_t seed, double sigma_px, SceneGeometry geometry);

    std::int64_t now() const { return now_; }
    Point position() const { return pos_; }

    void fixate(Point p, std::int64_t dur_us, std::optional<std::string> mark = std::nullopt);
    void saccade(Point to, std::int64_t dur_us);
    void blink(std::int64_t dur_us, std::optional<std::string> mark = std::nullopt);
    // Fixation where every sample sits exactly on p (no jitter).
    void hold(Point p, std::int64_t dur_us);

    // Samples every gaze period over [0, end_us).
    std::vector<GazeSample> render(std::int64_t end_us);
    // Frame is marked with a label when every segment overlapping it carries it.
    std::vector<std::optional<std::string>> frame_marks(std::size_t n_frames) const;

private:
    struct Segment {
        enum class Kind { fixation, saccade, blink, hold } kind;
        std::int64_t t0 = 0;
        std::int64_t t1 = 0;
        Point a, b;
        std::optional<std::string> mark;
    };

    std::mt19937_64 rng_;
    double sigma_;
    SceneGeometry geometry_;
    std::int64_t now_ = 0;
    Point pos_{};
    std::vector<Segment> segments_;
};

// Separable sanity fixture: intent windows have ratio ~8, others ~0.1.
std::vector<features::FeatureWindow> separable_windows(std::size_t n, int sw, std::uint64_t seed);

}  // namespace gaze::synth
