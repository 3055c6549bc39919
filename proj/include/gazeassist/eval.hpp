#pragma once

// Evaluation: fixation-dwell baseline, trial/subject cross-validation and
// stage-gated system runs over scripted sessions.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gazeassist/features.hpp"
#include "gazeassist/intent_net.hpp"
#include "gazeassist/session.hpp"
#include "gazeassist/synthetic.hpp"

namespace gaze::eval {

// ---- metrics and baseline ---------------------------------------------------

// Fraction of matching entries. Throws DataError on empty or unequal inputs.
double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct BaselineConfig {
    std::int64_t dwell_us = 500'000;
    double margin_px = 20.0;

    // Consecutive 30 Hz frames needed to cover the dwell.
    int min_run_frames() const;
};

// Per frame: fresh (not carried) gaze inside the margin-expanded box.
std::vector<bool> in_box_frames(const perception::ObjectTrack& track,
                                std::span<const std::optional<AlignedGaze>> gaze, double margin_px);

// 1 iff frames [start, start + sw) contain a run of >= min_run_frames in-box frames.
int fixation_window(const std::vector<bool>& in_box, std::size_t start, int sw, int min_run_frames);

// One prediction per window start of the track.
std::vector<int> fixation_baseline(const perception::ObjectTrack& track,
                                   std::span<const std::optional<AlignedGaze>> gaze,
                                   std::span<const std::size_t> window_starts, int sw,
                                   const BaselineConfig& config = {});

// ---- cross-validation splits ------------------------------------------------

struct TrialKey {
    std::string subject;
    std::string trial;
    int repetition = 0;
};

struct Split {
    std::string name;
    std::vector<std::size_t> train;  // trial indices
    std::vector<std::size_t> test;
};

// Fold i tests every trial of repetition i. Throws DataError with fewer than
// `folds` repetitions.
std::vector<Split> five_fold_by_trial(std::span<const TrialKey> trials, int folds = 5);
// One split per subject. Throws DataError with fewer than two subjects.
std::vector<Split> loso(std::span<const TrialKey> trials);

// Throws DataError unless each split partitions [0, n) into disjoint train and
// test sets and the test sets of all splits partition [0, n).
void check_partition(std::span<const Split> splits, std::size_t n_trials);

// ---- prepared data ----------------------------------------------------------

struct PreparedTrial {
    TrialKey key;
    std::vector<features::FeatureWindow> windows;  // labeled
    std::vector<int> baseline;                     // one per window
};

std::vector<PreparedTrial> prepare_trials(const synth::Dataset& dataset,
                                          const features::FeatureConfig& features = {},
                                          const BaselineConfig& baseline = {});

std::vector<TrialKey> keys_of(std::span<const PreparedTrial> trials);

// Throws DataError when a training window comes from a test trial (or, with
// by_subject, from a test subject).
void check_no_leakage(const Split& split, std::span<const PreparedTrial> trials, bool by_subject);

struct EvalConfig {
    net::TrainConfig train;
    net::ModelConfig model;

    EvalConfig();
};

struct FoldResult {
    std::string name;
    std::size_t train_windows = 0;
    std::size_t test_windows = 0;
    double network_accuracy = 0.0;
    double baseline_accuracy = 0.0;
    double seconds = 0.0;
};

struct CvReport {
    std::string mode;  // fivefold | loso
    std::vector<FoldResult> folds;

    double network_mean() const;
    double network_std() const;
    double baseline_mean() const;
    double baseline_std() const;
    nlohmann::json to_json() const;
    std::string table() const;
};

using Progress = std::function<void(const FoldResult&)>;

CvReport cross_validate(std::span<const PreparedTrial> trials, const std::string& mode,
                        const EvalConfig& config, const Progress& progress = {});

// ---- system evaluation ------------------------------------------------------

struct ScriptedSession {
    std::string family;
    std::string expected_intention;
    world::WorldState world;
    std::vector<GazeSample> gaze;
    std::vector<FrameRecord> frames;
    std::string predicate;  // human-readable final-world check
    std::function<bool(const world::WorldState&)> check;
};

// Kettle/cup/plant/banana/switch scenes with objects in the middle band, gaze
// dwelling on the targets in order, resting on an empty spot and then agreeing
// in the bottom band.
ScriptedSession scripted_session(const std::string& family, std::uint64_t seed = 7,
                                 const SceneGeometry& geometry = {});
std::vector<ScriptedSession> scripted_sessions(std::uint64_t seed = 7,
                                               const SceneGeometry& geometry = {});

// Feeds frames and gaze in time order, then signals end of stream.
void drive(service::Session& session, std::span<const GazeSample> gaze,
           std::span<const FrameRecord> frames);

struct StageCounts {
    int s = 0;
    int all = 0;
    std::string str() const { return std::to_string(s) + "/" + std::to_string(all); }
};

struct StageRow {
    std::string family;
    StageCounts overall, recognition, plan, execution;
};

struct SessionOutcome {
    std::string family;
    std::string session_id;
    service::Phase terminal = service::Phase::observing;
    bool recognized = false;
    bool planned = false;
    bool executed = false;
    int attempts = 0;
    std::vector<service::SessionEvent> events;
};

struct StageReport {
    std::vector<StageRow> rows;
    std::vector<SessionOutcome> sessions;

    StageRow total() const;
    nlohmann::json to_json() const;
    std::string table() const;
};

struct PipelineConfig {
    service::SessionConfig session;
    std::shared_ptr<const net::ModelParams> model;
    std::function<std::shared_ptr<inference::LlmClient>()> make_client;
    std::optional<std::filesystem::path> log_dir;  // logs/<session-id>.jsonl
    std::string id_prefix = "eval";
};

StageReport run_system_eval(std::span<const ScriptedSession> sessions, const PipelineConfig& pipeline);

// Intent model for sessions: trained on a generated dataset with the given
// epochs. Deterministic for fixed arguments.
net::ModelParams train_session_model(const synth::SyntheticProfile& profile, int epochs,
                                     std::uint64_t seed = 0);

}  // namespace gaze::eval
