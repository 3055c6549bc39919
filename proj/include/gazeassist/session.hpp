#pragma once

// One interaction session: perception -> per-object intent -> LLM inference ->
// gaze confirmation -> planning -> simulated execution, with an append-only
// event log that can be replayed offline.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gazeassist/confirmation.hpp"
#include "gazeassist/features.hpp"
#include "gazeassist/inference.hpp"
#include "gazeassist/intent_net.hpp"
#include "gazeassist/perception.hpp"
#include "gazeassist/planner.hpp"
#include "gazeassist/world.hpp"

namespace gaze::service {

enum class Phase { observing, inferring, confirming, planning, executing, done, aborted };

std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);
bool is_terminal(Phase p);
bool legal_transition(Phase from, Phase to);

inline constexpr const char* kEventSchema = "event-v1";

struct SessionEvent {
    std::int64_t seq = 0;
    std::int64_t t_us = 0;
    std::string kind;
    nlohmann::json payload;
};

nlohmann::json to_json(const SessionEvent& e, const std::string& session_id);
SessionEvent event_from_json(const nlohmann::json& j);

struct SessionConfig {
    features::FeatureConfig features;
    int debounce_windows = 2;           // consecutive positive windows to accept an object
    std::int64_t quiet_us = 1'500'000;  // no new positives before inference fires
    confirmation::ConfirmationConfig confirmation;
    planner::ExecConfig execution;
    perception::TrackerConfig tracker;

    void validate() const;
};

struct SessionDeps {
    std::shared_ptr<const net::ModelParams> model;
    std::shared_ptr<inference::LlmClient> client;
    world::WorldState world;
};

using EventSink = std::function<void(const SessionEvent&)>;

// Not thread-safe; callers serialize access.
class Session {
public:
    Session(std::string id, SessionConfig config, SessionDeps deps, EventSink sink = {});

    // Inputs must arrive in time order. Gaze is aligned to a frame once the
    // next frame arrives.
    void push_gaze(const GazeSample& sample);
    void push_frame(const FrameRecord& frame);
    void end_of_stream(std::int64_t t_us);
    void abort(const std::string& cause, std::int64_t t_us);

    const std::string& id() const { return id_; }
    Phase phase() const { return phase_; }
    const std::vector<SessionEvent>& events() const { return events_; }
    const world::WorldState& world() const { return world_; }
    const std::vector<inference::IntentProposal>& proposals() const { return proposals_; }
    const std::optional<inference::IntentProposal>& accepted() const { return accepted_; }
    const std::optional<planner::ActionPlan>& plan() const { return plan_; }
    const std::optional<planner::ExecutionResult>& execution() const { return execution_; }
    const std::string& abort_cause() const { return abort_cause_; }
    bool planning_failed() const { return planning_failed_; }

    nlohmann::json snapshot() const;

private:
    struct ObjectState {
        std::deque<std::optional<features::FeatureFrame>> frames;  // last sw frames
        int consecutive = 0;
        std::optional<std::int64_t> run_start_us;
    };

    void emit(std::int64_t t_us, const std::string& kind, nlohmann::json payload);
    void set_phase(Phase next, std::int64_t t_us, const std::string& cause = {});
    void finalize_pending_frame(std::int64_t next_frame_t_us);
    void score_windows(std::int64_t t_us);
    void run_inference(std::int64_t t_us);
    void feed_confirmation(const GazeSample& sample);
    void finish_confirmation(std::int64_t t_us);
    void run_planning_and_execution(std::int64_t t_us);
    void reset_observation();
    void fail(const std::string& cause, std::int64_t t_us);

    std::string id_;
    SessionConfig config_;
    SessionDeps deps_;
    EventSink sink_;
    world::WorldState world_;

    Phase phase_ = Phase::observing;
    std::vector<SessionEvent> events_;
    std::int64_t last_t_us_ = 0;

    perception::Tracker tracker_;
    std::optional<FrameRecord> pending_frame_;
    std::vector<GazeSample> pending_gaze_;
    std::optional<AlignedGaze> last_gaze_;
    std::int64_t observed_frames_ = 0;
    std::map<std::string, ObjectState> objects_;
    inference::GazedObjectSequence sequence_;
    std::optional<std::int64_t> last_positive_us_;

    std::vector<inference::IntentProposal> proposals_;
    std::optional<confirmation::ConfirmationLoop> confirm_;
    std::optional<inference::IntentProposal> accepted_;
    std::optional<planner::ActionPlan> plan_;
    std::optional<planner::ExecutionResult> execution_;
    std::string abort_cause_;
    bool planning_failed_ = false;
};

// Writes each event as one JSON line to a fresh file.
EventSink file_sink(const std::filesystem::path& path, const std::string& session_id);

std::vector<SessionEvent> read_event_log(std::istream& in);
std::vector<SessionEvent> read_event_log(const std::filesystem::path& path);

struct ReplayResult {
    std::string session_id;
    std::vector<Phase> trajectory;
    nlohmann::json decisions = nlohmann::json::array();  // kind + payload of every decision event
    Phase terminal = Phase::observing;
    std::vector<std::string> llm_replies;
};

// Validates seq order, schema and phase legality and reconstructs the phase
// trajectory and decisions. Never contacts a language model. Throws
// ReplayError naming the offending seq.
ReplayResult replay(const std::vector<nlohmann::json>& lines);
ReplayResult replay(std::istream& in);
ReplayResult replay_file(const std::filesystem::path& path);

// Decisions recorded by a live session, in the same shape replay() returns.
nlohmann::json decisions_of(const std::vector<SessionEvent>& events);

// Serves recorded replies in order; throws InferenceError when exhausted.
class ReplayClient : public inference::LlmClient {
public:
    // `kind` can be set to the recorded client kind so the rerun log matches.
    explicit ReplayClient(std::vector<std::string> replies, std::string kind = "replay")
        : replies_(std::move(replies)), kind_(std::move(kind)) {}
    std::string complete(const std::vector<inference::ChatMessage>& messages) override;
    std::string kind() const override { return kind_; }

private:
    std::vector<std::string> replies_;
    std::string kind_;
    std::size_t next_ = 0;
};

// Safety scan over one log: no executing phase before a confirmed decision,
// and substance totals conserved by every execution.
struct SafetyReport {
    bool executing_without_confirmation = false;
    bool conservation_violated = false;
    double max_conservation_error = 0.0;
    std::size_t executions = 0;
};
SafetyReport scan_log_safety(const std::vector<SessionEvent>& events);

}  // namespace gaze::service
