#pragma once

// Three-band gaze confirmation: top band rejects, bottom band agrees, middle is
// neutral. A decision needs an uninterrupted dwell in one band.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gazeassist/inference.hpp"
#include "gazeassist/perception.hpp"

namespace gaze::confirmation {

enum class Region { area1, area2, area3, off };

std::string to_string(Region r);

struct RegionLayout {
    double height = 1080.0;

    double upper() const { return height / 3.0; }        // area1 | area2
    double lower() const { return 2.0 * height / 3.0; }  // area2 | area3
    void validate() const;
};

Region classify_region(Point gaze, const RegionLayout& layout);
Region classify_region(const GazeSample& sample, const RegionLayout& layout);

enum class Phase { asking, dwelling_agree, dwelling_reject, confirmed, rejected, timed_out };

std::string to_string(Phase p);
inline bool is_terminal(Phase p) {
    return p == Phase::confirmed || p == Phase::rejected || p == Phase::timed_out;
}

struct ConfirmationConfig {
    std::int64_t dwell_us = 800'000;
    std::int64_t timeout_us = 10'000'000;
    RegionLayout layout;

    void validate() const;
};

struct ConfirmationState {
    Phase phase = Phase::asking;
    int rank = 1;
    std::int64_t started_us = 0;
    std::int64_t dwell_start_us = 0;  // meaningful while dwelling
    std::int64_t deadline_us = 0;

    bool operator==(const ConfirmationState&) const = default;
};

ConfirmationState begin(int rank, std::int64_t now_us, const ConfirmationConfig& config);

// Pure transition. The deadline is checked before the dwell, so a sample past
// the deadline times out even if it would have completed a dwell.
ConfirmationState step(const ConfirmationState& state, const GazeSample& sample,
                       std::int64_t now_us, const ConfirmationConfig& config);

// Accumulated dwell toward the current decision, for progress display.
std::int64_t dwell_elapsed(const ConfirmationState& state, std::int64_t now_us);

std::string question(const inference::IntentProposal& proposal);

struct Transition {
    std::int64_t t_us = 0;
    ConfirmationState state;
};

// Offers proposals in rank order. Rejected and timed-out proposals advance to
// the next one; the loop finishes on the first confirmation or when every
// proposal is exhausted.
class ConfirmationLoop {
public:
    ConfirmationLoop(std::vector<inference::IntentProposal> proposals, std::int64_t now_us,
                     ConfirmationConfig config = {});

    // Returns the transitions caused by this sample (empty if nothing changed).
    std::vector<Transition> feed(const GazeSample& sample);
    // Times out the current proposal when `now_us` is past its deadline; lets
    // a clock tick expire a proposal while no gaze arrives.
    std::vector<Transition> expire(std::int64_t now_us);

    bool finished() const { return finished_; }
    const std::optional<inference::IntentProposal>& accepted() const { return accepted_; }
    const ConfirmationState& state() const { return state_; }
    const inference::IntentProposal& current() const { return proposals_[index_]; }
    const std::vector<Transition>& trajectory() const { return trajectory_; }
    std::size_t index() const { return index_; }

private:
    void advance(const ConfirmationState& next, std::int64_t t_us, std::vector<Transition>& out);

    std::vector<inference::IntentProposal> proposals_;
    ConfirmationConfig config_;
    std::size_t index_ = 0;
    ConfirmationState state_;
    bool finished_ = false;
    std::optional<inference::IntentProposal> accepted_;
    std::vector<Transition> trajectory_;
};

struct ConfirmationResult {
    std::optional<inference::IntentProposal> accepted;  // empty means all rejected
    std::vector<Transition> trajectory;
    bool stream_exhausted = false;  // gaze ran out before a decision
};

ConfirmationResult run_confirmation(const std::vector<inference::IntentProposal>& proposals,
                                    std::span<const GazeSample> stream,
                                    const ConfirmationConfig& config = {});

}  // namespace gaze::confirmation
