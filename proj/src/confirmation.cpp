#include "gazeassist/confirmation.hpp"

#include "gazeassist/error.hpp"

namespace gaze::confirmation {

std::string to_string(Region r) {
    switch (r) {
        case Region::area1: return "area1";
        case Region::area2: return "area2";
        case Region::area3: return "area3";
        case Region::off: return "off";
    }
    return "off";
}

std::string to_string(Phase p) {
    switch (p) {
        case Phase::asking: return "asking";
        case Phase::dwelling_agree: return "dwelling_agree";
        case Phase::dwelling_reject: return "dwelling_reject";
        case Phase::confirmed: return "confirmed";
        case Phase::rejected: return "rejected";
        case Phase::timed_out: return "timed_out";
    }
    return "asking";
}

void RegionLayout::validate() const {
    if (!(height > 0.0)) throw ConfigError("region layout height must be positive");
}

void ConfirmationConfig::validate() const {
    if (dwell_us <= 0) throw ConfigError("dwell must be positive");
    if (timeout_us <= 0) throw ConfigError("timeout must be positive");
    layout.validate();
}

Region classify_region(Point gaze, const RegionLayout& layout) {
    if (gaze.y < 0.0 || gaze.y > layout.height) return Region::off;
    if (gaze.y < layout.upper()) return Region::area1;
    if (gaze.y < layout.lower()) return Region::area2;
    return Region::area3;
}

Region classify_region(const GazeSample& sample, const RegionLayout& layout) {
    if (!sample.on_screen) return Region::off;
    return classify_region(Point{sample.gx, sample.gy}, layout);
}

ConfirmationState begin(int rank, std::int64_t now_us, const ConfirmationConfig& config) {
    ConfirmationState s;
    s.rank = rank;
    s.started_us = now_us;
    s.dwell_start_us = now_us;
    s.deadline_us = now_us + config.timeout_us;
    return s;
}

ConfirmationState step(const ConfirmationState& state, const GazeSample& sample,
                       std::int64_t now_us, const ConfirmationConfig& config) {
    if (is_terminal(state.phase)) return state;
    ConfirmationState s = state;
    if (now_us > s.deadline_us) {
        s.phase = Phase::timed_out;
        return s;
    }
    const Region r = classify_region(sample, config.layout);
    const auto dwell = [&](Phase dwelling, Phase done) {
        if (s.phase == dwelling) {
            if (now_us - s.dwell_start_us >= config.dwell_us) s.phase = done;
        } else {
            s.phase = dwelling;
            s.dwell_start_us = now_us;
        }
    };
    if (r == Region::area3) {
        dwell(Phase::dwelling_agree, Phase::confirmed);
    } else if (r == Region::area1) {
        dwell(Phase::dwelling_reject, Phase::rejected);
    } else {
        s.phase = Phase::asking;
        s.dwell_start_us = now_us;
    }
    return s;
}

std::int64_t dwell_elapsed(const ConfirmationState& state, std::int64_t now_us) {
    if (state.phase != Phase::dwelling_agree && state.phase != Phase::dwelling_reject) return 0;
    return now_us - state.dwell_start_us;
}

std::string question(const inference::IntentProposal& proposal) {
    return "Is your intention " + proposal.description + "?";
}

ConfirmationLoop::ConfirmationLoop(std::vector<inference::IntentProposal> proposals,
                                   std::int64_t now_us, ConfirmationConfig config)
    : proposals_(std::move(proposals)), config_(config) {
    config_.validate();
    if (proposals_.empty()) throw InferenceError("confirmation needs at least one proposal");
    state_ = begin(proposals_.front().rank, now_us, config_);
    trajectory_.push_back({now_us, state_});
}

void ConfirmationLoop::advance(const ConfirmationState& next, std::int64_t t_us,
                               std::vector<Transition>& out) {
    if (next.phase != state_.phase) out.push_back({t_us, next});
    state_ = next;
    if (state_.phase == Phase::confirmed) {
        accepted_ = proposals_[index_];
        finished_ = true;
    } else if (is_terminal(state_.phase)) {
        if (++index_ >= proposals_.size()) {
            index_ = proposals_.size() - 1;
            finished_ = true;
        } else {
            state_ = begin(proposals_[index_].rank, t_us, config_);
            out.push_back({t_us, state_});
        }
    }
    trajectory_.insert(trajectory_.end(), out.begin(), out.end());
}

std::vector<Transition> ConfirmationLoop::feed(const GazeSample& sample) {
    std::vector<Transition> out;
    if (finished_) return out;
    advance(step(state_, sample, sample.t_us, config_), sample.t_us, out);
    return out;
}

std::vector<Transition> ConfirmationLoop::expire(std::int64_t now_us) {
    std::vector<Transition> out;
    if (finished_ || now_us <= state_.deadline_us) return out;
    ConfirmationState next = state_;
    next.phase = Phase::timed_out;
    advance(next, now_us, out);
    return out;
}

ConfirmationResult run_confirmation(const std::vector<inference::IntentProposal>& proposals,
                                    std::span<const GazeSample> stream,
                                    const ConfirmationConfig& config) {
    if (proposals.empty()) throw InferenceError("confirmation needs at least one proposal");
    const std::int64_t t0 = stream.empty() ? 0 : stream.front().t_us;
    ConfirmationLoop loop(proposals, t0, config);
    for (const auto& s : stream) {
        loop.feed(s);
        if (loop.finished()) break;
    }
    return ConfirmationResult{loop.accepted(), loop.trajectory(), !loop.finished()};
}

}  // namespace gaze::confirmation
