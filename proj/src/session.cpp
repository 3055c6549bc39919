#include "gazeassist/session.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "gazeassist/error.hpp"

namespace gaze::service {

using nlohmann::json;

std::string to_string(Phase p) {
    switch (p) {
        case Phase::observing: return "observing";
        case Phase::inferring: return "inferring";
        case Phase::confirming: return "confirming";
        case Phase::planning: return "planning";
        case Phase::executing: return "executing";
        case Phase::done: return "done";
        case Phase::aborted: return "aborted";
    }
    return "aborted";
}

Phase phase_from_string(const std::string& s) {
    for (Phase p : {Phase::observing, Phase::inferring, Phase::confirming, Phase::planning,
                    Phase::executing, Phase::done, Phase::aborted}) {
        if (to_string(p) == s) return p;
    }
    throw DataError("unknown phase '" + s + "'");
}

bool is_terminal(Phase p) { return p == Phase::done || p == Phase::aborted; }

bool legal_transition(Phase from, Phase to) {
    if (is_terminal(from)) return false;
    if (to == Phase::aborted) return true;
    switch (from) {
        case Phase::observing: return to == Phase::inferring;
        case Phase::inferring: return to == Phase::confirming;
        case Phase::confirming: return to == Phase::planning || to == Phase::observing;
        case Phase::planning: return to == Phase::executing;
        case Phase::executing: return to == Phase::done;
        default: return false;
    }
}

json to_json(const SessionEvent& e, const std::string& session_id) {
    return json{{"schema", kEventSchema}, {"session", session_id}, {"seq", e.seq},
                {"t_us", e.t_us},         {"kind", e.kind},        {"payload", e.payload}};
}

SessionEvent event_from_json(const json& j) {
    SessionEvent e;
    e.seq = j.at("seq").get<std::int64_t>();
    e.t_us = j.at("t_us").get<std::int64_t>();
    e.kind = j.at("kind").get<std::string>();
    e.payload = j.value("payload", json::object());
    return e;
}

void SessionConfig::validate() const {
    features.validate();
    confirmation.validate();
    if (debounce_windows < 1) throw ConfigError("debounce must be at least one window");
    if (quiet_us < 0) throw ConfigError("quiet period must be non-negative");
    if (execution.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
}

namespace {

json proposal_json(const inference::IntentProposal& p) {
    return json{{"rank", p.rank}, {"description", p.description}, {"source_objects", p.source_objects}};
}

json totals_json(const std::map<std::string, double>& totals) {
    json j = json::object();
    for (const auto& [k, v] : totals) j[k] = v;
    return j;
}

}  // namespace

Session::Session(std::string id, SessionConfig config, SessionDeps deps, EventSink sink)
    : id_(std::move(id)),
      config_(std::move(config)),
      deps_(std::move(deps)),
      sink_(std::move(sink)),
      world_(deps_.world),
      tracker_(config_.tracker) {
    config_.validate();
    if (!deps_.model) throw ConfigError("session needs an intent model");
    if (!deps_.client) throw ConfigError("session needs a language-model client");
    if (deps_.model->config.n_heads < 1) throw ConfigError("bad intent model");
    world_.check_invariants();
    emit(0, "session_started",
         json{{"world", world::world_to_json(world_)},
              {"client", deps_.client->kind()},
              {"config",
               {{"sw", config_.features.sw},
                {"stride", config_.features.stride},
                {"debounce_windows", config_.debounce_windows},
                {"quiet_us", config_.quiet_us},
                {"dwell_us", config_.confirmation.dwell_us},
                {"timeout_us", config_.confirmation.timeout_us},
                {"region_height", config_.confirmation.layout.height},
                {"max_attempts", config_.execution.max_attempts}}}});
    emit(0, "phase", json{{"from", nullptr}, {"to", to_string(Phase::observing)}});
}

void Session::emit(std::int64_t t_us, const std::string& kind, json payload) {
    last_t_us_ = std::max(last_t_us_, t_us);
    SessionEvent e{static_cast<std::int64_t>(events_.size()), last_t_us_, kind, std::move(payload)};
    events_.push_back(e);
    if (sink_) sink_(events_.back());
}

void Session::set_phase(Phase next, std::int64_t t_us, const std::string& cause) {
    if (!legal_transition(phase_, next)) {
        throw std::logic_error("illegal phase transition " + to_string(phase_) + " -> " +
                               to_string(next));
    }
    json p{{"from", to_string(phase_)}, {"to", to_string(next)}};
    if (!cause.empty()) p["cause"] = cause;
    phase_ = next;
    emit(t_us, "phase", std::move(p));
}

void Session::fail(const std::string& cause, std::int64_t t_us) {
    abort_cause_ = cause;
    emit(t_us, "aborted", json{{"cause", cause}});
    set_phase(Phase::aborted, t_us, cause);
}

void Session::abort(const std::string& cause, std::int64_t t_us) {
    if (is_terminal(phase_)) return;
    fail(cause, t_us);
}

void Session::end_of_stream(std::int64_t t_us) {
    if (is_terminal(phase_)) return;
    fail("stream_end", t_us);
}

void Session::push_gaze(const GazeSample& sample) {
    if (is_terminal(phase_)) return;
    if (sample.t_us < last_t_us_) {
        throw StreamOrderError("gaze sample at " + std::to_string(sample.t_us) +
                               " us arrived after " + std::to_string(last_t_us_) + " us");
    }
    if (phase_ == Phase::observing) {
        pending_gaze_.push_back(sample);
    } else if (phase_ == Phase::confirming) {
        feed_confirmation(sample);
    }
}

void Session::push_frame(const FrameRecord& frame) {
    if (is_terminal(phase_)) return;
    if (frame.t_us < last_t_us_ || (pending_frame_ && frame.t_us <= pending_frame_->t_us)) {
        throw StreamOrderError("frame " + std::to_string(frame.frame_idx) + " is out of order");
    }
    last_t_us_ = std::max(last_t_us_, frame.t_us);
    if (phase_ == Phase::confirming) {
        // A clock tick without gaze still lets the current question expire.
        for (const auto& tr : confirm_->expire(frame.t_us)) {
            emit(tr.t_us, "confirmation_phase",
                 json{{"rank", tr.state.rank},
                      {"phase", confirmation::to_string(tr.state.phase)},
                      {"question", confirmation::question(proposals_[static_cast<std::size_t>(tr.state.rank - 1)])}});
        }
        if (confirm_->finished()) finish_confirmation(frame.t_us);
        return;
    }
    if (phase_ != Phase::observing) return;
    if (pending_frame_) finalize_pending_frame(frame.t_us);
    pending_frame_ = frame;
    if (!sequence_.empty() && last_positive_us_ && frame.t_us - *last_positive_us_ >= config_.quiet_us) {
        run_inference(frame.t_us);
    }
}

void Session::finalize_pending_frame(std::int64_t next_frame_t_us) {
    const FrameRecord& f = *pending_frame_;
    double sx = 0.0;
    double sy = 0.0;
    int n = 0;
    std::size_t consumed = 0;
    for (const auto& g : pending_gaze_) {
        if (g.t_us >= next_frame_t_us) break;
        ++consumed;
        if (g.t_us < f.t_us || !g.on_screen) continue;
        sx += g.gx;
        sy += g.gy;
        ++n;
    }
    pending_gaze_.erase(pending_gaze_.begin(), pending_gaze_.begin() + static_cast<std::ptrdiff_t>(consumed));
    std::optional<AlignedGaze> gaze;
    if (n > 0) {
        gaze = AlignedGaze{{sx / n, sy / n}, false};
        last_gaze_ = gaze;
    } else if (last_gaze_) {
        gaze = AlignedGaze{last_gaze_->point, true};
    }

    tracker_.update(f);
    for (const auto& [id, track] : tracker_.tracks()) {
        auto& st = objects_[id];
        std::optional<features::FeatureFrame> ff;
        if (gaze && !track.boxes.empty() && track.boxes.back()) {
            ff = features::feature_frame(*track.boxes.back(), gaze->point, config_.features);
        }
        st.frames.push_back(ff);
        while (st.frames.size() > static_cast<std::size_t>(config_.features.sw)) st.frames.pop_front();
    }
    ++observed_frames_;
    const int sw = config_.features.sw;
    if (observed_frames_ >= sw && (observed_frames_ - sw) % config_.features.stride == 0) {
        score_windows(f.t_us);
    }
}

void Session::score_windows(std::int64_t t_us) {
    const int sw = config_.features.sw;
    std::vector<features::FeatureWindow> windows;
    std::vector<std::string> ids;
    for (auto& [id, st] : objects_) {
        const bool full = st.frames.size() == static_cast<std::size_t>(sw) &&
                          std::all_of(st.frames.begin(), st.frames.end(),
                                      [](const auto& f) { return f.has_value(); });
        if (!full) {
            st.consecutive = 0;
            continue;
        }
        features::FeatureWindow w;
        w.object_id = id;
        w.start_frame = observed_frames_ - sw;
        w.sw = sw;
        for (const auto& f : st.frames) {
            w.values.push_back(f->gx);
            w.values.push_back(f->gy);
            w.values.push_back(f->ratio);
        }
        windows.push_back(std::move(w));
        ids.push_back(id);
    }
    if (windows.empty()) return;
    const auto preds = net::predict_all(windows, *deps_.model);
    json scores = json::object();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        scores[ids[i]] = {{"y_hat", preds[i].y_hat}, {"intent", preds[i].decided}};
    }
    emit(t_us, "window_scores", json{{"window_start", observed_frames_ - sw}, {"scores", scores}});

    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto& st = objects_[ids[i]];
        if (!preds[i].decided) {
            st.consecutive = 0;
            st.run_start_us.reset();
            continue;
        }
        if (st.consecutive++ == 0) st.run_start_us = t_us;
        last_positive_us_ = t_us;
        if (st.consecutive >= config_.debounce_windows) {
            const auto& label = tracker_.tracks().at(ids[i]).label;
            const auto before = sequence_.size();
            sequence_.add(label, *st.run_start_us);
            if (sequence_.size() != before) {
                emit(t_us, "object_accumulated",
                     json{{"object_id", ids[i]}, {"label", label}, {"first_positive_us", *st.run_start_us},
                          {"sequence", sequence_.labels()}});
            }
        }
    }
}

void Session::run_inference(std::int64_t t_us) {
    set_phase(Phase::inferring, t_us);
    const auto prompt = inference::build_prompt(sequence_);
    emit(t_us, "llm_request", json{{"purpose", "intent"}, {"system", prompt.system}, {"user", prompt.user}});
    inference::InferenceTrace trace;
    std::vector<inference::IntentProposal> proposals;
    try {
        proposals = inference::infer_intentions(prompt, *deps_.client, &trace);
    } catch (const Error& e) {
        for (const auto& r : trace.replies) emit(t_us, "llm_reply", json{{"purpose", "intent"}, {"text", r}});
        fail(std::string("inference_error: ") + e.what(), t_us);
        return;
    }
    for (const auto& r : trace.replies) emit(t_us, "llm_reply", json{{"purpose", "intent"}, {"text", r}});

    std::set<std::string> present;
    for (const auto& [label, o] : world_.objects) present.insert(label);
    for (const auto& [id, track] : tracker_.tracks()) present.insert(track.label);
    json removed = json::array();
    proposals_.clear();
    for (auto& p : proposals) {
        const auto refs = inference::referenced_labels(p.description);
        std::vector<std::string> absent;
        for (const auto& r : refs) {
            if (!present.count(r)) absent.push_back(r);
        }
        if (absent.empty()) {
            p.rank = static_cast<int>(proposals_.size()) + 1;
            proposals_.push_back(p);
        } else {
            removed.push_back({{"description", p.description}, {"absent", absent}});
        }
    }
    json listed = json::array();
    for (const auto& p : proposals_) listed.push_back(proposal_json(p));
    emit(t_us, "proposals", json{{"sequence", sequence_.labels()}, {"proposals", listed}});
    if (!removed.empty()) emit(t_us, "proposals_filtered", json{{"removed", removed}});

    set_phase(Phase::confirming, t_us);
    if (proposals_.empty()) {
        emit(t_us, "confirmation_result", json{{"outcome", "all_rejected"}, {"reason", "no_valid_proposals"}});
        set_phase(Phase::observing, t_us, "all_rejected");
        reset_observation();
        return;
    }
    confirm_.emplace(proposals_, t_us, config_.confirmation);
    const auto& st = confirm_->state();
    emit(t_us, "confirmation_phase",
         json{{"rank", st.rank},
              {"phase", confirmation::to_string(st.phase)},
              {"question", confirmation::question(confirm_->current())},
              {"deadline_us", st.deadline_us}});
    auto leftover = std::move(pending_gaze_);
    pending_gaze_.clear();
    for (const auto& g : leftover) {
        if (phase_ != Phase::confirming) break;
        if (g.t_us >= t_us) feed_confirmation(g);
    }
}

void Session::feed_confirmation(const GazeSample& sample) {
    for (const auto& tr : confirm_->feed(sample)) {
        json p{{"rank", tr.state.rank},
               {"phase", confirmation::to_string(tr.state.phase)},
               {"question", confirmation::question(proposals_[static_cast<std::size_t>(tr.state.rank - 1)])}};
        if (tr.state.phase == confirmation::Phase::asking) p["deadline_us"] = tr.state.deadline_us;
        emit(tr.t_us, "confirmation_phase", std::move(p));
    }
    if (confirm_->finished()) finish_confirmation(sample.t_us);
}

void Session::finish_confirmation(std::int64_t t_us) {
    accepted_ = confirm_->accepted();
    confirm_.reset();
    if (accepted_) {
        emit(t_us, "confirmation_result", json{{"outcome", "confirmed"}, {"proposal", proposal_json(*accepted_)}});
        set_phase(Phase::planning, t_us);
        run_planning_and_execution(t_us);
    } else {
        emit(t_us, "confirmation_result", json{{"outcome", "all_rejected"}, {"reason", "user_rejected"}});
        set_phase(Phase::observing, t_us, "all_rejected");
        reset_observation();
    }
}

void Session::run_planning_and_execution(std::int64_t t_us) {
    const std::string intention = accepted_->description;
    emit(t_us, "llm_request", json{{"purpose", "plan"}, {"intention", intention}});
    planner::PlanTrace trace;
    try {
        plan_ = planner::plan(intention, world_, *deps_.client, &trace);
    } catch (const Error& e) {
        for (const auto& r : trace.replies) emit(t_us, "llm_reply", json{{"purpose", "plan"}, {"text", r}});
        planning_failed_ = true;
        emit(t_us, "plan_failed", json{{"intention", intention}, {"error", e.what()}});
        fail("planning_error", t_us);
        return;
    }
    for (const auto& r : trace.replies) emit(t_us, "llm_reply", json{{"purpose", "plan"}, {"text", r}});
    emit(t_us, "plan", json{{"intention", intention}, {"source", plan_->source},
                            {"steps", planner::steps_to_json(plan_->steps)}});

    set_phase(Phase::executing, t_us);
    execution_ = planner::execute(*plan_, world_, config_.execution);
    for (const auto& o : execution_->outcomes) {
        emit(t_us, "step", json{{"attempt", o.attempt}, {"index", o.step}, {"api", o.action.api},
                                {"args", o.action.args}, {"ok", o.ok}, {"detail", o.detail}});
    }
    world_ = execution_->world;
    emit(t_us, "execution_result",
         json{{"success", execution_->success},
              {"attempts", execution_->attempts},
              {"totals_before", totals_json(execution_->totals_before)},
              {"totals_after", totals_json(execution_->totals_after)},
              {"world", world::world_to_json(world_)}});
    if (execution_->success) {
        set_phase(Phase::done, t_us);
    } else {
        fail("execution_failed", t_us);
    }
}

void Session::reset_observation() {
    tracker_ = perception::Tracker(config_.tracker);
    pending_frame_.reset();
    pending_gaze_.clear();
    last_gaze_.reset();
    observed_frames_ = 0;
    objects_.clear();
    sequence_.clear();
    last_positive_us_.reset();
    proposals_.clear();
}

json Session::snapshot() const {
    json j{{"id", id_},
           {"phase", to_string(phase_)},
           {"events", events_.size()},
           {"sequence", sequence_.labels()},
           {"world", world::world_to_json(world_)}};
    json props = json::array();
    for (const auto& p : proposals_) props.push_back(proposal_json(p));
    j["proposals"] = props;
    if (confirm_) {
        const auto& st = confirm_->state();
        j["confirmation"] = {{"rank", st.rank},
                             {"phase", confirmation::to_string(st.phase)},
                             {"question", confirmation::question(confirm_->current())},
                             {"dwell_us", confirmation::dwell_elapsed(st, last_t_us_)},
                             {"deadline_us", st.deadline_us}};
    }
    if (accepted_) j["accepted"] = proposal_json(*accepted_);
    if (plan_) j["plan"] = planner::steps_to_json(plan_->steps);
    if (execution_) j["execution"] = {{"success", execution_->success}, {"attempts", execution_->attempts}};
    if (!abort_cause_.empty()) j["abort_cause"] = abort_cause_;
    return j;
}

// ---- logs and replay --------------------------------------------------------

EventSink file_sink(const std::filesystem::path& path, const std::string& session_id) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto out = std::make_shared<std::ofstream>(path, std::ios::binary | std::ios::trunc);
    if (!*out) throw DataError("cannot open event log " + path.string());
    return [out, session_id](const SessionEvent& e) {
        *out << to_json(e, session_id).dump() << '\n';
        out->flush();
    };
}

namespace {

std::vector<json> read_lines(std::istream& in) {
    std::vector<json> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw ReplayError(static_cast<long long>(lines.size()), "malformed event line");
        }
        lines.push_back(std::move(j));
    }
    return lines;
}

const std::set<std::string>& decision_kinds() {
    static const std::set<std::string> kinds{"object_accumulated", "proposals",  "proposals_filtered",
                                             "confirmation_result", "plan",      "plan_failed",
                                             "step",                "execution_result", "aborted"};
    return kinds;
}

}  // namespace

std::vector<SessionEvent> read_event_log(std::istream& in) {
    std::vector<SessionEvent> out;
    for (const auto& j : read_lines(in)) {
        try {
            out.push_back(event_from_json(j));
        } catch (const json::exception& e) {
            throw ReplayError(static_cast<long long>(out.size()), e.what());
        }
    }
    return out;
}

std::vector<SessionEvent> read_event_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open event log " + path.string());
    return read_event_log(in);
}

json decisions_of(const std::vector<SessionEvent>& events) {
    json out = json::array();
    for (const auto& e : events) {
        if (decision_kinds().count(e.kind)) out.push_back({{"kind", e.kind}, {"payload", e.payload}});
    }
    return out;
}

ReplayResult replay(const std::vector<json>& lines) {
    ReplayResult r;
    std::optional<Phase> phase;
    bool confirmed = false;
    std::int64_t last_t = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto seq = static_cast<long long>(i);
        const json& j = lines[i];
        SessionEvent e;
        std::string sid;
        try {
            if (j.at("schema").get<std::string>() != kEventSchema) {
                throw ReplayError(seq, "unsupported schema " + j.at("schema").dump());
            }
            sid = j.at("session").get<std::string>();
            e = event_from_json(j);
        } catch (const json::exception& ex) {
            throw ReplayError(seq, std::string("malformed event: ") + ex.what());
        }
        if (e.seq != seq) {
            throw ReplayError(seq, "expected seq " + std::to_string(seq) + ", found " + std::to_string(e.seq));
        }
        if (i == 0) r.session_id = sid;
        if (sid != r.session_id) throw ReplayError(seq, "event belongs to session " + sid);
        if (e.t_us < last_t) throw ReplayError(seq, "timestamp goes backwards");
        last_t = e.t_us;
        if (phase && is_terminal(*phase)) throw ReplayError(seq, "event after terminal phase");

        if (e.kind == "phase") {
            Phase to;
            try {
                to = phase_from_string(e.payload.at("to").get<std::string>());
            } catch (const std::exception& ex) {
                throw ReplayError(seq, std::string("bad phase event: ") + ex.what());
            }
            if (!phase) {
                if (to != Phase::observing || !e.payload.at("from").is_null()) {
                    throw ReplayError(seq, "log must start in observing");
                }
            } else {
                const auto from = e.payload.value("from", std::string{});
                if (from != to_string(*phase)) {
                    throw ReplayError(seq, "phase event says from " + from + " but session is " + to_string(*phase));
                }
                if (!legal_transition(*phase, to)) {
                    throw ReplayError(seq, "illegal transition " + to_string(*phase) + " -> " + to_string(to));
                }
                if (to == Phase::executing && !confirmed) {
                    throw ReplayError(seq, "executing without a confirmed intention");
                }
                if (to == Phase::observing) confirmed = false;
            }
            phase = to;
            r.trajectory.push_back(to);
        } else if (!phase && !(seq == 0 && e.kind == "session_started")) {
            throw ReplayError(seq, "event before the initial phase");
        }
        if (e.kind == "confirmation_result" && e.payload.value("outcome", "") == "confirmed") confirmed = true;
        if (e.kind == "llm_reply") r.llm_replies.push_back(e.payload.value("text", ""));
        if (decision_kinds().count(e.kind)) r.decisions.push_back({{"kind", e.kind}, {"payload", e.payload}});
    }
    if (!phase || !is_terminal(*phase)) {
        throw ReplayError(static_cast<long long>(lines.size()), "log ends before a terminal phase");
    }
    r.terminal = *phase;
    return r;
}

ReplayResult replay(std::istream& in) { return replay(read_lines(in)); }

ReplayResult replay_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open event log " + path.string());
    return replay(in);
}

std::string ReplayClient::complete(const std::vector<inference::ChatMessage>&) {
    if (next_ >= replies_.size()) throw InferenceError("recorded replies exhausted");
    return replies_[next_++];
}

SafetyReport scan_log_safety(const std::vector<SessionEvent>& events) {
    SafetyReport r;
    bool confirmed = false;
    for (const auto& e : events) {
        if (e.kind == "confirmation_result") {
            confirmed = e.payload.value("outcome", "") == "confirmed";
        } else if (e.kind == "phase") {
            const auto to = e.payload.value("to", std::string{});
            if (to == "executing" && !confirmed) r.executing_without_confirmation = true;
            if (to == "observing") confirmed = false;
        } else if (e.kind == "execution_result") {
            ++r.executions;
            const auto& before = e.payload.at("totals_before");
            const auto& after = e.payload.at("totals_after");
            std::set<std::string> keys;
            for (const auto& [k, v] : before.items()) keys.insert(k);
            for (const auto& [k, v] : after.items()) keys.insert(k);
            for (const auto& k : keys) {
                const double a = before.value(k, 0.0);
                const double b = after.value(k, 0.0);
                r.max_conservation_error = std::max(r.max_conservation_error, std::abs(a - b));
            }
        }
    }
    r.conservation_violated = r.max_conservation_error > 1e-9;
    return r;
}

}  // namespace gaze::service
