#include "gazeassist/perception.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>

#include <json.hpp>

#include "gazeassist/error.hpp"

namespace gaze {

using nlohmann::json;

void SceneGeometry::validate() const {
    if (width_px <= 0 || height_px <= 0) {
        throw ConfigError("scene geometry must have positive width and height");
    }
}

double iou(const Box& a, const Box& b) {
    const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = ix * iy;
    const double uni = a.width() * a.height() + b.width() * b.height() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

namespace perception {

void validate_detection(const Detection& d, const SceneGeometry& geometry) {
    const Box& b = d.box;
    if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) {
        throw DataError("detection '" + d.label + "' has an empty box");
    }
    if (b.x_min < 0 || b.y_min < 0 || b.x_max > geometry.width_px ||
        b.y_max > geometry.height_px) {
        throw DataError("detection '" + d.label + "' lies outside the scene");
    }
}

std::vector<std::optional<AlignedGaze>> align_gaze_to_frames(
    std::span<const GazeSample> gaze, std::span<const std::int64_t> frame_times,
    std::int64_t frame_period_us) {
    for (std::size_t i = 1; i < gaze.size(); ++i) {
        if (gaze[i].t_us <= gaze[i - 1].t_us) {
            throw StreamOrderError("gaze samples not strictly increasing at index " +
                                   std::to_string(i));
        }
    }
    for (std::size_t i = 1; i < frame_times.size(); ++i) {
        if (frame_times[i] <= frame_times[i - 1]) {
            throw StreamOrderError("frame times not strictly increasing at index " +
                                   std::to_string(i));
        }
    }

    std::vector<std::optional<AlignedGaze>> out(frame_times.size());
    std::optional<Point> previous;
    std::size_t g = 0;
    for (std::size_t f = 0; f < frame_times.size(); ++f) {
        const std::int64_t begin = frame_times[f];
        const std::int64_t end =
            f + 1 < frame_times.size() ? frame_times[f + 1] : begin + frame_period_us;
        while (g < gaze.size() && gaze[g].t_us < begin) ++g;
        double sx = 0.0, sy = 0.0;
        std::size_t n = 0;
        for (; g < gaze.size() && gaze[g].t_us < end; ++g) {
            if (!gaze[g].on_screen) continue;
            sx += gaze[g].gx;
            sy += gaze[g].gy;
            ++n;
        }
        if (n > 0) {
            previous = Point{sx / static_cast<double>(n), sy / static_cast<double>(n)};
            out[f] = AlignedGaze{*previous, false};
        } else if (previous) {
            out[f] = AlignedGaze{*previous, true};
        }
    }
    return out;
}

namespace {

template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
        }
        try {
            fn(line_no, j);
        } catch (const json::exception& e) {
            throw ParseError(line_no, std::string("schema mismatch: ") + e.what());
        }
    }
}

}  // namespace

std::vector<GazeSample> read_gaze_stream(std::istream& in, const SceneGeometry& geometry) {
    std::vector<GazeSample> out;
    for_each_line(in, [&](std::size_t line_no, const json& j) {
        GazeSample s;
        s.t_us = j.at("t_us").get<std::int64_t>();
        s.gx = j.at("gx").get<double>();
        s.gy = j.at("gy").get<double>();
        s.on_screen = j.value("on_screen", true);
        // Gaze outside the image is kept but excluded from alignment.
        if (s.gx < 0 || s.gy < 0 || s.gx > geometry.width_px || s.gy > geometry.height_px) {
            s.on_screen = false;
        }
        if (!out.empty() && s.t_us <= out.back().t_us) {
            throw StreamOrderError("line " + std::to_string(line_no) +
                                   ": gaze t_us not strictly increasing");
        }
        out.push_back(s);
    });
    return out;
}

std::vector<FrameRecord> ingest_detection_stream(std::istream& in,
                                                 const SceneGeometry& geometry) {
    std::vector<FrameRecord> out;
    for_each_line(in, [&](std::size_t line_no, const json& j) {
        FrameRecord f;
        f.frame_idx = j.at("frame_idx").get<std::int64_t>();
        f.t_us = j.at("t_us").get<std::int64_t>();
        std::set<std::string> ids;
        for (const auto& d : j.at("detections")) {
            Detection det;
            det.object_id = d.value("id", std::string{});
            det.label = d.at("label").get<std::string>();
            const auto& b = d.at("box");
            if (!b.is_array() || b.size() != 4) throw ParseError(line_no, "box needs 4 values");
            det.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                          b[3].get<double>()};
            try {
                validate_detection(det, geometry);
            } catch (const DataError& e) {
                throw ParseError(line_no, e.what());
            }
            if (!det.object_id.empty() && !ids.insert(det.object_id).second) {
                throw ParseError(line_no, "duplicate detection id '" + det.object_id + "'");
            }
            f.detections.push_back(std::move(det));
        }
        if (!out.empty()) {
            if (f.frame_idx != out.back().frame_idx + 1) {
                throw StreamOrderError("line " + std::to_string(line_no) +
                                       ": non-monotonic frame_idx " +
                                       std::to_string(f.frame_idx) + " after " +
                                       std::to_string(out.back().frame_idx));
            }
            if (f.t_us <= out.back().t_us) {
                throw StreamOrderError("line " + std::to_string(line_no) +
                                       ": frame t_us not strictly increasing");
            }
        }
        out.push_back(std::move(f));
    });
    return out;
}

void write_gaze_stream(std::ostream& out, std::span<const GazeSample> gaze) {
    for (const auto& s : gaze) {
        out << json{{"t_us", s.t_us}, {"gx", s.gx}, {"gy", s.gy}, {"on_screen", s.on_screen}}
                   .dump()
            << '\n';
    }
}

void write_frame_stream(std::ostream& out, std::span<const FrameRecord> frames) {
    for (const auto& f : frames) {
        json dets = json::array();
        for (const auto& d : f.detections) {
            dets.push_back({{"id", d.object_id},
                            {"label", d.label},
                            {"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}}});
        }
        out << json{{"frame_idx", f.frame_idx}, {"t_us", f.t_us}, {"detections", dets}}.dump()
            << '\n';
    }
}

std::size_t ObjectTrack::observed_frames() const {
    return static_cast<std::size_t>(
        std::count_if(boxes.begin(), boxes.end(), [](const auto& b) { return b.has_value(); }));
}

void Tracker::observe(const std::string& id, const std::string& label, const Box& box) {
    auto [it, inserted] = tracks_.try_emplace(id);
    ObjectTrack& track = it->second;
    if (inserted) {
        track.object_id = id;
        track.label = label;
    }
    track.boxes.resize(frames_ + 1);
    track.boxes[frames_] = box;
    state_[id] = State{frames_, box, 0};
}

void Tracker::update(const FrameRecord& frame) {
    std::set<std::string> seen;
    std::vector<const Detection*> anonymous;
    for (const auto& d : frame.detections) {
        if (d.object_id.empty()) {
            anonymous.push_back(&d);
        } else {
            observe(d.object_id, d.label, d.box);
            seen.insert(d.object_id);
        }
    }

    if (!anonymous.empty()) {
        struct Candidate {
            double score;
            std::size_t det;
            std::string track;
        };
        std::vector<Candidate> candidates;
        for (std::size_t i = 0; i < anonymous.size(); ++i) {
            for (const auto& [id, st] : state_) {
                if (seen.count(id) || tracks_.at(id).label != anonymous[i]->label) continue;
                if (st.missing >= config_.max_gap_frames) continue;
                const double s = iou(st.last_box, anonymous[i]->box);
                if (s >= config_.iou_threshold) candidates.push_back({s, i, id});
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Candidate& a, const Candidate& b) { return a.score > b.score; });
        std::vector<bool> used(anonymous.size(), false);
        for (const auto& c : candidates) {
            if (used[c.det] || seen.count(c.track)) continue;
            used[c.det] = true;
            seen.insert(c.track);
            observe(c.track, anonymous[c.det]->label, anonymous[c.det]->box);
        }
        for (std::size_t i = 0; i < anonymous.size(); ++i) {
            if (used[i]) continue;
            const std::string& label = anonymous[i]->label;
            const std::string id = label + "#" + std::to_string(anon_counter_[label]++);
            observe(id, label, anonymous[i]->box);
            seen.insert(id);
        }
    }

    for (auto& [id, st] : state_) {
        if (seen.count(id)) continue;
        ObjectTrack& track = tracks_.at(id);
        track.boxes.resize(frames_ + 1);
        ++st.missing;
        if (st.missing < config_.max_gap_frames) {
            track.boxes[frames_] = st.last_box;
        } else if (st.missing == config_.max_gap_frames) {
            // The gap is now too long to be flicker: retract the held boxes.
            for (std::size_t k = st.last_seen + 1; k < frames_; ++k) track.boxes[k].reset();
        }
    }
    ++frames_;
}

std::optional<Box> Tracker::current_box(const std::string& object_id) const {
    auto it = tracks_.find(object_id);
    if (it == tracks_.end() || it->second.boxes.size() < frames_ || frames_ == 0) {
        return std::nullopt;
    }
    return it->second.boxes[frames_ - 1];
}

std::map<std::string, ObjectTrack> track_objects(std::span<const FrameRecord> frames,
                                                 TrackerConfig config) {
    Tracker tracker(config);
    for (const auto& f : frames) tracker.update(f);
    auto tracks = tracker.tracks();
    for (auto& [id, t] : tracks) t.boxes.resize(frames.size());
    return tracks;
}

StreamStats stream_stats(std::span<const GazeSample> gaze, std::span<const FrameRecord> frames) {
    StreamStats s;
    s.gaze_samples = gaze.size();
    for (const auto& g : gaze) s.on_screen_samples += g.on_screen ? 1 : 0;
    if (gaze.size() > 1) {
        s.gaze_rate_hz = 1e6 * static_cast<double>(gaze.size() - 1) /
                         static_cast<double>(gaze.back().t_us - gaze.front().t_us);
    }
    s.frames = frames.size();
    if (frames.size() > 1) {
        s.frame_rate_hz = 1e6 * static_cast<double>(frames.size() - 1) /
                          static_cast<double>(frames.back().t_us - frames.front().t_us);
    }
    for (const auto& f : frames) s.detections += f.detections.size();
    s.tracks = track_objects(frames).size();
    std::vector<std::int64_t> times;
    for (const auto& f : frames) times.push_back(f.t_us);
    const auto aligned = align_gaze_to_frames(gaze, times);
    s.frames_with_gaze = static_cast<std::size_t>(
        std::count_if(aligned.begin(), aligned.end(), [](const auto& a) { return a.has_value(); }));
    return s;
}

}  // namespace perception
}  // namespace gaze
