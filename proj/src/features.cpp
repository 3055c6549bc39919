#include "gazeassist/features.hpp"

#include <algorithm>
#include <cmath>

#include "gazeassist/error.hpp"

namespace gaze::features {

void FeatureConfig::validate() const {
    if (sw < 1) throw ConfigError("sw must be >= 1");
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (!(ratio_eps > 0.0) || !(ratio_cap > 0.0)) {
        throw ConfigError("ratio_eps and ratio_cap must be positive");
    }
    geometry.validate();
}

double half_diagonal(const Box& box) {
    return std::hypot(box.width() / 2.0, box.height() / 2.0);
}

double gaze_ratio(const Box& box, Point gaze, double eps, double cap) {
    const Point c = box.center();
    const double d2 = std::hypot(gaze.x - c.x, gaze.y - c.y);
    return std::min(half_diagonal(box) / std::max(d2, eps), cap);
}

FeatureFrame feature_frame(const Box& box, Point gaze, const FeatureConfig& config) {
    FeatureFrame f;
    f.ratio = gaze_ratio(box, gaze, config.ratio_eps, config.ratio_cap);
    if (config.normalize_gaze) {
        f.gx = std::clamp(gaze.x / config.geometry.width_px, 0.0, 1.0);
        f.gy = std::clamp(gaze.y / config.geometry.height_px, 0.0, 1.0);
    } else {
        f.gx = gaze.x;
        f.gy = gaze.y;
    }
    return f;
}

std::vector<std::optional<FeatureFrame>> object_feature_frames(
    const perception::ObjectTrack& track, std::span<const std::optional<AlignedGaze>> gaze,
    const FeatureConfig& config) {
    std::vector<std::optional<FeatureFrame>> out(gaze.size());
    for (std::size_t t = 0; t < gaze.size(); ++t) {
        if (!gaze[t] || t >= track.boxes.size() || !track.boxes[t]) continue;
        out[t] = feature_frame(*track.boxes[t], gaze[t]->point, config);
    }
    return out;
}

std::vector<std::size_t> window_starts(std::size_t frame_count, int sw, int stride) {
    std::vector<std::size_t> starts;
    if (sw < 1 || stride < 1 || frame_count < static_cast<std::size_t>(sw)) return starts;
    for (std::size_t s = 0; s + static_cast<std::size_t>(sw) <= frame_count;
         s += static_cast<std::size_t>(stride)) {
        starts.push_back(s);
    }
    return starts;
}

int label_window(std::span<const std::optional<bool>> marks) {
    if (marks.empty()) throw DataError("cannot label an empty window");
    std::size_t positive = 0;
    for (const auto& m : marks) {
        if (!m) throw DataError("window frame without an intent mark");
        positive += *m ? 1 : 0;
    }
    return 2 * positive >= marks.size() ? 1 : 0;
}

std::vector<FeatureWindow> cut_windows(const perception::ObjectTrack& track,
                                       std::span<const std::optional<AlignedGaze>> gaze,
                                       const FeatureConfig& config,
                                       std::span<const std::optional<bool>> marks) {
    config.validate();
    if (!marks.empty() && marks.size() != gaze.size()) {
        throw DataError("intent marks do not cover every frame");
    }
    const auto frames = object_feature_frames(track, gaze, config);
    std::vector<FeatureWindow> out;
    for (std::size_t start : window_starts(frames.size(), config.sw, config.stride)) {
        const auto first = frames.begin() + static_cast<std::ptrdiff_t>(start);
        const auto last = first + config.sw;
        if (std::any_of(first, last, [](const auto& f) { return !f.has_value(); })) continue;
        FeatureWindow w;
        w.object_id = track.object_id;
        w.start_frame = static_cast<std::int64_t>(start);
        w.sw = config.sw;
        w.values.reserve(static_cast<std::size_t>(config.sw) * kNumFeatures);
        for (auto it = first; it != last; ++it) {
            w.values.push_back((*it)->gx);
            w.values.push_back((*it)->gy);
            w.values.push_back((*it)->ratio);
        }
        if (!marks.empty()) w.label = label_window(marks.subspan(start, config.sw));
        out.push_back(std::move(w));
    }
    return out;
}

namespace {

template <typename Get>
WindowBatch batch_from(std::size_t n, Get&& get, bool with_labels) {
    if (n == 0) throw ShapeError("batch needs at least one window");
    WindowBatch b;
    b.bs = static_cast<int>(n);
    b.sw = get(0).sw;
    b.values.reserve(n * static_cast<std::size_t>(b.sw) * kNumFeatures);
    for (std::size_t i = 0; i < n; ++i) {
        const FeatureWindow& w = get(i);
        if (w.sw != b.sw || w.values.size() != static_cast<std::size_t>(w.sw) * kNumFeatures) {
            throw ShapeError("windows in a batch must share sw");
        }
        b.values.insert(b.values.end(), w.values.begin(), w.values.end());
        if (with_labels) {
            if (!w.label) throw DataError("unlabeled window in a training batch");
            b.labels.push_back(static_cast<double>(*w.label));
        }
    }
    return b;
}

}  // namespace

WindowBatch make_batch(std::span<const FeatureWindow> windows, bool with_labels) {
    return batch_from(
        windows.size(), [&](std::size_t i) -> const FeatureWindow& { return windows[i]; },
        with_labels);
}

WindowBatch make_batch(std::span<const FeatureWindow* const> windows, bool with_labels) {
    return batch_from(
        windows.size(), [&](std::size_t i) -> const FeatureWindow& { return *windows[i]; },
        with_labels);
}

}  // namespace gaze::features
