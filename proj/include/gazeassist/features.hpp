#pragma once

// Per-object gaze features [gx, gy, ratio] and sliding-window cutting.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gazeassist/perception.hpp"

namespace gaze::features {

inline constexpr int kNumFeatures = 3;

struct FeatureConfig {
    int sw = 30;      // window length in frames (1 s at 30 Hz)
    int stride = 10;  // frames between window starts
    bool normalize_gaze = true;
    double ratio_eps = 1e-6;  // floor on the center-to-gaze distance, px
    double ratio_cap = 10.0;
    SceneGeometry geometry;

    void validate() const;
};

struct FeatureFrame {
    double gx = 0.0;
    double gy = 0.0;
    double ratio = 0.0;
};

struct FeatureWindow {
    std::string object_id;
    std::int64_t start_frame = 0;
    int sw = 0;
    std::vector<double> values;  // sw x 3, row-major
    std::optional<int> label;

    const double* row(int t) const { return values.data() + static_cast<std::size_t>(t) * kNumFeatures; }
};

// bs x sw x 3 tensor, row-major.
struct WindowBatch {
    int bs = 0;
    int sw = 0;
    std::vector<double> values;
    std::vector<double> labels;  // empty at inference time

    double at(int b, int t, int f) const {
        return values[(static_cast<std::size_t>(b) * sw + t) * kNumFeatures + f];
    }
};

// Distance from box center to a vertex.
double half_diagonal(const Box& box);

// Half-diagonal over center-to-gaze distance, floored at eps and capped.
double gaze_ratio(const Box& box, Point gaze, double eps = 1e-6, double cap = 10.0);

FeatureFrame feature_frame(const Box& box, Point gaze, const FeatureConfig& config);

// Per-frame features for one object; absent where gaze or box is absent.
std::vector<std::optional<FeatureFrame>> object_feature_frames(
    const perception::ObjectTrack& track, std::span<const std::optional<AlignedGaze>> gaze,
    const FeatureConfig& config);

// Start indices 0, stride, 2*stride, ... of every full window in T frames.
std::vector<std::size_t> window_starts(std::size_t frame_count, int sw, int stride);

// Intent if at least half of the window's frames are marked. Throws DataError
// when any mark is missing.
int label_window(std::span<const std::optional<bool>> marks);

// Windows containing any absent frame are dropped. When `marks` is non-empty it
// must cover every frame and each window gets a label.
std::vector<FeatureWindow> cut_windows(const perception::ObjectTrack& track,
                                       std::span<const std::optional<AlignedGaze>> gaze,
                                       const FeatureConfig& config,
                                       std::span<const std::optional<bool>> marks = {});

WindowBatch make_batch(std::span<const FeatureWindow> windows, bool with_labels);
WindowBatch make_batch(std::span<const FeatureWindow* const> windows, bool with_labels);

}  // namespace gaze::features
