#pragma once

// Gaze and detection stream ingestion, frame-clock alignment and object tracking.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gaze {

struct SceneGeometry {
    int width_px = 1088;
    int height_px = 1080;

    void validate() const;
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct Box {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    Point center() const { return {(x_min + x_max) / 2.0, (y_min + y_max) / 2.0}; }
    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    bool contains(Point p, double margin = 0.0) const {
        return p.x >= x_min - margin && p.x <= x_max + margin && p.y >= y_min - margin &&
               p.y <= y_max + margin;
    }
    bool operator==(const Box&) const = default;
};

double iou(const Box& a, const Box& b);

struct GazeSample {
    std::int64_t t_us = 0;
    double gx = 0.0;
    double gy = 0.0;
    bool on_screen = true;
};

struct Detection {
    std::string object_id;
    std::string label;
    Box box;
};

// Frame-aligned gaze. `carried` is set when the frame received no on-screen
// samples and the value was held from the previous frame.
struct AlignedGaze {
    Point point;
    bool carried = false;
};

struct FrameRecord {
    std::int64_t frame_idx = 0;
    std::int64_t t_us = 0;
    std::optional<AlignedGaze> gaze;
    std::vector<Detection> detections;
};

namespace perception {

inline constexpr std::int64_t kFramePeriodUs = 33'333;  // 30 Hz scene camera
inline constexpr std::int64_t kGazePeriodUs = 8'333;    // ~120 Hz tracker

void validate_detection(const Detection& d, const SceneGeometry& geometry);

// One value per frame: mean of on-screen samples in [t_f, t_{f+1}); frames
// without samples carry the previous value; leading empty frames are absent.
// The last frame's interval is [t_last, t_last + frame_period_us).
std::vector<std::optional<AlignedGaze>> align_gaze_to_frames(
    std::span<const GazeSample> gaze, std::span<const std::int64_t> frame_times,
    std::int64_t frame_period_us = kFramePeriodUs);

// Line-delimited JSON readers. Errors name the 1-based line number.
std::vector<GazeSample> read_gaze_stream(std::istream& in, const SceneGeometry& geometry = {});
std::vector<FrameRecord> ingest_detection_stream(std::istream& in,
                                                 const SceneGeometry& geometry = {});

void write_gaze_stream(std::ostream& out, std::span<const GazeSample> gaze);
void write_frame_stream(std::ostream& out, std::span<const FrameRecord> frames);

struct ObjectTrack {
    std::string object_id;
    std::string label;
    // Indexed by position in the frame sequence the tracker was fed.
    std::vector<std::optional<Box>> boxes;

    std::size_t observed_frames() const;
};

struct TrackerConfig {
    double iou_threshold = 0.3;
    // Gaps shorter than this many frames are filled by holding the last box.
    int max_gap_frames = 5;
};

// Incremental tracker. Detections that carry an object_id are tracked by id;
// detections with an empty id are matched greedily by IoU to tracks with the
// same label.
class Tracker {
public:
    explicit Tracker(TrackerConfig config = {}) : config_(config) {}

    void update(const FrameRecord& frame);
    std::size_t frame_count() const { return frames_; }
    const std::map<std::string, ObjectTrack>& tracks() const { return tracks_; }
    // Box of the object at the most recent frame (held boxes included).
    std::optional<Box> current_box(const std::string& object_id) const;

private:
    struct State {
        std::size_t last_seen = 0;
        Box last_box;
        int missing = 0;
    };

    void observe(const std::string& id, const std::string& label, const Box& box);

    TrackerConfig config_;
    std::size_t frames_ = 0;
    std::map<std::string, ObjectTrack> tracks_;
    std::map<std::string, State> state_;
    std::map<std::string, int> anon_counter_;
};

std::map<std::string, ObjectTrack> track_objects(std::span<const FrameRecord> frames,
                                                 TrackerConfig config = {});

struct StreamStats {
    std::size_t gaze_samples = 0;
    std::size_t on_screen_samples = 0;
    double gaze_rate_hz = 0.0;
    std::size_t frames = 0;
    double frame_rate_hz = 0.0;
    std::size_t detections = 0;
    std::size_t tracks = 0;
    std::size_t frames_with_gaze = 0;
};

StreamStats stream_stats(std::span<const GazeSample> gaze, std::span<const FrameRecord> frames);

}  // namespace perception
}  // namespace gaze
