#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <string>

#include "gazeassist/eval.hpp"
#include "gazeassist/intent_net.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path = fs::temp_directory_path() /
               ("gazeassist-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Shared directory for session logs written by the suite; scanned by the
// acceptance run.
inline fs::path log_dir() {
    fs::path p = GAZE_TEST_LOG_DIR;
    fs::create_directories(p);
    return p;
}

// Session model trained once per build tree and cached on disk.
inline std::shared_ptr<const gaze::net::ModelParams> session_model() {
    static std::shared_ptr<const gaze::net::ModelParams> model = [] {
        const fs::path cache = fs::path(GAZE_TEST_CACHE_DIR) / "session-model.ckpt";
        if (fs::exists(cache)) {
            try {
                return std::make_shared<const gaze::net::ModelParams>(gaze::net::load_checkpoint(cache.string()));
            } catch (const std::exception&) {
            }
        }
        auto params = gaze::eval::train_session_model({}, 6, 0);
        fs::create_directories(cache.parent_path());
        const fs::path tmp = cache.string() + ".tmp" + std::to_string(std::random_device{}());
        gaze::net::save_checkpoint(params, tmp.string());
        fs::rename(tmp, cache);
        return std::make_shared<const gaze::net::ModelParams>(std::move(params));
    }();
    return model;
}

}  // namespace testutil
