#pragma once

// HTTP front end: one Session per id, server-push event streams, gaze proxying.
//
//   POST /sessions              {fixture?, mode: live|scripted, task?, speed?} -> 201 {id}
//   GET  /sessions              -> [{id, mode, phase}]
//   GET  /sessions/{id}         -> snapshot
//   GET  /sessions/{id}/events  -> text/event-stream (or ?format=json for a JSON array)
//   POST /sessions/{id}/gaze    {gx, gy, t_us?, on_screen?}
//   POST /sessions/{id}/abort

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "gazeassist/session.hpp"

namespace gaze::service {

struct ServerConfig {
    std::string host = "127.0.0.1";
    int port = 8173;  // 0 picks a free port
    std::optional<world::WorldState> default_world;
    std::filesystem::path fixtures_dir;  // "<fixture>.json" lookups
    std::optional<std::filesystem::path> log_dir = std::filesystem::path("logs");
    SessionConfig session;
    SceneGeometry geometry;
    std::shared_ptr<const net::ModelParams> model;
    std::function<std::shared_ptr<inference::LlmClient>()> make_client;
    std::size_t subscriber_buffer = 512;  // pending events before a subscriber is dropped
    std::chrono::milliseconds subscriber_write_delay{0};  // pause per written event (slow-link tests)
    std::chrono::microseconds frame_period{perception::kFramePeriodUs};
};

class Server {
public:
    explicit Server(ServerConfig config);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    // Binds the listening socket. Throws ConfigError when the address is taken
    // or invalid. Returns the bound port.
    int bind();
    // Serves on a background thread (binding first if needed).
    void start();
    // Serves on the calling thread until stop().
    void run();
    void stop();
    int port() const;

    // Same as POST /sessions; returns the new id. Throws ConfigError or
    // DataError on a bad request.
    std::string create_session(const nlohmann::json& request);
    // Blocks until the session is terminal or the timeout passes.
    bool wait_terminal(const std::string& id, std::chrono::milliseconds timeout);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace gaze::service
