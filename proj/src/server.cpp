#include "gazeassist/server.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <random>
#include <regex>
#include <thread>

#include <httplib.h>

#include "gazeassist/error.hpp"
#include "gazeassist/eval.hpp"

namespace gaze::service {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Subscriber {
    std::mutex m;
    std::condition_variable cv;
    std::deque<std::string> queue;
    bool dropped = false;
    bool closed = false;
};

std::string sse_frame(const SessionEvent& e, const std::string& sid) {
    return "id: " + std::to_string(e.seq) + "\ndata: " + to_json(e, sid).dump() + "\n\n";
}

struct Entry {
    std::string id;
    std::string mode;
    std::mutex m;
    std::condition_variable terminal_cv;
    std::unique_ptr<Session> session;
    std::vector<std::shared_ptr<Subscriber>> subs;
    std::size_t buffer = 0;
    Clock::time_point t0 = Clock::now();
    std::int64_t last_t_us = 0;
    std::int64_t frame_idx = 0;
    std::atomic<bool> stop{false};
    std::thread worker;

    // Session time in microseconds; never goes backwards. Caller holds m.
    std::int64_t now_us() {
        const auto t = std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - t0).count();
        last_t_us = std::max<std::int64_t>(last_t_us, t);
        return last_t_us;
    }

    void publish(const SessionEvent& e) {
        const std::string frame = sse_frame(e, id);
        for (const auto& sub : subs) {
            std::lock_guard lk(sub->m);
            if (sub->dropped || sub->closed) continue;
            if (sub->queue.size() >= buffer) {
                sub->queue.clear();
                json notice{{"kind", "subscriber_dropped"}, {"session", id}, {"last_seq", e.seq}};
                sub->queue.push_back("event: notice\ndata: " + notice.dump() + "\n\n");
                sub->dropped = true;
            } else {
                sub->queue.push_back(frame);
            }
            sub->cv.notify_all();
        }
    }

    // Caller holds m.
    void close_if_terminal() {
        if (!is_terminal(session->phase())) return;
        for (const auto& sub : subs) {
            std::lock_guard lk(sub->m);
            sub->closed = true;
            sub->cv.notify_all();
        }
        terminal_cv.notify_all();
    }
};

std::string random_id() {
    static std::mutex m;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lk(m);
    static const char* hex = "0123456789abcdef";
    std::string s = "s";
    auto v = rng();
    for (int i = 0; i < 10; ++i, v >>= 4) s += hex[v & 0xF];
    return s;
}

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void error_reply(httplib::Response& res, int status, const std::string& message) {
    reply(res, status, json{{"error", message}});
}

}  // namespace

struct Server::Impl {
    ServerConfig config;
    httplib::Server http;
    std::mutex registry_m;
    std::map<std::string, std::shared_ptr<Entry>> sessions;
    std::thread listener;
    std::atomic<bool> stopping{false};
    bool bound = false;
    int port = 0;

    std::shared_ptr<Entry> find(const std::string& id) {
        std::lock_guard lk(registry_m);
        auto it = sessions.find(id);
        return it == sessions.end() ? nullptr : it->second;
    }

    world::WorldState resolve_world(const json& request) {
        if (!request.contains("fixture") || request["fixture"].is_null()) {
            if (!config.default_world) throw ConfigError("no fixture given and no default world configured");
            return *config.default_world;
        }
        const auto& f = request["fixture"];
        if (f.is_object()) return world::world_from_json(f);
        if (!f.is_string()) throw ConfigError("fixture must be a name or a world object");
        const auto name = f.get<std::string>();
        static const std::regex ok("^[A-Za-z0-9_-]+$");
        if (!std::regex_match(name, ok)) throw ConfigError("bad fixture name '" + name + "'");
        const auto path = config.fixtures_dir / (name + ".json");
        if (!std::filesystem::exists(path)) throw ConfigError("unknown fixture '" + name + "'");
        return world::load_world(path.string());
    }

    void run_live(const std::shared_ptr<Entry>& e) {
        auto next = e->t0;
        while (!e->stop) {
            next += config.frame_period;
            std::this_thread::sleep_until(next);
            std::lock_guard lk(e->m);
            if (is_terminal(e->session->phase())) break;
            FrameRecord f;
            f.frame_idx = e->frame_idx++;
            f.t_us = e->now_us();
            f.detections = perception::mock_detect(e->session->world(), config.geometry);
            try {
                e->session->push_frame(f);
            } catch (const std::exception& ex) {
                e->session->abort(std::string("internal_error: ") + ex.what(), e->last_t_us);
            }
            e->close_if_terminal();
        }
    }

    void run_scripted(const std::shared_ptr<Entry>& e, eval::ScriptedSession sc, double speed) {
        std::size_t gi = 0;
        std::size_t fi = 0;
        const auto start = Clock::now();
        while (!e->stop && (gi < sc.gaze.size() || fi < sc.frames.size())) {
            const bool frame_next = fi < sc.frames.size() &&
                                    (gi >= sc.gaze.size() || sc.frames[fi].t_us <= sc.gaze[gi].t_us);
            const std::int64_t t = frame_next ? sc.frames[fi].t_us : sc.gaze[gi].t_us;
            if (speed > 0.0) {
                std::this_thread::sleep_until(start + std::chrono::microseconds(static_cast<std::int64_t>(t / speed)));
            }
            std::lock_guard lk(e->m);
            if (is_terminal(e->session->phase())) break;
            e->last_t_us = std::max(e->last_t_us, t);
            try {
                if (frame_next) {
                    e->session->push_frame(sc.frames[fi++]);
                } else {
                    e->session->push_gaze(sc.gaze[gi++]);
                }
            } catch (const std::exception& ex) {
                e->session->abort(std::string("internal_error: ") + ex.what(), e->last_t_us);
            }
            e->close_if_terminal();
        }
        std::lock_guard lk(e->m);
        if (!e->stop) e->session->end_of_stream(e->last_t_us + perception::kFramePeriodUs);
        e->close_if_terminal();
    }

    std::string create(const json& request) {
        if (!request.is_object()) throw ConfigError("request body must be a JSON object");
        const std::string mode = request.value("mode", std::string("live"));
        if (mode != "live" && mode != "scripted") throw ConfigError("mode must be live or scripted");
        if (!config.model || !config.make_client) throw ConfigError("server has no model or client");

        auto e = std::make_shared<Entry>();
        e->id = random_id();
        e->mode = mode;
        e->buffer = std::max<std::size_t>(1, config.subscriber_buffer);

        std::optional<eval::ScriptedSession> script;
        world::WorldState w;
        double speed = 0.0;
        if (mode == "scripted") {
            script = eval::scripted_session(request.value("task", std::string("pour-water")),
                                            request.value("seed", std::uint64_t{7}), config.geometry);
            w = script->world;
            speed = request.value("speed", 0.0);
            if (speed < 0.0) throw ConfigError("speed must be non-negative");
        } else {
            w = resolve_world(request);
        }

        EventSink file;
        if (config.log_dir) file = file_sink(*config.log_dir / (e->id + ".jsonl"), e->id);
        Entry* raw = e.get();
        EventSink sink = [raw, file](const SessionEvent& ev) {
            if (file) file(ev);
            raw->publish(ev);
        };
        {
            std::lock_guard lk(e->m);
            e->session = std::make_unique<Session>(e->id, config.session,
                                                   SessionDeps{config.model, config.make_client(), w}, sink);
        }
        {
            std::lock_guard lk(registry_m);
            sessions[e->id] = e;
        }
        if (script) {
            e->worker = std::thread([this, e, sc = std::move(*script), speed]() mutable {
                run_scripted(e, std::move(sc), speed);
            });
        } else {
            e->worker = std::thread([this, e] { run_live(e); });
        }
        return e->id;
    }

    void routes() {
        http.new_task_queue = [] { return new httplib::ThreadPool(32); };
        http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                  {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                  {"Access-Control-Allow-Headers", "Content-Type"}});
        http.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        http.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
            try {
                const json body = req.body.empty() ? json::object() : json::parse(req.body);
                reply(res, 201, json{{"id", create(body)}});
            } catch (const json::exception& ex) {
                error_reply(res, 400, std::string("bad JSON: ") + ex.what());
            } catch (const Error& ex) {
                error_reply(res, 400, ex.what());
            }
        });

        http.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
            json out = json::array();
            std::lock_guard lk(registry_m);
            for (const auto& [id, e] : sessions) {
                std::lock_guard elk(e->m);
                out.push_back({{"id", id}, {"mode", e->mode}, {"phase", to_string(e->session->phase())}});
            }
            reply(res, 200, out);
        });

        http.Get(R"(/sessions/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
            auto e = find(req.matches[1]);
            if (!e) return error_reply(res, 404, "no such session");
            std::lock_guard lk(e->m);
            json j = e->session->snapshot();
            j["mode"] = e->mode;
            reply(res, 200, j);
        });

        http.Get(R"(/sessions/([A-Za-z0-9_-]+)/events)", [this](const httplib::Request& req,
                                                                 httplib::Response& res) {
            auto e = find(req.matches[1]);
            if (!e) return error_reply(res, 404, "no such session");
            if (req.get_param_value("format") == "json") {
                json out = json::array();
                std::lock_guard lk(e->m);
                for (const auto& ev : e->session->events()) out.push_back(to_json(ev, e->id));
                return reply(res, 200, out);
            }
            auto sub = std::make_shared<Subscriber>();
            {
                std::lock_guard lk(e->m);
                for (const auto& ev : e->session->events()) sub->queue.push_back(sse_frame(ev, e->id));
                sub->closed = is_terminal(e->session->phase());
                e->subs.push_back(sub);
            }
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider(
                "text/event-stream",
                [this, sub, delay = config.subscriber_write_delay](std::size_t, httplib::DataSink& sink) {
                    std::unique_lock lk(sub->m);
                    const bool ready = sub->cv.wait_for(lk, std::chrono::milliseconds(200), [&] {
                        return !sub->queue.empty() || sub->closed || stopping.load();
                    });
                    while (!sub->queue.empty()) {
                        const std::string chunk = std::move(sub->queue.front());
                        sub->queue.pop_front();
                        lk.unlock();
                        if (!sink.write(chunk.data(), chunk.size())) return false;
                        if (delay.count() > 0) std::this_thread::sleep_for(delay);
                        lk.lock();
                    }
                    if (sub->closed || sub->dropped || stopping) {
                        sink.done();
                        return true;
                    }
                    if (!ready) {
                        static const std::string ping = ": keepalive\n\n";
                        return sink.write(ping.data(), ping.size());
                    }
                    return true;
                },
                [e, sub](bool) {
                    std::lock_guard lk(e->m);
                    std::erase(e->subs, sub);
                });
        });

        http.Post(R"(/sessions/([A-Za-z0-9_-]+)/gaze)", [this](const httplib::Request& req,
                                                               httplib::Response& res) {
            auto e = find(req.matches[1]);
            if (!e) return error_reply(res, 404, "no such session");
            json body;
            try {
                body = json::parse(req.body);
                if (!body.at("gx").is_number() || !body.at("gy").is_number()) throw ConfigError("gx, gy must be numbers");
            } catch (const std::exception& ex) {
                return error_reply(res, 400, ex.what());
            }
            if (e->mode != "live") return error_reply(res, 409, "scripted sessions take no gaze input");
            std::lock_guard lk(e->m);
            if (is_terminal(e->session->phase())) return error_reply(res, 409, "session has ended");
            GazeSample g;
            g.t_us = e->now_us();  // stamped by the server clock shared with the frame ticker
            g.gx = body["gx"].get<double>();
            g.gy = body["gy"].get<double>();
            g.on_screen = body.value("on_screen", true) && g.gx >= 0.0 && g.gy >= 0.0 &&
                          g.gx <= config.geometry.width_px && g.gy <= config.geometry.height_px;
            try {
                e->session->push_gaze(g);
            } catch (const Error& ex) {
                return error_reply(res, 409, ex.what());
            }
            e->close_if_terminal();
            reply(res, 202, json{{"t_us", g.t_us}, {"phase", to_string(e->session->phase())}});
        });

        http.Post(R"(/sessions/([A-Za-z0-9_-]+)/abort)", [this](const httplib::Request& req,
                                                                httplib::Response& res) {
            auto e = find(req.matches[1]);
            if (!e) return error_reply(res, 404, "no such session");
            std::lock_guard lk(e->m);
            e->session->abort("user_abort", e->now_us());
            e->close_if_terminal();
            reply(res, 200, json{{"id", e->id}, {"phase", to_string(e->session->phase())}});
        });
    }
};

Server::Server(ServerConfig config) : impl_(std::make_unique<Impl>()) {
    impl_->config = std::move(config);
    impl_->config.session.validate();
    impl_->routes();
}

Server::~Server() { stop(); }

int Server::bind() {
    if (impl_->bound) return impl_->port;
    auto& c = impl_->config;
    // SO_REUSEPORT would let a second server share the port silently.
    impl_->http.set_socket_options([](socket_t sock) {
        int yes = 1;
        ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    if (c.port == 0) {
        impl_->port = impl_->http.bind_to_any_port(c.host);
        if (impl_->port < 0) throw ConfigError("cannot bind " + c.host);
    } else {
        if (!impl_->http.bind_to_port(c.host, c.port)) {
            throw ConfigError("cannot bind " + c.host + ":" + std::to_string(c.port));
        }
        impl_->port = c.port;
    }
    impl_->bound = true;
    return impl_->port;
}

void Server::start() {
    bind();
    impl_->listener = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
}

void Server::run() {
    bind();
    impl_->http.listen_after_bind();
}

void Server::stop() {
    if (impl_->stopping.exchange(true)) return;
    std::vector<std::shared_ptr<Entry>> entries;
    {
        std::lock_guard lk(impl_->registry_m);
        for (auto& [id, e] : impl_->sessions) entries.push_back(e);
    }
    for (auto& e : entries) {
        e->stop = true;
        if (e->worker.joinable()) e->worker.join();
        std::lock_guard lk(e->m);
        e->session->abort("server_stop", e->now_us());
        e->close_if_terminal();
    }
    impl_->http.stop();
    if (impl_->listener.joinable()) impl_->listener.join();
}

int Server::port() const { return impl_->port; }

std::string Server::create_session(const json& request) { return impl_->create(request); }

bool Server::wait_terminal(const std::string& id, std::chrono::milliseconds timeout) {
    auto e = impl_->find(id);
    if (!e) throw ConfigError("no such session '" + id + "'");
    std::unique_lock lk(e->m);
    return e->terminal_cv.wait_for(lk, timeout, [&] { return is_terminal(e->session->phase()); });
}

}  // namespace gaze::service
