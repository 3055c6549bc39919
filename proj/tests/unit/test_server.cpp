#include <doctest.h>

#include <httplib.h>

#include <thread>

#include "gazeassist/error.hpp"
#include "gazeassist/eval.hpp"
#include "gazeassist/server.hpp"
#include "helpers.hpp"

using namespace gaze;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

service::ServerConfig base_config() {
    service::ServerConfig c;
    c.port = 0;
    c.model = testutil::session_model();
    c.make_client = [] { return std::make_shared<inference::MockLlmClient>(); };
    c.log_dir = testutil::log_dir();
    c.default_world = eval::scripted_session("fetch").world;
    return c;
}

struct Running {
    service::Server server;
    httplib::Client client;

    explicit Running(service::ServerConfig c = base_config())
        : server(std::move(c)), client("127.0.0.1", (server.start(), server.port())) {
        client.set_read_timeout(30, 0);
    }
    ~Running() { server.stop(); }

    std::string create(const json& body) {
        auto r = client.Post("/sessions", body.dump(), "application/json");
        REQUIRE(r);
        REQUIRE(r->status == 201);
        return json::parse(r->body).at("id");
    }
    json get(const std::string& path, int expect = 200) {
        auto r = client.Get(path);
        REQUIRE(r);
        CHECK(r->status == expect);
        return json::parse(r->body);
    }
    // Reads the event stream to its end.
    std::string stream(const std::string& id) {
        std::string body;
        auto r = client.Get("/sessions/" + id + "/events", [&](const char* d, std::size_t n) {
            body.append(d, n);
            return true;
        });
        REQUIRE(r);
        CHECK(r->status == 200);
        CHECK(r->get_header_value("Content-Type") == "text/event-stream");
        return body;
    }
};

std::vector<json> sse_events(const std::string& body) {
    std::vector<json> out;
    std::size_t pos = 0;
    while ((pos = body.find("data: ", pos)) != std::string::npos) {
        const auto end = body.find('\n', pos);
        out.push_back(json::parse(body.substr(pos + 6, end - pos - 6)));
        pos = end;
    }
    return out;
}

}  // namespace

TEST_SUITE("server") {
    TEST_CASE("scripted session over HTTP: create, poll, stream") {
        Running rs;
        const auto id = rs.create({{"mode", "scripted"}, {"task", "pour-water"}});
        REQUIRE(rs.server.wait_terminal(id, 60s));

        const auto snap = rs.get("/sessions/" + id);
        CHECK(snap["phase"] == "done");
        CHECK(snap["mode"] == "scripted");
        CHECK(snap["world"]["objects"]["cup"]["contents"]["amount"] == 150.0);

        const auto list = rs.get("/sessions");
        REQUIRE(list.size() == 1);
        CHECK(list[0]["id"] == id);

        const auto events = rs.get("/sessions/" + id + "/events?format=json");
        REQUIRE(events.size() > 5);
        for (std::size_t i = 0; i < events.size(); ++i) {
            CHECK(events[i]["seq"] == i);
            CHECK(events[i]["session"] == id);
        }

        const auto sse = sse_events(rs.stream(id));
        CHECK(sse == std::vector<json>(events.begin(), events.end()));

        const auto replayed = service::replay_file(testutil::log_dir() / (id + ".jsonl"));
        CHECK(replayed.terminal == service::Phase::done);
    }

    TEST_CASE("live session: gaze, abort and errors") {
        Running rs;
        const auto id = rs.create({{"mode", "live"}});
        std::int64_t last = -1;
        for (int i = 0; i < 5; ++i) {
            auto r = rs.client.Post("/sessions/" + id + "/gaze", json{{"gx", 100.0}, {"gy", 200.0}}.dump(),
                                    "application/json");
            REQUIRE(r);
            CHECK(r->status == 202);
            const auto j = json::parse(r->body);
            CHECK(j["phase"] == "observing");
            CHECK(j["t_us"].get<std::int64_t>() >= last);
            last = j["t_us"];
        }
        auto bad = rs.client.Post("/sessions/" + id + "/gaze", R"({"gx":"x"})", "application/json");
        REQUIRE(bad);
        CHECK(bad->status == 400);
        bad = rs.client.Post("/sessions/" + id + "/gaze", "not json", "application/json");
        REQUIRE(bad);
        CHECK(bad->status == 400);

        auto ab = rs.client.Post("/sessions/" + id + "/abort", "", "application/json");
        REQUIRE(ab);
        CHECK(ab->status == 200);
        CHECK(json::parse(ab->body)["phase"] == "aborted");
        auto late = rs.client.Post("/sessions/" + id + "/gaze", json{{"gx", 1}, {"gy", 1}}.dump(), "application/json");
        REQUIRE(late);
        CHECK(late->status == 409);

        const auto events = rs.get("/sessions/" + id + "/events?format=json");
        CHECK(events.back()["payload"]["to"] == "aborted");
        CHECK(events.back()["payload"]["cause"] == "user_abort");
    }

    TEST_CASE("request errors and CORS") {
        Running rs;
        rs.get("/sessions/nope", 404);
        rs.get("/sessions/nope/events?format=json", 404);
        auto r = rs.client.Post("/sessions/nope/abort", "", "application/json");
        REQUIRE(r);
        CHECK(r->status == 404);

        r = rs.client.Post("/sessions", "{", "application/json");
        REQUIRE(r);
        CHECK(r->status == 400);
        r = rs.client.Post("/sessions", R"({"mode":"dream"})", "application/json");
        REQUIRE(r);
        CHECK(r->status == 400);
        r = rs.client.Post("/sessions", R"({"fixture":"../etc/passwd"})", "application/json");
        REQUIRE(r);
        CHECK(r->status == 400);

        const auto id = rs.create({{"mode", "scripted"}, {"task", "fetch"}, {"speed", 1.0}});
        r = rs.client.Post("/sessions/" + id + "/gaze", json{{"gx", 1}, {"gy", 1}}.dump(), "application/json");
        REQUIRE(r);
        CHECK(r->status == 409);

        auto opt = rs.client.Options("/sessions");
        REQUIRE(opt);
        CHECK(opt->status == 204);
        CHECK(opt->get_header_value("Access-Control-Allow-Origin") == "*");
        auto g = rs.client.Get("/sessions");
        REQUIRE(g);
        CHECK(g->get_header_value("Access-Control-Allow-Origin") == "*");
    }

    TEST_CASE("binding a taken port fails") {
        Running rs;
        auto c = base_config();
        c.port = rs.server.port();
        service::Server second(c);
        CHECK_THROWS_AS(second.bind(), ConfigError);
    }

    TEST_CASE("a slow subscriber is dropped with a notice") {
        auto c = base_config();
        c.subscriber_buffer = 4;
        c.subscriber_write_delay = 200ms;
        Running rs(c);
        const auto id = rs.create({{"mode", "scripted"}, {"task", "fetch"}, {"speed", 20.0}});
        const auto body = rs.stream(id);
        CHECK(body.find("event: notice") != std::string::npos);
        CHECK(body.find("subscriber_dropped") != std::string::npos);
        REQUIRE(rs.server.wait_terminal(id, 60s));
        // The session itself is unaffected.
        CHECK(rs.get("/sessions/" + id)["phase"] == "done");
    }

    TEST_CASE("concurrent sessions match isolated runs") {
        Running rs;
        const std::vector<std::string> tasks{"toggle-switch", "water-plants", "put-into"};
        std::vector<std::string> ids;
        for (const auto& t : tasks) ids.push_back(rs.create({{"mode", "scripted"}, {"task", t}, {"speed", 0.0}}));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            REQUIRE(rs.server.wait_terminal(ids[i], 60s));
            const auto events = rs.get("/sessions/" + ids[i] + "/events?format=json");
            std::vector<service::SessionEvent> got;
            for (const auto& e : events) {
                CHECK(e["session"] == ids[i]);
                got.push_back(service::event_from_json(e));
            }
            const auto sc = eval::scripted_session(tasks[i]);
            service::Session alone("alone", {}, {testutil::session_model(), std::make_shared<inference::MockLlmClient>(), sc.world});
            eval::drive(alone, sc.gaze, sc.frames);
            CHECK(service::decisions_of(got) == service::decisions_of(alone.events()));
            CHECK(alone.phase() == service::Phase::done);
        }
    }

    TEST_CASE("stopping the server aborts live sessions") {
        auto rs = std::make_unique<Running>();
        const auto id = rs->create({{"mode", "live"}});
        rs->server.stop();
        const auto r = service::replay_file(testutil::log_dir() / (id + ".jsonl"));
        CHECK(r.terminal == service::Phase::aborted);
    }
}
