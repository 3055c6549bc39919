#include <doctest.h>

#include <httplib.h>

#include <random>
#include <thread>

#include "gazeassist/error.hpp"
#include "gazeassist/inference.hpp"

using namespace gaze;
using namespace gaze::inference;
using nlohmann::json;

namespace {

// Replies from a fixed script, recording every request.
class ScriptedClient : public LlmClient {
public:
    explicit ScriptedClient(std::vector<std::string> replies) : replies_(std::move(replies)) {}
    std::string complete(const std::vector<ChatMessage>& messages) override {
        calls.push_back(messages);
        return replies_.at(std::min(calls.size() - 1, replies_.size() - 1));
    }
    std::string kind() const override { return "scripted"; }

    std::vector<std::vector<ChatMessage>> calls;

private:
    std::vector<std::string> replies_;
};

std::vector<std::string> mock_items(const std::vector<std::string>& labels) {
    return parse_numbered_list(mock_llm_reply(RuleTable::defaults(), build_prompt(labels).user));
}

}  // namespace

TEST_SUITE("intent-inference") {
    TEST_CASE("gazed-object sequence orders by first positive time") {
        GazedObjectSequence s;
        s.add("cup", 300);
        s.add("kettle", 100);
        s.add("cup", 50);
        s.add("plant", 300);
        CHECK(s.labels() == std::vector<std::string>{"kettle", "cup", "plant"});
    }

    TEST_CASE("prompt text") {
        const auto p = build_prompt({"kettle", "cup"});
        CHECK(p.system == "You are a personal assistant who infers what the user wants to do based on the "
                          "objects they are looking at.");
        CHECK(p.user == "When the user looks at kettle, cup, in sequence, what are the possible intended "
                        "actions? Please provide up to three possible intentions.");
        CHECK(build_prompt({"banana"}).user ==
              "When the user looks at banana, in sequence, what are the possible intended actions? Please "
              "provide up to three possible intentions.");
        REQUIRE(p.messages().size() == 2);
        CHECK(p.messages()[0].role == "system");
        CHECK(p.messages()[1].role == "user");
        CHECK_THROWS_AS(build_prompt(std::vector<std::string>{}), InferenceError);
    }

    TEST_CASE("prompt rendering is injective over label sequences") {
        const std::vector<std::string> vocab{"cup", "kettle", "plant", "bowl", "banana", "red_apple"};
        std::mt19937_64 rng(3);
        for (int i = 0; i < 300; ++i) {
            std::vector<std::string> labels;
            const int n = 1 + static_cast<int>(rng() % 5);
            for (int k = 0; k < n; ++k) labels.push_back(vocab[rng() % vocab.size()]);
            CHECK(labels_from_prompt(build_prompt(labels).user) == labels);
        }
        CHECK(build_prompt({"cup", "kettle"}).user != build_prompt({"kettle", "cup"}).user);
    }

    TEST_CASE("numbered list parsing") {
        CHECK(parse_numbered_list("1. pour water into the cup\n2. fetch the kettle\n3. fetch the cup") ==
              std::vector<std::string>{"pour water into the cup", "fetch the kettle", "fetch the cup"});
        CHECK(parse_numbered_list("Sure!\n1) **Water the plant.**\n  2.  fetch the kettle;\n") ==
              std::vector<std::string>{"Water the plant", "fetch the kettle"});
        CHECK(parse_numbered_list("<think>1. hidden</think>1. shown") == std::vector<std::string>{"shown"});
        CHECK(parse_numbered_list("no list here").empty());
    }

    TEST_CASE("render then parse is idempotent") {
        const std::vector<std::string> items{"put the banana into the bowl", "fetch the banana", "fetch the bowl"};
        CHECK(parse_numbered_list(render_numbered_list(items)) == items);
        const auto once = parse_numbered_list("1. a thing.\n2) another!\n");
        CHECK(parse_numbered_list(render_numbered_list(once)) == once);
    }

    TEST_CASE("referenced labels") {
        CHECK(referenced_labels("put the banana into the bowl") == std::vector<std::string>{"banana", "bowl"});
        CHECK(referenced_labels("Toggle the Switch.") == std::vector<std::string>{"switch"});
    }

    TEST_CASE("mock rules") {
        CHECK(mock_items({"switch"}) == std::vector<std::string>{"toggle the switch"});
        CHECK(mock_items({"banana", "bowl"}) ==
              std::vector<std::string>{"put the banana into the bowl", "fetch the banana", "fetch the bowl"});
        CHECK(mock_items({"kettle", "plant"})[0] == "water the plant");
        CHECK(mock_items({"kettle", "cup"})[0] == "pour water into the cup");
        CHECK(mock_items({"stapler"}) == std::vector<std::string>{"fetch the stapler"});
        CHECK(mock_llm_reply(RuleTable::defaults(), "hello") == "I could not find any objects in the question.");
    }

    TEST_CASE("custom rule tables") {
        const auto t = RuleTable::from_json(json::parse(R"({"rules":[
            {"objects":["lamp"],"intents":["turn on the lamp","fetch the lamp"]}]})"));
        CHECK(parse_numbered_list(mock_llm_reply(t, build_prompt({"lamp"}).user))[0] == "turn on the lamp");
        CHECK_THROWS_AS(RuleTable::from_json(json::parse(R"({"rules":[{"objects":[],"intents":["x"]}]})")),
                        ConfigError);
    }

    TEST_CASE("proposals are trimmed to three and ranked") {
        ScriptedClient c({"1. a the cup\n2. b\n3. c\n4. d\n5. e\n"});
        const auto props = infer_intentions(build_prompt({"cup"}), c);
        REQUIRE(props.size() == 3);
        CHECK(props[0].rank == 1);
        CHECK(props[2].rank == 3);
        CHECK(props[2].description == "c");
        CHECK(props[0].source_objects == std::vector<std::string>{"cup"});
    }

    TEST_CASE("an unparseable reply is retried once with a nudge") {
        ScriptedClient c({"I think they want tea.", "1. pour water into the cup"});
        InferenceTrace trace;
        const auto props = infer_intentions(build_prompt({"kettle", "cup"}), c, &trace);
        REQUIRE(c.calls.size() == 2);
        CHECK(c.calls[1].back().content.find(kFormatNudge) != std::string::npos);
        CHECK(c.calls[0].back().content.find(kFormatNudge) == std::string::npos);
        CHECK(props[0].description == "pour water into the cup");
        CHECK(trace.replies.size() == 2);

        ScriptedClient bad({"nope", "still nope"});
        CHECK_THROWS_AS(infer_intentions(build_prompt({"cup"}), bad), InferenceError);
        CHECK(bad.calls.size() == 2);
    }

    TEST_CASE("mock client answers intent prompts") {
        MockLlmClient c;
        const auto props = infer_intentions(build_prompt({"banana", "bowl"}), c);
        REQUIRE(props.size() == 3);
        CHECK(props[0].description == "put the banana into the bowl");
        CHECK(props[0].source_objects == std::vector<std::string>{"banana", "bowl"});
    }

    TEST_CASE("http client wire format and errors") {
        httplib::Server srv;
        json seen;
        std::string auth;
        srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
            seen = json::parse(req.body);
            auth = req.get_header_value("Authorization");
            res.set_content(json{{"choices", {{{"message", {{"content", "1. water the plant"}}}}}}}.dump(),
                            "application/json");
        });
        srv.Post("/broken", [](const httplib::Request&, httplib::Response& res) {
            res.status = 500;
        });
        srv.Post("/garbage", [](const httplib::Request&, httplib::Response& res) {
            res.set_content("{\"choices\":[]}", "application/json");
        });
        const int port = srv.bind_to_any_port("127.0.0.1");
        std::thread th([&] { srv.listen_after_bind(); });
        srv.wait_until_ready();
        const std::string base = "http://127.0.0.1:" + std::to_string(port);

        HttpLlmConfig cfg;
        cfg.url = base + "/v1/chat/completions";
        cfg.api_key = "k123";
        cfg.timeout = std::chrono::seconds(5);
        HttpLlmClient client(cfg);
        const auto props = infer_intentions(build_prompt({"kettle", "plant"}), client);
        CHECK(props[0].description == "water the plant");
        CHECK(auth == "Bearer k123");
        CHECK(seen["model"] == "deepseek-reasoner");
        REQUIRE(seen["messages"].size() == 2);
        CHECK(seen["messages"][0]["role"] == "system");
        CHECK(seen["messages"][1]["content"] == build_prompt({"kettle", "plant"}).user);

        cfg.url = base + "/broken";
        CHECK_THROWS_AS(HttpLlmClient(cfg).complete({{"user", "x"}}), InferenceError);
        cfg.url = base + "/garbage";
        CHECK_THROWS_AS(HttpLlmClient(cfg).complete({{"user", "x"}}), InferenceError);

        srv.stop();
        th.join();
        cfg.url = base + "/v1/chat/completions";
        cfg.timeout = std::chrono::seconds(1);
        CHECK_THROWS_AS(HttpLlmClient(cfg).complete({{"user", "x"}}), InferenceError);

        cfg.url = "not a url";
        CHECK_THROWS_AS(HttpLlmClient{cfg}, ConfigError);
    }
}
