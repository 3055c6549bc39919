#include <cstdlib>
#include <regex>

#include <httplib.h>

#include "gazeassist/error.hpp"
#include "gazeassist/inference.hpp"
#include "gazeassist/planner.hpp"

namespace gaze::inference {

using nlohmann::json;

std::string MockLlmClient::complete(const std::vector<ChatMessage>& messages) {
    // The first user turn carries the task; later turns are format nudges or
    // repair requests that a rule table cannot act on.
    const ChatMessage* user = nullptr;
    for (const auto& m : messages) {
        if (m.role == "user") {
            user = &m;
            break;
        }
    }
    if (user == nullptr) return "";
    if (auto req = planner::parse_planning_prompt(user->content)) {
        world::WorldState w;
        try {
            w = world::world_from_json(req->world);
        } catch (const Error&) {
            return "[]";
        }
        const auto steps = planner::canonical_plan(req->intention, w);
        return steps ? planner::steps_to_json(*steps).dump() : "[]";
    }
    return mock_llm_reply(table_, user->content);
}

HttpLlmConfig HttpLlmConfig::from_env(const std::string& model) {
    HttpLlmConfig c;
    c.model = model;
    if (const char* url = std::getenv("GAZE_LLM_URL")) c.url = url;
    if (const char* key = std::getenv("GAZE_LLM_API_KEY")) c.api_key = key;
    if (c.url.empty()) throw ConfigError("GAZE_LLM_URL is not set");
    return c;
}

HttpLlmClient::HttpLlmClient(HttpLlmConfig config) : config_(std::move(config)) {
    static const std::regex url(R"(^https?://[^/]+(/.*)?$)");
    if (!std::regex_match(config_.url, url)) {
        throw ConfigError("chat-completion URL must be http(s)://host[:port]/path, got '" +
                          config_.url + "'");
    }
}

json HttpLlmClient::request_body(const std::string& model,
                                 const std::vector<ChatMessage>& messages) {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    return json{{"model", model}, {"messages", msgs}};
}

std::string HttpLlmClient::complete(const std::vector<ChatMessage>& messages) {
    const auto scheme_end = config_.url.find("://") + 3;
    const auto path_start = config_.url.find('/', scheme_end);
    const std::string base = config_.url.substr(0, path_start);
    const std::string path =
        path_start == std::string::npos ? "/" : config_.url.substr(path_start);

    httplib::Client cli(base);
    cli.set_connection_timeout(config_.timeout);
    cli.set_read_timeout(config_.timeout);
    cli.set_write_timeout(config_.timeout);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    const auto res = cli.Post(path, headers, request_body(config_.model, messages).dump(),
                              "application/json");
    if (!res) {
        throw InferenceError("chat endpoint " + config_.url + ": " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw InferenceError("chat endpoint returned HTTP " + std::to_string(res->status));
    }
    const json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded()) throw InferenceError("chat endpoint returned invalid JSON");
    try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw InferenceError("chat endpoint reply has no choices[0].message.content");
    }
}

}  // namespace gaze::inference
