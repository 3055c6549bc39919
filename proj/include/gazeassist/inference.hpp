#pragma once

// LLM intent inference: prompt rendering, reply parsing, pluggable clients.

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gaze::inference {

struct GazedObject {
    std::string label;
    std::int64_t t_us = 0;  // time of the first positive intent window
};

// Labels in ascending first-positive time; first occurrence of a label wins.
class GazedObjectSequence {
public:
    void add(const std::string& label, std::int64_t t_us);
    bool empty() const { return objects_.empty(); }
    std::size_t size() const { return objects_.size(); }
    std::vector<std::string> labels() const;
    const std::vector<GazedObject>& objects() const { return objects_; }
    void clear() { objects_.clear(); }

private:
    std::vector<GazedObject> objects_;
};

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatPrompt {
    std::string system;
    std::string user;

    std::vector<ChatMessage> messages() const {
        return {{"system", system}, {"user", user}};
    }
};

struct IntentProposal {
    int rank = 0;
    std::string description;
    std::vector<std::string> source_objects;
};

inline constexpr const char* kIntentSystemPrompt =
    "You are a personal assistant who infers what the user wants to do based on the objects "
    "they are looking at.";
inline constexpr const char* kFormatNudge = "Answer only with a numbered list.";
inline constexpr std::size_t kMaxProposals = 3;

ChatPrompt build_prompt(const std::vector<std::string>& labels);
ChatPrompt build_prompt(const GazedObjectSequence& seq);

// Recovers the ordered label list from a rendered user message.
std::optional<std::vector<std::string>> labels_from_prompt(const std::string& user_message);

// Items of a numbered list ("1. ...") in order of appearance, trailing
// punctuation stripped. Empty when nothing parses.
std::vector<std::string> parse_numbered_list(const std::string& reply);
std::string render_numbered_list(const std::vector<std::string>& items);

// Nouns introduced by "the" in a description ("put the banana into the bowl"
// -> banana, bowl).
std::vector<std::string> referenced_labels(const std::string& description);

class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;
    // "mock", "http", "replay", ...
    virtual std::string kind() const = 0;
};

// Deterministic stand-in for a chat model. Rules match on label sets; object
// patterns may be a literal label, "*" (any label) or "@container" (bowl, box,
// cup). Intents may reference bound labels as {0}, {1}, ...
struct MockRule {
    std::vector<std::string> objects;
    std::vector<std::string> intents;
};

struct RuleTable {
    std::vector<MockRule> rules;
    std::vector<std::string> container_labels{"bowl", "box", "cup"};

    static RuleTable defaults();
    static RuleTable from_json(const nlohmann::json& j);
    static RuleTable load(const std::string& path);
};

std::string mock_llm_reply(const RuleTable& table, const std::string& user_message);

class MockLlmClient : public LlmClient {
public:
    explicit MockLlmClient(RuleTable table = RuleTable::defaults()) : table_(std::move(table)) {}

    // Answers intent prompts from the rule table and planning prompts with the
    // canonical plan for the requested intention.
    std::string complete(const std::vector<ChatMessage>& messages) override;
    std::string kind() const override { return "mock"; }

private:
    RuleTable table_;
};

struct HttpLlmConfig {
    std::string url;  // e.g. http://127.0.0.1:8000/v1/chat/completions
    std::string model = "deepseek-reasoner";
    std::string api_key;
    std::chrono::seconds timeout{30};

    // GAZE_LLM_URL and GAZE_LLM_API_KEY.
    static HttpLlmConfig from_env(const std::string& model = "deepseek-reasoner");
};

// Chat-completion client: POST {"model", "messages"} with a bearer token and
// read choices[0].message.content from the reply.
class HttpLlmClient : public LlmClient {
public:
    explicit HttpLlmClient(HttpLlmConfig config);
    std::string complete(const std::vector<ChatMessage>& messages) override;
    std::string kind() const override { return "http"; }

    static nlohmann::json request_body(const std::string& model,
                                       const std::vector<ChatMessage>& messages);

private:
    HttpLlmConfig config_;
};

struct InferenceTrace {
    std::vector<std::string> user_messages;
    std::vector<std::string> replies;
};

// Queries the client and parses up to three ranked proposals. An unparseable
// reply is retried once with a format nudge; a second failure throws
// InferenceError.
std::vector<IntentProposal> infer_intentions(const ChatPrompt& prompt, LlmClient& client,
                                             InferenceTrace* trace = nullptr);

}  // namespace gaze::inference
