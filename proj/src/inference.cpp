#include "gazeassist/inference.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include "gazeassist/error.hpp"

namespace gaze::inference {

using nlohmann::json;

void GazedObjectSequence::add(const std::string& label, std::int64_t t_us) {
    for (const auto& o : objects_) {
        if (o.label == label) return;
    }
    auto pos = std::upper_bound(objects_.begin(), objects_.end(), t_us,
                                [](std::int64_t t, const GazedObject& o) { return t < o.t_us; });
    objects_.insert(pos, GazedObject{label, t_us});
}

std::vector<std::string> GazedObjectSequence::labels() const {
    std::vector<std::string> out;
    out.reserve(objects_.size());
    for (const auto& o : objects_) out.push_back(o.label);
    return out;
}

namespace {

constexpr const char* kUserPrefix = "When the user looks at ";
constexpr const char* kUserSuffix =
    ", in sequence, what are the possible intended actions? Please provide up to three possible "
    "intentions.";

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string strip_trailing_punct(std::string s) {
    while (!s.empty() && (std::ispunct(static_cast<unsigned char>(s.back())) ||
                          std::isspace(static_cast<unsigned char>(s.back())))) {
        s.pop_back();
    }
    return s;
}

std::string erase_all(std::string s, const std::string& needle) {
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p)) {
        s.erase(p, needle.size());
    }
    return s;
}

std::string strip_think(std::string s) {
    for (;;) {
        const auto open = s.find("<think>");
        if (open == std::string::npos) break;
        const auto close = s.find("</think>", open);
        if (close == std::string::npos) {
            s.erase(open);
            break;
        }
        s.erase(open, close + 8 - open);
    }
    return s;
}

}  // namespace

ChatPrompt build_prompt(const std::vector<std::string>& labels) {
    if (labels.empty()) throw InferenceError("cannot build a prompt for an empty object sequence");
    std::string joined;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) joined += ", ";
        joined += labels[i];
    }
    return ChatPrompt{kIntentSystemPrompt, kUserPrefix + joined + kUserSuffix};
}

ChatPrompt build_prompt(const GazedObjectSequence& seq) { return build_prompt(seq.labels()); }

std::optional<std::vector<std::string>> labels_from_prompt(const std::string& user_message) {
    const std::string prefix = kUserPrefix;
    const auto b = user_message.find(prefix);
    if (b == std::string::npos) return std::nullopt;
    const auto start = b + prefix.size();
    const auto e = user_message.find(", in sequence", start);
    if (e == std::string::npos) return std::nullopt;
    std::vector<std::string> labels;
    std::string rest = user_message.substr(start, e - start);
    std::size_t pos = 0;
    for (;;) {
        const auto comma = rest.find(", ", pos);
        labels.push_back(rest.substr(pos, comma == std::string::npos ? std::string::npos
                                                                     : comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 2;
    }
    if (std::any_of(labels.begin(), labels.end(), [](const auto& l) { return l.empty(); })) {
        return std::nullopt;
    }
    return labels;
}

std::vector<std::string> parse_numbered_list(const std::string& reply) {
    static const std::regex item(R"(^\s*(?:[-*]\s*)?(\d+)[.)]\s+(.*)$)");
    std::vector<std::string> out;
    std::istringstream in(erase_all(strip_think(reply), "**"));
    std::string line;
    while (std::getline(in, line)) {
        std::smatch m;
        if (!std::regex_match(line, m, item)) continue;
        std::string text = strip_trailing_punct(trim(m[2].str()));
        if (!text.empty()) out.push_back(std::move(text));
    }
    return out;
}

std::string render_numbered_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += std::to_string(i + 1) + ". " + items[i] + "\n";
    }
    return out;
}

std::vector<std::string> referenced_labels(const std::string& description) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : description) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || ch == '_' || ch == '-') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    std::vector<std::string> out;
    for (std::size_t i = 0; i + 1 < words.size(); ++i) {
        if (words[i] == "the" &&
            std::find(out.begin(), out.end(), words[i + 1]) == out.end()) {
            out.push_back(words[i + 1]);
        }
    }
    return out;
}

// ---- mock rule table --------------------------------------------------------

RuleTable RuleTable::defaults() {
    RuleTable t;
    t.rules = {
        {{"kettle", "cup"}, {"pour water into the cup", "fetch the kettle", "fetch the cup"}},
        {{"kettle", "plant"}, {"water the plant", "fetch the kettle", "fetch the plant"}},
        {{"switch"}, {"toggle the switch"}},
        {{"*", "@container"}, {"put the {0} into the {1}", "fetch the {0}", "fetch the {1}"}},
        {{"*"}, {"fetch the {0}"}},
    };
    return t;
}

RuleTable RuleTable::from_json(const json& j) {
    RuleTable t;
    try {
        for (const auto& r : j.at("rules")) {
            t.rules.push_back({r.at("objects").get<std::vector<std::string>>(),
                               r.at("intents").get<std::vector<std::string>>()});
        }
        if (j.contains("container_labels")) {
            t.container_labels = j.at("container_labels").get<std::vector<std::string>>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad mock rule table: ") + e.what());
    }
    for (const auto& r : t.rules) {
        if (r.objects.empty() || r.intents.empty()) {
            throw ConfigError("mock rules need at least one object and one intent");
        }
    }
    return t;
}

RuleTable RuleTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open rule table " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("bad rule table " + path + ": " + e.what());
    }
    // A bare array is the plain rule list.
    if (j.is_array()) j = json{{"rules", j}};
    return from_json(j);
}

namespace {

bool is_literal(const std::string& pattern) { return pattern != "*" && pattern[0] != '@'; }

bool pattern_accepts(const RuleTable& table, const std::string& pattern, const std::string& label) {
    if (pattern == "*") return true;
    if (pattern == "@container") {
        return std::find(table.container_labels.begin(), table.container_labels.end(), label) !=
               table.container_labels.end();
    }
    return pattern == label;
}

// Injective assignment of patterns (in order) to labels, trying labels in
// prompt order. Literal patterns are bound first so wildcards cannot steal
// their label.
bool bind_patterns(const RuleTable& table, const std::vector<std::string>& patterns,
          const std::vector<std::string>& labels, std::vector<int>& order, std::size_t k,
          std::vector<int>& binding, std::vector<bool>& used) {
    if (k == order.size()) return true;
    const int p = order[k];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (used[i] || !pattern_accepts(table, patterns[p], labels[i])) continue;
        used[i] = true;
        binding[p] = static_cast<int>(i);
        if (bind_patterns(table, patterns, labels, order, k + 1, binding, used)) return true;
        used[i] = false;
    }
    return false;
}

std::optional<std::vector<std::string>> match_rule(const RuleTable& table, const MockRule& rule,
                                                   const std::vector<std::string>& labels) {
    if (rule.objects.size() > labels.size()) return std::nullopt;
    std::vector<int> order(rule.objects.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_partition(order.begin(), order.end(),
                          [&](int p) { return is_literal(rule.objects[p]); });
    std::vector<int> binding(rule.objects.size(), -1);
    std::vector<bool> used(labels.size(), false);
    if (!bind_patterns(table, rule.objects, labels, order, 0, binding, used)) return std::nullopt;
    std::vector<std::string> bound;
    for (int b : binding) bound.push_back(labels[static_cast<std::size_t>(b)]);
    return bound;
}

std::string fill(std::string text, const std::vector<std::string>& bound) {
    for (std::size_t i = 0; i < bound.size(); ++i) {
        const std::string key = "{" + std::to_string(i) + "}";
        for (auto p = text.find(key); p != std::string::npos; p = text.find(key, p)) {
            text.replace(p, key.size(), bound[i]);
            p += bound[i].size();
        }
    }
    return text;
}

}  // namespace

std::string mock_llm_reply(const RuleTable& table, const std::string& user_message) {
    const auto labels = labels_from_prompt(user_message);
    if (!labels) return "I could not find any objects in the question.";

    std::vector<std::string> unique;
    for (const auto& l : *labels) {
        if (std::find(unique.begin(), unique.end(), l) == unique.end()) unique.push_back(l);
    }

    // Rank: exact match before subset, then more patterns, then more literal
    // patterns, then table order.
    const MockRule* best = nullptr;
    std::vector<std::string> best_bound;
    std::tuple<int, std::size_t, std::size_t> best_key{-1, 0, 0};
    for (const auto& rule : table.rules) {
        auto bound = match_rule(table, rule, unique);
        if (!bound) continue;
        const std::size_t literals = static_cast<std::size_t>(
            std::count_if(rule.objects.begin(), rule.objects.end(), is_literal));
        const std::tuple<int, std::size_t, std::size_t> key{
            rule.objects.size() == unique.size() ? 1 : 0, rule.objects.size(), literals};
        if (best == nullptr || key > best_key) {
            best = &rule;
            best_key = key;
            best_bound = std::move(*bound);
        }
    }
    if (best == nullptr) return "1. fetch the " + unique.front() + "\n";

    std::vector<std::string> intents;
    for (const auto& t : best->intents) intents.push_back(fill(t, best_bound));
    return render_numbered_list(intents);
}

std::vector<IntentProposal> infer_intentions(const ChatPrompt& prompt, LlmClient& client,
                                             InferenceTrace* trace) {
    auto messages = prompt.messages();
    const auto labels = labels_from_prompt(prompt.user).value_or(std::vector<std::string>{});
    for (int attempt = 0; attempt < 2; ++attempt) {
        if (attempt == 1) messages.back().content += std::string("\n\n") + kFormatNudge;
        std::string reply = client.complete(messages);
        if (trace) {
            trace->user_messages.push_back(messages.back().content);
            trace->replies.push_back(reply);
        }
        auto items = parse_numbered_list(reply);
        if (items.empty()) continue;
        if (items.size() > kMaxProposals) items.resize(kMaxProposals);
        std::vector<IntentProposal> out;
        for (std::size_t i = 0; i < items.size(); ++i) {
            IntentProposal p;
            p.rank = static_cast<int>(i + 1);
            p.description = items[i];
            for (const auto& ref : referenced_labels(items[i])) {
                if (std::find(labels.begin(), labels.end(), ref) != labels.end()) {
                    p.source_objects.push_back(ref);
                }
            }
            out.push_back(std::move(p));
        }
        return out;
    }
    throw InferenceError("language model reply has no numbered list after one retry");
}

}  // namespace gaze::inference
