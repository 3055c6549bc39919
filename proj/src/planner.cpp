#include "gazeassist/planner.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <regex>
#include <sstream>

#include "gazeassist/error.hpp"

namespace gaze::planner {

using nlohmann::json;
using world::Location;
using world::ObjectKind;
using world::WorldState;

const std::map<std::string, int>& api_table() {
    static const std::map<std::string, int> table{
        {"locate", 1}, {"grasp", 1},  {"move_to", 1}, {"place", 1},
        {"pour", 2},   {"toggle", 1}, {"release", 0},
    };
    return table;
}

std::string api_signatures() {
    return "locate(object)\n"
           "grasp(object)\n"
           "move_to(target)\n"
           "place(target)\n"
           "pour(source, target)\n"
           "toggle(switch)\n"
           "release()\n";
}

std::string to_string(const ActionStep& step) {
    std::string s = step.api + "(";
    for (std::size_t i = 0; i < step.args.size(); ++i) {
        if (i) s += ", ";
        s += step.args[i];
    }
    return s + ")";
}

json steps_to_json(const std::vector<ActionStep>& steps) {
    json j = json::array();
    for (const auto& s : steps) j.push_back({{"api", s.api}, {"args", s.args}});
    return j;
}

std::vector<ActionStep> steps_from_json(const json& j) {
    if (!j.is_array()) throw PlanningError("plan must be a JSON array");
    std::vector<ActionStep> steps;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        if (!e.is_object() || !e.contains("api") || !e["api"].is_string()) {
            throw PlanningError("step " + std::to_string(i) + " has no api name");
        }
        ActionStep s;
        s.api = e["api"].get<std::string>();
        if (e.contains("args")) {
            if (!e["args"].is_array()) {
                throw PlanningError("step " + std::to_string(i) + " args must be an array");
            }
            for (const auto& a : e["args"]) {
                if (!a.is_string()) {
                    throw PlanningError("step " + std::to_string(i) + " args must be strings");
                }
                s.args.push_back(a.get<std::string>());
            }
        }
        steps.push_back(std::move(s));
    }
    return steps;
}

namespace {

bool reserved(const std::string& label) {
    return label == world::kTable || label == world::kUserZone;
}

bool accepts_pour(ObjectKind k) {
    return k == ObjectKind::container || k == ObjectKind::vessel || k == ObjectKind::plant;
}

std::optional<std::string> structural_error(const ActionStep& step, const WorldState& world) {
    const auto it = api_table().find(step.api);
    if (it == api_table().end()) return "api '" + step.api + "' is not whitelisted";
    if (static_cast<int>(step.args.size()) != it->second) {
        return step.api + " takes " + std::to_string(it->second) + " argument(s), got " +
               std::to_string(step.args.size());
    }
    const bool target_api = step.api == "move_to" || step.api == "place";
    for (const auto& a : step.args) {
        if (reserved(a)) {
            if (!target_api) return "'" + a + "' is not an object";
        } else if (!world.has(a)) {
            return "unknown object '" + a + "'";
        }
    }
    return std::nullopt;
}

}  // namespace

std::optional<std::string> apply_step(WorldState& world, const ActionStep& step) {
    if (auto err = structural_error(step, world)) return err;
    auto& g = world.gripper;
    const auto& api = step.api;

    if (api == "locate") return std::nullopt;

    if (api == "move_to") {
        g.at = step.args[0];
        return std::nullopt;
    }

    if (api == "grasp") {
        if (g.holding) return "gripper occupied";
        auto& o = world.at(step.args[0]);
        if (o.location.type == Location::Type::held) return "'" + o.label + "' is already held";
        o.location = Location{Location::Type::held, {}};
        g.holding = o.label;
        g.placed_at.reset();
        return std::nullopt;
    }

    if (api == "place") {
        if (!g.holding) return "gripper empty";
        const auto& t = step.args[0];
        if (t == *g.holding) return "cannot place '" + t + "' into itself";
        if (!reserved(t) && world.at(t).kind != ObjectKind::container) {
            return "'" + t + "' is not a container";
        }
        g.placed_at = t;
        return std::nullopt;
    }

    if (api == "release") {
        if (!g.holding) return "gripper empty";
        auto& o = world.at(*g.holding);
        const std::string where = g.placed_at.value_or(world::kTable);
        if (where == world::kTable) {
            o.location = Location{Location::Type::table, {}};
        } else if (where == world::kUserZone) {
            o.location = Location{Location::Type::user_zone, {}};
        } else {
            o.location = Location{Location::Type::inside, where};
        }
        g.holding.reset();
        g.placed_at.reset();
        return std::nullopt;
    }

    if (api == "pour") {
        const auto& src_label = step.args[0];
        const auto& dst_label = step.args[1];
        if (!g.holding) return "gripper empty";
        if (*g.holding != src_label) return "gripper is not holding '" + src_label + "'";
        if (src_label == dst_label) return "cannot pour '" + src_label + "' into itself";
        auto& src = world.at(src_label);
        auto& dst = world.at(dst_label);
        if (src.kind != ObjectKind::vessel) return "'" + src_label + "' is not a vessel";
        if (!accepts_pour(dst.kind)) return "'" + dst_label + "' cannot receive a pour";
        if (!src.contents) return "'" + src_label + "' holds nothing";
        if (!dst.contents) return "'" + dst_label + "' has no capacity";
        if (!dst.contents->substance.empty() && dst.contents->amount > 0.0 &&
            dst.contents->substance != src.contents->substance) {
            return "'" + dst_label + "' already holds " + dst.contents->substance;
        }
        const double moved = std::min(src.contents->amount, dst.contents->free_capacity());
        src.contents->amount -= moved;
        dst.contents->amount += moved;
        if (moved > 0.0) {
            dst.contents->substance = src.contents->substance;
            if (dst.kind == ObjectKind::plant) dst.watered = true;
        }
        return std::nullopt;
    }

    if (api == "toggle") {
        auto& o = world.at(step.args[0]);
        if (o.kind != ObjectKind::switch_) return "'" + o.label + "' is not a switch";
        if (g.holding) return "gripper occupied";
        o.switch_on = !o.switch_on;
        return std::nullopt;
    }
    return "api '" + api + "' is not whitelisted";
}

std::vector<Violation> validate(const std::vector<ActionStep>& steps, const WorldState& world) {
    std::vector<Violation> out;
    if (steps.empty()) {
        out.push_back({0, "plan is empty"});
        return out;
    }
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (auto err = structural_error(steps[i], world)) out.push_back({i, *err});
    }
    if (!out.empty()) return out;
    WorldState sim = world;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (auto err = apply_step(sim, steps[i])) {
            out.push_back({i, *err});
            break;
        }
    }
    return out;
}

std::vector<Violation> validate(const ActionPlan& plan, const WorldState& world) {
    return validate(plan.steps, world);
}

namespace {

std::string normalize(const std::string& text) {
    std::string out;
    bool space = false;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            space = !out.empty();
            continue;
        }
        if (space) out.push_back(' ');
        space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    while (!out.empty() && std::ispunct(static_cast<unsigned char>(out.back()))) out.pop_back();
    return out;
}

std::optional<std::string> water_source(const WorldState& world, const std::string& target) {
    for (const auto& [label, o] : world.objects) {
        if (label == target || o.kind != ObjectKind::vessel || !o.contents) continue;
        if (o.contents->substance == "water" && o.contents->amount > 0.0) return label;
    }
    return std::nullopt;
}

}  // namespace

std::optional<std::vector<ActionStep>> canonical_plan(const std::string& intention,
                                                      const WorldState& world) {
    static const std::regex pour(R"(^(?:pour water into|water) the (\S+)$)");
    static const std::regex fetch(R"(^(?:fetch|bring|bring me|get) the (\S+)$)");
    static const std::regex put(R"(^(?:put|place) the (\S+) (?:into|in|inside) the (\S+)$)");
    static const std::regex toggle(R"(^(?:toggle|turn on|turn off|switch on|switch off) the (\S+)$)");

    const std::string text = normalize(intention);
    std::smatch m;
    if (std::regex_match(text, m, pour)) {
        const std::string target = m[1];
        if (!world.has(target)) return std::nullopt;
        const auto src = water_source(world, target);
        if (!src) return std::nullopt;
        return std::vector<ActionStep>{{"locate", {*src}},       {"grasp", {*src}},
                                       {"move_to", {target}},    {"pour", {*src, target}},
                                       {"place", {world::kTable}}, {"release", {}}};
    }
    if (std::regex_match(text, m, fetch)) {
        const std::string obj = m[1];
        if (!world.has(obj)) return std::nullopt;
        return std::vector<ActionStep>{{"locate", {obj}},
                                       {"grasp", {obj}},
                                       {"move_to", {world::kUserZone}},
                                       {"place", {world::kUserZone}},
                                       {"release", {}}};
    }
    if (std::regex_match(text, m, put)) {
        const std::string obj = m[1];
        const std::string dst = m[2];
        if (!world.has(obj) || !world.has(dst)) return std::nullopt;
        return std::vector<ActionStep>{{"locate", {obj}},
                                       {"grasp", {obj}},
                                       {"move_to", {dst}},
                                       {"place", {dst}},
                                       {"release", {}}};
    }
    if (std::regex_match(text, m, toggle)) {
        const std::string sw = m[1];
        if (!world.has(sw)) return std::nullopt;
        return std::vector<ActionStep>{{"locate", {sw}}, {"move_to", {sw}}, {"toggle", {sw}}};
    }
    return std::nullopt;
}

namespace {

constexpr const char* kPlannerSystem =
    "You control a robot arm through a fixed set of operation APIs. Reply with a JSON array of "
    "steps and nothing else.";
constexpr const char* kWorldPrefix = "World objects: ";
constexpr const char* kIntentionPrefix = "Intention: ";

}  // namespace

inference::ChatPrompt build_planning_prompt(const std::string& intention, const WorldState& world) {
    std::string user = "Operation APIs:\n" + api_signatures();
    user += "Targets of move_to and place may be an object label, \"table\" or \"user_zone\".\n";
    user += std::string(kWorldPrefix) + world::world_to_json(world).dump() + "\n";
    user += std::string(kIntentionPrefix) + intention + "\n";
    user += "Reply with a JSON array of steps such as [{\"api\":\"grasp\",\"args\":[\"cup\"]}].";
    return inference::ChatPrompt{kPlannerSystem, user};
}

std::optional<PlanningRequest> parse_planning_prompt(const std::string& user_message) {
    std::istringstream in(user_message);
    std::string line;
    std::optional<std::string> intention;
    std::optional<json> world;
    while (std::getline(in, line)) {
        if (line.rfind(kWorldPrefix, 0) == 0) {
            world = json::parse(line.substr(std::string(kWorldPrefix).size()), nullptr, false);
            if (world->is_discarded()) return std::nullopt;
        } else if (line.rfind(kIntentionPrefix, 0) == 0) {
            intention = line.substr(std::string(kIntentionPrefix).size());
        }
    }
    if (!intention || !world) return std::nullopt;
    return PlanningRequest{*intention, *world};
}

std::optional<std::vector<ActionStep>> parse_plan_reply(const std::string& reply) {
    std::string text = reply;
    if (const auto close = text.find("</think>"); close != std::string::npos) {
        text = text.substr(close + 8);
    }
    const auto b = text.find('[');
    const auto e = text.rfind(']');
    if (b == std::string::npos || e == std::string::npos || e < b) return std::nullopt;
    const json j = json::parse(text.substr(b, e - b + 1), nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    try {
        return steps_from_json(j);
    } catch (const PlanningError&) {
        return std::nullopt;
    }
}

ActionPlan plan(const std::string& intention, const WorldState& world,
                inference::LlmClient& client, PlanTrace* trace) {
    const auto prompt = build_planning_prompt(intention, world);
    auto messages = prompt.messages();
    std::string problems;
    for (int attempt = 0; attempt < 2; ++attempt) {
        const std::string reply = client.complete(messages);
        if (trace) {
            trace->user_messages.push_back(messages.back().content);
            trace->replies.push_back(reply);
        }
        problems.clear();
        const auto steps = parse_plan_reply(reply);
        if (!steps) {
            problems = "- the reply does not contain a JSON array of {\"api\",\"args\"} steps\n";
        } else {
            const auto violations = validate(*steps, world);
            if (violations.empty()) {
                return ActionPlan{*steps, client.kind() == "mock" ? "mock" : "llm", intention};
            }
            for (const auto& v : violations) {
                problems += "- step " + std::to_string(v.step) + ": " + v.message + "\n";
            }
        }
        messages.push_back({"assistant", reply});
        messages.push_back({"user", "The plan was rejected:\n" + problems +
                                        "Reply with a corrected JSON array only."});
    }
    throw PlanningError("no valid plan for '" + intention + "':\n" + problems);
}

ExecutionResult execute(const ActionPlan& plan, const WorldState& world, const ExecConfig& config) {
    if (config.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
    ExecutionResult r;
    r.totals_before = world.substance_totals();
    r.world = world;
    for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
        r.attempts = attempt;
        WorldState w = world;
        std::mt19937_64 rng(config.failures.seed * 0x9e3779b97f4a7c15ULL +
                            static_cast<std::uint64_t>(attempt));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        const bool armed = config.failures.probability > 0.0 &&
                           (config.failures.attempts.empty() ||
                            config.failures.attempts.count(attempt) != 0);
        bool ok = true;
        for (std::size_t i = 0; i < plan.steps.size(); ++i) {
            StepOutcome out{attempt, i, plan.steps[i], true, {}};
            const double draw = u(rng);
            if (armed && draw < config.failures.probability) {
                out.ok = false;
                out.detail = "injected failure";
            } else if (auto err = apply_step(w, plan.steps[i])) {
                out.ok = false;
                out.detail = *err;
            }
            r.outcomes.push_back(out);
            if (!out.ok) {
                ok = false;
                break;
            }
        }
        r.world = w;
        if (ok) {
            r.success = true;
            break;
        }
    }
    r.totals_after = r.world.substance_totals();
    return r;
}

}  // namespace gaze::planner
