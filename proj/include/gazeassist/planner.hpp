#pragma once

// Operation-API plans: canonical mapping, LLM planning, symbolic validation and
// simulated execution with whole-plan retry.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gazeassist/inference.hpp"
#include "gazeassist/world.hpp"

namespace gaze::planner {

struct ActionStep {
    std::string api;
    std::vector<std::string> args;

    bool operator==(const ActionStep&) const = default;
};

struct ActionPlan {
    std::vector<ActionStep> steps;
    std::string source = "mock";  // mock | llm
    std::string intention;
};

// Whitelisted API -> arity. locate(object) grasp(object) move_to(target)
// place(target) pour(source, target) toggle(switch) release().
const std::map<std::string, int>& api_table();
std::string api_signatures();

std::string to_string(const ActionStep& step);
nlohmann::json steps_to_json(const std::vector<ActionStep>& steps);
// Throws PlanningError on anything but [{"api":str,"args":[str...]}...].
std::vector<ActionStep> steps_from_json(const nlohmann::json& j);

struct Violation {
    std::size_t step = 0;
    std::string message;
};

// Applies one step to `world` in place. Returns the precondition that failed,
// leaving `world` untouched in that case.
std::optional<std::string> apply_step(world::WorldState& world, const ActionStep& step);

// Whitelist, arity, label and symbolic-precondition checks on a copy of the
// world. An empty result means the plan is valid.
std::vector<Violation> validate(const ActionPlan& plan, const world::WorldState& world);
std::vector<Violation> validate(const std::vector<ActionStep>& steps,
                                const world::WorldState& world);

// Canonical plan for the intention families the mock planner knows:
// "pour water into the X", "water the X", "fetch the X", "put the X into the Y",
// "toggle the X". nullopt when the intention is unknown or its objects are
// missing.
std::optional<std::vector<ActionStep>> canonical_plan(const std::string& intention,
                                                      const world::WorldState& world);

inference::ChatPrompt build_planning_prompt(const std::string& intention,
                                            const world::WorldState& world);

struct PlanningRequest {
    std::string intention;
    nlohmann::json world;
};
// Recovers intention and world JSON from a rendered planning prompt.
std::optional<PlanningRequest> parse_planning_prompt(const std::string& user_message);

// First JSON array in a model reply.
std::optional<std::vector<ActionStep>> parse_plan_reply(const std::string& reply);

struct PlanTrace {
    std::vector<std::string> user_messages;
    std::vector<std::string> replies;
};

// Asks the client for a step array. An unparseable or invalid plan gets one
// repair round listing the problems; a second failure throws PlanningError.
ActionPlan plan(const std::string& intention, const world::WorldState& world,
                inference::LlmClient& client, PlanTrace* trace = nullptr);

struct FailureInjection {
    double probability = 0.0;  // per step
    std::set<int> attempts;    // 1-based; empty means every attempt
    std::uint64_t seed = 0;
};

struct ExecConfig {
    int max_attempts = 3;
    FailureInjection failures;
};

struct StepOutcome {
    int attempt = 0;
    std::size_t step = 0;
    ActionStep action;
    bool ok = false;
    std::string detail;
};

struct ExecutionResult {
    world::WorldState world;
    std::vector<StepOutcome> outcomes;
    int attempts = 0;
    bool success = false;
    std::map<std::string, double> totals_before;
    std::map<std::string, double> totals_after;
};

// Runs the plan against a copy of `world`. A failed step aborts the attempt and
// the next attempt restarts from the original snapshot.
ExecutionResult execute(const ActionPlan& plan, const world::WorldState& world,
                        const ExecConfig& config = {});

}  // namespace gaze::planner
