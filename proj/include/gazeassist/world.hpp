#pragma once

// Discrete tabletop world used by the simulated executor and the mock detector.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gazeassist/perception.hpp"

namespace gaze::world {

enum class ObjectKind { item, container, vessel, plant, switch_ };

std::string to_string(ObjectKind kind);
ObjectKind kind_from_string(const std::string& s);

struct Cell {
    int row = 0;
    int col = 0;
    bool operator==(const Cell&) const = default;
};

struct Contents {
    std::string substance;
    double amount = 0.0;
    double capacity = 0.0;

    double free_capacity() const { return capacity > amount ? capacity - amount : 0.0; }
};

// Where an object currently is. Held objects have no table position.
struct Location {
    enum class Type { table, user_zone, inside, held };
    Type type = Type::table;
    std::string container;  // for Type::inside

    bool operator==(const Location&) const = default;
};

struct WorldObject {
    std::string label;
    ObjectKind kind = ObjectKind::item;
    Cell cell;
    std::optional<Box> box;  // explicit image box; otherwise projected from the cell
    Location location;
    std::optional<Contents> contents;
    bool switch_on = false;
    bool watered = false;
};

struct Gripper {
    std::optional<std::string> holding;
    std::string at;                       // last move_to target
    std::optional<std::string> placed_at;  // set by place(), consumed by release()
};

inline constexpr const char* kTable = "table";
inline constexpr const char* kUserZone = "user_zone";

struct WorldState {
    std::map<std::string, WorldObject> objects;
    Gripper gripper;

    bool has(const std::string& label) const { return objects.count(label) != 0; }
    const WorldObject& at(const std::string& label) const;
    WorldObject& at(const std::string& label);

    // Total amount of each substance across all objects.
    std::map<std::string, double> substance_totals() const;
    // Stable content hash of the full state.
    std::uint64_t hash() const;
    // Throws DataError when an invariant is broken.
    void check_invariants() const;
};

// Image box for a table cell on a 6x6 grid over the scene.
Box project_cell(const Cell& cell, const SceneGeometry& geometry);
Box object_box(const WorldObject& object, const SceneGeometry& geometry);

WorldState world_from_json(const nlohmann::json& j);
nlohmann::json world_to_json(const WorldState& w);
WorldState load_world(const std::string& path);

}  // namespace gaze::world

namespace gaze::perception {

// Ground-truth detector: one detection per object resting on the table.
std::vector<Detection> mock_detect(const world::WorldState& world, const SceneGeometry& geometry);

}  // namespace gaze::perception
