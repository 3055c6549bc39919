#include "gazeassist/world.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "gazeassist/error.hpp"

namespace gaze::world {

using nlohmann::json;

std::string to_string(ObjectKind kind) {
    switch (kind) {
        case ObjectKind::item: return "item";
        case ObjectKind::container: return "container";
        case ObjectKind::vessel: return "vessel";
        case ObjectKind::plant: return "plant";
        case ObjectKind::switch_: return "switch";
    }
    return "item";
}

ObjectKind kind_from_string(const std::string& s) {
    if (s == "item") return ObjectKind::item;
    if (s == "container") return ObjectKind::container;
    if (s == "vessel") return ObjectKind::vessel;
    if (s == "plant") return ObjectKind::plant;
    if (s == "switch") return ObjectKind::switch_;
    throw DataError("unknown object kind '" + s + "'");
}

const WorldObject& WorldState::at(const std::string& label) const {
    auto it = objects.find(label);
    if (it == objects.end()) throw DataError("no object '" + label + "' in world");
    return it->second;
}

WorldObject& WorldState::at(const std::string& label) {
    auto it = objects.find(label);
    if (it == objects.end()) throw DataError("no object '" + label + "' in world");
    return it->second;
}

std::map<std::string, double> WorldState::substance_totals() const {
    std::map<std::string, double> totals;
    for (const auto& [label, o] : objects) {
        if (o.contents && !o.contents->substance.empty()) {
            totals[o.contents->substance] += o.contents->amount;
        }
    }
    return totals;
}

namespace {

void mix(std::uint64_t& h, std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

void mix(std::uint64_t& h, const std::string& s) {
    std::uint64_t x = 1469598103934665603ULL;
    for (unsigned char c : s) {
        x ^= c;
        x *= 1099511628211ULL;
    }
    mix(h, x);
}

void mix(std::uint64_t& h, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    mix(h, bits);
}

}  // namespace

std::uint64_t WorldState::hash() const {
    std::uint64_t h = 0;
    for (const auto& [label, o] : objects) {
        mix(h, label);
        mix(h, static_cast<std::uint64_t>(o.kind));
        mix(h, static_cast<std::uint64_t>(o.cell.row * 1000 + o.cell.col));
        mix(h, static_cast<std::uint64_t>(o.location.type));
        mix(h, o.location.container);
        if (o.contents) {
            mix(h, o.contents->substance);
            mix(h, o.contents->amount);
            mix(h, o.contents->capacity);
        }
        mix(h, static_cast<std::uint64_t>(o.switch_on) * 2 + static_cast<std::uint64_t>(o.watered));
    }
    mix(h, gripper.holding.value_or("<empty>"));
    mix(h, gripper.at);
    mix(h, gripper.placed_at.value_or("<none>"));
    return h;
}

void WorldState::check_invariants() const {
    int held = 0;
    for (const auto& [label, o] : objects) {
        if (o.location.type == Location::Type::held) {
            ++held;
            if (gripper.holding != label) {
                throw DataError("object '" + label + "' is held but gripper disagrees");
            }
        }
        if (o.contents && (o.contents->amount < 0 || o.contents->capacity < 0)) {
            throw DataError("object '" + label + "' has negative contents");
        }
        if (o.location.type == Location::Type::inside && !has(o.location.container)) {
            throw DataError("object '" + label + "' is inside a missing container");
        }
    }
    if (held > 1) throw DataError("more than one object held");
    if (gripper.holding && (!has(*gripper.holding) ||
                            at(*gripper.holding).location.type != Location::Type::held)) {
        throw DataError("gripper holds an object that is not marked held");
    }
}

Box project_cell(const Cell& cell, const SceneGeometry& geometry) {
    constexpr int kGrid = 6;
    const double cw = static_cast<double>(geometry.width_px) / kGrid;
    const double ch = static_cast<double>(geometry.height_px) / kGrid;
    const double pad_x = 0.2 * cw;
    const double pad_y = 0.2 * ch;
    return Box{cell.col * cw + pad_x, cell.row * ch + pad_y, (cell.col + 1) * cw - pad_x,
               (cell.row + 1) * ch - pad_y};
}

Box object_box(const WorldObject& object, const SceneGeometry& geometry) {
    return object.box ? *object.box : project_cell(object.cell, geometry);
}

WorldState world_from_json(const json& j) {
    WorldState w;
    try {
        for (const auto& [label, o] : j.at("objects").items()) {
            WorldObject obj;
            obj.label = label;
            obj.kind = kind_from_string(o.at("kind").get<std::string>());
            if (o.contains("cell")) {
                const auto& c = o.at("cell");
                obj.cell = Cell{c.at(0).get<int>(), c.at(1).get<int>()};
            }
            if (o.contains("box")) {
                const auto& b = o.at("box");
                obj.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                              b.at(3).get<double>()};
            }
            if (o.contains("contents")) {
                const auto& c = o.at("contents");
                obj.contents = Contents{c.value("substance", std::string{}), c.value("amount", 0.0),
                                        c.value("capacity", 0.0)};
            }
            obj.watered = o.value("watered", false);
            if (o.contains("location")) {
                const auto loc = o.at("location").get<std::string>();
                if (loc == kTable) {
                    obj.location.type = Location::Type::table;
                } else if (loc == kUserZone) {
                    obj.location.type = Location::Type::user_zone;
                } else if (loc == "gripper") {
                    obj.location.type = Location::Type::held;
                } else if (loc.rfind("inside:", 0) == 0) {
                    obj.location = Location{Location::Type::inside, loc.substr(7)};
                } else {
                    throw DataError("object '" + label + "' has unknown location '" + loc + "'");
                }
            }
            w.objects.emplace(label, std::move(obj));
        }
        if (j.contains("switches")) {
            for (const auto& [label, on] : j.at("switches").items()) {
                auto it = w.objects.find(label);
                if (it == w.objects.end() || it->second.kind != ObjectKind::switch_) {
                    throw DataError("switch state for unknown switch '" + label + "'");
                }
                it->second.switch_on = on.get<bool>();
            }
        }
        if (j.contains("gripper") && j.at("gripper").is_string()) {
            w.gripper.holding = j.at("gripper").get<std::string>();
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad world fixture: ") + e.what());
    }
    w.check_invariants();
    return w;
}

json world_to_json(const WorldState& w) {
    json objects = json::object();
    json switches = json::object();
    for (const auto& [label, o] : w.objects) {
        json jo{{"kind", to_string(o.kind)}, {"cell", {o.cell.row, o.cell.col}}};
        if (o.box) jo["box"] = {o.box->x_min, o.box->y_min, o.box->x_max, o.box->y_max};
        if (o.contents) {
            jo["contents"] = {{"substance", o.contents->substance},
                              {"amount", o.contents->amount},
                              {"capacity", o.contents->capacity}};
        }
        switch (o.location.type) {
            case Location::Type::table: jo["location"] = kTable; break;
            case Location::Type::user_zone: jo["location"] = kUserZone; break;
            case Location::Type::held: jo["location"] = "gripper"; break;
            case Location::Type::inside: jo["location"] = "inside:" + o.location.container; break;
        }
        if (o.kind == ObjectKind::plant) jo["watered"] = o.watered;
        if (o.kind == ObjectKind::switch_) switches[label] = o.switch_on;
        objects[label] = jo;
    }
    json j{{"objects", objects}, {"switches", switches}};
    j["gripper"] = w.gripper.holding ? json(*w.gripper.holding) : json(nullptr);
    return j;
}

WorldState load_world(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open world fixture " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("bad world fixture " + path + ": " + e.what());
    }
    return world_from_json(j);
}

}  // namespace gaze::world

namespace gaze::perception {

std::vector<Detection> mock_detect(const world::WorldState& world, const SceneGeometry& geometry) {
    std::vector<Detection> out;
    for (const auto& [label, o] : world.objects) {
        if (o.location.type != world::Location::Type::table) continue;
        Detection d{label, label, world::object_box(o, geometry)};
        validate_detection(d, geometry);
        out.push_back(std::move(d));
    }
    return out;
}

}  // namespace gaze::perception
