#include "vmc/config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "vmc/trace.hpp"

namespace vmc {

using nlohmann::json;

const char* to_string(ScenarioKind kind) {
    switch (kind) {
        case ScenarioKind::PickPlace: return "pick_place";
        case ScenarioKind::Crossing: return "crossing";
        case ScenarioKind::Hold: return "hold";
    }
    return "unknown";
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); }

/// Typed access to one JSON object with unknown-key rejection.
class Fields {
public:
    Fields(const json& j, std::string path, std::set<std::string> allowed) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            fail(path_, "expected an object");
        }
        for (const auto& [key, value] : j_.items()) {
            if (!allowed.count(key)) {
                fail(at(key), "unknown field");
            }
        }
    }

    std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    const json& raw(const std::string& key) const { return j_.at(key); }

    double number(const std::string& key, double fallback) const {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_number()) fail(at(key), "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) fail(at(key), "must be finite");
        return d;
    }
    double positive(const std::string& key, double fallback) const {
        const double d = number(key, fallback);
        if (!(d > 0.0)) fail(at(key), "must be positive");
        return d;
    }
    double non_negative(const std::string& key, double fallback) const {
        const double d = number(key, fallback);
        if (!(d >= 0.0)) fail(at(key), "must be non-negative");
        return d;
    }
    int integer(const std::string& key, int fallback) const {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_number_integer()) fail(at(key), "expected an integer");
        return v.get<int>();
    }
    bool boolean(const std::string& key, bool fallback) const {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_boolean()) fail(at(key), "expected true or false");
        return v.get<bool>();
    }
    std::string text(const std::string& key, const std::string& fallback) const {
        if (!has(key)) return fallback;
        const auto& v = j_.at(key);
        if (!v.is_string()) fail(at(key), "expected a string");
        return v.get<std::string>();
    }
    Vec3 vec(const std::string& key, const Vec3& fallback) const {
        if (!has(key)) return fallback;
        return vec_at(j_.at(key), at(key));
    }

    static Vec3 vec_at(const json& v, const std::string& path) {
        if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number()) {
            fail(path, "expected [x, y, z]");
        }
        Vec3 out(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
        if (!out.allFinite()) fail(path, "must be finite");
        return out;
    }

private:
    const json& j_;
    std::string path_;
};

GoalSpringSpec parse_goal(const json& j, const std::string& path, GoalSpringSpec base, bool& critical) {
    Fields f(j, path, {"stiffness", "f_max", "damping"});
    base.stiffness = f.positive("stiffness", base.stiffness);
    base.force_cap = f.positive("f_max", base.force_cap);
    if (f.has("damping")) {
        base.damping = f.non_negative("damping", 0.0);
        critical = false;
    }
    return base;
}

UnilateralDamperSpec parse_damper(const json& j, const std::string& path, UnilateralDamperSpec base) {
    Fields f(j, path, {"c0", "R", "f_max"});
    base.base_damping = f.positive("c0", base.base_damping);
    base.activation_radius = f.positive("R", base.activation_radius);
    base.force_cap = f.positive("f_max", base.force_cap);
    return base;
}

RobotParams parse_robot(const json& j, const std::string& path, RobotParams base) {
    Fields f(j, path,
             {"goal_spring", "filter_speed", "robot_avoidance", "hand_avoidance", "damper", "avoid_robots"});
    if (f.has("goal_spring")) {
        base.goal = parse_goal(f.raw("goal_spring"), f.at("goal_spring"), base.goal, base.critical_goal_damping);
    }
    base.filter_speed = f.positive("filter_speed", base.filter_speed);
    if (f.has("robot_avoidance")) {
        base.robot_avoidance = parse_gaussian_spring(f.raw("robot_avoidance"), f.at("robot_avoidance"));
    }
    if (f.has("hand_avoidance")) {
        base.hand_avoidance = parse_gaussian_spring(f.raw("hand_avoidance"), f.at("hand_avoidance"));
    }
    if (f.has("damper")) {
        base.damper = parse_damper(f.raw("damper"), f.at("damper"), base.damper);
    }
    base.avoid_robots = f.boolean("avoid_robots", base.avoid_robots);
    return base;
}

HandConfig parse_hand(const json& j, const std::string& path) {
    Fields f(j, path, {"mode", "keypoints", "sample_rate", "first_sample", "absence_timeout", "approach", "waypoints"});
    HandConfig h;
    const auto mode = f.text("mode", "scripted");
    if (mode == "scripted") {
        h.mode = HandMode::Scripted;
    } else if (mode == "live") {
        h.mode = HandMode::Live;
    } else {
        fail(f.at("mode"), "expected scripted or live");
    }
    h.keypoints = f.integer("keypoints", h.keypoints);
    if (h.keypoints < 1 || h.keypoints > 21) fail(f.at("keypoints"), "must be within 1..21");
    h.sample_rate = f.positive("sample_rate", h.sample_rate);
    h.first_sample = f.non_negative("first_sample", h.first_sample);
    h.absence_timeout = f.positive("absence_timeout", h.absence_timeout);
    if (f.has("approach")) {
        const auto apath = f.at("approach");
        Fields a(f.raw("approach"), apath, {"from", "to", "speed", "dwell", "rest", "repetitions", "start"});
        ApproachPattern p;
        if (!a.has("from") || !a.has("to")) fail(apath, "from and to are required");
        p.from = a.vec("from", p.from);
        p.to = a.vec("to", p.to);
        p.speed = a.positive("speed", p.speed);
        p.dwell = a.non_negative("dwell", p.dwell);
        p.rest = a.non_negative("rest", p.rest);
        p.repetitions = a.integer("repetitions", p.repetitions);
        if (p.repetitions < 0) fail(a.at("repetitions"), "must be non-negative");
        p.start = a.non_negative("start", p.start);
        if ((p.to - p.from).norm() == 0.0) fail(apath, "from and to coincide");
        h.approach = p;
    }
    if (f.has("waypoints")) {
        const auto& w = f.raw("waypoints");
        if (!w.is_array()) fail(f.at("waypoints"), "expected a list");
        double prev = -1e300;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto wpath = f.at("waypoints") + "[" + std::to_string(i) + "]";
            Fields wp(w[i], wpath, {"t", "p", "present"});
            HandWaypoint hw;
            hw.t = wp.non_negative("t", 0.0);
            if (!(hw.t > prev)) fail(wp.at("t"), "waypoint times must increase");
            prev = hw.t;
            if (!wp.has("p")) fail(wpath, "p is required");
            hw.position = wp.vec("p", hw.position);
            hw.present = wp.boolean("present", true);
            h.waypoints.push_back(hw);
        }
    }
    if (h.approach && !h.waypoints.empty()) {
        fail(path, "give either approach or waypoints, not both");
    }
    return h;
}

}  // namespace

GaussianSpringSpec parse_gaussian_spring(const json& j, const std::string& path) {
    Fields f(j, path, {"stiffness", "sigma", "f_max", "cutoff"});
    const bool k = f.has("stiffness");
    const bool s = f.has("sigma");
    const bool m = f.has("f_max");
    if (int(k) + int(s) + int(m) != 2) {
        fail(path, "exactly two of stiffness, sigma, f_max must be given");
    }
    GaussianSpringSpec spec;
    try {
        if (k && s) {
            spec = GaussianSpringSpec::from_k_sigma(f.number("stiffness", 0), f.positive("sigma", 0));
        } else if (k && m) {
            spec = GaussianSpringSpec::from_k_fmax(f.number("stiffness", 0), f.number("f_max", 0));
        } else {
            spec = GaussianSpringSpec::from_sigma_fmax(f.positive("sigma", 0), f.number("f_max", 0));
        }
    } catch (const ParameterError& e) {
        fail(path, e.what());
    }
    spec.cutoff = f.non_negative("cutoff", 0.0);
    return spec;
}

Layout parse_layout(const json& j, const std::string& path) {
    Fields f(j, path, {"grid", "block_size", "table_height", "blocks", "robot_bases", "reach_radius"});
    Layout layout;
    if (f.has("grid")) {
        Fields g(f.raw("grid"), f.at("grid"), {"center", "pitch", "rows", "cols"});
        layout.grid.center = g.vec("center", layout.grid.center);
        layout.grid.pitch = g.positive("pitch", layout.grid.pitch);
        layout.grid.rows = g.integer("rows", layout.grid.rows);
        layout.grid.cols = g.integer("cols", layout.grid.cols);
    }
    layout.block_size = f.positive("block_size", layout.block_size);
    layout.table_height = f.number("table_height", layout.table_height);
    layout.reach_radius = f.positive("reach_radius", layout.reach_radius);
    auto points = [&](const std::string& key) {
        std::vector<Vec3> out;
        const auto& a = f.raw(key);
        if (!a.is_array()) fail(f.at(key), "expected a list of [x, y, z]");
        for (std::size_t i = 0; i < a.size(); ++i) {
            out.push_back(Fields::vec_at(a[i], f.at(key) + "[" + std::to_string(i) + "]"));
        }
        return out;
    };
    if (!f.has("blocks") || !f.has("robot_bases")) {
        fail(path, "blocks and robot_bases are required");
    }
    layout.block_homes = points("blocks");
    layout.robot_bases = points("robot_bases");
    try {
        layout.validate();
    } catch (const ConfigError& e) {
        fail(path, e.what());
    }
    return layout;
}

json layout_to_json(const Layout& layout) {
    auto v = [](const Vec3& p) { return json::array({p.x(), p.y(), p.z()}); };
    json blocks = json::array();
    for (const auto& b : layout.block_homes) blocks.push_back(v(b));
    json bases = json::array();
    for (const auto& b : layout.robot_bases) bases.push_back(v(b));
    return {{"grid",
             {{"center", v(layout.grid.center)},
              {"pitch", layout.grid.pitch},
              {"rows", layout.grid.rows},
              {"cols", layout.grid.cols}}},
            {"block_size", layout.block_size},
            {"table_height", layout.table_height},
            {"reach_radius", layout.reach_radius},
            {"blocks", blocks},
            {"robot_bases", bases}};
}

RunConfig parse_config(const json& doc) {
    Fields top(doc, "", {"scenario", "robot", "robots", "dynamics", "obstacle", "coordination", "task", "hands",
                         "features", "run", "comment"});
    RunConfig cfg;
    cfg.source = doc;

    // Scenario
    auto& sc = cfg.scenario;
    if (top.has("scenario")) {
        Fields f(top.raw("scenario"), "scenario",
                 {"kind", "variant", "robots", "humans", "layout", "transfers", "start_jitter", "hold_positions",
                  "hold_duration", "human"});
        const auto kind = f.text("kind", "pick_place");
        if (kind == "pick_place") {
            sc.kind = ScenarioKind::PickPlace;
        } else if (kind == "crossing") {
            sc.kind = ScenarioKind::Crossing;
        } else if (kind == "hold") {
            sc.kind = ScenarioKind::Hold;
        } else {
            fail("scenario.kind", "expected pick_place, crossing or hold");
        }
        try {
            sc.variant = variant_from_string(f.text("variant", "A"));
        } catch (const ConfigError&) {
            fail("scenario.variant", "expected A, B or mixed_checkerboard");
        }
        sc.robots = f.integer("robots", sc.robots);
        sc.humans = f.integer("humans", sc.humans);
        if (f.has("layout")) {
            if (!f.raw("layout").is_object()) fail("scenario.layout", "layout files must be inlined before parsing");
            sc.layout = parse_layout(f.raw("layout"), "scenario.layout");
        }
        if (f.has("transfers")) {
            const auto& t = f.raw("transfers");
            if (!t.is_array()) fail("scenario.transfers", "expected a list");
            for (std::size_t i = 0; i < t.size(); ++i) {
                const auto tp = "scenario.transfers[" + std::to_string(i) + "]";
                Fields tf(t[i], tp, {"block", "cell"});
                sc.transfers.push_back({tf.integer("block", -1), tf.integer("cell", -1)});
            }
        }
        sc.start_jitter = f.non_negative("start_jitter", sc.start_jitter);
        if (f.has("hold_positions")) {
            const auto& h = f.raw("hold_positions");
            if (!h.is_array()) fail("scenario.hold_positions", "expected a list of [x, y, z] or null");
            for (std::size_t i = 0; i < h.size(); ++i) {
                if (h[i].is_null()) {
                    sc.hold_positions.emplace_back(std::nullopt);
                } else {
                    sc.hold_positions.emplace_back(
                        Fields::vec_at(h[i], "scenario.hold_positions[" + std::to_string(i) + "]"));
                }
            }
        }
        sc.hold_duration = f.positive("hold_duration", sc.hold_duration);
        if (f.has("human")) {
            Fields hf(f.raw("human"), "scenario.human", {"speed", "pause", "start"});
            sc.human_speed = hf.positive("speed", sc.human_speed);
            sc.human_pause = hf.non_negative("pause", sc.human_pause);
            sc.human_start = hf.non_negative("start", sc.human_start);
        }
    }
    if (sc.robots < 1 || sc.robots > static_cast<int>(sc.layout.robot_bases.size())) {
        fail("scenario.robots", "must be within 1.." + std::to_string(sc.layout.robot_bases.size()));
    }
    if (sc.kind == ScenarioKind::Crossing) {
        if (sc.transfers.size() != static_cast<std::size_t>(sc.robots)) {
            fail("scenario.transfers", "one transfer per robot is required");
        }
        std::set<int> blocks, cells;
        for (std::size_t i = 0; i < sc.transfers.size(); ++i) {
            const auto& t = sc.transfers[i];
            const auto tp = "scenario.transfers[" + std::to_string(i) + "]";
            if (t.block < 0 || t.block >= static_cast<int>(sc.layout.block_homes.size())) fail(tp, "no such block");
            if (t.cell < 0 || t.cell >= sc.layout.grid.cell_count()) fail(tp, "no such cell");
            if (!blocks.insert(t.block).second || !cells.insert(t.cell).second) fail(tp, "block or cell reused");
        }
    }
    if (sc.kind == ScenarioKind::Hold && sc.hold_positions.size() != static_cast<std::size_t>(sc.robots)) {
        fail("scenario.hold_positions", "one hold position per robot is required");
    }

    // Robots
    RobotParams defaults;
    if (top.has("robot")) {
        defaults = parse_robot(top.raw("robot"), "robot", defaults);
    }
    cfg.robots.assign(static_cast<std::size_t>(sc.robots), defaults);
    if (top.has("robots")) {
        const auto& list = top.raw("robots");
        if (!list.is_array()) fail("robots", "expected a list of per-robot overrides");
        if (list.size() > cfg.robots.size()) fail("robots", "more overrides than robots");
        for (std::size_t i = 0; i < list.size(); ++i) {
            cfg.robots[i] = parse_robot(list[i], "robots[" + std::to_string(i) + "]", defaults);
        }
    }

    if (top.has("dynamics")) {
        Fields f(top.raw("dynamics"), "dynamics", {"virtual_mass", "floor_damping", "dt", "avoidance_cutoff"});
        cfg.virtual_mass = f.positive("virtual_mass", cfg.virtual_mass);
        cfg.floor_damping = f.non_negative("floor_damping", cfg.floor_damping);
        cfg.dt = f.positive("dt", cfg.dt);
        if (cfg.dt > 0.1) fail("dynamics.dt", "must not exceed 0.1 s");
        cfg.avoidance_cutoff = f.non_negative("avoidance_cutoff", cfg.avoidance_cutoff);
    }
    for (auto& r : cfg.robots) {
        if (r.critical_goal_damping) {
            r.goal.damping = critical_damping(r.goal.stiffness, cfg.virtual_mass);
        }
        r.robot_avoidance.cutoff = cfg.avoidance_cutoff > 0.0 ? cfg.avoidance_cutoff : r.robot_avoidance.cutoff;
    }

    if (top.has("obstacle")) {
        Fields f(top.raw("obstacle"), "obstacle", {"enabled", "sigma", "f_max", "stiffness", "plane_offset"});
        cfg.obstacle.enabled = f.boolean("enabled", cfg.obstacle.enabled);
        json spring = json::object();
        for (const char* key : {"sigma", "f_max", "stiffness"}) {
            if (f.has(key)) spring[key] = f.raw(key);
        }
        if (!spring.empty()) cfg.obstacle.spring = parse_gaussian_spring(spring, "obstacle");
        cfg.obstacle.plane_offset = f.number("plane_offset", cfg.obstacle.plane_offset);
    }

    auto& co = cfg.coordination;
    if (top.has("coordination")) {
        Fields f(top.raw("coordination"), "coordination",
                 {"stall_threshold", "stall_dwell", "speed_floor", "alpha", "proximity_threshold", "near_target",
                  "round_timeout", "neighborhood_radius", "delay_steps", "drop_rate", "springs_only"});
        co.stall.threshold = f.non_negative("stall_threshold", co.stall.threshold);
        co.stall.dwell = f.non_negative("stall_dwell", co.stall.dwell);
        co.stall.speed_floor = f.positive("speed_floor", co.stall.speed_floor);
        co.rules.alpha = f.positive("alpha", co.rules.alpha);
        co.rules.proximity_threshold = f.non_negative("proximity_threshold", co.rules.proximity_threshold);
        co.rules.near_target = f.non_negative("near_target", co.rules.near_target);
        co.round_timeout = f.positive("round_timeout", co.round_timeout);
        co.neighborhood_radius = f.non_negative("neighborhood_radius", co.neighborhood_radius);
        co.delay_steps = f.integer("delay_steps", co.delay_steps);
        if (co.delay_steps < 1) fail("coordination.delay_steps", "must be at least 1");
        co.drop_rate = f.non_negative("drop_rate", co.drop_rate);
        if (co.drop_rate >= 1.0) fail("coordination.drop_rate", "must be below 1");
        co.springs_only = f.boolean("springs_only", co.springs_only);
    }

    if (top.has("task")) {
        Fields f(top.raw("task"), "task",
                 {"position_tolerance", "speed_tolerance", "dwell", "grasp_height", "lift"});
        cfg.tolerances.position = f.positive("position_tolerance", cfg.tolerances.position);
        cfg.tolerances.speed = f.positive("speed_tolerance", cfg.tolerances.speed);
        cfg.tolerances.dwell = f.non_negative("dwell", cfg.tolerances.dwell);
        cfg.geometry.grasp_height = f.number("grasp_height", sc.layout.table_height + sc.layout.block_size);
        cfg.geometry.lift = f.positive("lift", cfg.geometry.lift);
    } else {
        cfg.geometry.grasp_height = sc.layout.table_height + sc.layout.block_size;
    }

    if (top.has("hands")) {
        const auto& list = top.raw("hands");
        if (!list.is_array()) fail("hands", "expected a list");
        for (std::size_t i = 0; i < list.size(); ++i) {
            cfg.hands.push_back(parse_hand(list[i], "hands[" + std::to_string(i) + "]"));
        }
    }
    if (sc.humans < 0) {
        sc.humans = sc.variant == Variant::MixedCheckerboard && sc.kind == ScenarioKind::PickPlace
                        ? std::max<int>(1, static_cast<int>(cfg.hands.size()))
                        : static_cast<int>(cfg.hands.size());
    }
    if (static_cast<int>(cfg.hands.size()) > sc.humans) {
        fail("hands", "more hand sources than humans");
    }
    if (sc.kind == ScenarioKind::PickPlace) {
        try {
            (void)build_layout(sc.robots, sc.variant, 0, sc.layout, sc.humans);
        } catch (const ConfigError& e) {
            fail("scenario", e.what());
        }
    }
    while (static_cast<int>(cfg.hands.size()) < sc.humans) {
        cfg.hands.emplace_back();  // scheduled from the task when the variant has humans
    }

    bool negotiation = co.negotiation;
    if (top.has("features")) {
        Fields f(top.raw("features"), "features", {"negotiation", "damper"});
        negotiation = f.boolean("negotiation", negotiation);
        cfg.damper = f.boolean("damper", cfg.damper);
    }
    co.negotiation = negotiation;

    if (top.has("run")) {
        Fields f(top.raw("run"), "run",
                 {"duration_cap", "seed", "trace_stride", "trace_detail", "realtime_factor", "protective_distance"});
        cfg.duration_cap = f.non_negative("duration_cap", cfg.duration_cap);
        if (f.has("seed")) {
            const auto& s = f.raw("seed");
            if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0)) {
                fail("run.seed", "expected a non-negative integer");
            }
            cfg.seed = s.get<std::uint64_t>();
        }
        cfg.trace_stride = f.integer("trace_stride", cfg.trace_stride);
        if (cfg.trace_stride < 1) fail("run.trace_stride", "must be at least 1");
        const auto detail = f.text("trace_detail", "summary");
        if (detail != "summary" && detail != "full") fail("run.trace_detail", "expected summary or full");
        cfg.trace_full = detail == "full";
        cfg.realtime_factor = f.positive("realtime_factor", cfg.realtime_factor);
        cfg.protective_distance = f.positive("protective_distance", cfg.protective_distance);
    }
    return cfg;
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(path + ": cannot open");
    }
    try {
        return json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

RunConfig load_config(const std::string& path) {
    json doc = load_json_file(path);
    if (doc.contains("scenario") && doc["scenario"].is_object() && doc["scenario"].contains("layout") &&
        doc["scenario"]["layout"].is_string()) {
        const auto rel = doc["scenario"]["layout"].get<std::string>();
        const auto full = (std::filesystem::path(path).parent_path() / rel).string();
        doc["scenario"]["layout"] = load_json_file(full);
    }
    return parse_config(doc);
}

RunConfig with_overrides(const RunConfig& cfg, const json& patch) {
    json doc = cfg.source;
    doc.merge_patch(patch);
    return parse_config(doc);
}

RunConfig with_pointer_overrides(const RunConfig& cfg, const std::vector<std::pair<std::string, json>>& sets) {
    json doc = cfg.source;
    for (const auto& [pointer, value] : sets) {
        try {
            doc[json::json_pointer(pointer)] = value;
        } catch (const json::exception& e) {
            throw ConfigError(pointer + ": " + e.what());
        }
    }
    return parse_config(doc);
}

std::string config_hash(const RunConfig& cfg) { return sha256_hex(cfg.source.dump()); }

}  // namespace vmc
