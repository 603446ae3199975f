#pragma once

// Run configuration: JSON schema, defaults, validation with field paths.
//
// The parsed JSON document (with the layout inlined and command-line
// overrides applied) is kept verbatim; its hash identifies the run and a
// trace header carries it so replays rebuild the identical RunConfig.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmc/coordination.hpp"
#include "vmc/scenario.hpp"

namespace vmc {

struct RobotParams {
    GoalSpringSpec goal{2000.0, 0.0, 20.0};
    bool critical_goal_damping = true;  // damping derived from stiffness and mass
    double filter_speed = 0.4;          // m/s
    GaussianSpringSpec robot_avoidance = GaussianSpringSpec::from_k_fmax(-900.0, -40.0);
    GaussianSpringSpec hand_avoidance = GaussianSpringSpec::from_sigma_fmax(0.18, -60.0);
    UnilateralDamperSpec damper{150.0, 0.5, 50.0};
    bool avoid_robots = true;
};

enum class ScenarioKind : std::uint8_t { PickPlace, Crossing, Hold };
const char* to_string(ScenarioKind kind);

struct CrossingTransfer {
    int block = 0;
    int cell = 0;
};

struct ScenarioConfig {
    ScenarioKind kind = ScenarioKind::PickPlace;
    Variant variant = Variant::A;
    int robots = 2;
    int humans = -1;  // -1: the variant's default
    Layout layout = canonical_layout();
    // crossing
    std::vector<CrossingTransfer> transfers;
    double start_jitter = 0.0;  // m, seeded perturbation of start positions
    // hold: nullopt entries pick and place every block while the others hold
    std::vector<std::optional<Vec3>> hold_positions;
    double hold_duration = 30.0;  // used when no robot picks and places
    // scripted humans placing their own blocks
    double human_speed = 0.3;
    double human_pause = 1.0;
    double human_start = 2.0;
};

struct HandConfig {
    HandMode mode = HandMode::Scripted;
    int keypoints = 1;
    double sample_rate = 10.0;
    double first_sample = 0.0;
    double absence_timeout = 1.0;
    std::vector<HandWaypoint> waypoints;
    std::optional<ApproachPattern> approach;
};

struct CoordinationConfig {
    bool negotiation = true;
    StallCriteria stall;
    SelectionRules rules;
    double round_timeout = 0.2;
    double neighborhood_radius = 0.0;
    int delay_steps = 1;
    double drop_rate = 0.0;
    bool springs_only = false;
};

struct ObstacleConfig {
    bool enabled = true;
    GaussianSpringSpec spring = GaussianSpringSpec::from_sigma_fmax(0.005, -20.0);
    double plane_offset = -0.02;  // anchor plane relative to the table top
};

struct RunConfig {
    ScenarioConfig scenario;
    std::vector<RobotParams> robots;  // one per robot, defaults merged
    double virtual_mass = 5.0;
    double floor_damping = 5.0;
    double dt = 0.004;
    double avoidance_cutoff = 0.0;  // m, 0 = every body-point pair evaluated
    ObstacleConfig obstacle;
    CoordinationConfig coordination;
    TaskTolerances tolerances;
    TaskGeometry geometry;
    std::vector<HandConfig> hands;
    bool damper = false;
    double duration_cap = 600.0;
    std::uint64_t seed = 1;
    int trace_stride = 5;
    bool trace_full = false;
    double realtime_factor = 1.0;
    double protective_distance = 0.3505;

    nlohmann::json source;  // normalized document this config was parsed from
};

/// Parses and validates. Throws ConfigError whose message starts with the
/// offending field path (e.g. "robot.robot_avoidance").
RunConfig parse_config(const nlohmann::json& doc);

/// Reads a config file; a "layout" string is resolved relative to the file
/// and inlined before parsing.
RunConfig load_config(const std::string& path);

nlohmann::json load_json_file(const std::string& path);

/// Re-parses `cfg.source` with `patch` merged in (RFC 7386 merge patch).
RunConfig with_overrides(const RunConfig& cfg, const nlohmann::json& patch);

/// Re-parses `cfg.source` with each (JSON pointer, value) written in order.
/// Array elements are addressed by index, unlike a merge patch.
RunConfig with_pointer_overrides(const RunConfig& cfg,
                                 const std::vector<std::pair<std::string, nlohmann::json>>& sets);

std::string config_hash(const RunConfig& cfg);

Layout parse_layout(const nlohmann::json& j, const std::string& path = "layout");
nlohmann::json layout_to_json(const Layout& layout);

/// Builds a spring from exactly two of stiffness / sigma / f_max.
GaussianSpringSpec parse_gaussian_spring(const nlohmann::json& j, const std::string& path);

}  // namespace vmc
