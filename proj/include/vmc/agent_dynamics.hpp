#pragma once

// Task-space point-mass model of each robot end-effector, the virtual
// components attached to it, and the per-component force breakdown consumed
// by the stall detector.

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "vmc/virtual_components.hpp"

namespace vmc {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when integration produces (or is fed) non-finite values.
class SimulationFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class AgentKind : std::uint8_t { Robot, Human };

struct AgentId {
    int index = 0;
    AgentKind kind = AgentKind::Robot;

    auto operator<=>(const AgentId&) const = default;
};

std::string to_string(const AgentId& id);

inline constexpr int kBodyPointCount = 12;
inline constexpr int kEndEffectorPoint = kBodyPointCount - 1;

using BodyPoints = std::array<Vec3, kBodyPointCount>;

/// Twelve points evenly spaced (inclusive) from base to end-effector.
BodyPoints body_points_of(const Vec3& base, const Vec3& ee);

/// Fraction of end-effector displacement seen by body point `i`; also the
/// factor mapping a force on that point to a generalized end-effector force.
inline double lever_fraction(int point) {
    return static_cast<double>(point) / static_cast<double>(kBodyPointCount - 1);
}

struct AgentState {
    AgentId id;
    Vec3 position = Vec3::Zero();
    Vec3 velocity = Vec3::Zero();
    double virtual_mass = 5.0;
    Vec3 base_position = Vec3::Zero();
    double reach_radius = 0.85;
    std::optional<int> grasped_block;
    BodyPoints body_points{};

    void refresh_body_points() { body_points = body_points_of(base_position, position); }
};

struct DynamicsParams {
    double floor_damping = 5.0;  // mu, 1/s
};

enum class ComponentKind : std::uint8_t {
    GoalSpring,
    RobotAvoidance,
    HandAvoidance,
    HandDamper,
    ObstacleSpring,
};

inline constexpr int kComponentKindCount = 5;

const char* to_string(ComponentKind kind);

/// Whether the component protects a human. These are never toggled off.
inline bool is_human_safety(ComponentKind kind) {
    return kind == ComponentKind::HandAvoidance || kind == ComponentKind::HandDamper;
}

struct AnchorOther {
    enum class Type : std::uint8_t { AgentPoint, HandKeypoint, StaticObstacle, TaskTarget };
    Type type = Type::TaskTarget;
    int agent = 0;  // robot index for AgentPoint, human index for HandKeypoint
    int point = 0;  // body point or keypoint index; obstacle id
};

using ComponentSpec =
    std::variant<GoalSpringSpec, GaussianSpringSpec, UnilateralDamperSpec, ObstacleSpringSpec>;

struct ComponentAttachment {
    int id = 0;
    int owner = 0;  // robot index
    ComponentKind kind = ComponentKind::GoalSpring;
    ComponentSpec spec;
    int self_point = kEndEffectorPoint;
    AnchorOther other;
    bool enabled = true;
};

struct HandSnapshot {
    bool present = false;
    std::vector<Vec3> keypoints;
    std::vector<Vec3> velocities;
};

/// Immutable view of the world handed to force evaluation and controllers.
struct WorldSnapshot {
    double time = 0.0;
    std::vector<AgentState> robots;
    std::vector<std::optional<TimeLawFilter>> goals;  // one per robot
    std::vector<HandSnapshot> hands;                  // one per human
    std::size_t obstacle_count = 1;
};

struct ComponentForce {
    int attachment = 0;
    ComponentKind kind = ComponentKind::GoalSpring;
    Vec3 force = Vec3::Zero();
};

struct ForceBreakdown {
    std::vector<ComponentForce> per_component;
    Vec3 net = Vec3::Zero();

    /// Sum of per-component forces of one kind.
    Vec3 sum_of(ComponentKind kind) const;
};

/// Last valid brake direction per damper attachment, used when the hand and
/// end-effector coincide.
using DamperMemory = std::unordered_map<int, Vec3>;

/// Throws ConfigError if an attachment refers to an entity missing from
/// `world`.
void validate_attachments(std::span<const ComponentAttachment> attachments, const WorldSnapshot& world);

/// Generalized end-effector forces from every enabled attachment owned by
/// `agent`. Forces acting on body points are mapped through the lever
/// fraction of the point.
ForceBreakdown aggregate_forces(const AgentState& agent, std::span<const ComponentAttachment> attachments,
                                const WorldSnapshot& world, double t, DamperMemory* memory = nullptr);

/// Same as above, reusing `out` to avoid reallocations.
void aggregate_forces_into(ForceBreakdown& out, const AgentState& agent,
                           std::span<const ComponentAttachment> attachments, const WorldSnapshot& world,
                           double t, DamperMemory* memory = nullptr);

/// Semi-implicit Euler step with viscous floor damping and reach-sphere
/// projection.
AgentState step_agent(const AgentState& agent, const ForceBreakdown& breakdown, double dt,
                      const DynamicsParams& params = {});

/// Robot-robot avoidance springs between every body point of each robot and
/// every body point of every other robot. Each ordered pair (owner, other)
/// gets its own 12x12 block so the owner can switch its side independently.
std::vector<ComponentAttachment> attach_standard_avoidance(std::span<const AgentId> robots,
                                                           const GaussianSpringSpec& spec,
                                                           int first_id = 0);

/// Gaussian energy stored in robot-robot springs, counting each unordered
/// point pair once.
double avoidance_energy(std::span<const AgentState> robots, const GaussianSpringSpec& spec);

}  // namespace vmc
