#include "vmc/agent_dynamics.hpp"

#include <cmath>

namespace vmc {

std::string to_string(const AgentId& id) {
    return (id.kind == AgentKind::Robot ? "robot" : "human") + std::to_string(id.index + 1);
}

const char* to_string(ComponentKind kind) {
    switch (kind) {
        case ComponentKind::GoalSpring: return "goal";
        case ComponentKind::RobotAvoidance: return "robot_avoid";
        case ComponentKind::HandAvoidance: return "hand_avoid";
        case ComponentKind::HandDamper: return "hand_damper";
        case ComponentKind::ObstacleSpring: return "obstacle";
    }
    return "unknown";
}

BodyPoints body_points_of(const Vec3& base, const Vec3& ee) {
    BodyPoints points;
    const Vec3 span = ee - base;
    for (int i = 0; i < kBodyPointCount; ++i) {
        points[static_cast<std::size_t>(i)] = base + lever_fraction(i) * span;
    }
    points[kEndEffectorPoint] = ee;
    return points;
}

Vec3 ForceBreakdown::sum_of(ComponentKind kind) const {
    Vec3 sum = Vec3::Zero();
    for (const auto& c : per_component) {
        if (c.kind == kind) {
            sum += c.force;
        }
    }
    return sum;
}

void validate_attachments(std::span<const ComponentAttachment> attachments, const WorldSnapshot& world) {
    const auto robots = static_cast<int>(world.robots.size());
    const auto humans = static_cast<int>(world.hands.size());
    for (const auto& a : attachments) {
        const auto where = "attachment " + std::to_string(a.id) + ": ";
        if (a.owner < 0 || a.owner >= robots) {
            throw ConfigError(where + "owner robot does not exist");
        }
        if (a.self_point < 0 || a.self_point >= kBodyPointCount) {
            throw ConfigError(where + "self body point out of range");
        }
        switch (a.other.type) {
            case AnchorOther::Type::AgentPoint:
                if (a.other.agent < 0 || a.other.agent >= robots || a.other.agent == a.owner ||
                    a.other.point < 0 || a.other.point >= kBodyPointCount) {
                    throw ConfigError(where + "dangling robot body point reference");
                }
                break;
            case AnchorOther::Type::HandKeypoint:
                if (a.other.agent < 0 || a.other.agent >= humans || a.other.point < 0) {
                    throw ConfigError(where + "dangling hand reference");
                }
                break;
            case AnchorOther::Type::StaticObstacle:
                if (a.other.point < 0 || static_cast<std::size_t>(a.other.point) >= world.obstacle_count) {
                    throw ConfigError(where + "dangling obstacle reference");
                }
                break;
            case AnchorOther::Type::TaskTarget:
                if (static_cast<std::size_t>(a.owner) >= world.goals.size()) {
                    throw ConfigError(where + "no task target slot for owner");
                }
                break;
        }
        const bool spec_ok = std::visit(
            [&](const auto& spec) {
                using T = std::decay_t<decltype(spec)>;
                switch (a.kind) {
                    case ComponentKind::GoalSpring: return std::is_same_v<T, GoalSpringSpec>;
                    case ComponentKind::RobotAvoidance:
                    case ComponentKind::HandAvoidance: return std::is_same_v<T, GaussianSpringSpec>;
                    case ComponentKind::HandDamper: return std::is_same_v<T, UnilateralDamperSpec>;
                    case ComponentKind::ObstacleSpring: return std::is_same_v<T, ObstacleSpringSpec>;
                }
                return false;
            },
            a.spec);
        if (!spec_ok) {
            throw ConfigError(where + "component spec does not match its kind");
        }
    }
}

namespace {

Vec3 hand_keypoint(const HandSnapshot& hand, int k, bool& ok) {
    ok = hand.present && k < static_cast<int>(hand.keypoints.size());
    return ok ? hand.keypoints[static_cast<std::size_t>(k)] : Vec3::Zero();
}

Vec3 component_force(const ComponentAttachment& a, const AgentState& agent, const WorldSnapshot& world,
                     double t, DamperMemory* memory) {
    const Vec3& self = agent.body_points[static_cast<std::size_t>(a.self_point)];
    switch (a.kind) {
        case ComponentKind::RobotAvoidance: {
            const auto& other = world.robots[static_cast<std::size_t>(a.other.agent)];
            return gaussian_avoidance_force(self, other.body_points[static_cast<std::size_t>(a.other.point)],
                                            std::get<GaussianSpringSpec>(a.spec));
        }
        case ComponentKind::GoalSpring: {
            const auto& goal = world.goals[static_cast<std::size_t>(a.owner)];
            if (!goal) {
                return Vec3::Zero();
            }
            return goal_spring_force(self, agent.velocity, filtered_goal_position(*goal, t),
                                     goal->anchor_velocity(t), std::get<GoalSpringSpec>(a.spec));
        }
        case ComponentKind::HandAvoidance: {
            bool ok = false;
            const Vec3 kp = hand_keypoint(world.hands[static_cast<std::size_t>(a.other.agent)], a.other.point, ok);
            if (!ok) {
                return Vec3::Zero();
            }
            return gaussian_avoidance_force(self, kp, std::get<GaussianSpringSpec>(a.spec));
        }
        case ComponentKind::HandDamper: {
            const auto& hand = world.hands[static_cast<std::size_t>(a.other.agent)];
            bool ok = false;
            const Vec3 kp = hand_keypoint(hand, a.other.point, ok);
            if (!ok) {
                return Vec3::Zero();
            }
            const auto k = static_cast<std::size_t>(a.other.point);
            const Vec3 v_hand = k < hand.velocities.size() ? hand.velocities[k] : Vec3::Zero();
            const auto& spec = std::get<UnilateralDamperSpec>(a.spec);
            // The damper acts on the end-effector only; scale by the lever so a
            // body-point damper stays consistent with the other elements.
            const Vec3 v_self = lever_fraction(a.self_point) * agent.velocity;
            auto f = unilateral_damper_force(self, v_self, kp, v_hand, spec);
            if (f) {
                if (memory && f->squaredNorm() > 0.0) {
                    (*memory)[a.id] = -f->normalized();
                }
                return *f;
            }
            // Coincident points: reuse the previous approach direction.
            if (memory) {
                if (auto it = memory->find(a.id); it != memory->end()) {
                    const double closing = it->second.dot(v_hand - v_self);
                    if (closing < 0.0) {
                        const double mag = std::min(-spec.base_damping * closing, spec.force_cap);
                        return -mag * it->second;
                    }
                }
            }
            return Vec3::Zero();
        }
        case ComponentKind::ObstacleSpring:
            return obstacle_spring_force(self, agent.grasped_block.has_value(),
                                         std::get<ObstacleSpringSpec>(a.spec));
    }
    return Vec3::Zero();
}

}  // namespace

void aggregate_forces_into(ForceBreakdown& out, const AgentState& agent,
                           std::span<const ComponentAttachment> attachments, const WorldSnapshot& world,
                           double t, DamperMemory* memory) {
    out.per_component.clear();
    out.net = Vec3::Zero();
    const int owner = agent.id.index;
    for (const auto& a : attachments) {
        if (!a.enabled || a.owner != owner) {
            continue;
        }
        Vec3 f = component_force(a, agent, world, t, memory);
        if (a.self_point != kEndEffectorPoint) {
            f *= lever_fraction(a.self_point);
        }
        out.per_component.push_back({a.id, a.kind, f});
        out.net += f;
    }
}

ForceBreakdown aggregate_forces(const AgentState& agent, std::span<const ComponentAttachment> attachments,
                                const WorldSnapshot& world, double t, DamperMemory* memory) {
    ForceBreakdown out;
    aggregate_forces_into(out, agent, attachments, world, t, memory);
    return out;
}

AgentState step_agent(const AgentState& agent, const ForceBreakdown& breakdown, double dt,
                      const DynamicsParams& params) {
    if (!(dt > 0.0)) {
        throw SimulationFault("step_agent: dt must be positive");
    }
    if (!breakdown.net.allFinite()) {
        throw SimulationFault("step_agent: non-finite net force on " + to_string(agent.id));
    }
    AgentState next = agent;
    next.velocity = agent.velocity + (breakdown.net / agent.virtual_mass - params.floor_damping * agent.velocity) * dt;
    next.position = agent.position + next.velocity * dt;

    const Vec3 offset = next.position - agent.base_position;
    const double reach = offset.norm();
    if (reach > agent.reach_radius) {
        const Vec3 radial = offset / reach;
        next.position = agent.base_position + agent.reach_radius * radial;
        const double outward = next.velocity.dot(radial);
        if (outward > 0.0) {
            next.velocity -= outward * radial;
        }
    }
    if (!next.position.allFinite() || !next.velocity.allFinite()) {
        throw SimulationFault("step_agent: non-finite state for " + to_string(agent.id));
    }
    next.refresh_body_points();
    return next;
}

std::vector<ComponentAttachment> attach_standard_avoidance(std::span<const AgentId> robots,
                                                           const GaussianSpringSpec& spec, int first_id) {
    std::vector<ComponentAttachment> out;
    if (robots.size() < 2) {
        return out;
    }
    out.reserve(robots.size() * (robots.size() - 1) * kBodyPointCount * kBodyPointCount);
    int id = first_id;
    for (const auto& owner : robots) {
        for (const auto& other : robots) {
            if (owner == other) {
                continue;
            }
            for (int i = 0; i < kBodyPointCount; ++i) {
                for (int j = 0; j < kBodyPointCount; ++j) {
                    ComponentAttachment a;
                    a.id = id++;
                    a.owner = owner.index;
                    a.kind = ComponentKind::RobotAvoidance;
                    a.spec = spec;
                    a.self_point = i;
                    a.other = {AnchorOther::Type::AgentPoint, other.index, j};
                    out.push_back(a);
                }
            }
        }
    }
    return out;
}

double avoidance_energy(std::span<const AgentState> robots, const GaussianSpringSpec& spec) {
    double energy = 0.0;
    for (std::size_t a = 0; a < robots.size(); ++a) {
        for (std::size_t b = a + 1; b < robots.size(); ++b) {
            for (const auto& p : robots[a].body_points) {
                for (const auto& q : robots[b].body_points) {
                    energy += spec.energy(q - p);
                }
            }
        }
    }
    return energy;
}

}  // namespace vmc
