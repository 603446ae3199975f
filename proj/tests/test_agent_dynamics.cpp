#include <cmath>
#include <cstring>
#include <random>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "vmc/agent_dynamics.hpp"

using namespace vmc;

namespace {

AgentState robot(int index, const Vec3& base, const Vec3& ee) {
    AgentState a;
    a.id = {index, AgentKind::Robot};
    a.base_position = base;
    a.position = ee;
    a.refresh_body_points();
    return a;
}

WorldSnapshot world_of(const std::vector<AgentState>& robots) {
    WorldSnapshot w;
    w.robots = robots;
    w.goals.resize(robots.size());
    return w;
}

ComponentAttachment goal_attachment(int owner, const GoalSpringSpec& spec, int id = 0) {
    ComponentAttachment a;
    a.id = id;
    a.owner = owner;
    a.kind = ComponentKind::GoalSpring;
    a.spec = spec;
    a.other = {AnchorOther::Type::TaskTarget, owner, 0};
    return a;
}

}  // namespace

TEST(BodyPoints, EvenSpacingInclusive) {
    const auto p = body_points_of(Vec3::Zero(), Vec3(0, 0, 1.1));
    for (int i = 0; i < kBodyPointCount; ++i) {
        EXPECT_NEAR(p[static_cast<std::size_t>(i)].z(), 0.1 * i, 1e-15);
    }
    EXPECT_EQ(p.front(), Vec3::Zero());
    EXPECT_EQ(p.back(), Vec3(0, 0, 1.1));
}

TEST(BodyPoints, DegenerateSegment) {
    const auto p = body_points_of(Vec3(1, 2, 3), Vec3(1, 2, 3));
    for (const auto& q : p) EXPECT_EQ(q, Vec3(1, 2, 3));
}

TEST(BodyPoints, MidpointSymmetry) {
    const Vec3 a(0.3, -0.45, 0.11), b(-0.1, 0.2, 0.4);
    const auto p = body_points_of(a, b);
    EXPECT_NEAR(((p[5] + p[6]) / 2 - (a + b) / 2).norm(), 0.0, 1e-15);
}

TEST(Aggregate, NoAttachments) {
    const auto a = robot(0, Vec3::Zero(), Vec3(0.1, 0, 0));
    const auto f = aggregate_forces(a, {}, world_of({a}), 0.0);
    EXPECT_TRUE(f.per_component.empty());
    EXPECT_EQ(f.net, Vec3::Zero());
}

TEST(Aggregate, SingleClampedGoalSpring) {
    auto a = robot(0, Vec3(0, -0.45, 0.11), Vec3::Zero());
    auto w = world_of({a});
    w.goals[0] = TimeLawFilter{Vec3(0.01, 0, 0), Vec3(0.01, 0, 0), 1.0, 0.0};
    std::vector<ComponentAttachment> att{goal_attachment(0, {2000.0, 0.0, 20.0})};
    const auto f = aggregate_forces(a, att, w, 0.0);
    ASSERT_EQ(f.per_component.size(), 1u);
    EXPECT_NEAR((f.net - Vec3(20, 0, 0)).norm(), 0.0, 1e-12);
}

TEST(Aggregate, DisabledAttachmentsContributeNothing) {
    auto a = robot(0, Vec3(0, -0.45, 0.11), Vec3::Zero());
    auto w = world_of({a});
    w.goals[0] = TimeLawFilter{Vec3(0.01, 0, 0), Vec3(0.01, 0, 0), 1.0, 0.0};
    std::vector<ComponentAttachment> att{goal_attachment(0, {2000.0, 0.0, 20.0})};
    att[0].enabled = false;
    const auto f = aggregate_forces(a, att, w, 0.0);
    EXPECT_TRUE(f.per_component.empty());
    EXPECT_EQ(f.net, Vec3::Zero());
}

TEST(Aggregate, StallConfigurationCancels) {
    // Goal pulls +x; another robot's end-effector straight ahead pushes back
    // with the same magnitude. Only end-effector to end-effector is attached.
    const auto spring = GaussianSpringSpec::from_k_fmax(-1000.0, -40.0);
    const double r = 0.12;
    const double push = 1000.0 * r * std::exp(-r * r / (2 * spring.sigma * spring.sigma));
    auto a = robot(0, Vec3(-1, 0, 0), Vec3::Zero());
    auto b = robot(1, Vec3(1, 0, 0), Vec3(r, 0, 0));
    auto w = world_of({a, b});
    const Vec3 target(push / 1000.0, 0, 0);
    w.goals[0] = TimeLawFilter{target, target, 1.0, 0.0};
    std::vector<ComponentAttachment> att{goal_attachment(0, {1000.0, 0.0, 1000.0})};
    ComponentAttachment av;
    av.id = 1;
    av.owner = 0;
    av.kind = ComponentKind::RobotAvoidance;
    av.spec = spring;
    av.self_point = kEndEffectorPoint;
    av.other = {AnchorOther::Type::AgentPoint, 1, kEndEffectorPoint};
    att.push_back(av);
    const auto f = aggregate_forces(a, att, w, 0.0);
    ASSERT_EQ(f.per_component.size(), 2u);
    EXPECT_NEAR(f.per_component[0].force.norm(), push, 1e-9);
    EXPECT_NEAR(f.per_component[1].force.norm(), push, 1e-9);
    EXPECT_NEAR(f.net.norm(), 0.0, 1e-9);
}

TEST(Aggregate, NetEqualsSumAndLeverMapping) {
    const auto spring = GaussianSpringSpec::from_k_fmax(-900.0, -40.0);
    auto a = robot(0, Vec3(0, -0.45, 0.11), Vec3(0.02, -0.05, 0.11));
    auto b = robot(1, Vec3(0, 0.45, 0.11), Vec3(-0.03, 0.06, 0.12));
    const AgentId ids[] = {a.id, b.id};
    const auto att = attach_standard_avoidance(ids, spring);
    const auto w = world_of({a, b});
    const auto f = aggregate_forces(a, att, w, 0.0);
    ASSERT_EQ(f.per_component.size(), 144u);
    Vec3 sum = Vec3::Zero(), oracle = Vec3::Zero();
    for (const auto& c : f.per_component) sum += c.force;
    for (int i = 0; i < kBodyPointCount; ++i) {
        for (int j = 0; j < kBodyPointCount; ++j) {
            const Vec3 x = b.body_points[static_cast<std::size_t>(j)] - a.body_points[static_cast<std::size_t>(i)];
            oracle += (i / 11.0) * spring.stiffness * std::exp(-x.squaredNorm() / (2 * spring.sigma * spring.sigma)) * x;
        }
    }
    EXPECT_NEAR((f.net - sum).norm(), 0.0, 1e-9);
    EXPECT_NEAR((f.net - oracle).norm(), 0.0, 1e-9);
}

TEST(Aggregate, LeverMappedForceIsEnergyGradient) {
    // Generalized force on the end-effector equals -dE/dx_ee for the body
    // segment energy.
    const auto spring = GaussianSpringSpec::from_k_fmax(-900.0, -40.0);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-0.15, 0.15);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = robot(0, Vec3(0, -0.45, 0.11), Vec3(u(rng), u(rng), 0.11 + u(rng) / 3));
        auto b = robot(1, Vec3(0.45, 0, 0.11), Vec3(u(rng), u(rng), 0.11 + u(rng) / 3));
        const AgentId ids[] = {a.id, b.id};
        const auto att = attach_standard_avoidance(ids, spring);
        const auto f = aggregate_forces(a, att, world_of({a, b}), 0.0);
        Vec3 grad;
        const double h = 1e-7;
        for (int d = 0; d < 3; ++d) {
            auto ap = a, am = a;
            ap.position[d] += h;
            am.position[d] -= h;
            ap.refresh_body_points();
            am.refresh_body_points();
            const std::vector<AgentState> p{ap, b}, m{am, b};
            grad[d] = (avoidance_energy(p, spring) - avoidance_energy(m, spring)) / (2 * h);
        }
        EXPECT_LE((f.net + grad).norm(), 1e-6 * std::max(1.0, f.net.norm()));
    }
}

TEST(Aggregate, NewtonPairSymmetry) {
    const auto spring = GaussianSpringSpec::from_k_fmax(-900.0, -40.0);
    auto a = robot(0, Vec3(0, -0.45, 0.11), Vec3(0.01, -0.04, 0.11));
    auto b = robot(1, Vec3(0, 0.45, 0.11), Vec3(0.03, 0.07, 0.13));
    const AgentId ids[] = {a.id, b.id};
    const auto att = attach_standard_avoidance(ids, spring);
    const auto w = world_of({a, b});
    // Raw point-pair forces before lever mapping.
    for (int i = 0; i < kBodyPointCount; ++i) {
        for (int j = 0; j < kBodyPointCount; ++j) {
            const Vec3 pa = a.body_points[static_cast<std::size_t>(i)], pb = b.body_points[static_cast<std::size_t>(j)];
            const Vec3 fab = gaussian_avoidance_force(pa, pb, spring);
            const Vec3 fba = gaussian_avoidance_force(pb, pa, spring);
            EXPECT_LE((fab + fba).norm(), 1e-9);
        }
    }
    (void)w;
}

TEST(Attach, Counts) {
    const auto spring = GaussianSpringSpec::from_k_fmax(-900.0, -40.0);
    std::vector<AgentId> ids{{0, AgentKind::Robot}};
    EXPECT_TRUE(attach_standard_avoidance(ids, spring).empty());
    ids.push_back({1, AgentKind::Robot});
    const auto two = attach_standard_avoidance(ids, spring);
    EXPECT_EQ(two.size(), 2u * 144u);
    int owned_by_0 = 0;
    for (const auto& a : two) owned_by_0 += a.owner == 0;
    EXPECT_EQ(owned_by_0, 144);
    ids.push_back({2, AgentKind::Robot});
    ids.push_back({3, AgentKind::Robot});
    EXPECT_EQ(attach_standard_avoidance(ids, spring).size(), 6u * 2u * 144u);
}

TEST(Validate, DanglingReferenceRejected) {
    auto a = robot(0, Vec3::Zero(), Vec3(0.1, 0, 0));
    ComponentAttachment av;
    av.owner = 0;
    av.kind = ComponentKind::RobotAvoidance;
    av.spec = GaussianSpringSpec::from_k_fmax(-900.0, -40.0);
    av.other = {AnchorOther::Type::AgentPoint, 3, 0};
    const std::vector<ComponentAttachment> att{av};
    EXPECT_THROW(validate_attachments(att, world_of({a})), ConfigError);
}

TEST(Step, ZeroForceAtRest) {
    const auto a = robot(0, Vec3::Zero(), Vec3(0.2, 0.1, 0.3));
    const auto n = step_agent(a, ForceBreakdown{}, 0.004);
    EXPECT_EQ(n.position, a.position);
    EXPECT_EQ(n.velocity, a.velocity);
}

TEST(Step, SemiImplicitEuler) {
    auto a = robot(0, Vec3::Zero(), Vec3(0.2, 0, 0));
    a.virtual_mass = 1.0;
    ForceBreakdown f;
    f.net = Vec3(1, 0, 0);
    const auto n = step_agent(a, f, 0.01, {0.0});
    EXPECT_NEAR(n.velocity.x(), 0.01, 1e-15);
    EXPECT_NEAR(n.position.x(), 0.2 + 0.01 * 0.01, 1e-15);
}

TEST(Step, FloorDamping) {
    auto a = robot(0, Vec3::Zero(), Vec3(0.2, 0, 0));
    a.velocity = Vec3(1, 0, 0);
    const auto n = step_agent(a, ForceBreakdown{}, 0.01, {5.0});
    EXPECT_NEAR(n.velocity.x(), 1.0 - 5.0 * 0.01, 1e-15);
}

TEST(Step, ReachProjectionMatchesNearestPointOracle) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        Vec3 dir(g(rng), g(rng), g(rng));
        dir.normalize();
        auto a = robot(0, Vec3(0.1, -0.2, 0.05), Vec3(0.1, -0.2, 0.05) + 0.85 * dir);
        a.velocity = 0.3 * dir;
        ForceBreakdown f;
        f.net = 40.0 * Vec3(g(rng), g(rng), g(rng)).normalized() + 30.0 * dir;
        const auto n = step_agent(a, f, 0.004);
        // Free step.
        const Vec3 v_free = a.velocity + (f.net / a.virtual_mass - 5.0 * a.velocity) * 0.004;
        const Vec3 x_free = a.position + v_free * 0.004;
        const Vec3 off = x_free - a.base_position;
        EXPECT_LE((n.position - a.base_position).norm(), a.reach_radius + 1e-9);
        if (off.norm() > a.reach_radius) {
            // Nearest point on the sphere, found by sampling around the
            // free direction.
            double best = 1e9;
            Vec3 best_p;
            const Vec3 c = off.normalized();
            Vec3 t1 = c.unitOrthogonal(), t2 = c.cross(t1);
            for (int s = -50; s <= 50; ++s) {
                for (int r = -50; r <= 50; ++r) {
                    const Vec3 d = (c + 1e-3 * s * t1 + 1e-3 * r * t2).normalized();
                    const Vec3 p = a.base_position + a.reach_radius * d;
                    const double dist = (p - x_free).norm();
                    if (dist < best) {
                        best = dist;
                        best_p = p;
                    }
                }
            }
            EXPECT_LE((n.position - best_p).norm(), 1e-6);
            EXPECT_LE(n.velocity.dot(c), 1e-12);
        }
    }
}

TEST(Step, NonFiniteForceFaults) {
    const auto a = robot(0, Vec3::Zero(), Vec3(0.2, 0, 0));
    ForceBreakdown f;
    f.net = Vec3(NAN, 0, 0);
    EXPECT_THROW(step_agent(a, f, 0.004), SimulationFault);
    f.net = Vec3(0, INFINITY, 0);
    EXPECT_THROW(step_agent(a, f, 0.004), SimulationFault);
}

TEST(Step, Deterministic) {
    auto a = robot(0, Vec3::Zero(), Vec3(0.2, 0.1, 0.05));
    a.velocity = Vec3(0.1, -0.3, 0.2);
    ForceBreakdown f;
    f.net = Vec3(3.3, -1.7, 0.25);
    const auto n1 = step_agent(a, f, 0.004);
    const auto n2 = step_agent(a, f, 0.004);
    EXPECT_EQ(std::memcmp(n1.position.data(), n2.position.data(), sizeof(double) * 3), 0);
    EXPECT_EQ(std::memcmp(n1.velocity.data(), n2.velocity.data(), sizeof(double) * 3), 0);
}

TEST(Step, AvoidanceOnlySystemIsPassive) {
    // Goal springs off: only robot-robot springs and viscous floor damping.
    // Kinetic plus spring energy never increases beyond integrator error.
    const auto spring = GaussianSpringSpec::from_k_fmax(-900.0, -40.0);
    std::vector<AgentState> rs{robot(0, Vec3(0, -0.45, 0.11), Vec3(0.0, -0.03, 0.11)),
                               robot(1, Vec3(0, 0.45, 0.11), Vec3(0.02, 0.04, 0.11)),
                               robot(2, Vec3(-0.45, 0, 0.11), Vec3(-0.05, 0.0, 0.12))};
    rs[0].velocity = Vec3(0.0, 0.3, 0.0);
    rs[1].velocity = Vec3(-0.1, -0.2, 0.0);
    std::vector<AgentId> ids;
    for (const auto& r : rs) ids.push_back(r.id);
    const auto att = attach_standard_avoidance(ids, spring);
    const double dt = 0.004;
    auto energy = [&](const std::vector<AgentState>& s) {
        double e = avoidance_energy(s, spring);
        for (const auto& r : s) e += 0.5 * r.virtual_mass * r.velocity.squaredNorm();
        return e;
    };
    double prev = energy(rs);
    for (int step = 0; step < 2000; ++step) {
        const auto w = world_of(rs);
        std::vector<AgentState> next;
        for (const auto& r : rs) next.push_back(step_agent(r, aggregate_forces(r, att, w, 0.0), dt));
        rs = next;
        const double e = energy(rs);
        EXPECT_LE(e, prev + 50.0 * dt * dt) << "step " << step;
        prev = e;
    }
}
