#include <cmath>
#include <map>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "vmc/coordination.hpp"

using namespace vmc;

namespace {

NegotiationMessage bid(int sender, NodeStatus state, int count = 0, double dist_goal = 0.3, bool grasping = false,
                       double nearest = 1.0) {
    NegotiationMessage m;
    m.sender = sender;
    m.state = state;
    m.priority_count = count;
    m.dist_to_goal = dist_goal;
    m.grasping = grasping;
    m.dist_to_nearest_robot = nearest;
    return m;
}

StallMetricSample sample(double t, double rho, double speed) {
    StallMetricSample s;
    s.time = t;
    s.rho = rho;
    s.speed = speed;
    return s;
}

}  // namespace

TEST(StallMetric, ListedForceSets) {
    const Vec3 one[] = {Vec3(10, 0, 0)};
    EXPECT_NEAR(stall_metric(one).rho, 0.0, 1e-9);
    const Vec3 opposed[] = {Vec3(10, 0, 0), Vec3(-10, 0, 0)};
    EXPECT_NEAR(stall_metric(opposed).rho, 20.0, 1e-9);
    const Vec3 orthogonal[] = {Vec3(10, 0, 0), Vec3(0, 10, 0)};
    EXPECT_NEAR(stall_metric(orthogonal).rho, 20.0 - 10.0 * std::sqrt(2.0), 1e-9);
}

TEST(StallMetric, NonNegativeAndZeroOnlyWhenAligned) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> count(1, 6);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<Vec3> f(static_cast<std::size_t>(count(rng)));
        const bool aligned = trial % 2 == 0;
        const Vec3 dir = Vec3(g(rng), g(rng), g(rng)).normalized();
        for (auto& v : f) v = aligned ? std::abs(g(rng)) * dir : Vec3(g(rng), g(rng), g(rng));
        const auto s = stall_metric(f);
        EXPECT_GE(s.rho, 0.0);
        // Brute force: all pairs share a direction.
        bool parallel = true;
        for (const auto& a : f) {
            for (const auto& b : f) {
                if (a.norm() > 0 && b.norm() > 0 && a.dot(b) < a.norm() * b.norm() * (1 - 1e-12)) parallel = false;
            }
        }
        if (parallel) {
            EXPECT_NEAR(s.rho, 0.0, 1e-9);
        } else {
            EXPECT_GT(s.rho, 0.0);
        }
    }
}

TEST(StallMetric, SpringsOnlySkipsDampers) {
    ForceBreakdown b;
    b.per_component.push_back({0, ComponentKind::GoalSpring, Vec3(10, 0, 0)});
    b.per_component.push_back({1, ComponentKind::HandDamper, Vec3(-10, 0, 0)});
    EXPECT_NEAR(stall_metric(b).rho, 20.0, 1e-12);
    EXPECT_NEAR(stall_metric(b, true).rho, 0.0, 1e-12);
}

TEST(DetectStall, ListedCases) {
    const StallCriteria c{4.0, 0.5, 0.01};
    std::vector<StallMetricSample> w;
    for (int i = 0; i <= 250; ++i) w.push_back(sample(i * 0.004, 5.0, 0.0));
    EXPECT_TRUE(detect_stall(w, c));
    for (auto& s : w) s.rho = 0.0;
    EXPECT_FALSE(detect_stall(w, c));
    for (auto& s : w) {
        s.rho = 5.0;
        s.speed = 0.3;
    }
    EXPECT_FALSE(detect_stall(w, c));
}

TEST(DetectStall, DwellBoundary) {
    const StallCriteria c{4.0, 0.5, 0.01};
    StallDetector d(c);
    bool fired = false;
    double fired_at = -1;
    for (int i = 0; i <= 200; ++i) {
        const double t = i * 0.004;
        if (d.push(sample(t, 4.5, 0.001)) && !fired) {
            fired = true;
            fired_at = t;
        }
    }
    ASSERT_TRUE(fired);
    EXPECT_NEAR(fired_at, 0.5, 1e-9);
}

TEST(DetectStall, InterruptionRestartsDwell) {
    const StallCriteria c{4.0, 0.5, 0.01};
    StallDetector d(c);
    double t = 0;
    for (int i = 0; i < 100; ++i, t += 0.004) EXPECT_FALSE(d.push(sample(t, 5.0, 0.0)));
    EXPECT_FALSE(d.push(sample(t, 3.0, 0.0)));
    t += 0.004;
    for (int i = 0; i < 100; ++i, t += 0.004) EXPECT_FALSE(d.push(sample(t, 5.0, 0.0)));
    // Threshold is strict.
    StallDetector e(c);
    for (int i = 0; i < 300; ++i) EXPECT_FALSE(e.push(sample(i * 0.004, 4.0, 0.0)));
}

TEST(Selection, ProbabilitiesFromCounts) {
    const std::vector<NegotiationMessage> even{bid(0, NodeStatus::Stalled, 0), bid(1, NodeStatus::Stalled, 0)};
    const auto pe = selection_probabilities(selection_pool(even, {}), 1.0);
    ASSERT_EQ(pe.size(), 2u);
    EXPECT_NEAR(pe[0], 0.5, 1e-15);
    EXPECT_NEAR(pe[1], 0.5, 1e-15);
    const std::vector<NegotiationMessage> biased{bid(0, NodeStatus::Stalled, 0), bid(1, NodeStatus::Stalled, 5)};
    const auto pb = selection_probabilities(selection_pool(biased, {}), 1.0);
    EXPECT_NEAR(pb[0], 1.0 / (1.0 + std::exp(-5.0)), 1e-12);
    EXPECT_NEAR(pb[0], 0.9933, 5e-5);
}

TEST(Selection, LargeCountsStayFinite) {
    const std::vector<NegotiationMessage> m{bid(0, NodeStatus::Stalled, 100000), bid(1, NodeStatus::Stalled, 100001)};
    const auto p = selection_probabilities(selection_pool(m, {}), 2.0);
    EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
}

TEST(Selection, FinishedRobotsExcluded) {
    const std::vector<NegotiationMessage> m{bid(0, NodeStatus::Finished), bid(1, NodeStatus::Stalled),
                                            bid(2, NodeStatus::Finished)};
    for (int round = 0; round < 50; ++round) {
        PriorityState p;
        EXPECT_EQ(select_priority(m, p, {}, 7, round), 1);
    }
    const std::vector<NegotiationMessage> none{bid(0, NodeStatus::Finished), bid(1, NodeStatus::NotStalled)};
    PriorityState p;
    EXPECT_FALSE(select_priority(none, p, {}, 7, 0).has_value());
    EXPECT_FALSE(select_priority(std::span<const NegotiationMessage>{}, p, {}, 7, 0).has_value());
}

TEST(Selection, NearTargetPreferred) {
    const std::vector<NegotiationMessage> m{bid(0, NodeStatus::Stalled, 0, 0.30), bid(1, NodeStatus::Stalled, 9, 0.05)};
    const auto pool = selection_pool(m, {});
    EXPECT_TRUE(pool.preferred);
    ASSERT_EQ(pool.members.size(), 1u);
    EXPECT_EQ(pool.members[0]->sender, 1);
    for (int round = 0; round < 50; ++round) {
        PriorityState p;
        EXPECT_EQ(select_priority(m, p, {}, 3, round), 1);
    }
}

TEST(Selection, GraspingNearRobotPreferredEvenWhenNotStalled) {
    const std::vector<NegotiationMessage> m{bid(0, NodeStatus::Stalled, 0, 0.3),
                                            bid(1, NodeStatus::NotStalled, 0, 0.3, true, 0.10)};
    const auto pool = selection_pool(m, {});
    ASSERT_EQ(pool.members.size(), 1u);
    EXPECT_EQ(pool.members[0]->sender, 1);
    // Far from every robot: no preference.
    const std::vector<NegotiationMessage> far{bid(0, NodeStatus::Stalled, 0, 0.3),
                                              bid(1, NodeStatus::NotStalled, 0, 0.3, true, 0.40)};
    const auto pool2 = selection_pool(far, {});
    EXPECT_FALSE(pool2.preferred);
    ASSERT_EQ(pool2.members.size(), 1u);
    EXPECT_EQ(pool2.members[0]->sender, 0);
}

TEST(Selection, SingleHolderAndCounterSemantics) {
    const std::vector<NegotiationMessage> m{bid(0, NodeStatus::Stalled), bid(1, NodeStatus::Stalled)};
    PriorityState p;
    const auto w = select_priority(m, p, {}, 11, 0, 1.5);
    ASSERT_TRUE(w.has_value());
    EXPECT_EQ(p.holder, w);
    EXPECT_EQ(p.granted_at, 1.5);
    EXPECT_EQ(p.count(*w), 1);
    EXPECT_FALSE(select_priority(m, p, {}, 11, 1).has_value());
    EXPECT_EQ(p.count(*w), 1);

    AgentState holder;
    holder.position = Vec3(0.1, 0, 0);
    const int robots[] = {0, 1};
    EXPECT_FALSE(release_priority(p, holder, Vec3(0.2, 0, 0), robots).has_value());
    const auto cmds = release_priority(p, holder, Vec3(0.105, 0, 0), robots);
    ASSERT_TRUE(cmds.has_value());
    EXPECT_FALSE(p.holder.has_value());
    EXPECT_EQ(p.count(*w), 1);
    for (const auto& c : *cmds) EXPECT_TRUE(c.enabled);
    EXPECT_EQ(cmds->size(), 4u);
}

TEST(Selection, SameInputsSameWinner) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> c(0, 4);
    for (int round = 0; round < 1000; ++round) {
        std::vector<NegotiationMessage> m;
        for (int r = 0; r < 3; ++r) m.push_back(bid(r, NodeStatus::Stalled, c(rng)));
        auto shuffled = m;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        PriorityState a, b;
        EXPECT_EQ(select_priority(m, a, {}, 99, round), select_priority(shuffled, b, {}, 99, round));
    }
}

TEST(ApplyPriority, WinnerDropsAvoidancePeersSuspendGoal) {
    const int robots[] = {0, 1, 2, 3};
    const auto cmds = apply_priority(2, robots);
    int suspended = 0;
    for (const auto& c : cmds) {
        EXPECT_FALSE(is_human_safety(c.kind));
        if (c.robot == 2) {
            EXPECT_EQ(c.enabled, c.kind == ComponentKind::GoalSpring);
        } else {
            EXPECT_EQ(c.enabled, c.kind == ComponentKind::RobotAvoidance);
            suspended += c.kind == ComponentKind::GoalSpring && !c.enabled;
        }
    }
    EXPECT_EQ(suspended, 3);
    const int alone[] = {0};
    EXPECT_EQ(apply_priority(0, alone).size(), 2u);
}

TEST(ApplyPriority, TogglesLeaveHandComponentsAlone) {
    std::vector<ComponentAttachment> att(4);
    const ComponentKind kinds[] = {ComponentKind::GoalSpring, ComponentKind::RobotAvoidance,
                                   ComponentKind::HandAvoidance, ComponentKind::HandDamper};
    for (int i = 0; i < 4; ++i) {
        att[static_cast<std::size_t>(i)].owner = 0;
        att[static_cast<std::size_t>(i)].kind = kinds[i];
    }
    const int robots[] = {0, 1};
    apply_toggles(att, apply_priority(0, robots), 0);
    EXPECT_TRUE(att[0].enabled);
    EXPECT_FALSE(att[1].enabled);
    EXPECT_TRUE(att[2].enabled);
    EXPECT_TRUE(att[3].enabled);
    apply_toggles(att, apply_priority(1, robots), 0);
    EXPECT_FALSE(att[0].enabled);
    EXPECT_TRUE(att[1].enabled);
    EXPECT_TRUE(att[2].enabled);
    const ToggleCommand bad[] = {{0, ComponentKind::HandAvoidance, false}};
    EXPECT_THROW(apply_toggles(att, bad, 0), std::logic_error);
}

TEST(Fairness, EvolvingCountsPassChiSquare) {
    for (int k : {2, 3, 4}) {
        for (double alpha : {0.5, 1.0, 2.0}) {
            PriorityState p;
            SelectionRules rules;
            rules.alpha = alpha;
            const int draws = 1200;
            for (int round = 0; round < draws; ++round) {
                std::vector<NegotiationMessage> m;
                for (int r = 0; r < k; ++r) m.push_back(bid(r, NodeStatus::Stalled, p.count(r)));
                ASSERT_TRUE(select_priority(m, p, rules, 2024, round).has_value());
                p.holder.reset();
            }
            double chi2 = 0.0;
            const double expected = static_cast<double>(draws) / k;
            for (int r = 0; r < k; ++r) chi2 += std::pow(p.count(r) - expected, 2) / expected;
            const boost::math::chi_squared dist(k - 1);
            EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01) << "k=" << k << " alpha=" << alpha;
        }
    }
}

TEST(Fairness, FixedCountDrawRates) {
    int first = 0;
    const int n = 20000;
    for (int round = 0; round < n; ++round) {
        const std::vector<NegotiationMessage> m{bid(0, NodeStatus::Stalled, 0), bid(1, NodeStatus::Stalled, 5)};
        PriorityState p;
        first += *select_priority(m, p, {}, 5, round) == 0;
    }
    const double expected = 1.0 / (1.0 + std::exp(-5.0));
    EXPECT_NEAR(static_cast<double>(first) / n, expected, 3 * std::sqrt(expected * (1 - expected) / n));
}

TEST(RoundUniform, InUnitIntervalAndKeyed) {
    double sum = 0;
    for (int r = 0; r < 10000; ++r) {
        const double u = round_uniform(42, r);
        EXPECT_GE(u, 0.0);
        EXPECT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / 10000, 0.5, 0.02);
    EXPECT_EQ(round_uniform(42, 7), round_uniform(42, 7));
    EXPECT_NE(round_uniform(42, 7), round_uniform(43, 7));
}

namespace {

struct Node {
    Negotiator neg;
    LocalStatus local;
    std::vector<NegotiationDecision> decisions;
};

// Steps every node once per tick over a shared bus.
void tick(std::vector<Node>& nodes, MessageBus& bus, std::int64_t step, double dt) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const auto inbox = bus.deliver(static_cast<int>(i), step);
        auto out = nodes[i].neg.step(step * dt, nodes[i].local, inbox);
        for (const auto& m : out.outbound) bus.broadcast(step, m);
        for (auto& d : out.decisions) nodes[i].decisions.push_back(d);
    }
}

std::vector<Node> make_nodes(int n, std::uint64_t seed) {
    std::vector<int> all;
    for (int i = 0; i < n; ++i) all.push_back(i);
    std::vector<Node> nodes;
    for (int i = 0; i < n; ++i) {
        NegotiationParams p;
        p.seed = seed;
        nodes.push_back({Negotiator(i, all, p), {}, {}});
        nodes.back().local.participants = all;
        nodes.back().local.dist_to_goal = 0.3;
        nodes.back().local.dist_to_nearest_robot = 0.5;
    }
    return nodes;
}

}  // namespace

TEST(Negotiator, NoStallNoMessages) {
    auto nodes = make_nodes(3, 1);
    MessageBus bus(3);
    for (int s = 0; s < 200; ++s) tick(nodes, bus, s, 0.004);
    EXPECT_EQ(bus.sent(), 0u);
    for (const auto& n : nodes) EXPECT_TRUE(n.decisions.empty());
}

TEST(Negotiator, AllNodesAgreeOnWinnerAndRelease) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        auto nodes = make_nodes(3, seed);
        MessageBus bus(3, 1);
        for (auto& n : nodes) n.local.stall_detected = n.local.stalled_now = true;
        std::int64_t s = 0;
        for (; s < 100; ++s) {
            tick(nodes, bus, s, 0.004);
            bool all = true;
            for (const auto& n : nodes) all = all && !n.decisions.empty();
            if (all) break;
        }
        ASSERT_LT(s, 100);
        EXPECT_LE(s * 0.004, 0.1);
        const int winner = nodes[0].decisions.back().winner;
        int holders = 0;
        for (const auto& n : nodes) {
            ASSERT_EQ(n.decisions.back().kind, DecisionKind::Grant);
            EXPECT_EQ(n.decisions.back().winner, winner);
            holders += n.neg.holding();
        }
        EXPECT_EQ(holders, 1);
        // Winner arrives: everyone resumes.
        for (auto& n : nodes) n.local.stall_detected = n.local.stalled_now = false;
        nodes[static_cast<std::size_t>(winner)].local.at_waypoint = true;
        for (int k = 0; k < 5; ++k) tick(nodes, bus, ++s, 0.004);
        for (const auto& n : nodes) {
            EXPECT_EQ(n.decisions.back().kind, DecisionKind::Release);
            EXPECT_FALSE(n.neg.holding() || n.neg.yielding());
            EXPECT_EQ(n.neg.priority().count(winner), 1);
        }
    }
}

TEST(Negotiator, TimeoutProceedsWithReceivedBids) {
    auto nodes = make_nodes(2, 3);
    MessageBus bus(2, 1, 1.0, 0);  // every message lost
    nodes[0].local.stall_detected = true;
    for (int s = 0; s < 60; ++s) tick(nodes, bus, s, 0.004);
    ASSERT_FALSE(nodes[0].decisions.empty());
    EXPECT_EQ(nodes[0].decisions.front().kind, DecisionKind::Grant);
    EXPECT_EQ(nodes[0].decisions.front().winner, 0);
    EXPECT_TRUE(nodes[1].decisions.empty());
}

TEST(Negotiator, ConflictingGrantsFallBack) {
    std::vector<int> all{0, 1};
    NegotiationParams p;
    Negotiator a(0, all, p);
    LocalStatus st;
    st.stall_detected = st.stalled_now = true;
    st.participants = {0};
    auto out = a.step(0.0, st, {});
    ASSERT_TRUE(a.holding());
    NegotiationMessage other;
    other.kind = MessageKind::Grant;
    other.sender = 1;
    other.winner = 1;
    other.round = 1;
    const NegotiationMessage inbox[] = {other};
    st.stall_detected = st.stalled_now = false;
    out = a.step(0.004, st, inbox);
    ASSERT_FALSE(out.decisions.empty());
    EXPECT_EQ(out.decisions.front().kind, DecisionKind::ConflictFallback);
    EXPECT_FALSE(a.holding());
    EXPECT_EQ(a.priority().count(0), 1);
}

TEST(Negotiator, FinishedRobotNeverOpensRound) {
    auto nodes = make_nodes(2, 1);
    MessageBus bus(2);
    nodes[0].local.finished = true;
    nodes[0].local.stall_detected = true;
    for (int s = 0; s < 100; ++s) tick(nodes, bus, s, 0.004);
    EXPECT_EQ(bus.sent(), 0u);
}

TEST(MessageBus, DelayAndDrop) {
    MessageBus bus(3, 2);
    NegotiationMessage m;
    m.sender = 0;
    bus.broadcast(10, m);
    EXPECT_TRUE(bus.deliver(1, 11).empty());
    EXPECT_EQ(bus.deliver(1, 12).size(), 1u);
    EXPECT_EQ(bus.deliver(2, 12).size(), 1u);
    EXPECT_TRUE(bus.deliver(0, 12).empty());
    MessageBus lossy(2, 1, 0.5, 9);
    for (int i = 0; i < 2000; ++i) lossy.broadcast(i, m);
    EXPECT_NEAR(static_cast<double>(lossy.dropped()) / lossy.sent(), 0.5, 0.05);
}
