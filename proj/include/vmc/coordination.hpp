#pragma once

// Decentralized stall detection and priority negotiation.
//
// Every robot runs its own StallDetector and Negotiator. Nodes only learn
// about each other through NegotiationMessages carried by a MessageBus; a
// grant is reached independently on every node by running the same seeded
// draw over the same set of bids.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vmc/agent_dynamics.hpp"

namespace vmc {

struct StallMetricSample {
    double rho = 0.0;        // F_tot - F_net, N
    double net = 0.0;        // |sum f_i|, N
    double total = 0.0;      // sum |f_i|, N
    double time = 0.0;       // s
    double speed = 0.0;      // end-effector speed, m/s
};

/// rho = sum |f_i| - |sum f_i| over every entry of the breakdown. With
/// `springs_only` the damper entries are skipped.
StallMetricSample stall_metric(const ForceBreakdown& breakdown, bool springs_only = false);
StallMetricSample stall_metric(std::span<const Vec3> forces);

struct StallCriteria {
    double threshold = 4.0;     // N
    double dwell = 0.5;         // s
    double speed_floor = 0.01;  // m/s
};

/// True iff the newest samples show rho above the threshold and speed below
/// the floor continuously for at least `dwell` seconds.
bool detect_stall(std::span<const StallMetricSample> window, const StallCriteria& criteria);

/// Instantaneous part of the stall condition, without the dwell.
inline bool stalled_now(const StallMetricSample& s, const StallCriteria& c) {
    return s.rho > c.threshold && s.speed < c.speed_floor;
}

/// Keeps the sample window needed by detect_stall.
class StallDetector {
public:
    explicit StallDetector(StallCriteria criteria = {}) : criteria_(criteria) {}

    /// Returns detect_stall over the updated window.
    bool push(const StallMetricSample& sample);
    void reset() { window_.clear(); }
    const StallCriteria& criteria() const { return criteria_; }

private:
    StallCriteria criteria_;
    std::vector<StallMetricSample> window_;
};

enum class MessageKind : std::uint8_t { Bid, Grant, Release };
enum class NodeStatus : std::uint8_t { Stalled, NotStalled, Finished };

const char* to_string(MessageKind kind);
const char* to_string(NodeStatus status);

struct NegotiationMessage {
    MessageKind kind = MessageKind::Bid;
    int sender = 0;  // robot index
    int round = 0;
    NodeStatus state = NodeStatus::NotStalled;
    int priority_count = 0;
    double dist_to_goal = 0.0;
    bool grasping = false;
    double dist_to_nearest_robot = 0.0;
    double timestamp = 0.0;
    int winner = -1;  // Grant / Release only
};

struct PriorityState {
    std::optional<int> holder;
    double granted_at = 0.0;
    std::map<int, int> counters;

    int count(int robot) const {
        auto it = counters.find(robot);
        return it == counters.end() ? 0 : it->second;
    }
};

struct SelectionRules {
    double alpha = 1.0;                // bias strength of the softmax draw
    double proximity_threshold = 0.15; // rule (ii), m
    double near_target = 0.06;         // rule (iii), m
};

/// Deterministic uniform in [0, 1) shared by every node for a given round.
double round_uniform(std::uint64_t seed, int round);

/// Robots eligible for the draw and whether they came from the preferred set.
struct SelectionPool {
    std::vector<const NegotiationMessage*> members;
    bool preferred = false;
};

/// Applies rules (i)-(iii): finished robots are dropped; robots grasping or
/// releasing close to another robot, and stalled robots close to their
/// target, are preferred. Otherwise the pool is every stalled robot.
SelectionPool selection_pool(std::span<const NegotiationMessage> candidates, const SelectionRules& rules);

/// P(i) = exp(-alpha c_i) / sum_j exp(-alpha c_j) over the pool, in pool order.
std::vector<double> selection_probabilities(const SelectionPool& pool, double alpha);

/// Picks the prioritized robot. Returns nullopt if a holder already exists or
/// the pool is empty. Increments the winner's counter and sets the holder.
std::optional<int> select_priority(std::span<const NegotiationMessage> candidates, PriorityState& priority,
                                   const SelectionRules& rules, std::uint64_t seed, int round,
                                   double now = 0.0);

struct ToggleCommand {
    int robot = 0;
    ComponentKind kind = ComponentKind::GoalSpring;
    bool enabled = true;

    bool operator==(const ToggleCommand&) const = default;
};

/// Winner keeps its goal and drops robot avoidance; every peer suspends its
/// goal and keeps avoiding. Hand-related components are never touched.
std::vector<ToggleCommand> apply_priority(int winner, std::span<const int> robots);

/// Commands restoring the default configuration (goal and robot avoidance on).
std::vector<ToggleCommand> restore_commands(std::span<const int> robots);

/// Releases the holder once its end-effector is within `tolerance` of its
/// current waypoint. Counters are left untouched.
std::optional<std::vector<ToggleCommand>> release_priority(PriorityState& priority, const AgentState& holder,
                                                           const Vec3& waypoint, std::span<const int> robots,
                                                           double tolerance = 0.01);

/// Applies toggles to the attachments owned by `robot`. Human-safety
/// components are never modified.
void apply_toggles(std::span<ComponentAttachment> attachments, std::span<const ToggleCommand> commands, int robot);

struct NegotiationParams {
    SelectionRules rules;
    double round_timeout = 0.2;         // s
    double neighborhood_radius = 0.0;   // 0 = all robots participate
    std::uint64_t seed = 0;
};

/// What a node knows about itself when it steps its negotiator.
struct LocalStatus {
    bool stall_detected = false;  // detector fired (dwell satisfied)
    bool stalled_now = false;     // instantaneous stall condition
    bool finished = false;
    bool grasping = false;
    bool at_waypoint = false;
    double dist_to_goal = 0.0;
    double dist_to_nearest_robot = 0.0;
    std::vector<int> participants;  // robots expected to bid, self included
};

enum class DecisionKind : std::uint8_t { Grant, Release, ConflictFallback, NoWinner };

struct NegotiationDecision {
    DecisionKind kind = DecisionKind::NoWinner;
    int round = 0;
    int winner = -1;
    std::vector<ToggleCommand> toggles;  // only for this node's robot
};

struct NegotiationOutput {
    std::vector<NegotiationMessage> outbound;
    std::vector<NegotiationDecision> decisions;
    bool opened_round = false;
};

class Negotiator {
public:
    Negotiator(int self, std::vector<int> all_robots, NegotiationParams params);

    NegotiationOutput step(double now, const LocalStatus& local, std::span<const NegotiationMessage> inbox);

    const PriorityState& priority() const { return priority_; }
    bool in_round() const { return phase_ == Phase::InRound; }
    bool holding() const { return phase_ == Phase::Holding; }
    bool yielding() const { return phase_ == Phase::Yielding; }
    int round() const { return round_; }
    int self() const { return self_; }

private:
    enum class Phase : std::uint8_t { Idle, InRound, Holding, Yielding };

    NegotiationMessage make_message(MessageKind kind, double now, const LocalStatus& local) const;
    void join_round(int round, double now, const LocalStatus& local, NegotiationOutput& out);
    void decide(double now, NegotiationOutput& out);
    void drop_priority(DecisionKind kind, NegotiationOutput& out);
    bool rule_ii_trigger(const LocalStatus& local) const;

    int self_;
    std::vector<int> robots_;
    NegotiationParams params_;
    PriorityState priority_;
    Phase phase_ = Phase::Idle;
    int round_ = 0;       // highest round seen
    int active_round_ = 0;
    double joined_at_ = 0.0;
    std::vector<int> expected_;
    std::map<int, NegotiationMessage> bids_;
};

/// In-process broadcast transport with a fixed delivery delay (in steps, at
/// least one) and an optional seeded drop rate.
class MessageBus {
public:
    MessageBus(int nodes, int delay_steps = 1, double drop_rate = 0.0, std::uint64_t seed = 0);

    void broadcast(std::int64_t step, const NegotiationMessage& message);
    /// Messages due for `node` at `step`, in send order.
    std::vector<NegotiationMessage> deliver(int node, std::int64_t step);

    std::size_t sent() const { return sent_; }
    std::size_t dropped() const { return dropped_; }

private:
    struct InFlight {
        std::int64_t due;
        int to;
        NegotiationMessage message;
    };
    int nodes_;
    int delay_;
    double drop_rate_;
    std::mt19937_64 rng_;
    std::deque<InFlight> queue_;
    std::size_t sent_ = 0;
    std::size_t dropped_ = 0;
};

}  // namespace vmc
