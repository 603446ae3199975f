#include "vmc/coordination.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vmc {

const char* to_string(MessageKind kind) {
    switch (kind) {
        case MessageKind::Bid: return "bid";
        case MessageKind::Grant: return "grant";
        case MessageKind::Release: return "release";
    }
    return "unknown";
}

const char* to_string(NodeStatus status) {
    switch (status) {
        case NodeStatus::Stalled: return "stalled";
        case NodeStatus::NotStalled: return "not_stalled";
        case NodeStatus::Finished: return "finished";
    }
    return "unknown";
}

StallMetricSample stall_metric(std::span<const Vec3> forces) {
    StallMetricSample s;
    Vec3 sum = Vec3::Zero();
    for (const auto& f : forces) {
        s.total += f.norm();
        sum += f;
    }
    s.net = sum.norm();
    s.rho = std::max(0.0, s.total - s.net);
    return s;
}

StallMetricSample stall_metric(const ForceBreakdown& breakdown, bool springs_only) {
    StallMetricSample s;
    Vec3 sum = Vec3::Zero();
    for (const auto& c : breakdown.per_component) {
        if (springs_only && c.kind == ComponentKind::HandDamper) {
            continue;
        }
        s.total += c.force.norm();
        sum += c.force;
    }
    s.net = sum.norm();
    s.rho = std::max(0.0, s.total - s.net);
    return s;
}

bool detect_stall(std::span<const StallMetricSample> window, const StallCriteria& criteria) {
    if (window.empty() || !stalled_now(window.back(), criteria)) {
        return false;
    }
    const double newest = window.back().time;
    double run_start = newest;
    for (auto it = window.rbegin(); it != window.rend(); ++it) {
        if (!stalled_now(*it, criteria)) {
            break;
        }
        run_start = it->time;
    }
    // Tolerate the rounding of accumulated step times.
    return newest - run_start >= criteria.dwell - 1e-9;
}

bool StallDetector::push(const StallMetricSample& sample) {
    window_.push_back(sample);
    std::size_t drop = 0;
    while (window_.size() - drop >= 2 && window_[drop + 1].time <= sample.time - criteria_.dwell) {
        ++drop;
    }
    window_.erase(window_.begin(), window_.begin() + static_cast<std::ptrdiff_t>(drop));
    return detect_stall(window_, criteria_);
}

double round_uniform(std::uint64_t seed, int round) {
    // splitmix64 finalizer over (seed, round)
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(round) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return static_cast<double>(z >> 11) * 0x1.0p-53;
}

SelectionPool selection_pool(std::span<const NegotiationMessage> candidates, const SelectionRules& rules) {
    std::vector<const NegotiationMessage*> eligible;
    for (const auto& m : candidates) {
        if (m.state != NodeStatus::Finished) {
            eligible.push_back(&m);
        }
    }
    std::sort(eligible.begin(), eligible.end(),
              [](const auto* a, const auto* b) { return a->sender < b->sender; });

    SelectionPool pool;
    for (const auto* m : eligible) {
        const bool manipulating = m->grasping && m->dist_to_nearest_robot < rules.proximity_threshold;
        const bool near_target = m->state == NodeStatus::Stalled && m->dist_to_goal < rules.near_target;
        if (manipulating || near_target) {
            pool.members.push_back(m);
        }
    }
    if (!pool.members.empty()) {
        pool.preferred = true;
        return pool;
    }
    for (const auto* m : eligible) {
        if (m->state == NodeStatus::Stalled) {
            pool.members.push_back(m);
        }
    }
    return pool;
}

std::vector<double> selection_probabilities(const SelectionPool& pool, double alpha) {
    std::vector<double> p;
    if (pool.members.empty()) {
        return p;
    }
    int lowest = pool.members.front()->priority_count;
    for (const auto* m : pool.members) {
        lowest = std::min(lowest, m->priority_count);
    }
    double total = 0.0;
    for (const auto* m : pool.members) {
        p.push_back(std::exp(-alpha * static_cast<double>(m->priority_count - lowest)));
        total += p.back();
    }
    for (auto& v : p) {
        v /= total;
    }
    return p;
}

std::optional<int> select_priority(std::span<const NegotiationMessage> candidates, PriorityState& priority,
                                   const SelectionRules& rules, std::uint64_t seed, int round, double now) {
    if (priority.holder) {
        return std::nullopt;
    }
    const auto pool = selection_pool(candidates, rules);
    if (pool.members.empty()) {
        return std::nullopt;
    }
    const auto probs = selection_probabilities(pool, rules.alpha);
    const double u = round_uniform(seed, round);
    std::size_t pick = probs.size() - 1;
    double cumulative = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cumulative += probs[i];
        if (u < cumulative) {
            pick = i;
            break;
        }
    }
    const int winner = pool.members[pick]->sender;
    priority.holder = winner;
    priority.granted_at = now;
    ++priority.counters[winner];
    return winner;
}

std::vector<ToggleCommand> apply_priority(int winner, std::span<const int> robots) {
    std::vector<ToggleCommand> cmds;
    for (int r : robots) {
        if (r == winner) {
            cmds.push_back({r, ComponentKind::GoalSpring, true});
            cmds.push_back({r, ComponentKind::RobotAvoidance, false});
        } else {
            cmds.push_back({r, ComponentKind::GoalSpring, false});
            cmds.push_back({r, ComponentKind::RobotAvoidance, true});
        }
    }
    return cmds;
}

std::vector<ToggleCommand> restore_commands(std::span<const int> robots) {
    std::vector<ToggleCommand> cmds;
    for (int r : robots) {
        cmds.push_back({r, ComponentKind::GoalSpring, true});
        cmds.push_back({r, ComponentKind::RobotAvoidance, true});
    }
    return cmds;
}

std::optional<std::vector<ToggleCommand>> release_priority(PriorityState& priority, const AgentState& holder,
                                                           const Vec3& waypoint, std::span<const int> robots,
                                                           double tolerance) {
    if (!priority.holder || (holder.position - waypoint).norm() > tolerance) {
        return std::nullopt;
    }
    priority.holder.reset();
    return restore_commands(robots);
}

void apply_toggles(std::span<ComponentAttachment> attachments, std::span<const ToggleCommand> commands, int robot) {
    for (const auto& cmd : commands) {
        if (cmd.robot != robot) {
            continue;
        }
        if (is_human_safety(cmd.kind)) {
            throw std::logic_error("coordination may not toggle human-safety components");
        }
        for (auto& a : attachments) {
            if (a.owner == robot && a.kind == cmd.kind) {
                a.enabled = cmd.enabled;
            }
        }
    }
}

Negotiator::Negotiator(int self, std::vector<int> all_robots, NegotiationParams params)
    : self_(self), robots_(std::move(all_robots)), params_(params) {
    std::sort(robots_.begin(), robots_.end());
}

NegotiationMessage Negotiator::make_message(MessageKind kind, double now, const LocalStatus& local) const {
    NegotiationMessage m;
    m.kind = kind;
    m.sender = self_;
    m.round = active_round_;
    if (local.finished) {
        m.state = NodeStatus::Finished;
    } else if (local.stall_detected || local.stalled_now) {
        m.state = NodeStatus::Stalled;
    } else {
        m.state = NodeStatus::NotStalled;
    }
    m.priority_count = priority_.count(self_);
    m.dist_to_goal = local.dist_to_goal;
    m.grasping = local.grasping;
    m.dist_to_nearest_robot = local.dist_to_nearest_robot;
    m.timestamp = now;
    return m;
}

void Negotiator::join_round(int round, double now, const LocalStatus& local, NegotiationOutput& out) {
    phase_ = Phase::InRound;
    active_round_ = round;
    round_ = std::max(round_, round);
    joined_at_ = now;
    bids_.clear();
    expected_ = local.participants;
    if (std::find(expected_.begin(), expected_.end(), self_) == expected_.end()) {
        expected_.push_back(self_);
    }
    auto bid = make_message(MessageKind::Bid, now, local);
    bids_[self_] = bid;
    out.outbound.push_back(bid);
}

bool Negotiator::rule_ii_trigger(const LocalStatus& local) const {
    return !local.finished && local.grasping && !local.at_waypoint &&
           local.dist_to_nearest_robot < params_.rules.proximity_threshold;
}

void Negotiator::drop_priority(DecisionKind kind, NegotiationOutput& out) {
    NegotiationDecision d;
    d.kind = kind;
    d.round = active_round_;
    d.winner = priority_.holder.value_or(-1);
    const int self[] = {self_};
    d.toggles = restore_commands(self);
    priority_.holder.reset();
    phase_ = Phase::Idle;
    out.decisions.push_back(std::move(d));
}

void Negotiator::decide(double now, NegotiationOutput& out) {
    std::vector<NegotiationMessage> bids;
    bids.reserve(bids_.size());
    for (const auto& [sender, m] : bids_) {
        bids.push_back(m);
    }
    bids_.clear();
    const auto winner = select_priority(bids, priority_, params_.rules, params_.seed, active_round_, now);
    NegotiationDecision d;
    d.round = active_round_;
    if (!winner) {
        d.kind = DecisionKind::NoWinner;
        phase_ = Phase::Idle;
        out.decisions.push_back(std::move(d));
        return;
    }
    d.kind = DecisionKind::Grant;
    d.winner = *winner;
    const int self[] = {self_};
    d.toggles = apply_priority(*winner, self);
    if (*winner == self_) {
        phase_ = Phase::Holding;
        NegotiationMessage grant;
        grant.kind = MessageKind::Grant;
        grant.sender = self_;
        grant.round = active_round_;
        grant.priority_count = priority_.count(self_);
        grant.timestamp = now;
        grant.winner = self_;
        out.outbound.push_back(grant);
    } else {
        phase_ = Phase::Yielding;
    }
    out.decisions.push_back(std::move(d));
}

NegotiationOutput Negotiator::step(double now, const LocalStatus& local, std::span<const NegotiationMessage> inbox) {
    NegotiationOutput out;

    for (const auto& m : inbox) {
        if (m.sender == self_) {
            continue;
        }
        round_ = std::max(round_, m.round);
        switch (m.kind) {
            case MessageKind::Bid:
                if (phase_ == Phase::Idle ||
                    (phase_ == Phase::InRound && m.round > active_round_)) {
                    join_round(m.round, now, local, out);
                    bids_[m.sender] = m;
                } else if (phase_ == Phase::InRound && m.round == active_round_) {
                    bids_[m.sender] = m;
                } else if (phase_ == Phase::Holding) {
                    // The bidder missed our grant; repeat it.
                    NegotiationMessage grant;
                    grant.kind = MessageKind::Grant;
                    grant.sender = self_;
                    grant.round = active_round_;
                    grant.priority_count = priority_.count(self_);
                    grant.timestamp = now;
                    grant.winner = self_;
                    out.outbound.push_back(grant);
                }
                break;
            case MessageKind::Grant:
                if (phase_ == Phase::Holding && m.winner != self_) {
                    drop_priority(DecisionKind::ConflictFallback, out);
                } else if (phase_ == Phase::Yielding && priority_.holder && m.winner != *priority_.holder) {
                    drop_priority(DecisionKind::ConflictFallback, out);
                } else if (phase_ == Phase::Idle || phase_ == Phase::InRound) {
                    // Learned the outcome from the winner itself.
                    if (phase_ == Phase::InRound && m.round < active_round_) {
                        break;
                    }
                    bids_.clear();
                    active_round_ = m.round;
                    priority_.holder = m.winner;
                    priority_.granted_at = m.timestamp;
                    ++priority_.counters[m.winner];
                    phase_ = Phase::Yielding;
                    NegotiationDecision d;
                    d.kind = DecisionKind::Grant;
                    d.round = m.round;
                    d.winner = m.winner;
                    const int self[] = {self_};
                    d.toggles = apply_priority(m.winner, self);
                    out.decisions.push_back(std::move(d));
                }
                break;
            case MessageKind::Release:
                if (phase_ == Phase::Yielding && priority_.holder && *priority_.holder == m.winner) {
                    drop_priority(DecisionKind::Release, out);
                }
                break;
        }
    }

    if (phase_ == Phase::Holding && local.at_waypoint) {
        NegotiationMessage release;
        release.kind = MessageKind::Release;
        release.sender = self_;
        release.round = active_round_;
        release.priority_count = priority_.count(self_);
        release.timestamp = now;
        release.winner = self_;
        out.outbound.push_back(release);
        drop_priority(DecisionKind::Release, out);
    }

    if (phase_ == Phase::Idle && !local.finished && (local.stall_detected || rule_ii_trigger(local))) {
        join_round(round_ + 1, now, local, out);
        out.opened_round = true;
    }

    if (phase_ == Phase::InRound) {
        const bool complete = std::all_of(expected_.begin(), expected_.end(),
                                          [&](int r) { return bids_.count(r) > 0; });
        if (complete || now - joined_at_ >= params_.round_timeout - 1e-9) {
            decide(now, out);
        }
    }
    return out;
}

MessageBus::MessageBus(int nodes, int delay_steps, double drop_rate, std::uint64_t seed)
    : nodes_(nodes), delay_(std::max(1, delay_steps)), drop_rate_(drop_rate), rng_(seed) {}

void MessageBus::broadcast(std::int64_t step, const NegotiationMessage& message) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (int to = 0; to < nodes_; ++to) {
        if (to == message.sender) {
            continue;
        }
        ++sent_;
        if (drop_rate_ > 0.0 && uniform(rng_) < drop_rate_) {
            ++dropped_;
            continue;
        }
        queue_.push_back({step + delay_, to, message});
    }
}

std::vector<NegotiationMessage> MessageBus::deliver(int node, std::int64_t step) {
    std::vector<NegotiationMessage> out;
    for (auto it = queue_.begin(); it != queue_.end();) {
        if (it->to == node && it->due <= step) {
            out.push_back(it->message);
            it = queue_.erase(it);
        } else {
            ++it;
        }
    }
    return out;
}

}  // namespace vmc
