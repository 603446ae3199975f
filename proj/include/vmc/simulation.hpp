#pragma once

// Deterministic stepping loop: hands, forces, stall detection, negotiation,
// integration and task progress for every robot, recorded into a SimTrace.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmc/analysis.hpp"
#include "vmc/config.hpp"
#include "vmc/coordination.hpp"
#include "vmc/scenario.hpp"
#include "vmc/trace.hpp"

namespace vmc {

enum class RunStatus : std::uint8_t { Running, Completed, Capped, Faulted };
const char* to_string(RunStatus s);

/// Process exit code for a finished run: 0 completed, 2 capped, 3 faulted.
int exit_code(RunStatus s);

class Simulation {
public:
    explicit Simulation(RunConfig cfg);

    /// Advances one time step. No-op once the run has ended.
    RunStatus step();
    /// Steps until completion, the duration cap or a fault.
    RunStatus run_to_end();

    RunStatus status() const { return status_; }
    double time() const { return static_cast<double>(step_) * cfg_.dt; }
    std::int64_t steps() const { return step_; }
    const RunConfig& config() const { return cfg_; }
    const std::vector<AgentState>& robots() const { return robots_; }
    const TaskBoard& board() const { return board_; }
    const WorldDescription& world() const { return world_; }
    int blocks_total() const { return blocks_total_; }

    /// Trace so far. The footer is filled once the run has ended.
    const SimTrace& trace() const { return trace_; }
    SimTrace take_trace() { return std::move(trace_); }

    /// Compact live state for streaming clients.
    nlohmann::json snapshot() const;

    /// Mailbox of a live hand; nullptr for scripted hands.
    std::shared_ptr<LiveHandMailbox> hand_mailbox(int human) const;

    /// Replaces every robot's hand-avoidance spring. Takes effect next step.
    void set_hand_avoidance(const GaussianSpringSpec& spec);
    /// Adds or removes the hand dampers.
    void set_damper(bool enabled);
    /// True while some robot is grasping or releasing a block.
    bool manipulating() const;

private:
    struct RobotRuntime {
        PickPlaceStateMachine task;
        std::optional<TimeLawFilter> goal;
        std::vector<ComponentAttachment> attachments;
        StallDetector detector;
        std::unique_ptr<Negotiator> negotiator;
        std::mt19937_64 rng;
        DamperMemory damper_memory;
        ForceBreakdown forces;
        StallMetricSample metric;
        bool stalled = false;
        bool finished = false;
        bool yielding = false;
    };

    struct HumanRuntime {
        HandSource source;
        HandVelocityEstimator estimator;
        std::int64_t last_sample = -1;
        HandSnapshot snapshot;
        std::vector<HumanPlacement> placements;
        std::size_t next_placement = 0;
    };

    void build_world();
    void build_attachments();
    void restart_goal(int robot, double t);
    WorldSnapshot make_snapshot(double t) const;
    void update_hands(double t);
    void apply_human_placements(double t);
    void coordinate(int robot, double t, const WorldSnapshot& world);
    void record(double t);
    void advance_tasks(double t);
    bool complete() const;
    bool is_worker(int robot) const;
    void finish(RunStatus status, const std::string& fault = {});
    void push_event(TraceEvent e) { pending_events_.push_back(std::move(e)); }
    void push_task_events(const TaskAdvance& adv, int robot);
    AgentRecord agent_record(int robot, double t) const;

    RunConfig cfg_;
    WorldDescription world_;
    TaskBoard board_;
    std::vector<RobotSetup> setups_;
    std::vector<AgentState> robots_;
    std::vector<RobotRuntime> rt_;
    std::vector<HumanRuntime> humans_;
    std::unique_ptr<MessageBus> bus_;
    std::vector<int> counters_;
    int blocks_total_ = 0;
    int next_attachment_id_ = 0;
    std::int64_t step_ = 0;
    RunStatus status_ = RunStatus::Running;
    SimTrace trace_;
    std::vector<TraceEvent> pending_events_;
    std::vector<NegotiationMessage> pending_messages_;
};

struct RunResult {
    SimTrace trace;
    MetricsRecord metrics;
    RunStatus status = RunStatus::Running;
};

/// Runs headless to the end. A simulation fault ends the run with a faulted
/// footer; configuration errors propagate.
RunResult run(const RunConfig& cfg);

/// Trace so far, closed with a "stopped" footer if the run has not ended.
SimTrace session_trace(const Simulation& sim);

/// Metrics options matching a run configuration.
MetricsOptions metrics_options(const RunConfig& cfg);

/// Rebuilds the configuration stored in a trace header and recomputes the
/// metrics. Throws TraceIntegrityError if the config hash does not match.
MetricsRecord replay(const SimTrace& trace);

/// Runs the recorded configuration again, feeding live hands from the hand
/// samples in the trace and re-applying recorded control changes, for as
/// many steps as the trace covers.
RunResult resimulate(const SimTrace& trace);

}  // namespace vmc
