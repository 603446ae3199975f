#pragma once

// The pick-and-place world: grid, blocks, robot bases, per-robot task state
// machines and hand-position sources.

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vmc/agent_dynamics.hpp"

namespace vmc {

struct GridSpec {
    Vec3 center = Vec3::Zero();  // on the table surface
    double pitch = 0.06;
    int rows = 4;
    int cols = 4;

    int cell_count() const { return rows * cols; }
    /// Cell index = row * cols + col; rows advance along +y, cols along +x.
    Vec3 cell_center(int cell) const;
    double center_distance(int cell) const;
    int row_of(int cell) const { return cell / cols; }
    int col_of(int cell) const { return cell % cols; }
};

/// Everything the paper leaves unspecified about the physical setup, pinned
/// in one place. Serializable as the layout file.
struct Layout {
    GridSpec grid;
    double block_size = 0.03;
    double table_height = 0.0;
    std::vector<Vec3> block_homes;  // block centers
    std::vector<Vec3> robot_bases;  // up to four, in robot order
    double reach_radius = 0.85;

    void validate() const;
};

/// 16 blocks, 8 per long side 6 cm apart at 6 cm from the grid edge; robot
/// bases on the four sides of the table at transport height.
Layout canonical_layout();

enum class Variant : std::uint8_t { A, B, MixedCheckerboard };
const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct RobotSetup {
    Vec3 base = Vec3::Zero();
    Vec3 rest_pose = Vec3::Zero();
    std::vector<int> own_blocks;       // picked first
    std::vector<int> permitted_cells;  // cells this robot may fill
    bool may_take_other_blocks = true;
};

struct HumanSetup {
    Vec3 entry = Vec3::Zero();  // where the hand rests outside the workspace
    std::vector<int> blocks;
    std::vector<int> cells;
};

struct WorldDescription {
    Layout layout;
    Variant variant = Variant::A;
    std::vector<RobotSetup> robots;
    std::vector<HumanSetup> humans;
    std::uint64_t seed = 0;
};

/// Throws ConfigError when the robot count is outside 1..4 or the human
/// count does not fit the free sides.
WorldDescription build_layout(int n_robots, Variant variant, std::uint64_t seed,
                              const Layout& layout = canonical_layout(), int n_humans = -1);

/// Splits `items` between `anchors` by distance with near-equal quotas
/// (earlier anchors take the remainder). Ties go to the lower index.
std::vector<std::vector<int>> balanced_partition(std::span<const Vec3> items, std::span<const Vec3> anchors);

/// Returns an unfilled permitted cell of minimal center distance, ties broken
/// uniformly by `rng`; nullopt once every permitted cell is taken.
std::optional<int> next_cell(const GridSpec& grid, std::span<const int> permitted, const std::vector<bool>& taken,
                             std::mt19937_64& rng);

enum class BlockState : std::uint8_t { AtHome, Held, Placed };

struct Block {
    int id = 0;
    double size = 0.03;
    Vec3 home = Vec3::Zero();
    Vec3 position = Vec3::Zero();
    std::optional<int> assigned_cell;
    BlockState state = BlockState::AtHome;
    int holder = -1;      // agent index while held
    int claimed_by = -1;  // robot that has it in its plan, -1 = free, -2 = human
};

/// Shared physical task state: blocks and cell occupancy.
struct TaskBoard {
    GridSpec grid;
    std::vector<Block> blocks;
    std::vector<bool> cell_taken;   // claimed or filled
    std::vector<int> cell_block;    // block placed in cell, -1 if empty

    static TaskBoard from(const WorldDescription& world);
    bool all_placed() const;
    int placed_count() const;
};

enum class TaskPhase : std::uint8_t {
    Idle,
    MoveAboveBlock,
    Descend,
    Grasp,
    Lift,
    Transport,
    DescendPlace,
    Release,
    Retreat,
    Done,
};

const char* to_string(TaskPhase phase);

/// Manipulation phases during which the robot counts as grasping/releasing.
inline bool grasping_flag(TaskPhase p) {
    return p == TaskPhase::DescendPlace || p == TaskPhase::Grasp || p == TaskPhase::Release;
}

struct TaskTolerances {
    double position = 0.01;  // m
    double speed = 0.02;     // m/s
    double dwell = 0.1;      // s spent in grasp / release
};

struct TaskGeometry {
    double grasp_height = 0.03;  // end-effector z at the block top
    double lift = 0.08;          // above-position offset

    Vec3 grasp_point(const Vec3& xy) const { return {xy.x(), xy.y(), grasp_height}; }
    Vec3 above_point(const Vec3& xy) const { return {xy.x(), xy.y(), grasp_height + lift}; }
};

struct PickPlaceStateMachine {
    TaskPhase phase = TaskPhase::Idle;
    Vec3 waypoint = Vec3::Zero();
    int block = -1;
    int cell = -1;
    double phase_entered = 0.0;
};

struct TaskContext {
    int robot = 0;
    const RobotSetup* setup = nullptr;
    TaskGeometry geometry;
    TaskTolerances tolerances;
};

enum class TaskEventKind : std::uint8_t { Assigned, Grasped, Placed, Replanned, Done };
const char* to_string(TaskEventKind kind);

struct TaskEvent {
    TaskEventKind kind = TaskEventKind::Assigned;
    int robot = 0;
    int block = -1;
    int cell = -1;
    double time = 0.0;
};

struct TaskAdvance {
    bool waypoint_changed = false;
    std::vector<TaskEvent> events;
};

/// Pre-grasped single transfer (used by the crossing scenario).
void start_transfer(PickPlaceStateMachine& sm, TaskBoard& board, const TaskContext& ctx, int block, int cell,
                    double t);

/// Advances the state machine. Waypoints are reached when the end-effector
/// is within the position tolerance and slower than the speed tolerance.
/// Grasp and release flip the block state; a block that is no longer
/// available when the grasp fires triggers a re-plan.
TaskAdvance advance_task(PickPlaceStateMachine& sm, AgentState& agent, TaskBoard& board, const TaskContext& ctx,
                         double t, std::mt19937_64& rng);

inline bool at_waypoint(const PickPlaceStateMachine& sm, const AgentState& agent, const TaskTolerances& tol) {
    return (agent.position - sm.waypoint).norm() <= tol.position && agent.velocity.norm() < tol.speed;
}

// ---------------------------------------------------------------------------
// Hand sources

struct HandWaypoint {
    double t = 0.0;
    Vec3 position = Vec3::Zero();
    bool present = true;  // presence on the segment starting here
};

/// Repeated approach / dwell / retreat passes, the pattern of a participant
/// entering and leaving the workspace.
struct ApproachPattern {
    Vec3 from = Vec3::Zero();
    Vec3 to = Vec3::Zero();
    double speed = 0.8;
    double dwell = 2.0;
    double rest = 3.0;
    int repetitions = 4;
    double start = 1.0;
};

std::vector<HandWaypoint> approach_retreat_script(const ApproachPattern& p);

/// Latest input from a live client; written by the network side, read at
/// step boundaries.
class LiveHandMailbox {
public:
    struct Input {
        Vec3 position = Vec3::Zero();
        bool engaged = false;
        double received_at = -1.0;  // simulation time
    };
    void post(const Vec3& position, bool engaged, double sim_time);
    Input latest() const;

private:
    mutable std::mutex mutex_;
    Input input_;
};

enum class HandMode : std::uint8_t { Scripted, Live };

struct HandSource {
    HandMode mode = HandMode::Scripted;
    double sample_rate = 10.0;  // Hz
    double first_sample = 0.0;
    double absence_timeout = 1.0;
    std::vector<Vec3> keypoint_offsets{Vec3::Zero()};
    std::vector<HandWaypoint> script;
    std::shared_ptr<LiveHandMailbox> live;

    /// Offsets of a rigid hand-sized cluster of `count` keypoints.
    static std::vector<Vec3> keypoint_cluster(int count);
};

/// Hand keypoints at time t, sample-and-hold at the source rate. nullopt when
/// the hand is absent.
std::optional<std::vector<Vec3>> hand_position(const HandSource& source, double t);

/// Backward-difference velocity with exponential smoothing, updated only on
/// new hand samples.
class HandVelocityEstimator {
public:
    explicit HandVelocityEstimator(double time_constant = 0.1) : tau_(time_constant) {}
    void update(double sample_time, const std::optional<std::vector<Vec3>>& keypoints);
    const std::vector<Vec3>& velocities() const { return velocity_; }

private:
    double tau_;
    double last_time_ = 0.0;
    std::vector<Vec3> last_;
    std::vector<Vec3> velocity_;
};

/// Scripted human placing its own blocks: hand waypoints plus the teleports
/// of blocks into cells.
struct HumanPlacement {
    double time = 0.0;
    int block = -1;
    int cell = -1;
};

struct HumanSchedule {
    std::vector<HandWaypoint> waypoints;
    std::vector<HumanPlacement> placements;
};

HumanSchedule plan_human_schedule(const WorldDescription& world, int human, double speed, double start,
                                  double pause);

}  // namespace vmc
