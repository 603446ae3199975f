#pragma once

// Metrics computed from traces, speed-and-separation bounds, and the
// combinatorial conflict enumeration over straight-line transfers.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmc/scenario.hpp"
#include "vmc/trace.hpp"

namespace vmc {

// ---------------------------------------------------------------------------
// Speed and separation monitoring

struct SSMParams {
    double human_speed = 0.0;      // m/s
    double robot_speed = 0.0;      // m/s
    double reaction_time = 0.0;    // s
    double stopping_time = 0.0;    // s
    double intrusion = 0.0;        // m
    double human_uncertainty = 0.0;  // m
    double robot_uncertainty = 0.0;  // m

    void validate() const;
};

/// Values used for the UR5 collaborative setup: 0.8 m/s hand, 0.3 m/s robot,
/// 80 ms reaction, 150 ms stopping, 8 cm intrusion, 2 cm + 2 cm uncertainty.
SSMParams reference_ssm_params();

/// Human travel during reaction and stopping, robot travel during reaction,
/// half the robot speed over the stopping time, and the fixed margins.
double ssm_protective_distance(const SSMParams& p);

// ---------------------------------------------------------------------------
// Planar segment geometry. Coordinates are quantized to integer micrometres so
// intersection tests are exact.

struct Point2 {
    std::int64_t x = 0;
    std::int64_t y = 0;
    bool operator==(const Point2&) const = default;
};

Point2 quantize(const Vec3& p);

/// Closed-segment intersection; touching endpoints and collinear overlap
/// count as intersecting.
bool segments_intersect(Point2 a, Point2 b, Point2 c, Point2 d);

/// Table-plane projection of both segments, then the exact test above.
bool segments_intersect(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

/// Minimum distance between two segments projected onto the table plane.
double segment_distance(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

// ---------------------------------------------------------------------------
// Conflict enumeration

struct ConflictCount {
    std::uint64_t conflicting = 0;
    std::uint64_t total = 0;

    double probability() const {
        return total == 0 ? 0.0 : static_cast<double>(conflicting) / static_cast<double>(total);
    }
};

/// Every ordered assignment of distinct sources and distinct targets to
/// `n_robots` robots (one concurrent transfer each); counts the assignments in
/// which some pair of transfer segments intersects. Integer counting only.
ConflictCount count_conflicts(std::span<const Vec3> sources, std::span<const Vec3> targets, int n_robots);

/// Over all block homes and all grid cells of `layout` (validated first).
ConflictCount conflict_probability(const Layout& layout, int n_robots);

struct MonteCarloEstimate {
    double probability = 0.0;
    double standard_error = 0.0;
    std::uint64_t samples = 0;
};

MonteCarloEstimate conflict_probability_mc(std::span<const Vec3> sources, std::span<const Vec3> targets,
                                           int n_robots, std::uint64_t samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Fairness

struct FairnessReport {
    std::vector<int> counts;
    int draws = 0;
    double chi_square = 0.0;
    int dof = 0;
    double p_value = 1.0;
    double normalized = 0.0;  // chi_square / dof
};

/// Counts against the uniform distribution over `robots` robots.
FairnessReport fairness_report(std::span<const int> counts);

// ---------------------------------------------------------------------------
// Trace metrics

struct StallEvent {
    int robot = -1;
    double detected_at = 0.0;
    std::optional<double> resolved_at;  // time of the grant that followed
    int winner = -1;
};

struct MetricsOptions {
    double protective_distance = 0.3505;
    double near_miss = 0.1;
};

struct MetricsRecord {
    std::string status;
    double duration = 0.0;
    int blocks_placed = 0;
    int blocks_total = 0;
    std::optional<double> completion_time;
    std::optional<double> d_min_rr;
    std::optional<double> mean_pair_min_rr;  // mean over robot pairs of each pair's minimum
    std::optional<double> d_min_rh;
    double t_below_sp = 0.0;
    double t_cross = 0.0;
    double t_nm = 0.0;
    double t_concurrent = 0.0;  // total pairwise overlap of active transfers
    std::vector<int> priority_counts;
    std::vector<StallEvent> stall_events;
    int unresolved_stalls = 0;
    int conflicts = 0;
    bool hand_safety_intact = true;  // hand components never observed disabled
};

std::optional<double> min_rr_distance(const SimTrace& trace);
std::optional<double> min_rh_distance(const SimTrace& trace);

/// Sum over records of the record interval while some hand keypoint is
/// closer than `protective_distance` to a robot end-effector.
double violation_time(const SimTrace& trace, double protective_distance);

struct InteractionTimes {
    double crossing = 0.0;
    double near_miss = 0.0;
    double concurrent = 0.0;
};

InteractionTimes crossing_and_near_miss(const SimTrace& trace, double near_miss_distance = 0.1);

MetricsRecord compute_metrics(const SimTrace& trace, const MetricsOptions& options = {});

nlohmann::json to_json(const MetricsRecord& m);
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& m);

}  // namespace vmc
