#pragma once

// One run per (axis value, seed), aggregated into mean ± std cells.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmc/analysis.hpp"
#include "vmc/config.hpp"

namespace vmc {

struct SweepPoint {
    std::string label;
    nlohmann::json patch = nlohmann::json::object();  // merge patch applied to the base config
    std::vector<std::pair<std::string, nlohmann::json>> sets;  // then (pointer, value) writes
};

struct SweepAxis {
    std::string name;
    std::vector<SweepPoint> points;
};

/// Axis setting the value at a JSON pointer (e.g. "/robot/filter_speed").
SweepAxis pointer_axis(const std::string& pointer, const std::vector<nlohmann::json>& values);

/// Reads {"name": ..., "points": [{"label": ..., "patch": {...}}]} or
/// {"pointer": "/a/b", "values": [...]}.
SweepAxis parse_axis(const nlohmann::json& j);

struct SweepRun {
    std::uint64_t seed = 0;
    std::string status;
    std::string fault;
    MetricsRecord metrics;
};

struct Summary {
    int n = 0;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for n < 2
};

Summary summarize(const std::vector<double>& values);

struct SweepCell {
    std::string label;
    std::vector<SweepRun> runs;
    bool faulted = false;

    /// Summary of a metric over runs where it is defined.
    Summary metric(const std::string& name) const;
};

struct SweepResult {
    std::string axis;
    std::vector<SweepCell> cells;
};

/// Every axis point is validated before the first run. A run that faults is
/// kept and marks its cell.
SweepResult sweep(const RunConfig& base, const SweepAxis& axis, const std::vector<std::uint64_t>& seeds);

/// Metric names usable in tables, in column order.
const std::vector<std::string>& sweep_metric_names();

void write_sweep_table(std::ostream& out, const SweepResult& r);
void write_sweep_csv(std::ostream& out, const SweepResult& r);
nlohmann::json to_json(const SweepResult& r);

}  // namespace vmc
