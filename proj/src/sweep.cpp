#include "vmc/sweep.hpp"

#include <cmath>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "vmc/simulation.hpp"

namespace vmc {

using nlohmann::json;

SweepAxis pointer_axis(const std::string& pointer, const std::vector<json>& values) {
    SweepAxis axis;
    axis.name = pointer;
    try {
        (void)json::json_pointer(pointer);
    } catch (const json::exception& e) {
        throw ConfigError("sweep axis " + pointer + ": " + e.what());
    }
    for (const auto& v : values) {
        axis.points.push_back({v.is_string() ? v.get<std::string>() : v.dump(), json::object(), {{pointer, v}}});
    }
    return axis;
}

SweepAxis parse_axis(const json& j) {
    if (j.contains("pointer")) {
        if (!j.contains("values") || !j["values"].is_array()) {
            throw ConfigError("sweep axis: values must be a list");
        }
        return pointer_axis(j["pointer"].get<std::string>(), j["values"].get<std::vector<json>>());
    }
    SweepAxis axis;
    axis.name = j.value("name", "axis");
    if (!j.contains("points") || !j["points"].is_array()) {
        throw ConfigError("sweep axis: expected points or pointer/values");
    }
    for (std::size_t i = 0; i < j["points"].size(); ++i) {
        const auto& p = j["points"][i];
        if (!p.is_object() || !p.contains("patch") || !p["patch"].is_object()) {
            throw ConfigError("sweep axis: points[" + std::to_string(i) + "] needs a patch object");
        }
        axis.points.push_back({p.value("label", std::to_string(i)), p["patch"], {}});
    }
    return axis;
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    s.n = static_cast<int>(values.size());
    if (s.n == 0) {
        return s;
    }
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / s.n;
    if (s.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / (s.n - 1));
    }
    return s;
}

namespace {

std::optional<double> metric_value(const MetricsRecord& m, const std::string& name) {
    if (name == "completion_time") return m.completion_time;
    if (name == "blocks_placed") return static_cast<double>(m.blocks_placed);
    if (name == "d_min_rr") return m.d_min_rr;
    if (name == "mean_pair_min_rr") return m.mean_pair_min_rr;
    if (name == "d_min_rh") return m.d_min_rh;
    if (name == "t_below_sp") return m.t_below_sp;
    if (name == "t_cross") return m.t_cross;
    if (name == "t_nm") return m.t_nm;
    if (name == "unresolved_stalls") return static_cast<double>(m.unresolved_stalls);
    if (name == "stalls") return static_cast<double>(m.stall_events.size());
    return std::nullopt;
}

}  // namespace

const std::vector<std::string>& sweep_metric_names() {
    static const std::vector<std::string> names = {"completion_time", "blocks_placed", "d_min_rr",
                                                   "mean_pair_min_rr", "d_min_rh", "t_below_sp",
                                                   "t_cross", "t_nm", "stalls", "unresolved_stalls"};
    return names;
}

Summary SweepCell::metric(const std::string& name) const {
    std::vector<double> values;
    for (const auto& r : runs) {
        if (auto v = metric_value(r.metrics, name)) {
            values.push_back(*v);
        }
    }
    return summarize(values);
}

SweepResult sweep(const RunConfig& base, const SweepAxis& axis, const std::vector<std::uint64_t>& seeds) {
    std::vector<RunConfig> configs;
    for (const auto& p : axis.points) {
        try {
            configs.push_back(with_pointer_overrides(with_overrides(base, p.patch), p.sets));
        } catch (const ConfigError& e) {
            throw ConfigError("sweep point " + p.label + ": " + e.what());
        }
    }
    SweepResult out;
    out.axis = axis.name;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        SweepCell cell;
        cell.label = axis.points[i].label;
        for (auto seed : seeds) {
            const auto cfg = with_overrides(configs[i], json{{"run", {{"seed", seed}}}});
            auto result = run(cfg);
            SweepRun r;
            r.seed = seed;
            r.status = result.trace.footer.status;
            r.fault = result.trace.footer.fault;
            r.metrics = std::move(result.metrics);
            cell.faulted = cell.faulted || result.status == RunStatus::Faulted;
            cell.runs.push_back(std::move(r));
        }
        out.cells.push_back(std::move(cell));
    }
    return out;
}

void write_sweep_table(std::ostream& out, const SweepResult& r) {
    const auto& names = sweep_metric_names();
    out << std::left << std::setw(16) << r.axis.substr(0, 15) << std::setw(6) << "runs";
    for (const auto& n : names) out << std::setw(22) << n;
    out << '\n';
    for (const auto& c : r.cells) {
        out << std::setw(16) << c.label.substr(0, 15) << std::setw(6) << c.runs.size();
        for (const auto& n : names) {
            const auto s = c.metric(n);
            std::ostringstream cellText;
            if (s.n == 0) {
                cellText << "-";
            } else {
                cellText << std::fixed << std::setprecision(3) << s.mean << " ± " << s.std;
            }
            out << std::setw(22) << cellText.str();
        }
        if (c.faulted) out << "FAULTED";
        out << '\n';
    }
}

void write_sweep_csv(std::ostream& out, const SweepResult& r) {
    out << "point,seed," << metrics_csv_header() << '\n';
    for (const auto& c : r.cells) {
        for (const auto& run : c.runs) {
            out << c.label << ',' << run.seed << ',' << metrics_csv_row(run.metrics) << '\n';
        }
    }
}

json to_json(const SweepResult& r) {
    json cells = json::array();
    for (const auto& c : r.cells) {
        json summary = json::object();
        for (const auto& n : sweep_metric_names()) {
            const auto s = c.metric(n);
            summary[n] = s.n ? json{{"n", s.n}, {"mean", s.mean}, {"std", s.std}} : json(nullptr);
        }
        json runs = json::array();
        for (const auto& run : c.runs) {
            runs.push_back({{"seed", run.seed}, {"status", run.status}, {"fault", run.fault},
                            {"metrics", to_json(run.metrics)}});
        }
        cells.push_back({{"label", c.label}, {"faulted", c.faulted}, {"summary", summary}, {"runs", runs}});
    }
    return {{"axis", r.axis}, {"cells", cells}};
}

}  // namespace vmc
