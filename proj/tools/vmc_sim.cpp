// Command-line front end: run, replay, sweep, enumerate-conflicts, serve.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "vmc/analysis.hpp"
#include "vmc/config.hpp"
#include "vmc/serve.hpp"
#include "vmc/simulation.hpp"
#include "vmc/sweep.hpp"
#include "vmc/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string default_out_dir() {
    if (const char* env = std::getenv("VMC_OUT_DIR"); env && *env) {
        return env;
    }
    return "runs";
}

bool on_off(const std::string& s) {
    if (s == "on" || s == "true" || s == "1") return true;
    if (s == "off" || s == "false" || s == "0") return false;
    throw vmc::ConfigError("expected on or off, got '" + s + "'");
}

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string negotiation;
    std::string damper;
    std::optional<double> cap;
    std::vector<std::string> sets;  // /json/pointer=value

    void add(CLI::App* app, bool need_config = true) {
        auto* c = app->add_option("-c,--config", config, "Run configuration (JSON)");
        if (need_config) c->required()->check(CLI::ExistingFile);
        app->add_option("--seed", seed, "Override run.seed");
        app->add_option("--negotiation", negotiation, "on|off");
        app->add_option("--damper", damper, "on|off");
        app->add_option("--cap", cap, "Override run.duration_cap (s)");
        app->add_option("--set", sets, "Override a field: /json/pointer=value (value parsed as JSON)");
    }

    vmc::RunConfig load() const {
        auto cfg = vmc::load_config(config);
        json patch = json::object();
        std::vector<std::pair<std::string, json>> pointer_sets;
        if (seed) patch["run"]["seed"] = *seed;
        if (!negotiation.empty()) patch["features"]["negotiation"] = on_off(negotiation);
        if (!damper.empty()) patch["features"]["damper"] = on_off(damper);
        if (cap) patch["run"]["duration_cap"] = *cap;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || s.empty() || s[0] != '/') {
                throw vmc::ConfigError("--set expects /pointer=value, got '" + s + "'");
            }
            json value;
            try {
                value = json::parse(s.substr(eq + 1));
            } catch (const json::parse_error&) {
                value = s.substr(eq + 1);
            }
            pointer_sets.emplace_back(s.substr(0, eq), value);
        }
        if (!patch.empty()) cfg = vmc::with_overrides(cfg, patch);
        return pointer_sets.empty() ? cfg : vmc::with_pointer_overrides(cfg, pointer_sets);
    }
};

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

void print_metrics(const vmc::MetricsRecord& m) {
    std::cout << vmc::to_json(m).dump(2) << '\n';
}

std::vector<std::uint64_t> parse_seeds(const std::string& list, int count, std::uint64_t first) {
    std::vector<std::uint64_t> seeds;
    if (!list.empty()) {
        std::stringstream ss(list);
        std::string item;
        while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
        return seeds;
    }
    for (int i = 0; i < count; ++i) seeds.push_back(first + static_cast<std::uint64_t>(i));
    return seeds;
}

vmc::Server* g_server = nullptr;
void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Virtual-component multi-robot coordination simulator"};
    app.require_subcommand(1);

    // run
    auto* run_cmd = app.add_subcommand("run", "Run one configuration headless");
    CommonFlags run_flags;
    run_flags.add(run_cmd);
    std::string run_out = default_out_dir();
    bool full_trace = false;
    run_cmd->add_option("-o,--out", run_out, "Output directory (default $VMC_OUT_DIR or ./runs)");
    run_cmd->add_flag("--full-trace", full_trace, "Record every attachment force");

    // replay
    auto* replay_cmd = app.add_subcommand("replay", "Verify a trace and recompute its metrics");
    std::string replay_trace, replay_compare;
    replay_cmd->add_option("trace", replay_trace, "Trace file")->required()->check(CLI::ExistingFile);
    replay_cmd->add_option("--compare", replay_compare, "metrics.json to diff against")->check(CLI::ExistingFile);
    bool resimulate = false;
    replay_cmd->add_flag("--resimulate", resimulate,
                         "Run the simulation again from the recorded hand inputs and compare with the trace");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "Run a parameter axis over seeds");
    CommonFlags sweep_flags;
    sweep_flags.add(sweep_cmd);
    std::string axis_file, pointer, values, seed_list, sweep_out = default_out_dir();
    int seed_count = 5;
    sweep_cmd->add_option("--axis", axis_file, "Axis file")->check(CLI::ExistingFile);
    sweep_cmd->add_option("--pointer", pointer, "JSON pointer of the swept field");
    sweep_cmd->add_option("--values", values, "JSON list of values for --pointer");
    sweep_cmd->add_option("--seeds", seed_list, "Comma-separated seeds");
    sweep_cmd->add_option("--seed-count", seed_count, "Seeds 1..N when --seeds is absent");
    sweep_cmd->add_option("-o,--out", sweep_out, "Output directory");

    // enumerate-conflicts
    auto* enum_cmd = app.add_subcommand("enumerate-conflicts", "Exact conflict probability per robot count");
    std::string layout_file;
    std::vector<int> robot_counts{1, 2, 3};
    std::int64_t mc_samples = 0;
    enum_cmd->add_option("--layout", layout_file, "Layout file (default canonical)")->check(CLI::ExistingFile);
    enum_cmd->add_option("--robots", robot_counts, "Robot counts")->delimiter(',');
    enum_cmd->add_option("--monte-carlo", mc_samples, "Also estimate with N random samples");

    // serve
    auto* serve_cmd = app.add_subcommand("serve", "Live session over a websocket");
    CommonFlags serve_flags;
    serve_flags.add(serve_cmd);
    vmc::ServeOptions serve_opts;
    serve_cmd->add_option("--address", serve_opts.address, "Bind address");
    serve_cmd->add_option("--port", serve_opts.port, "TCP port (0 = any)");
    serve_cmd->add_option("--rtf", serve_opts.realtime_factor, "Real-time factor")->check(CLI::PositiveNumber);
    serve_cmd->add_option("--snapshot-rate", serve_opts.snapshot_rate, "Snapshots per second (>= 30)");
    serve_cmd->add_option("--wall-limit", serve_opts.max_wall_seconds, "Stop after N wall-clock seconds");
    serve_cmd->add_option("--trace", serve_opts.trace_path, "Write the session trace here on exit");
    bool paused = false;
    serve_cmd->add_flag("--paused", paused, "Wait for a start command");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) {
            auto cfg = run_flags.load();
            if (full_trace) cfg = vmc::with_overrides(cfg, {{"run", {{"trace_detail", "full"}}}});
            const auto result = vmc::run(cfg);
            fs::create_directories(run_out);
            {
                std::ofstream out(fs::path(run_out) / "trace.jsonl");
                vmc::write_trace(out, result.trace);
            }
            write_file(fs::path(run_out) / "metrics.json", vmc::to_json(result.metrics).dump(2) + "\n");
            write_file(fs::path(run_out) / "metrics.csv",
                       vmc::metrics_csv_header() + "\n" + vmc::metrics_csv_row(result.metrics) + "\n");
            print_metrics(result.metrics);
            if (!result.trace.footer.fault.empty()) {
                std::cerr << "fault: " << result.trace.footer.fault << '\n';
            }
            std::cerr << "status: " << vmc::to_string(result.status) << " (" << run_out << ")\n";
            return vmc::exit_code(result.status);
        }
        if (*replay_cmd) {
            const auto trace = vmc::read_trace_file(replay_trace);
            if (resimulate) {
                const auto recorded = vmc::to_json(vmc::replay(trace));
                const auto again = vmc::resimulate(trace);
                const json now = vmc::to_json(again.metrics);
                std::cout << now.dump(2) << '\n';
                const json diff = json::diff(recorded, now);
                if (!diff.empty()) {
                    std::cerr << "resimulated metrics differ:\n" << diff.dump(2) << '\n';
                    return 1;
                }
                std::cerr << "resimulated metrics identical\n";
                return 0;
            }
            const auto m = vmc::replay(trace);
            const json now = vmc::to_json(m);
            std::cout << now.dump(2) << '\n';
            if (!replay_compare.empty()) {
                const json before = vmc::load_json_file(replay_compare);
                const json diff = json::diff(before, now);
                if (!diff.empty()) {
                    std::cerr << "metrics differ:\n" << diff.dump(2) << '\n';
                    return 1;
                }
                std::cerr << "metrics identical\n";
            }
            return 0;
        }
        if (*sweep_cmd) {
            const auto cfg = sweep_flags.load();
            vmc::SweepAxis axis;
            if (!axis_file.empty()) {
                axis = vmc::parse_axis(vmc::load_json_file(axis_file));
            } else if (!pointer.empty()) {
                axis = vmc::pointer_axis(pointer, json::parse(values.empty() ? "[]" : values).get<std::vector<json>>());
            } else {
                throw vmc::ConfigError("sweep needs --axis or --pointer/--values");
            }
            const auto seeds = parse_seeds(seed_list, seed_count, 1);
            const auto result = vmc::sweep(cfg, axis, seeds);
            vmc::write_sweep_table(std::cout, result);
            fs::create_directories(sweep_out);
            std::ofstream csv(fs::path(sweep_out) / "sweep.csv");
            vmc::write_sweep_csv(csv, result);
            write_file(fs::path(sweep_out) / "sweep.json", vmc::to_json(result).dump(2) + "\n");
            for (const auto& c : result.cells) {
                if (c.faulted) return 3;
            }
            return 0;
        }
        if (*enum_cmd) {
            const auto layout = layout_file.empty() ? vmc::canonical_layout()
                                                    : vmc::parse_layout(vmc::load_json_file(layout_file));
            layout.validate();
            for (int n : robot_counts) {
                const auto c = vmc::conflict_probability(layout, n);
                std::cout << n << " robot(s): " << c.conflicting << " / " << c.total << " = " << std::fixed
                          << std::setprecision(4) << 100.0 * c.probability() << " %";
                if (mc_samples > 0 && n >= 1) {
                    std::vector<vmc::Vec3> homes = layout.block_homes;
                    std::vector<vmc::Vec3> cells;
                    for (int k = 0; k < layout.grid.cell_count(); ++k) cells.push_back(layout.grid.cell_center(k));
                    const auto mc = vmc::conflict_probability_mc(homes, cells, n, mc_samples, 1);
                    std::cout << "  (Monte Carlo " << 100.0 * mc.probability << " ± " << 100.0 * mc.standard_error
                              << " %)";
                }
                std::cout << '\n';
            }
            return 0;
        }
        if (*serve_cmd) {
            const auto cfg = serve_flags.load();
            serve_opts.autostart = !paused;
            vmc::Server server(cfg, serve_opts);
            server.bind();
            std::cerr << "serving on ws://" << serve_opts.address << ":" << server.port() << "\n";
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            server.run();
            g_server = nullptr;
            return 0;
        }
    } catch (const vmc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 64;
    } catch (const vmc::TraceIntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << '\n';
        return 65;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
