// Headline checks, one line per criterion. Exit status is nonzero if any
// selected criterion fails.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/math/tools/minima.hpp>

#include "vmc/analysis.hpp"
#include "vmc/config.hpp"
#include "vmc/coordination.hpp"
#include "vmc/simulation.hpp"
#include "vmc/trace.hpp"
#include "vmc/virtual_components.hpp"

using namespace vmc;

namespace {

std::string preset(const std::string& name) { return std::string(VMC_SOURCE_DIR) + "/presets/" + name + ".json"; }

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " FAILED[" << what << "]";
        }
    }
};

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

RunConfig seeded(const RunConfig& base, std::uint64_t seed) {
    return with_overrides(base, {{"run", {{"seed", seed}}}});
}

// Independent runs in parallel, results in input order.
std::vector<RunResult> run_all(const std::vector<RunConfig>& configs) {
    std::vector<std::future<RunResult>> futures;
    for (const auto& c : configs) futures.push_back(std::async(std::launch::async, [c] { return run(c); }));
    std::vector<RunResult> out;
    for (auto& f : futures) out.push_back(f.get());
    return out;
}

double speed(const AgentRecord& a) { return a.velocity.norm(); }

Outcome deadlock() {
    Outcome o;
    const auto base = load_config(preset("crossing"));
    std::vector<RunConfig> without, with;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto c = seeded(base, seed);
        with.push_back(c);
        without.push_back(with_overrides(c, {{"features", {{"negotiation", false}}}}));
    }
    const auto stuck = run_all(without);
    const auto resolved = run_all(with);

    double latest_onset = 0.0, worst_grant = 0.0;
    int resolved_ok = 0;
    for (std::size_t s = 0; s < stuck.size(); ++s) {
        const auto& r = stuck[s];
        const std::string tag = "seed " + std::to_string(s + 1);
        o.require(r.status == RunStatus::Capped && std::abs(r.trace.footer.end_time - 150.0) < 1e-6,
                  tag + " without negotiation not capped at 150 s");
        o.require(r.metrics.blocks_placed == 0, tag + " without negotiation placed a block");
        // Onset: first record from which every later record shows both robots
        // above the threshold and below the speed floor.
        std::optional<double> onset;
        for (auto it = r.trace.records.rbegin(); it != r.trace.records.rend(); ++it) {
            bool all = true;
            for (const auto& a : it->robots) all = all && a.rho > 4.0 && speed(a) < 0.01;
            if (!all) break;
            onset = it->time;
        }
        o.require(onset.has_value() && *onset <= 60.0, tag + " no persistent stall within 60 s");
        if (onset) latest_onset = std::max(latest_onset, *onset);

        const auto& q = resolved[s];
        bool ok = q.status == RunStatus::Completed && !q.metrics.stall_events.empty() &&
                  q.metrics.unresolved_stalls == 0;
        for (const auto& e : q.metrics.stall_events) {
            if (!e.resolved_at) {
                ok = false;
                continue;
            }
            worst_grant = std::max(worst_grant, *e.resolved_at - e.detected_at);
            ok = ok && *e.resolved_at - e.detected_at <= 0.1 + 1e-9;
        }
        o.require(ok, tag + " with negotiation not resolved");
        resolved_ok += ok;
    }
    o.detail << " stalled-onset max " << fmt(latest_onset, 2) << " s; resolved " << resolved_ok
             << "/10; slowest grant " << fmt(worst_grant, 3) << " s";
    return o;
}

Outcome enumeration() {
    Outcome o;
    const auto layout = canonical_layout();
    std::vector<Vec3> cells;
    for (int k = 0; k < layout.grid.cell_count(); ++k) cells.push_back(layout.grid.cell_center(k));
    double prev = -1.0;
    for (int n = 1; n <= 4; ++n) {
        const auto c = conflict_probability(layout, n);
        const double p = c.probability();
        const auto mc = conflict_probability_mc(layout.block_homes, cells, n, 1'000'000, 17);
        o.detail << " n=" << n << ": " << fmt(100 * p, 2) << "% (MC " << fmt(100 * mc.probability, 2) << ")";
        o.require(std::abs(mc.probability - p) <= 3 * mc.standard_error + 1e-12, "Monte Carlo disagrees at n=" + std::to_string(n));
        o.require(p > prev, "not increasing at n=" + std::to_string(n));
        prev = p;
        if (n == 1) o.require(c.conflicting == 0, "n=1 not exactly 0");
        if (n == 2) o.require(p >= 0.234 && p <= 0.334, "n=2 outside [23.4, 33.4]%");
        if (n == 3) o.require(p >= 0.542 && p <= 0.682, "n=3 outside [54.2, 68.2]%");
    }
    return o;
}

Outcome scalability() {
    Outcome o;
    std::vector<RunConfig> configs;
    std::vector<std::string> tags;
    for (const char* name : {"scenario_a", "scenario_b"}) {
        const auto base = load_config(preset(name));
        for (int robots = 2; robots <= 4; ++robots) {
            for (std::uint64_t seed = 1; seed <= 5; ++seed) {
                configs.push_back(seeded(with_overrides(base, {{"scenario", {{"robots", robots}}}}), seed));
                tags.push_back(std::string(name) + " n=" + std::to_string(robots) + " seed " + std::to_string(seed));
            }
        }
    }
    const auto results = run_all(configs);
    double global_min = 1e9;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        const auto& m = r.metrics;
        o.require(r.status == RunStatus::Completed && m.blocks_placed == 16, tags[i] + " incomplete");
        o.require(m.unresolved_stalls == 0, tags[i] + " unresolved stall");
        o.require(m.d_min_rr && *m.d_min_rr >= 0.10, tags[i] + " separation below 0.10 m");
        o.require(m.mean_pair_min_rr && *m.mean_pair_min_rr >= 0.15 && *m.mean_pair_min_rr <= 0.25,
                  tags[i] + " mean pair minimum " + (m.mean_pair_min_rr ? fmt(*m.mean_pair_min_rr, 3) : "n/a") +
                      " outside [0.15, 0.25]");
        if (m.d_min_rr) global_min = std::min(global_min, *m.d_min_rr);
    }
    o.detail << " 30 runs; smallest separation " << fmt(global_min, 3) << " m";
    return o;
}

Outcome speed_ordering() {
    Outcome o;
    std::vector<double> means;
    for (const char* name : {"table2_slow", "table2_medium", "table2_fast"}) {
        const auto base = load_config(preset(name));
        std::vector<RunConfig> configs;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) configs.push_back(seeded(base, seed));
        double sum = 0;
        for (const auto& r : run_all(configs)) {
            o.require(r.metrics.completion_time.has_value(), std::string(name) + " run incomplete");
            sum += r.metrics.completion_time.value_or(0.0);
        }
        means.push_back(sum / 5);
    }
    o.detail << " means " << fmt(means[0], 1) << " > " << fmt(means[1], 1) << " > " << fmt(means[2], 1) << " s";
    o.require(means[0] > means[1] && means[1] > means[2], "not strictly decreasing");
    return o;
}

Outcome safety() {
    Outcome o;
    std::vector<RunConfig> configs;
    for (int p = 1; p <= 4; ++p) configs.push_back(load_config(preset("safety_profile_" + std::to_string(p))));
    const auto results = run_all(configs);
    o.detail << " T<Sp";
    for (const auto& r : results) o.detail << " " << fmt(r.metrics.t_below_sp, 2);
    o.detail << " s; d_min";
    for (const auto& r : results) o.detail << " " << fmt(r.metrics.d_min_rh.value_or(-1), 3);
    for (std::size_t i = 1; i < results.size(); ++i) {
        o.require(results[i].metrics.t_below_sp < results[i - 1].metrics.t_below_sp,
                  "T<Sp not decreasing at profile " + std::to_string(i + 1));
    }
    o.require(results[3].metrics.d_min_rh.value_or(0) > results[0].metrics.d_min_rh.value_or(1e9),
              "d_min(4) <= d_min(1)");
    const double sp = ssm_protective_distance(reference_ssm_params());
    o.detail << "; S_p " << fmt(sp, 6) << " m";
    o.require(std::abs(sp - 0.3505) <= 1e-6, "S_p");
    return o;
}

NegotiationMessage stalled_bid(int sender, int count) {
    NegotiationMessage m;
    m.sender = sender;
    m.state = NodeStatus::Stalled;
    m.priority_count = count;
    m.dist_to_goal = 0.3;
    m.dist_to_nearest_robot = 1.0;
    return m;
}

Outcome fairness() {
    Outcome o;
    SelectionRules rules;
    rules.alpha = 1.0;
    int first = 0;
    for (int round = 0; round < 1000; ++round) {
        const std::vector<NegotiationMessage> m{stalled_bid(0, 0), stalled_bid(1, 0)};
        PriorityState p;
        first += *select_priority(m, p, rules, 2024, round) == 0;
    }
    const double sigma = std::sqrt(1000 * 0.25);
    o.detail << " symmetric " << first << "/" << 1000 - first << " (3 sigma = " << fmt(3 * sigma, 1) << ")";
    o.require(std::abs(first - 500) <= 3 * sigma, "symmetric counts");

    const int n = 10000;
    int favored = 0;
    for (int round = 0; round < n; ++round) {
        const std::vector<NegotiationMessage> m{stalled_bid(0, 0), stalled_bid(1, 5)};
        PriorityState p;
        favored += *select_priority(m, p, rules, 2025, round) == 0;
    }
    const double rate = static_cast<double>(favored) / n;
    const double expected = 1.0 / (1.0 + std::exp(-5.0));
    o.detail << "; counts (0,5) rate " << fmt(rate, 4) << " vs " << fmt(expected, 4);
    o.require(std::abs(rate - expected) <= 0.03, "biased rate");
    return o;
}

Outcome components() {
    Outcome o;
    // Gaussian peak: located by Brent on -|f(r)|, magnitude compared in closed form.
    double worst_peak = 0.0, worst_arg = 0.0;
    for (const auto& [sigma, fmax] : {std::pair{0.18, -60.0}, {0.09, -40.0}, {0.1, -40.0}, {0.05, 5.0}}) {
        const auto spec = GaussianSpringSpec::from_sigma_fmax(sigma, fmax);
        const Vec3 dir = Vec3(1, 2, -0.5).normalized();
        auto mag = [&](double r) { return gaussian_avoidance_force(r * dir, Vec3::Zero(), spec).norm(); };
        const auto best = boost::math::tools::brent_find_minima([&](double r) { return -mag(r); }, 0.0, 5 * sigma, 52);
        const double closed = std::abs(spec.stiffness) * sigma * std::exp(-0.5);
        worst_peak = std::max(worst_peak, std::abs(mag(sigma) - closed));
        worst_peak = std::max(worst_peak, std::abs(-best.second - closed));
        worst_arg = std::max(worst_arg, std::abs(best.first - sigma) / sigma);
    }
    o.require(worst_peak <= 1e-9, "Gaussian peak magnitude");
    o.require(worst_arg <= 1e-6, "Gaussian peak location");

    // Force against central differences of the energy.
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-0.4, 0.4);
    const auto spec = GaussianSpringSpec::from_sigma_fmax(0.18, -60);
    double worst_grad = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Vec3 self(u(rng), u(rng), u(rng)), other(u(rng), u(rng), u(rng));
        const Vec3 f = gaussian_avoidance_force(self, other, spec);
        Vec3 grad;
        const double h = 1e-6;
        for (int k = 0; k < 3; ++k) {
            Vec3 e = Vec3::Zero();
            e[k] = h;
            grad[k] = (spec.energy(self + e - other) - spec.energy(self - e - other)) / (2 * h);
        }
        worst_grad = std::max(worst_grad, (f + grad).norm());
    }
    o.require(worst_grad <= 1e-6, "force != -grad E");

    // Damper: silent when receding or out of range, capped otherwise.
    UnilateralDamperSpec d{400.0, 0.25, 30.0};
    const Vec3 ee(0, 0, 0.11), hand(0, 0.2, 0.11);
    const auto receding = unilateral_damper_force(ee, Vec3::Zero(), hand, Vec3(0, 0.3, 0), d);
    const auto beyond = unilateral_damper_force(ee, Vec3::Zero(), Vec3(0, 0.3, 0.11), Vec3(0, -2, 0), d);
    const auto fast = unilateral_damper_force(ee, Vec3::Zero(), hand, Vec3(0, -5, 0), d);
    o.require(receding && receding->norm() == 0.0, "damper active while receding");
    o.require(beyond && beyond->norm() == 0.0, "damper active beyond R");
    o.require(fast && std::abs(fast->norm() - 30.0) <= 1e-9 && fast->y() < 0, "damper cap");

    // Stall metric on the listed force sets.
    const Vec3 one[] = {Vec3(10, 0, 0)};
    const Vec3 opposed[] = {Vec3(10, 0, 0), Vec3(-10, 0, 0)};
    const Vec3 orthogonal[] = {Vec3(10, 0, 0), Vec3(0, 10, 0)};
    const double r0 = stall_metric(one).rho, r1 = stall_metric(opposed).rho, r2 = stall_metric(orthogonal).rho;
    o.require(std::abs(r0) <= 1e-9 && std::abs(r1 - 20) <= 1e-9 && std::abs(r2 - (20 - 10 * std::sqrt(2.0))) <= 1e-9,
              "stall metric");
    o.detail << " peak err " << worst_peak << "; grad err " << worst_grad << "; rho " << r0 << ", " << r1 << ", "
             << fmt(r2, 9);
    return o;
}

Outcome determinism() {
    Outcome o;
    const std::vector<std::string> names{"scenario_a", "scenario_b", "crossing", "table2_slow", "table2_medium",
                                         "table2_fast", "table1_robot", "table1_human", "safety_profile_1",
                                         "safety_profile_2", "safety_profile_3", "safety_profile_4", "safety_damper",
                                         "mixed"};
    std::vector<RunConfig> configs;
    for (const auto& n : names) configs.push_back(load_config(preset(n)));
    const auto a = run_all(configs);
    const auto b = run_all(configs);
    int same = 0;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const bool ok = serialize_trace(a[i].trace) == serialize_trace(b[i].trace) &&
                        to_json(a[i].metrics).dump() == to_json(b[i].metrics).dump();
        o.require(ok, names[i]);
        same += ok;
    }
    o.detail << " " << same << "/" << names.size() << " presets byte-identical";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"deadlock", deadlock},       {"enumeration", enumeration}, {"scalability", scalability},
        {"speed_ordering", speed_ordering}, {"safety", safety},     {"fairness", fairness},
        {"components", components},   {"determinism", determinism},
    };
    CLI::App app("Acceptance checks");
    std::vector<std::string> only;
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);
    for (const auto& name : only) {
        if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == name; })) {
            std::cerr << "unknown criterion: " << name << '\n';
            return 64;
        }
    }

    int failed = 0;
    for (const auto& [name, check] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " exception: " << e.what();
        }
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ":" << o.detail.str() << std::endl;
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
