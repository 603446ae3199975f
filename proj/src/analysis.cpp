#include "vmc/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

namespace vmc {

void SSMParams::validate() const {
    for (double v : {human_speed, robot_speed, reaction_time, stopping_time, intrusion, human_uncertainty,
                     robot_uncertainty}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw ParameterError("SSM parameters must be finite and non-negative");
        }
    }
}

SSMParams reference_ssm_params() { return {0.8, 0.3, 0.08, 0.15, 0.08, 0.02, 0.02}; }

double ssm_protective_distance(const SSMParams& p) {
    p.validate();
    const double human = p.human_speed * (p.reaction_time + p.stopping_time);
    const double robot = p.robot_speed * p.reaction_time;
    const double stopping = 0.5 * p.robot_speed * p.stopping_time;
    return human + robot + stopping + p.intrusion + p.human_uncertainty + p.robot_uncertainty;
}

// ---------------------------------------------------------------------------

Point2 quantize(const Vec3& p) { return {std::llround(p.x() * 1e6), std::llround(p.y() * 1e6)}; }

namespace {

int orientation(Point2 a, Point2 b, Point2 c) {
    const std::int64_t v = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    return (v > 0) - (v < 0);
}

bool within_box(Point2 a, Point2 b, Point2 p) {
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
           p.y <= std::max(a.y, b.y);
}

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double dx = bx - ax;
    const double dy = by - ay;
    const double len2 = dx * dx + dy * dy;
    double s = 0.0;
    if (len2 > 0.0) {
        s = std::clamp(((px - ax) * dx + (py - ay) * dy) / len2, 0.0, 1.0);
    }
    return std::hypot(px - (ax + s * dx), py - (ay + s * dy));
}

}  // namespace

bool segments_intersect(Point2 a, Point2 b, Point2 c, Point2 d) {
    const int o1 = orientation(c, d, a);
    const int o2 = orientation(c, d, b);
    const int o3 = orientation(a, b, c);
    const int o4 = orientation(a, b, d);
    if (o1 * o2 < 0 && o3 * o4 < 0) {
        return true;
    }
    return (o1 == 0 && within_box(c, d, a)) || (o2 == 0 && within_box(c, d, b)) ||
           (o3 == 0 && within_box(a, b, c)) || (o4 == 0 && within_box(a, b, d));
}

bool segments_intersect(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    return segments_intersect(quantize(a), quantize(b), quantize(c), quantize(d));
}

double segment_distance(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    if (segments_intersect(a, b, c, d)) {
        return 0.0;
    }
    return std::min({point_segment_distance(a.x(), a.y(), c.x(), c.y(), d.x(), d.y()),
                     point_segment_distance(b.x(), b.y(), c.x(), c.y(), d.x(), d.y()),
                     point_segment_distance(c.x(), c.y(), a.x(), a.y(), b.x(), b.y()),
                     point_segment_distance(d.x(), d.y(), a.x(), a.y(), b.x(), b.y())});
}

// ---------------------------------------------------------------------------

namespace {

/// Fixed-width bitset over transfer segments.
struct SegmentMask {
    std::vector<std::uint64_t> words;

    explicit SegmentMask(std::size_t bits = 0) : words((bits + 63) / 64, 0) {}
    void set(std::size_t i) { words[i / 64] |= std::uint64_t{1} << (i % 64); }
    bool test(std::size_t i) const { return (words[i / 64] >> (i % 64)) & 1u; }
    std::uint64_t count() const {
        std::uint64_t n = 0;
        for (auto w : words) n += static_cast<std::uint64_t>(std::popcount(w));
        return n;
    }
    SegmentMask operator&(const SegmentMask& o) const {
        SegmentMask r;
        r.words.resize(words.size());
        for (std::size_t i = 0; i < words.size(); ++i) r.words[i] = words[i] & o.words[i];
        return r;
    }
};

std::uint64_t falling_factorial(std::uint64_t n, int k) {
    std::uint64_t r = 1;
    for (int i = 0; i < k; ++i) {
        if (n < static_cast<std::uint64_t>(i)) return 0;
        r *= n - static_cast<std::uint64_t>(i);
    }
    return r;
}

// Ordered tuples of `depth` more segments, each compatible with every
// segment already chosen (whose common compatibility set is `allowed`).
std::uint64_t count_free(const std::vector<SegmentMask>& compat, const SegmentMask& allowed, int depth) {
    if (depth == 1) {
        return allowed.count();
    }
    std::uint64_t total = 0;
    for (std::size_t w = 0; w < allowed.words.size(); ++w) {
        std::uint64_t bits = allowed.words[w];
        while (bits) {
            const int b = std::countr_zero(bits);
            bits &= bits - 1;
            const std::size_t s = w * 64 + static_cast<std::size_t>(b);
            total += count_free(compat, allowed & compat[s], depth - 1);
        }
    }
    return total;
}

}  // namespace

ConflictCount count_conflicts(std::span<const Vec3> sources, std::span<const Vec3> targets, int n_robots) {
    if (n_robots < 1) {
        throw ParameterError("count_conflicts: need at least one robot");
    }
    ConflictCount out;
    out.total = falling_factorial(sources.size(), n_robots) * falling_factorial(targets.size(), n_robots);
    if (n_robots == 1 || out.total == 0) {
        return out;
    }
    const std::size_t nt = targets.size();
    const std::size_t segments = sources.size() * nt;
    std::vector<Point2> qs;
    std::vector<Point2> qt;
    for (const auto& s : sources) qs.push_back(quantize(s));
    for (const auto& t : targets) qt.push_back(quantize(t));

    std::vector<SegmentMask> compat(segments, SegmentMask(segments));
    for (std::size_t i = 0; i < segments; ++i) {
        for (std::size_t j = 0; j < segments; ++j) {
            const std::size_t si = i / nt, ti = i % nt, sj = j / nt, tj = j % nt;
            if (si == sj || ti == tj) {
                continue;
            }
            if (!segments_intersect(qs[si], qt[ti], qs[sj], qt[tj])) {
                compat[i].set(j);
            }
        }
    }
    SegmentMask all(segments);
    for (std::size_t i = 0; i < segments; ++i) all.set(i);
    const std::uint64_t free = count_free(compat, all, n_robots);
    out.conflicting = out.total - free;
    return out;
}

ConflictCount conflict_probability(const Layout& layout, int n_robots) {
    layout.validate();
    std::vector<Vec3> cells;
    for (int c = 0; c < layout.grid.cell_count(); ++c) {
        cells.push_back(layout.grid.cell_center(c));
    }
    return count_conflicts(layout.block_homes, cells, n_robots);
}

MonteCarloEstimate conflict_probability_mc(std::span<const Vec3> sources, std::span<const Vec3> targets,
                                           int n_robots, std::uint64_t samples, std::uint64_t seed) {
    if (n_robots < 1 || static_cast<std::size_t>(n_robots) > sources.size() ||
        static_cast<std::size_t>(n_robots) > targets.size()) {
        throw ParameterError("conflict_probability_mc: robot count does not fit the layout");
    }
    std::vector<Point2> qs;
    std::vector<Point2> qt;
    for (const auto& s : sources) qs.push_back(quantize(s));
    for (const auto& t : targets) qt.push_back(quantize(t));
    std::vector<std::size_t> si(qs.size());
    std::vector<std::size_t> ti(qt.size());
    std::mt19937_64 rng(seed);
    const auto n = static_cast<std::size_t>(n_robots);
    auto partial_shuffle = [&](std::vector<std::size_t>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
        for (std::size_t i = 0; i < n; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
            std::swap(v[i], v[pick(rng)]);
        }
    };
    std::uint64_t hits = 0;
    for (std::uint64_t k = 0; k < samples; ++k) {
        partial_shuffle(si);
        partial_shuffle(ti);
        bool conflict = false;
        for (std::size_t a = 0; a < n && !conflict; ++a) {
            for (std::size_t b = a + 1; b < n && !conflict; ++b) {
                conflict = segments_intersect(qs[si[a]], qt[ti[a]], qs[si[b]], qt[ti[b]]);
            }
        }
        hits += conflict ? 1 : 0;
    }
    MonteCarloEstimate est;
    est.samples = samples;
    est.probability = samples ? static_cast<double>(hits) / static_cast<double>(samples) : 0.0;
    est.standard_error =
        samples ? std::sqrt(est.probability * (1.0 - est.probability) / static_cast<double>(samples)) : 0.0;
    return est;
}

// ---------------------------------------------------------------------------

FairnessReport fairness_report(std::span<const int> counts) {
    FairnessReport r;
    r.counts.assign(counts.begin(), counts.end());
    for (int c : counts) r.draws += c;
    const auto k = static_cast<int>(counts.size());
    r.dof = std::max(0, k - 1);
    if (r.draws == 0 || k < 2) {
        return r;
    }
    const double expected = static_cast<double>(r.draws) / k;
    for (int c : counts) {
        const double d = c - expected;
        r.chi_square += d * d / expected;
    }
    r.normalized = r.chi_square / r.dof;
    r.p_value = boost::math::gamma_q(0.5 * r.dof, 0.5 * r.chi_square);
    return r;
}

// ---------------------------------------------------------------------------

std::optional<double> min_rr_distance(const SimTrace& trace) {
    std::optional<double> best;
    for (const auto& rec : trace.records) {
        for (std::size_t a = 0; a < rec.robots.size(); ++a) {
            for (std::size_t b = a + 1; b < rec.robots.size(); ++b) {
                const double d = (rec.robots[a].position - rec.robots[b].position).norm();
                if (!best || d < *best) best = d;
            }
        }
    }
    return best;
}

namespace {

std::optional<double> record_rh_distance(const TraceRecord& rec) {
    std::optional<double> best;
    for (const auto& hand : rec.hands) {
        if (!hand.present) continue;
        for (const auto& kp : hand.keypoints) {
            for (const auto& robot : rec.robots) {
                const double d = (robot.position - kp).norm();
                if (!best || d < *best) best = d;
            }
        }
    }
    return best;
}

struct Transfer {
    int robot;
    double start;
    double end;
    Vec3 from;
    Vec3 to;
};

std::vector<Transfer> transfers_of(const SimTrace& trace) {
    std::vector<Transfer> out;
    std::map<int, std::size_t> open;
    for (const auto& rec : trace.records) {
        for (const auto& e : rec.events) {
            if (e.type == "grasped") {
                open[e.robot] = out.size();
                out.push_back({e.robot, e.time, trace.footer.end_time, e.from, e.to});
            } else if (e.type == "placed") {
                if (auto it = open.find(e.robot); it != open.end()) {
                    out[it->second].end = e.time;
                    open.erase(it);
                }
            }
        }
    }
    return out;
}

}  // namespace

std::optional<double> min_rh_distance(const SimTrace& trace) {
    std::optional<double> best;
    for (const auto& rec : trace.records) {
        if (auto d = record_rh_distance(rec); d && (!best || *d < *best)) best = d;
    }
    return best;
}

double violation_time(const SimTrace& trace, double protective_distance) {
    if (!(protective_distance > 0.0)) {
        throw ParameterError("violation_time: protective distance must be positive");
    }
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < trace.records.size(); ++i) {
        const auto d = record_rh_distance(trace.records[i]);
        if (d && *d < protective_distance) {
            total += trace.records[i + 1].time - trace.records[i].time;
        }
    }
    return total;
}

InteractionTimes crossing_and_near_miss(const SimTrace& trace, double near_miss_distance) {
    InteractionTimes out;
    const auto transfers = transfers_of(trace);
    for (std::size_t a = 0; a < transfers.size(); ++a) {
        for (std::size_t b = a + 1; b < transfers.size(); ++b) {
            const auto& p = transfers[a];
            const auto& q = transfers[b];
            if (p.robot == q.robot) continue;
            const double overlap = std::min(p.end, q.end) - std::max(p.start, q.start);
            if (!(overlap > 0.0)) continue;
            out.concurrent += overlap;
            if (segments_intersect(p.from, p.to, q.from, q.to)) {
                out.crossing += overlap;
            } else if (segment_distance(p.from, p.to, q.from, q.to) < near_miss_distance) {
                out.near_miss += overlap;
            }
        }
    }
    return out;
}

MetricsRecord compute_metrics(const SimTrace& trace, const MetricsOptions& options) {
    MetricsRecord m;
    m.status = trace.footer.status;
    m.duration = trace.footer.end_time;
    m.blocks_total = trace.footer.blocks_total;
    m.priority_counts.assign(static_cast<std::size_t>(std::max(0, trace.header.robots)), 0);

    struct Grant {
        double time;
        int winner;
        int round;
    };
    std::vector<Grant> grants;
    std::set<int> released_rounds;
    for (const auto& rec : trace.records) {
        for (const auto& e : rec.events) {
            if (e.type == "placed" || e.type == "human_placed") {
                ++m.blocks_placed;
            } else if (e.type == "grant" && e.robot == e.winner && e.winner >= 0) {
                grants.push_back({e.time, e.winner, e.round});
                if (static_cast<std::size_t>(e.winner) < m.priority_counts.size()) {
                    ++m.priority_counts[static_cast<std::size_t>(e.winner)];
                }
            } else if (e.type == "release" && e.robot == e.winner) {
                released_rounds.insert(e.round);
            } else if (e.type == "stall") {
                m.stall_events.push_back({e.robot, e.time, std::nullopt, -1});
            } else if (e.type == "conflict") {
                ++m.conflicts;
            }
        }
        for (const auto& a : rec.robots) {
            if (!a.enabled[static_cast<std::size_t>(ComponentKind::HandAvoidance)] ||
                !a.enabled[static_cast<std::size_t>(ComponentKind::HandDamper)]) {
                m.hand_safety_intact = false;
            }
        }
    }
    for (auto& s : m.stall_events) {
        auto it = std::find_if(grants.begin(), grants.end(),
                               [&](const Grant& g) { return g.time >= s.detected_at - 1e-12; });
        if (it != grants.end()) {
            s.resolved_at = it->time;
            s.winner = it->winner;
        }
        // Resolved means the granted robot got through and handed priority
        // back, or the run finished while it still held it.
        const bool released = it != grants.end() &&
                              (released_rounds.contains(it->round) || m.status == "completed");
        if (!released) {
            ++m.unresolved_stalls;
        }
    }
    if (m.status == "completed") {
        m.completion_time = trace.footer.end_time;
    }

    m.d_min_rr = min_rr_distance(trace);
    if (trace.header.robots >= 2 && !trace.records.empty()) {
        const auto n = static_cast<std::size_t>(trace.header.robots);
        std::vector<double> pair_min;
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = a + 1; b < n; ++b) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto& rec : trace.records) {
                    best = std::min(best, (rec.robots[a].position - rec.robots[b].position).norm());
                }
                pair_min.push_back(best);
            }
        }
        double sum = 0.0;
        for (double v : pair_min) sum += v;
        m.mean_pair_min_rr = sum / static_cast<double>(pair_min.size());
    }
    m.d_min_rh = min_rh_distance(trace);
    m.t_below_sp = violation_time(trace, options.protective_distance);
    const auto it = crossing_and_near_miss(trace, options.near_miss);
    m.t_cross = it.crossing;
    m.t_nm = it.near_miss;
    m.t_concurrent = it.concurrent;
    return m;
}

nlohmann::json to_json(const MetricsRecord& m) {
    using nlohmann::json;
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json stalls = json::array();
    for (const auto& s : m.stall_events) {
        stalls.push_back({{"robot", s.robot},
                          {"detected_at", s.detected_at},
                          {"resolved_at", opt(s.resolved_at)},
                          {"winner", s.winner}});
    }
    return {{"status", m.status},
            {"duration", m.duration},
            {"blocks_placed", m.blocks_placed},
            {"blocks_total", m.blocks_total},
            {"completion_time", opt(m.completion_time)},
            {"d_min_rr", opt(m.d_min_rr)},
            {"mean_pair_min_rr", opt(m.mean_pair_min_rr)},
            {"d_min_rh", opt(m.d_min_rh)},
            {"t_below_sp", m.t_below_sp},
            {"t_cross", m.t_cross},
            {"t_nm", m.t_nm},
            {"t_concurrent", m.t_concurrent},
            {"priority_counts", m.priority_counts},
            {"stall_events", stalls},
            {"unresolved_stalls", m.unresolved_stalls},
            {"conflicts", m.conflicts},
            {"hand_safety_intact", m.hand_safety_intact}};
}

std::string metrics_csv_header() {
    return "status,duration,blocks_placed,blocks_total,completion_time,d_min_rr,mean_pair_min_rr,d_min_rh,"
           "t_below_sp,t_cross,t_nm,stalls,unresolved_stalls,grants";
}

std::string metrics_csv_row(const MetricsRecord& m) {
    std::ostringstream out;
    out << std::setprecision(17);
    auto opt = [&](const std::optional<double>& v) {
        if (v) out << *v;
        out << ',';
    };
    int grants = 0;
    for (int c : m.priority_counts) grants += c;
    out << m.status << ',' << m.duration << ',' << m.blocks_placed << ',' << m.blocks_total << ',';
    opt(m.completion_time);
    opt(m.d_min_rr);
    opt(m.mean_pair_min_rr);
    opt(m.d_min_rh);
    out << m.t_below_sp << ',' << m.t_cross << ',' << m.t_nm << ',' << m.stall_events.size() << ','
        << m.unresolved_stalls << ',' << grants;
    return out.str();
}

}  // namespace vmc
