#include "vmc/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace vmc {

Vec3 GridSpec::cell_center(int cell) const {
    const double x = (col_of(cell) - 0.5 * (cols - 1)) * pitch;
    const double y = (row_of(cell) - 0.5 * (rows - 1)) * pitch;
    return center + Vec3(x, y, 0.0);
}

double GridSpec::center_distance(int cell) const {
    const Vec3 d = cell_center(cell) - center;
    return std::sqrt(d.x() * d.x() + d.y() * d.y());
}

void Layout::validate() const {
    if (grid.rows <= 0 || grid.cols <= 0 || !(grid.pitch > 0.0)) {
        throw ConfigError("layout.grid: rows, cols and pitch must be positive");
    }
    if (!(block_size > 0.0) || block_size > grid.pitch) {
        throw ConfigError("layout.block_size: must be positive and fit in a cell");
    }
    if (robot_bases.empty() || robot_bases.size() > 4) {
        throw ConfigError("layout.robot_bases: between 1 and 4 bases required");
    }
    const double half_x = 0.5 * grid.cols * grid.pitch;
    const double half_y = 0.5 * grid.rows * grid.pitch;
    for (std::size_t i = 0; i < block_homes.size(); ++i) {
        const Vec3 d = block_homes[i] - grid.center;
        if (std::abs(d.x()) < half_x + 0.5 * block_size && std::abs(d.y()) < half_y + 0.5 * block_size) {
            throw ConfigError("layout.blocks[" + std::to_string(i) + "]: overlaps the grid");
        }
        for (std::size_t j = 0; j < i; ++j) {
            const Vec3 e = block_homes[i] - block_homes[j];
            if (std::abs(e.x()) < block_size && std::abs(e.y()) < block_size) {
                throw ConfigError("layout.blocks[" + std::to_string(i) + "]: overlaps block " + std::to_string(j));
            }
        }
    }
    for (std::size_t i = 0; i < robot_bases.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if ((robot_bases[i] - robot_bases[j]).norm() < 1e-6) {
                throw ConfigError("layout.robot_bases[" + std::to_string(i) + "]: coincides with base " +
                                  std::to_string(j));
            }
        }
    }
}

Layout canonical_layout() {
    Layout layout;
    const double block_z = layout.table_height + 0.5 * layout.block_size;
    const double row_y = 0.5 * layout.grid.rows * layout.grid.pitch + 0.06;
    for (double side : {-1.0, 1.0}) {
        for (int i = 0; i < 8; ++i) {
            layout.block_homes.emplace_back(-0.21 + 0.06 * i, side * row_y, block_z);
        }
    }
    const double base_z = layout.table_height + layout.block_size + 0.08;
    layout.robot_bases = {
        {0.0, -0.45, base_z},
        {0.0, 0.45, base_z},
        {-0.45, 0.0, base_z},
        {0.45, 0.0, base_z},
    };
    return layout;
}

const char* to_string(Variant v) {
    switch (v) {
        case Variant::A: return "A";
        case Variant::B: return "B";
        case Variant::MixedCheckerboard: return "mixed_checkerboard";
    }
    return "unknown";
}

Variant variant_from_string(const std::string& s) {
    if (s == "A") return Variant::A;
    if (s == "B") return Variant::B;
    if (s == "mixed_checkerboard") return Variant::MixedCheckerboard;
    throw ConfigError("scenario.variant: unknown variant '" + s + "'");
}

std::vector<std::vector<int>> balanced_partition(std::span<const Vec3> items, std::span<const Vec3> anchors) {
    const auto n = items.size();
    const auto m = anchors.size();
    std::vector<std::vector<int>> out(m);
    if (m == 0) {
        return out;
    }
    std::vector<std::size_t> quota(m, n / m);
    for (std::size_t a = 0; a < n % m; ++a) {
        ++quota[a];
    }
    struct Pair {
        double dist;
        std::size_t item;
        std::size_t anchor;
    };
    std::vector<Pair> pairs;
    pairs.reserve(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < m; ++a) {
            const Vec3 d = items[i] - anchors[a];
            pairs.push_back({std::hypot(d.x(), d.y()), i, a});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& l, const Pair& r) {
        return std::tie(l.dist, l.anchor, l.item) < std::tie(r.dist, r.anchor, r.item);
    });
    std::vector<bool> used(n, false);
    for (const auto& p : pairs) {
        if (used[p.item] || out[p.anchor].size() >= quota[p.anchor]) {
            continue;
        }
        used[p.item] = true;
        out[p.anchor].push_back(static_cast<int>(p.item));
    }
    for (auto& v : out) {
        std::sort(v.begin(), v.end());
    }
    return out;
}

namespace {

Vec3 rest_pose_for(const Vec3& base, const GridSpec& grid) {
    Vec3 inward = grid.center - base;
    inward.z() = 0.0;
    const double len = inward.norm();
    Vec3 rest = base;
    if (len > 0.0) {
        rest += 0.15 * inward / len;
    }
    rest.z() = grid.center.z() + 0.2;
    return rest;
}

std::vector<int> all_indices(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

}  // namespace

WorldDescription build_layout(int n_robots, Variant variant, std::uint64_t seed, const Layout& layout,
                              int n_humans) {
    layout.validate();
    if (n_robots < 1 || n_robots > static_cast<int>(layout.robot_bases.size())) {
        throw ConfigError("scenario.robots: robot count " + std::to_string(n_robots) + " outside 1.." +
                          std::to_string(layout.robot_bases.size()));
    }
    if (n_humans < 0) {
        n_humans = variant == Variant::MixedCheckerboard ? 1 : 0;
    }
    const int free_sides = 4 - n_robots;
    if (n_humans > free_sides || n_humans > 2) {
        throw ConfigError("scenario.humans: " + std::to_string(n_humans) + " humans do not fit beside " +
                          std::to_string(n_robots) + " robots");
    }
    if (variant == Variant::MixedCheckerboard && n_humans == 0) {
        throw ConfigError("scenario.humans: the checkerboard variant needs at least one human");
    }

    WorldDescription world;
    world.layout = layout;
    world.variant = variant;
    world.seed = seed;

    const auto& grid = layout.grid;
    std::vector<Vec3> bases(layout.robot_bases.begin(), layout.robot_bases.begin() + n_robots);
    std::vector<Vec3> cell_centers;
    for (int c = 0; c < grid.cell_count(); ++c) {
        cell_centers.push_back(grid.cell_center(c));
    }

    // Humans stand on the free sides, in the order of the remaining base slots.
    const Layout canon = canonical_layout();
    for (int h = 0; h < n_humans; ++h) {
        HumanSetup human;
        const auto slot = static_cast<std::size_t>(n_robots + h);
        human.entry = slot < layout.robot_bases.size() ? layout.robot_bases[slot] : canon.robot_bases[slot];
        human.entry.z() = grid.center.z() + 0.15;
        world.humans.push_back(human);
    }

    std::vector<int> robot_blocks = all_indices(static_cast<int>(layout.block_homes.size()));
    std::vector<int> robot_cells = all_indices(grid.cell_count());

    if (variant == Variant::MixedCheckerboard) {
        std::vector<int> human_cells;
        std::vector<int> other_cells;
        for (int c = 0; c < grid.cell_count(); ++c) {
            ((grid.row_of(c) + grid.col_of(c)) % 2 == 0 ? human_cells : other_cells).push_back(c);
        }
        // Blocks nearest the human side(s) go to the humans, one per human cell.
        std::vector<std::pair<double, int>> by_distance;
        for (int b : robot_blocks) {
            double best = 1e300;
            for (const auto& h : world.humans) {
                const Vec3 d = layout.block_homes[static_cast<std::size_t>(b)] - h.entry;
                best = std::min(best, std::hypot(d.x(), d.y()));
            }
            by_distance.emplace_back(best, b);
        }
        std::sort(by_distance.begin(), by_distance.end());
        std::vector<int> human_blocks;
        for (std::size_t i = 0; i < human_cells.size() && i < by_distance.size(); ++i) {
            human_blocks.push_back(by_distance[i].second);
        }
        std::sort(human_blocks.begin(), human_blocks.end());

        std::vector<Vec3> entries;
        for (const auto& h : world.humans) {
            entries.push_back(h.entry);
        }
        std::vector<Vec3> hb_pos;
        for (int b : human_blocks) {
            hb_pos.push_back(layout.block_homes[static_cast<std::size_t>(b)]);
        }
        std::vector<Vec3> hc_pos;
        for (int c : human_cells) {
            hc_pos.push_back(cell_centers[static_cast<std::size_t>(c)]);
        }
        const auto block_split = balanced_partition(hb_pos, entries);
        const auto cell_split = balanced_partition(hc_pos, entries);
        for (std::size_t h = 0; h < world.humans.size(); ++h) {
            for (int i : block_split[h]) {
                world.humans[h].blocks.push_back(human_blocks[static_cast<std::size_t>(i)]);
            }
            for (int i : cell_split[h]) {
                world.humans[h].cells.push_back(human_cells[static_cast<std::size_t>(i)]);
            }
        }
        std::vector<int> rest;
        std::set_difference(robot_blocks.begin(), robot_blocks.end(), human_blocks.begin(), human_blocks.end(),
                            std::back_inserter(rest));
        robot_blocks = rest;
        robot_cells = other_cells;
    }

    std::vector<Vec3> rb_pos;
    for (int b : robot_blocks) {
        rb_pos.push_back(layout.block_homes[static_cast<std::size_t>(b)]);
    }
    const auto block_split = balanced_partition(rb_pos, bases);

    std::vector<std::vector<int>> cell_split(static_cast<std::size_t>(n_robots), robot_cells);
    if (variant == Variant::B) {
        std::vector<Vec3> rc_pos;
        for (int c : robot_cells) {
            rc_pos.push_back(cell_centers[static_cast<std::size_t>(c)]);
        }
        const auto split = balanced_partition(rc_pos, bases);
        for (std::size_t r = 0; r < split.size(); ++r) {
            cell_split[r].clear();
            for (int i : split[r]) {
                cell_split[r].push_back(robot_cells[static_cast<std::size_t>(i)]);
            }
        }
    }

    for (int r = 0; r < n_robots; ++r) {
        RobotSetup setup;
        const auto ri = static_cast<std::size_t>(r);
        setup.base = bases[ri];
        setup.rest_pose = rest_pose_for(setup.base, grid);
        for (int i : block_split[ri]) {
            setup.own_blocks.push_back(robot_blocks[static_cast<std::size_t>(i)]);
        }
        setup.permitted_cells = cell_split[ri];
        world.robots.push_back(setup);
    }
    return world;
}

std::optional<int> next_cell(const GridSpec& grid, std::span<const int> permitted, const std::vector<bool>& taken,
                             std::mt19937_64& rng) {
    constexpr double kTie = 1e-12;
    double best = 1e300;
    std::vector<int> ties;
    for (int c : permitted) {
        if (taken[static_cast<std::size_t>(c)]) {
            continue;
        }
        const double d = grid.center_distance(c);
        if (d < best - kTie) {
            best = d;
            ties.assign(1, c);
        } else if (d <= best + kTie) {
            ties.push_back(c);
        }
    }
    if (ties.empty()) {
        return std::nullopt;
    }
    if (ties.size() == 1) {
        return ties.front();
    }
    std::uniform_int_distribution<std::size_t> pick(0, ties.size() - 1);
    return ties[pick(rng)];
}

TaskBoard TaskBoard::from(const WorldDescription& world) {
    TaskBoard board;
    board.grid = world.layout.grid;
    const auto& homes = world.layout.block_homes;
    for (std::size_t i = 0; i < homes.size(); ++i) {
        Block b;
        b.id = static_cast<int>(i);
        b.size = world.layout.block_size;
        b.home = homes[i];
        b.position = homes[i];
        board.blocks.push_back(b);
    }
    for (const auto& h : world.humans) {
        for (int b : h.blocks) {
            board.blocks[static_cast<std::size_t>(b)].claimed_by = -2;
        }
    }
    board.cell_taken.assign(static_cast<std::size_t>(board.grid.cell_count()), false);
    board.cell_block.assign(static_cast<std::size_t>(board.grid.cell_count()), -1);
    for (const auto& h : world.humans) {
        for (int c : h.cells) {
            board.cell_taken[static_cast<std::size_t>(c)] = true;
        }
    }
    return board;
}

bool TaskBoard::all_placed() const {
    return std::all_of(blocks.begin(), blocks.end(), [](const Block& b) { return b.state == BlockState::Placed; });
}

int TaskBoard::placed_count() const {
    return static_cast<int>(
        std::count_if(blocks.begin(), blocks.end(), [](const Block& b) { return b.state == BlockState::Placed; }));
}

const char* to_string(TaskPhase phase) {
    switch (phase) {
        case TaskPhase::Idle: return "idle";
        case TaskPhase::MoveAboveBlock: return "move_above_block";
        case TaskPhase::Descend: return "descend";
        case TaskPhase::Grasp: return "grasp";
        case TaskPhase::Lift: return "lift";
        case TaskPhase::Transport: return "transport";
        case TaskPhase::DescendPlace: return "descend_place";
        case TaskPhase::Release: return "release";
        case TaskPhase::Retreat: return "retreat";
        case TaskPhase::Done: return "done";
    }
    return "unknown";
}

const char* to_string(TaskEventKind kind) {
    switch (kind) {
        case TaskEventKind::Assigned: return "assigned";
        case TaskEventKind::Grasped: return "grasped";
        case TaskEventKind::Placed: return "placed";
        case TaskEventKind::Replanned: return "replanned";
        case TaskEventKind::Done: return "done";
    }
    return "unknown";
}

namespace {

bool block_available(const Block& b, int robot) {
    return b.state == BlockState::AtHome && (b.claimed_by == -1 || b.claimed_by == robot);
}

std::optional<int> choose_block(const TaskBoard& board, const TaskContext& ctx, const Vec3& from) {
    auto nearest = [&](auto&& candidates) -> std::optional<int> {
        std::optional<int> best;
        double best_d = 1e300;
        for (int b : candidates) {
            const auto& block = board.blocks[static_cast<std::size_t>(b)];
            if (!block_available(block, ctx.robot)) {
                continue;
            }
            const Vec3 d = block.home - from;
            const double dist = std::hypot(d.x(), d.y());
            if (dist < best_d) {
                best_d = dist;
                best = b;
            }
        }
        return best;
    };
    if (auto b = nearest(ctx.setup->own_blocks)) {
        return b;
    }
    if (!ctx.setup->may_take_other_blocks) {
        return std::nullopt;
    }
    std::vector<int> any(board.blocks.size());
    std::iota(any.begin(), any.end(), 0);
    return nearest(any);
}

void enter(PickPlaceStateMachine& sm, TaskPhase phase, const Vec3& waypoint, double t, TaskAdvance& out) {
    sm.phase = phase;
    sm.phase_entered = t;
    if (!(sm.waypoint == waypoint)) {
        out.waypoint_changed = true;
    }
    sm.waypoint = waypoint;
}

void finish(PickPlaceStateMachine& sm, TaskBoard& board, const TaskContext& ctx, double t, TaskAdvance& out) {
    if (sm.cell >= 0 && board.cell_block[static_cast<std::size_t>(sm.cell)] < 0) {
        board.cell_taken[static_cast<std::size_t>(sm.cell)] = false;
    }
    sm.block = -1;
    sm.cell = -1;
    enter(sm, TaskPhase::Done, ctx.setup->rest_pose, t, out);
    out.events.push_back({TaskEventKind::Done, ctx.robot, -1, -1, t});
}

void assign(PickPlaceStateMachine& sm, AgentState& agent, TaskBoard& board, const TaskContext& ctx, double t,
            std::mt19937_64& rng, TaskAdvance& out) {
    if (sm.cell < 0) {
        const auto cell = next_cell(board.grid, ctx.setup->permitted_cells, board.cell_taken, rng);
        if (!cell) {
            finish(sm, board, ctx, t, out);
            return;
        }
        sm.cell = *cell;
        board.cell_taken[static_cast<std::size_t>(sm.cell)] = true;
    }
    const auto block = choose_block(board, ctx, ctx.setup->base);
    if (!block) {
        finish(sm, board, ctx, t, out);
        return;
    }
    sm.block = *block;
    auto& b = board.blocks[static_cast<std::size_t>(sm.block)];
    b.claimed_by = ctx.robot;
    b.assigned_cell = sm.cell;
    out.events.push_back({TaskEventKind::Assigned, ctx.robot, sm.block, sm.cell, t});
    enter(sm, TaskPhase::MoveAboveBlock, ctx.geometry.above_point(b.home), t, out);
    (void)agent;
}

}  // namespace

void start_transfer(PickPlaceStateMachine& sm, TaskBoard& board, const TaskContext& ctx, int block, int cell,
                    double t) {
    auto& b = board.blocks.at(static_cast<std::size_t>(block));
    b.claimed_by = ctx.robot;
    b.assigned_cell = cell;
    b.state = BlockState::Held;
    b.holder = ctx.robot;
    board.cell_taken.at(static_cast<std::size_t>(cell)) = true;
    sm.block = block;
    sm.cell = cell;
    sm.phase = TaskPhase::Transport;
    sm.phase_entered = t;
    sm.waypoint = ctx.geometry.above_point(board.grid.cell_center(cell));
}

TaskAdvance advance_task(PickPlaceStateMachine& sm, AgentState& agent, TaskBoard& board, const TaskContext& ctx,
                         double t, std::mt19937_64& rng) {
    TaskAdvance out;
    const auto& geo = ctx.geometry;
    const bool reached = at_waypoint(sm, agent, ctx.tolerances);
    const bool dwelled = t - sm.phase_entered >= ctx.tolerances.dwell - 1e-12;

    switch (sm.phase) {
        case TaskPhase::Idle:
            assign(sm, agent, board, ctx, t, rng, out);
            break;
        case TaskPhase::MoveAboveBlock:
            if (reached) {
                const auto& b = board.blocks[static_cast<std::size_t>(sm.block)];
                enter(sm, TaskPhase::Descend, geo.grasp_point(b.home), t, out);
            }
            break;
        case TaskPhase::Descend:
            if (reached) {
                enter(sm, TaskPhase::Grasp, sm.waypoint, t, out);
            }
            break;
        case TaskPhase::Grasp:
            if (dwelled) {
                auto& b = board.blocks[static_cast<std::size_t>(sm.block)];
                if (!block_available(b, ctx.robot)) {
                    // Somebody else took it; keep the cell and pick another block.
                    out.events.push_back({TaskEventKind::Replanned, ctx.robot, sm.block, sm.cell, t});
                    const auto next = choose_block(board, ctx, ctx.setup->base);
                    if (!next) {
                        finish(sm, board, ctx, t, out);
                        break;
                    }
                    sm.block = *next;
                    auto& nb = board.blocks[static_cast<std::size_t>(sm.block)];
                    nb.claimed_by = ctx.robot;
                    nb.assigned_cell = sm.cell;
                    out.events.push_back({TaskEventKind::Assigned, ctx.robot, sm.block, sm.cell, t});
                    enter(sm, TaskPhase::MoveAboveBlock, geo.above_point(nb.home), t, out);
                    break;
                }
                b.state = BlockState::Held;
                b.holder = ctx.robot;
                agent.grasped_block = sm.block;
                out.events.push_back({TaskEventKind::Grasped, ctx.robot, sm.block, sm.cell, t});
                enter(sm, TaskPhase::Lift, geo.above_point(b.home), t, out);
            }
            break;
        case TaskPhase::Lift:
            if (reached) {
                enter(sm, TaskPhase::Transport, geo.above_point(board.grid.cell_center(sm.cell)), t, out);
            }
            break;
        case TaskPhase::Transport:
            if (reached) {
                enter(sm, TaskPhase::DescendPlace, geo.grasp_point(board.grid.cell_center(sm.cell)), t, out);
            }
            break;
        case TaskPhase::DescendPlace:
            if (reached) {
                enter(sm, TaskPhase::Release, sm.waypoint, t, out);
            }
            break;
        case TaskPhase::Release:
            if (dwelled) {
                auto& b = board.blocks[static_cast<std::size_t>(sm.block)];
                b.state = BlockState::Placed;
                b.holder = -1;
                b.position = board.grid.cell_center(sm.cell) + Vec3(0, 0, 0.5 * b.size);
                board.cell_block[static_cast<std::size_t>(sm.cell)] = sm.block;
                agent.grasped_block.reset();
                out.events.push_back({TaskEventKind::Placed, ctx.robot, sm.block, sm.cell, t});
                enter(sm, TaskPhase::Retreat, geo.above_point(board.grid.cell_center(sm.cell)), t, out);
            }
            break;
        case TaskPhase::Retreat:
            if (reached) {
                sm.block = -1;
                sm.cell = -1;
                sm.phase = TaskPhase::Idle;
                assign(sm, agent, board, ctx, t, rng, out);
            }
            break;
        case TaskPhase::Done:
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<HandWaypoint> approach_retreat_script(const ApproachPattern& p) {
    std::vector<HandWaypoint> out;
    const double travel = (p.to - p.from).norm() / p.speed;
    double t = p.start;
    out.push_back({0.0, p.from, false});
    for (int i = 0; i < p.repetitions; ++i) {
        out.push_back({t, p.from, true});
        out.push_back({t + travel, p.to, true});
        out.push_back({t + travel + p.dwell, p.to, true});
        out.push_back({t + 2 * travel + p.dwell, p.from, false});
        t += 2 * travel + p.dwell + p.rest;
    }
    return out;
}

void LiveHandMailbox::post(const Vec3& position, bool engaged, double sim_time) {
    std::lock_guard lock(mutex_);
    input_ = {position, engaged, sim_time};
}

LiveHandMailbox::Input LiveHandMailbox::latest() const {
    std::lock_guard lock(mutex_);
    return input_;
}

std::vector<Vec3> HandSource::keypoint_cluster(int count) {
    std::vector<Vec3> out;
    if (count <= 1) {
        out.emplace_back(Vec3::Zero());
        return out;
    }
    // Wrist at the origin, the rest on a golden-angle spiral inside a 4 cm disc.
    out.emplace_back(Vec3::Zero());
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 1; i < count; ++i) {
        const double r = 0.04 * std::sqrt(static_cast<double>(i) / (count - 1));
        out.emplace_back(r * std::cos(i * golden), r * std::sin(i * golden), 0.0);
    }
    return out;
}

namespace {

std::optional<Vec3> scripted_point(const std::vector<HandWaypoint>& script, double t) {
    if (script.empty() || t < script.front().t) {
        return std::nullopt;
    }
    for (std::size_t i = 0; i + 1 < script.size(); ++i) {
        const auto& a = script[i];
        const auto& b = script[i + 1];
        if (t < b.t) {
            if (!a.present) {
                return std::nullopt;
            }
            const double span = b.t - a.t;
            const double s = span > 0.0 ? (t - a.t) / span : 1.0;
            return a.position + s * (b.position - a.position);
        }
    }
    const auto& last = script.back();
    return last.present ? std::optional<Vec3>(last.position) : std::nullopt;
}

}  // namespace

std::optional<std::vector<Vec3>> hand_position(const HandSource& source, double t) {
    if (t < source.first_sample) {
        return std::nullopt;
    }
    const double period = 1.0 / source.sample_rate;
    // Small slack so a step landing on a sample instant sees that sample.
    const double k = std::floor((t - source.first_sample) / period + 1e-9);
    const double ts = source.first_sample + k * period;

    std::optional<Vec3> center;
    if (source.mode == HandMode::Scripted) {
        center = scripted_point(source.script, ts);
    } else if (source.live) {
        const auto in = source.live->latest();
        if (in.engaged && in.received_at >= 0.0 && in.received_at <= ts + 1e-9 &&
            ts - in.received_at <= source.absence_timeout) {
            center = in.position;
        }
    }
    if (!center) {
        return std::nullopt;
    }
    std::vector<Vec3> out;
    out.reserve(source.keypoint_offsets.size());
    for (const auto& off : source.keypoint_offsets) {
        out.push_back(*center + off);
    }
    return out;
}

void HandVelocityEstimator::update(double sample_time, const std::optional<std::vector<Vec3>>& keypoints) {
    if (!keypoints) {
        last_.clear();
        velocity_.clear();
        return;
    }
    if (last_.size() != keypoints->size()) {
        last_ = *keypoints;
        velocity_.assign(keypoints->size(), Vec3::Zero());
        last_time_ = sample_time;
        return;
    }
    const double dt = sample_time - last_time_;
    if (!(dt > 0.0)) {
        return;
    }
    const double alpha = 1.0 - std::exp(-dt / tau_);
    for (std::size_t i = 0; i < keypoints->size(); ++i) {
        const Vec3 raw = ((*keypoints)[i] - last_[i]) / dt;
        velocity_[i] += alpha * (raw - velocity_[i]);
    }
    last_ = *keypoints;
    last_time_ = sample_time;
}

HumanSchedule plan_human_schedule(const WorldDescription& world, int human, double speed, double start,
                                  double pause) {
    HumanSchedule out;
    const auto& h = world.humans.at(static_cast<std::size_t>(human));
    const auto& grid = world.layout.grid;
    const double hover = grid.center.z() + world.layout.block_size + 0.02;

    // Cells centre-outward, blocks nearest first.
    std::vector<int> cells = h.cells;
    std::stable_sort(cells.begin(), cells.end(),
                     [&](int a, int b) { return grid.center_distance(a) < grid.center_distance(b) - 1e-12; });
    std::vector<int> blocks = h.blocks;
    std::stable_sort(blocks.begin(), blocks.end(), [&](int a, int b) {
        return (world.layout.block_homes[static_cast<std::size_t>(a)] - h.entry).norm() <
               (world.layout.block_homes[static_cast<std::size_t>(b)] - h.entry).norm();
    });

    double t = start;
    Vec3 at = h.entry;
    out.waypoints.push_back({0.0, at, false});
    out.waypoints.push_back({t, at, true});
    auto go = [&](const Vec3& to) {
        t += (to - at).norm() / speed;
        at = to;
        out.waypoints.push_back({t, at, true});
    };
    const std::size_t n = std::min(cells.size(), blocks.size());
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 home = world.layout.block_homes[static_cast<std::size_t>(blocks[i])];
        go({home.x(), home.y(), hover});
        t += pause;
        out.waypoints.push_back({t, at, true});
        const Vec3 cell = grid.cell_center(cells[i]);
        go({cell.x(), cell.y(), hover});
        out.placements.push_back({t, blocks[i], cells[i]});
        t += pause;
        out.waypoints.push_back({t, at, true});
    }
    go(h.entry);
    out.waypoints.back().present = false;
    return out;
}

}  // namespace vmc
