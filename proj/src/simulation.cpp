#include "vmc/simulation.hpp"

#include <algorithm>
#include <cmath>

namespace vmc {

using nlohmann::json;

const char* to_string(RunStatus s) {
    switch (s) {
        case RunStatus::Running: return "running";
        case RunStatus::Completed: return "completed";
        case RunStatus::Capped: return "capped";
        case RunStatus::Faulted: return "faulted";
    }
    return "unknown";
}

int exit_code(RunStatus s) {
    switch (s) {
        case RunStatus::Completed: return 0;
        case RunStatus::Capped: return 2;
        case RunStatus::Faulted: return 3;
        case RunStatus::Running: return 1;
    }
    return 1;
}

namespace {

constexpr double kRestTolerance = 0.02;
constexpr double kWaypointReached = 0.01;

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

Simulation::Simulation(RunConfig cfg) : cfg_(std::move(cfg)) {
    build_world();
    build_attachments();

    trace_.header.schema = kTraceSchema;
    trace_.header.config_hash = config_hash(cfg_);
    trace_.header.seed = cfg_.seed;
    trace_.header.dt = cfg_.dt;
    trace_.header.robots = static_cast<int>(robots_.size());
    trace_.header.humans = static_cast<int>(humans_.size());
    trace_.header.config = cfg_.source;
    trace_.header.layout = layout_to_json(world_.layout);

    // Initial assignment at t = 0.
    advance_tasks(0.0);
}

void Simulation::build_world() {
    const auto& sc = cfg_.scenario;
    const int n = sc.robots;
    const Variant variant = sc.kind == ScenarioKind::PickPlace ? sc.variant : Variant::A;
    world_ = build_layout(n, variant, cfg_.seed, sc.layout, sc.humans);

    setups_ = world_.robots;
    if (sc.kind != ScenarioKind::PickPlace) {
        for (int i = 0; i < n; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            auto& s = setups_[idx];
            s.own_blocks.clear();
            s.may_take_other_blocks = false;
            s.permitted_cells.clear();
            if (sc.kind == ScenarioKind::Crossing) {
                s.permitted_cells.push_back(sc.transfers[idx].cell);
            } else if (is_worker(i)) {
                for (int b = 0; b < static_cast<int>(world_.layout.block_homes.size()); ++b) s.own_blocks.push_back(b);
                for (int c = 0; c < world_.layout.grid.cell_count(); ++c) s.permitted_cells.push_back(c);
            }
        }
        for (auto& h : world_.humans) {
            h.blocks.clear();
            h.cells.clear();
        }
    }
    board_ = TaskBoard::from(world_);

    std::mt19937_64 jitter_rng(mix(cfg_.seed, 1000));
    std::uniform_real_distribution<double> jitter(-sc.start_jitter, sc.start_jitter);

    robots_.clear();
    rt_.clear();
    rt_.resize(static_cast<std::size_t>(n));
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        all[static_cast<std::size_t>(i)] = i;
    }
    NegotiationParams np;
    np.rules = cfg_.coordination.rules;
    np.round_timeout = cfg_.coordination.round_timeout;
    np.neighborhood_radius = cfg_.coordination.neighborhood_radius;
    np.seed = cfg_.seed;

    for (int i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const auto& setup = setups_[idx];
        AgentState a;
        a.id = {i, AgentKind::Robot};
        a.virtual_mass = cfg_.virtual_mass;
        a.base_position = setup.base;
        a.reach_radius = world_.layout.reach_radius;
        a.position = setup.rest_pose;
        if (sc.kind == ScenarioKind::Crossing) {
            const auto& tr = sc.transfers[idx];
            a.position = cfg_.geometry.above_point(board_.blocks[static_cast<std::size_t>(tr.block)].home);
            a.position.x() += jitter(jitter_rng);
            a.position.y() += jitter(jitter_rng);
        }
        a.refresh_body_points();
        robots_.push_back(a);

        auto& r = rt_[idx];
        r.detector = StallDetector(cfg_.coordination.stall);
        r.rng.seed(mix(cfg_.seed, static_cast<std::uint64_t>(i)));
        if (cfg_.coordination.negotiation) {
            r.negotiator = std::make_unique<Negotiator>(i, all, np);
        }
    }
    bus_ = std::make_unique<MessageBus>(n, cfg_.coordination.delay_steps, cfg_.coordination.drop_rate,
                                        mix(cfg_.seed, 2000));
    counters_.assign(static_cast<std::size_t>(n), 0);

    switch (sc.kind) {
        case ScenarioKind::PickPlace:
            blocks_total_ = std::min(static_cast<int>(board_.blocks.size()), board_.grid.cell_count());
            break;
        case ScenarioKind::Crossing:
            blocks_total_ = static_cast<int>(sc.transfers.size());
            for (int i = 0; i < n; ++i) {
                const auto idx = static_cast<std::size_t>(i);
                const auto& tr = sc.transfers[idx];
                TaskContext ctx{i, &setups_[idx], cfg_.geometry, cfg_.tolerances};
                start_transfer(rt_[idx].task, board_, ctx, tr.block, tr.cell, 0.0);
                robots_[idx].grasped_block = tr.block;
                restart_goal(i, 0.0);
                TraceEvent e;
                e.type = "grasped";
                e.robot = i;
                e.block = tr.block;
                e.cell = tr.cell;
                e.from = board_.blocks[static_cast<std::size_t>(tr.block)].home;
                e.to = board_.grid.cell_center(tr.cell);
                push_event(e);
            }
            break;
        case ScenarioKind::Hold:
            blocks_total_ = 0;
            for (int i = 0; i < n; ++i) {
                const auto idx = static_cast<std::size_t>(i);
                if (is_worker(i)) {
                    blocks_total_ = std::min(static_cast<int>(board_.blocks.size()), board_.grid.cell_count());
                    continue;
                }
                rt_[idx].task.waypoint = *sc.hold_positions[idx];
                rt_[idx].task.phase = TaskPhase::Idle;
                restart_goal(i, 0.0);
            }
            break;
    }

    // Hands
    humans_.clear();
    const int n_humans = static_cast<int>(cfg_.hands.size());
    for (int h = 0; h < n_humans; ++h) {
        const auto& hc = cfg_.hands[static_cast<std::size_t>(h)];
        HumanRuntime hr;
        hr.source.mode = hc.mode;
        hr.source.sample_rate = hc.sample_rate;
        hr.source.first_sample = hc.first_sample;
        hr.source.absence_timeout = hc.absence_timeout;
        hr.source.keypoint_offsets = HandSource::keypoint_cluster(hc.keypoints);
        if (hc.mode == HandMode::Live) {
            hr.source.live = std::make_shared<LiveHandMailbox>();
        } else if (hc.approach) {
            hr.source.script = approach_retreat_script(*hc.approach);
        } else if (!hc.waypoints.empty()) {
            hr.source.script = hc.waypoints;
        } else if (h < static_cast<int>(world_.humans.size())) {
            auto schedule = plan_human_schedule(world_, h, sc.human_speed, sc.human_start, sc.human_pause);
            hr.source.script = std::move(schedule.waypoints);
            hr.placements = std::move(schedule.placements);
        }
        humans_.push_back(std::move(hr));
    }
}

void Simulation::build_attachments() {
    const int n = static_cast<int>(robots_.size());
    next_attachment_id_ = 0;
    for (int i = 0; i < n; ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const auto& p = cfg_.robots[idx];
        auto& list = rt_[idx].attachments;
        list.clear();

        ComponentAttachment goal;
        goal.id = next_attachment_id_++;
        goal.owner = i;
        goal.kind = ComponentKind::GoalSpring;
        goal.spec = p.goal;
        goal.other = {AnchorOther::Type::TaskTarget, i, 0};
        list.push_back(goal);

        if (cfg_.obstacle.enabled) {
            ComponentAttachment ob;
            ob.id = next_attachment_id_++;
            ob.owner = i;
            ob.kind = ComponentKind::ObstacleSpring;
            ob.spec = ObstacleSpringSpec{cfg_.obstacle.spring,
                                         world_.layout.table_height + cfg_.obstacle.plane_offset,
                                         world_.layout.block_size};
            ob.other = {AnchorOther::Type::StaticObstacle, 0, 0};
            list.push_back(ob);
        }

        if (p.avoid_robots) {
            for (int j = 0; j < n; ++j) {
                if (j == i) {
                    continue;
                }
                for (int a = 0; a < kBodyPointCount; ++a) {
                    for (int b = 0; b < kBodyPointCount; ++b) {
                        ComponentAttachment c;
                        c.id = next_attachment_id_++;
                        c.owner = i;
                        c.kind = ComponentKind::RobotAvoidance;
                        c.spec = p.robot_avoidance;
                        c.self_point = a;
                        c.other = {AnchorOther::Type::AgentPoint, j, b};
                        list.push_back(c);
                    }
                }
            }
        }

        for (int h = 0; h < static_cast<int>(humans_.size()); ++h) {
            const int keypoints = static_cast<int>(humans_[static_cast<std::size_t>(h)].source.keypoint_offsets.size());
            for (int a = 0; a < kBodyPointCount; ++a) {
                for (int k = 0; k < keypoints; ++k) {
                    ComponentAttachment c;
                    c.id = next_attachment_id_++;
                    c.owner = i;
                    c.kind = ComponentKind::HandAvoidance;
                    c.spec = p.hand_avoidance;
                    c.self_point = a;
                    c.other = {AnchorOther::Type::HandKeypoint, h, k};
                    list.push_back(c);
                }
            }
            if (cfg_.damper) {
                ComponentAttachment d;
                d.id = next_attachment_id_++;
                d.owner = i;
                d.kind = ComponentKind::HandDamper;
                d.spec = p.damper;
                d.other = {AnchorOther::Type::HandKeypoint, h, 0};
                list.push_back(d);
            }
        }
    }
    const auto world = make_snapshot(0.0);
    for (const auto& r : rt_) {
        validate_attachments(r.attachments, world);
    }
}

void Simulation::restart_goal(int robot, double t) {
    const auto idx = static_cast<std::size_t>(robot);
    TimeLawFilter f;
    f.start_position = robots_[idx].position;
    f.goal_position = rt_[idx].task.waypoint;
    f.speed = cfg_.robots[idx].filter_speed;
    f.start_time = t;
    rt_[idx].goal = f;
}

WorldSnapshot Simulation::make_snapshot(double t) const {
    WorldSnapshot w;
    w.time = t;
    w.robots = robots_;
    w.goals.reserve(rt_.size());
    for (const auto& r : rt_) {
        w.goals.push_back(r.goal);
    }
    for (const auto& h : humans_) {
        w.hands.push_back(h.snapshot);
    }
    w.obstacle_count = 1;
    return w;
}

void Simulation::update_hands(double t) {
    for (auto& h : humans_) {
        const auto& src = h.source;
        if (t < src.first_sample - 1e-12) {
            h.snapshot = {};
            continue;
        }
        const double period = 1.0 / src.sample_rate;
        const auto sample = static_cast<std::int64_t>(std::floor((t - src.first_sample) / period + 1e-9));
        if (sample == h.last_sample) {
            continue;
        }
        h.last_sample = sample;
        const double ts = src.first_sample + static_cast<double>(sample) * period;
        const auto kp = hand_position(src, t);
        h.estimator.update(ts, kp);
        h.snapshot.present = kp.has_value();
        h.snapshot.keypoints = kp ? *kp : std::vector<Vec3>{};
        h.snapshot.velocities = kp ? h.estimator.velocities() : std::vector<Vec3>{};
    }
}

void Simulation::apply_human_placements(double t) {
    for (int hi = 0; hi < static_cast<int>(humans_.size()); ++hi) {
        auto& h = humans_[static_cast<std::size_t>(hi)];
        while (h.next_placement < h.placements.size() && h.placements[h.next_placement].time <= t + 1e-12) {
            const auto& p = h.placements[h.next_placement++];
            auto& b = board_.blocks[static_cast<std::size_t>(p.block)];
            b.state = BlockState::Placed;
            b.holder = -1;
            b.assigned_cell = p.cell;
            b.position = board_.grid.cell_center(p.cell) + Vec3(0, 0, 0.5 * b.size);
            board_.cell_taken[static_cast<std::size_t>(p.cell)] = true;
            board_.cell_block[static_cast<std::size_t>(p.cell)] = p.block;
            TraceEvent e;
            e.type = "human_placed";
            e.robot = hi;
            e.block = p.block;
            e.cell = p.cell;
            e.time = t;
            push_event(e);
        }
    }
}

void Simulation::coordinate(int robot, double t, const WorldSnapshot& world) {
    const auto idx = static_cast<std::size_t>(robot);
    auto& r = rt_[idx];
    const auto& a = robots_[idx];
    const bool was_stalled = r.stalled;
    r.stalled = r.detector.push(r.metric);
    const bool idle = !r.negotiator || (!r.negotiator->in_round() && !r.negotiator->holding() &&
                                        !r.negotiator->yielding());
    // A finished robot only parks; it is outside negotiation and waits for the
    // others to clear its way.
    if (r.stalled && !was_stalled && idle && r.task.phase != TaskPhase::Done) {
        TraceEvent e;
        e.type = "stall";
        e.robot = robot;
        e.time = t;
        push_event(e);
    }
    if (!r.negotiator) {
        return;
    }

    LocalStatus local;
    local.stall_detected = r.stalled;
    local.stalled_now = stalled_now(r.metric, cfg_.coordination.stall);
    local.finished = r.task.phase == TaskPhase::Done;
    local.grasping = grasping_flag(r.task.phase);
    local.at_waypoint = (a.position - r.task.waypoint).norm() <= kWaypointReached;
    local.dist_to_goal = (a.position - r.task.waypoint).norm();
    double nearest = 1e9;
    const double radius = cfg_.coordination.neighborhood_radius;
    for (int j = 0; j < static_cast<int>(world.robots.size()); ++j) {
        const double d = (world.robots[static_cast<std::size_t>(j)].position - a.position).norm();
        if (j != robot) {
            nearest = std::min(nearest, d);
        }
        if (radius <= 0.0 || j == robot || d <= radius) {
            local.participants.push_back(j);
        }
    }
    local.dist_to_nearest_robot = nearest;

    const auto inbox = bus_->deliver(robot, step_);
    auto out = r.negotiator->step(t, local, inbox);
    for (const auto& m : out.outbound) {
        bus_->broadcast(step_, m);
        pending_messages_.push_back(m);
    }
    for (const auto& d : out.decisions) {
        if (d.kind == DecisionKind::NoWinner) {
            continue;
        }
        apply_toggles(r.attachments, d.toggles, robot);
        TraceEvent e;
        e.robot = robot;
        e.round = d.round;
        e.winner = d.winner;
        e.time = t;
        switch (d.kind) {
            case DecisionKind::Grant:
                e.type = "grant";
                if (d.winner == robot) {
                    ++counters_[idx];
                }
                break;
            case DecisionKind::Release: e.type = "release"; break;
            case DecisionKind::ConflictFallback: e.type = "conflict"; break;
            case DecisionKind::NoWinner: break;
        }
        push_event(e);
        r.detector.reset();
        r.stalled = false;
        if (d.kind != DecisionKind::Grant && d.winner != robot) {
            // Goal was suspended while yielding; resume from where we are.
            restart_goal(robot, t);
        }
    }
    r.yielding = r.negotiator->yielding();
}

AgentRecord Simulation::agent_record(int robot, double t) const {
    const auto idx = static_cast<std::size_t>(robot);
    const auto& a = robots_[idx];
    const auto& r = rt_[idx];
    AgentRecord rec;
    rec.position = a.position;
    rec.velocity = a.velocity;
    rec.waypoint = r.task.waypoint;
    rec.anchor = r.goal ? filtered_goal_position(*r.goal, t) : a.position;
    rec.phase = is_worker(robot) ? to_string(r.task.phase) : "hold";
    rec.grasped = a.grasped_block.value_or(-1);
    rec.rho = r.metric.rho;
    rec.f_net = r.metric.net;
    rec.f_tot = r.metric.total;
    rec.stalled = r.stalled;
    rec.enabled.fill(true);
    for (const auto& att : r.attachments) {
        if (!att.enabled) {
            rec.enabled[static_cast<std::size_t>(att.kind)] = false;
        }
    }
    for (const auto& c : r.forces.per_component) {
        rec.force_by_kind[static_cast<std::size_t>(c.kind)] += c.force;
        if (cfg_.trace_full) {
            rec.attachment_forces.emplace_back(c.attachment, c.force);
        }
    }
    return rec;
}

void Simulation::record(double t) {
    TraceRecord rec;
    rec.step = step_;
    rec.time = t;
    for (int i = 0; i < static_cast<int>(robots_.size()); ++i) {
        rec.robots.push_back(agent_record(i, t));
    }
    for (const auto& h : humans_) {
        rec.hands.push_back({h.snapshot.present, h.snapshot.keypoints});
    }
    for (std::size_t i = 0; i < rt_.size(); ++i) {
        if (rt_[i].negotiator && rt_[i].negotiator->holding()) {
            rec.holder = static_cast<int>(i);
        }
    }
    rec.counters = counters_;
    rec.messages = std::move(pending_messages_);
    rec.events = std::move(pending_events_);
    pending_messages_.clear();
    pending_events_.clear();
    trace_.records.push_back(std::move(rec));
}

void Simulation::push_task_events(const TaskAdvance& adv, int robot) {
    for (const auto& te : adv.events) {
        TraceEvent e;
        e.robot = robot;
        e.block = te.block;
        e.cell = te.cell;
        e.time = te.time;
        switch (te.kind) {
            case TaskEventKind::Assigned: e.type = "assigned"; break;
            case TaskEventKind::Grasped:
                e.type = "grasped";
                e.from = board_.blocks[static_cast<std::size_t>(te.block)].home;
                e.to = board_.grid.cell_center(te.cell);
                break;
            case TaskEventKind::Placed: e.type = "placed"; break;
            case TaskEventKind::Replanned: e.type = "replanned"; break;
            case TaskEventKind::Done: e.type = "done"; break;
        }
        push_event(e);
    }
}

void Simulation::advance_tasks(double t) {
    for (int i = 0; i < static_cast<int>(robots_.size()); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        auto& r = rt_[idx];
        if (r.yielding || !is_worker(i)) {
            continue;
        }
        TaskContext ctx{i, &setups_[idx], cfg_.geometry, cfg_.tolerances};
        const auto adv = advance_task(r.task, robots_[idx], board_, ctx, t, r.rng);
        if (adv.waypoint_changed || !r.goal) {
            restart_goal(i, t);
        }
        push_task_events(adv, i);
        r.finished = r.task.phase == TaskPhase::Done &&
                     (robots_[idx].position - setups_[idx].rest_pose).norm() <= kRestTolerance;
    }
}

bool Simulation::is_worker(int robot) const {
    const auto& sc = cfg_.scenario;
    return sc.kind != ScenarioKind::Hold || !sc.hold_positions[static_cast<std::size_t>(robot)].has_value();
}

bool Simulation::complete() const {
    if (cfg_.scenario.kind == ScenarioKind::Hold && blocks_total_ == 0) {
        return time() >= cfg_.scenario.hold_duration - 1e-9;
    }
    for (const auto& h : humans_) {
        if (h.next_placement < h.placements.size()) {
            return false;
        }
    }
    for (int i = 0; i < static_cast<int>(rt_.size()); ++i) {
        if (is_worker(i) && !rt_[static_cast<std::size_t>(i)].finished) return false;
    }
    return true;
}

void Simulation::finish(RunStatus status, const std::string& fault) {
    status_ = status;
    if (step_ > 0) {
        // Final state; forces are those of the last evaluated step.
        record(time());
    }
    trace_.footer.status = to_string(status);
    trace_.footer.fault = fault;
    trace_.footer.end_time = time();
    trace_.footer.steps = step_;
    trace_.footer.blocks_total = blocks_total_;
}

RunStatus Simulation::step() {
    if (status_ != RunStatus::Running) {
        return status_;
    }
    if (time() >= cfg_.duration_cap - 1e-9) {
        finish(RunStatus::Capped);
        return status_;
    }
    const double t = time();
    const double dt = cfg_.dt;
    try {
        update_hands(t);
        apply_human_placements(t);
        const auto world = make_snapshot(t);

        const bool springs_only = cfg_.coordination.springs_only;
        for (std::size_t i = 0; i < robots_.size(); ++i) {
            auto& r = rt_[i];
            aggregate_forces_into(r.forces, robots_[i], r.attachments, world, t, &r.damper_memory);
            r.metric = stall_metric(r.forces, springs_only);
            r.metric.time = t;
            r.metric.speed = robots_[i].velocity.norm();
        }
        for (int i = 0; i < static_cast<int>(robots_.size()); ++i) {
            coordinate(i, t, world);
        }
        if (step_ % cfg_.trace_stride == 0) {
            record(t);
        }
        const DynamicsParams dyn{cfg_.floor_damping};
        for (std::size_t i = 0; i < robots_.size(); ++i) {
            robots_[i] = step_agent(robots_[i], rt_[i].forces, dt, dyn);
            if (robots_[i].grasped_block) {
                auto& b = board_.blocks[static_cast<std::size_t>(*robots_[i].grasped_block)];
                b.position = robots_[i].position - Vec3(0, 0, 0.5 * b.size);
            }
        }
        ++step_;
        advance_tasks(time());
    } catch (const SimulationFault& e) {
        ++step_;
        finish(RunStatus::Faulted, e.what());
        return status_;
    }
    if (complete()) {
        finish(RunStatus::Completed);
    }
    return status_;
}

RunStatus Simulation::run_to_end() {
    while (step() == RunStatus::Running) {
    }
    return status_;
}

json Simulation::snapshot() const {
    const double t = time();
    json robots = json::array();
    for (int i = 0; i < static_cast<int>(robots_.size()); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        const auto& a = robots_[idx];
        const auto& r = rt_[idx];
        json forces = json::object();
        for (int k = 0; k < kComponentKindCount; ++k) {
            forces[to_string(static_cast<ComponentKind>(k))] = vec(r.forces.sum_of(static_cast<ComponentKind>(k)));
        }
        robots.push_back({{"position", vec(a.position)},
                          {"velocity", vec(a.velocity)},
                          {"base", vec(a.base_position)},
                          {"waypoint", vec(r.task.waypoint)},
                          {"phase", to_string(r.task.phase)},
                          {"grasped", a.grasped_block.value_or(-1)},
                          {"rho", r.metric.rho},
                          {"stalled", r.stalled},
                          {"yielding", r.yielding},
                          {"forces", forces}});
    }
    json hands = json::array();
    for (const auto& h : humans_) {
        json kps = json::array();
        for (const auto& k : h.snapshot.keypoints) kps.push_back(vec(k));
        hands.push_back({{"present", h.snapshot.present}, {"keypoints", kps}});
    }
    json blocks = json::array();
    for (const auto& b : board_.blocks) {
        const char* state = b.state == BlockState::AtHome ? "home" : b.state == BlockState::Held ? "held" : "placed";
        blocks.push_back({{"position", vec(b.position)}, {"state", state}});
    }
    int holder = -1;
    for (std::size_t i = 0; i < rt_.size(); ++i) {
        if (rt_[i].negotiator && rt_[i].negotiator->holding()) holder = static_cast<int>(i);
    }
    std::optional<double> d_rr;
    for (std::size_t i = 0; i < robots_.size(); ++i) {
        for (std::size_t j = i + 1; j < robots_.size(); ++j) {
            const double d = (robots_[i].position - robots_[j].position).norm();
            d_rr = d_rr ? std::min(*d_rr, d) : d;
        }
    }
    std::optional<double> d_rh;
    for (const auto& a : robots_) {
        for (const auto& h : humans_) {
            if (!h.snapshot.present) continue;
            for (const auto& k : h.snapshot.keypoints) {
                const double d = (a.position - k).norm();
                d_rh = d_rh ? std::min(*d_rh, d) : d;
            }
        }
    }
    json hand_sigma = json::array();
    for (const auto& p : cfg_.robots) hand_sigma.push_back(p.hand_avoidance.sigma);
    return {{"t", t},
            {"step", step_},
            {"status", to_string(status_)},
            {"robots", robots},
            {"hands", hands},
            {"blocks", blocks},
            {"holder", holder},
            {"counters", counters_},
            {"d_rr", d_rr ? json(*d_rr) : json(nullptr)},
            {"d_rh", d_rh ? json(*d_rh) : json(nullptr)},
            {"protective_distance", cfg_.protective_distance},
            {"hand_sigma", hand_sigma},
            {"damper", cfg_.damper},
            {"blocks_placed", board_.placed_count()},
            {"blocks_total", blocks_total_}};
}

std::shared_ptr<LiveHandMailbox> Simulation::hand_mailbox(int human) const {
    if (human < 0 || human >= static_cast<int>(humans_.size())) {
        return nullptr;
    }
    return humans_[static_cast<std::size_t>(human)].source.live;
}

void Simulation::set_hand_avoidance(const GaussianSpringSpec& spec) {
    TraceEvent e;
    e.type = "control";
    e.time = time();
    e.detail = {{"hand_avoidance",
                 {{"stiffness", spec.stiffness}, {"sigma", spec.sigma}, {"max_force", spec.max_force},
                  {"cutoff", spec.cutoff}}}};
    push_event(std::move(e));
    for (auto& p : cfg_.robots) {
        p.hand_avoidance = spec;
    }
    for (auto& r : rt_) {
        for (auto& a : r.attachments) {
            if (a.kind == ComponentKind::HandAvoidance) {
                a.spec = spec;
            }
        }
    }
}

void Simulation::set_damper(bool enabled) {
    if (cfg_.damper == enabled) {
        return;
    }
    cfg_.damper = enabled;
    TraceEvent e;
    e.type = "control";
    e.time = time();
    e.detail = {{"damper", enabled}};
    push_event(std::move(e));
    for (int i = 0; i < static_cast<int>(rt_.size()); ++i) {
        auto& list = rt_[static_cast<std::size_t>(i)].attachments;
        if (!enabled) {
            std::erase_if(list, [](const ComponentAttachment& a) { return a.kind == ComponentKind::HandDamper; });
            continue;
        }
        for (int h = 0; h < static_cast<int>(humans_.size()); ++h) {
            ComponentAttachment d;
            d.id = next_attachment_id_++;
            d.owner = i;
            d.kind = ComponentKind::HandDamper;
            d.spec = cfg_.robots[static_cast<std::size_t>(i)].damper;
            d.other = {AnchorOther::Type::HandKeypoint, h, 0};
            list.push_back(d);
        }
    }
}

bool Simulation::manipulating() const {
    return std::any_of(rt_.begin(), rt_.end(), [](const RobotRuntime& r) { return grasping_flag(r.task.phase); });
}

MetricsOptions metrics_options(const RunConfig& cfg) {
    MetricsOptions o;
    o.protective_distance = cfg.protective_distance;
    return o;
}

SimTrace session_trace(const Simulation& sim) {
    auto trace = sim.trace();
    if (trace.footer.status.empty()) {
        trace.footer.status = "stopped";
        trace.footer.end_time = sim.time();
        trace.footer.steps = sim.steps();
        trace.footer.blocks_total = sim.blocks_total();
    }
    return trace;
}

RunResult run(const RunConfig& cfg) {
    Simulation sim(cfg);
    sim.run_to_end();
    RunResult out;
    out.status = sim.status();
    out.trace = sim.take_trace();
    out.metrics = compute_metrics(out.trace, metrics_options(cfg));
    return out;
}

namespace {

RunConfig verified_config(const SimTrace& trace) {
    RunConfig cfg = parse_config(trace.header.config);
    if (config_hash(cfg) != trace.header.config_hash) {
        throw TraceIntegrityError(1, "config hash does not match the embedded configuration");
    }
    return cfg;
}

}  // namespace

MetricsRecord replay(const SimTrace& trace) {
    return compute_metrics(trace, metrics_options(verified_config(trace)));
}

RunResult resimulate(const SimTrace& trace) {
    const RunConfig cfg = verified_config(trace);
    const double dt = cfg.dt;

    // Live hands become scripted hands holding the recorded samples.
    json doc = cfg.source;
    for (std::size_t h = 0; h < cfg.hands.size(); ++h) {
        const auto& hc = cfg.hands[h];
        if (hc.mode != HandMode::Live) continue;
        const double period = 1.0 / hc.sample_rate;
        const auto offsets = HandSource::keypoint_cluster(hc.keypoints);
        json waypoints = json::array();
        std::int64_t last = -1;
        for (std::size_t i = 0; i < trace.records.size(); ++i) {
            const auto& rec = trace.records[i];
            const double t = static_cast<double>(rec.step) * dt;
            if (t < hc.first_sample - 1e-12) continue;
            const auto k = static_cast<std::int64_t>(std::floor((t - hc.first_sample) / period + 1e-9));
            if (k == last) continue;
            if (k != last + 1) {
                throw ConfigError("resimulate: the trace misses hand " + std::to_string(h) + " sample " +
                                  std::to_string(last + 1) + "; record every step or a divisor of the sample period");
            }
            last = k;
            if (h >= rec.hands.size()) {
                throw TraceIntegrityError(static_cast<std::int64_t>(i) + 2, "record lacks hand " + std::to_string(h));
            }
            const auto& hr = rec.hands[h];
            const Vec3 center = hr.present && !hr.keypoints.empty() ? Vec3(hr.keypoints[0] - offsets[0]) : Vec3::Zero();
            waypoints.push_back({{"t", hc.first_sample + static_cast<double>(k) * period},
                                 {"p", {center.x(), center.y(), center.z()}},
                                 {"present", hr.present}});
        }
        json& entry = doc["hands"][h];
        entry["mode"] = "scripted";
        if (waypoints.empty()) {
            waypoints.push_back({{"t", hc.first_sample}, {"p", {0.0, 0.0, 0.0}}, {"present", false}});
        }
        entry["waypoints"] = waypoints;
        entry.erase("approach");
    }
    const RunConfig scripted = parse_config(doc);

    struct Control {
        std::int64_t step;
        json detail;
    };
    std::vector<Control> controls;
    for (const auto& rec : trace.records) {
        for (const auto& e : rec.events) {
            if (e.type == "control") controls.push_back({std::llround(e.time / dt), e.detail});
        }
    }
    std::stable_sort(controls.begin(), controls.end(),
                     [](const Control& a, const Control& b) { return a.step < b.step; });

    Simulation sim(scripted);
    std::size_t next = 0;
    // A stopped session ends at its recorded step count; anything else ends on its own.
    const bool stopped = trace.footer.status == "stopped";
    while (sim.status() == RunStatus::Running && (!stopped || sim.steps() < trace.footer.steps)) {
        while (next < controls.size() && controls[next].step <= sim.steps()) {
            const auto& d = controls[next++].detail;
            if (d.contains("hand_avoidance")) {
                const auto& s = d["hand_avoidance"];
                GaussianSpringSpec spec;
                spec.stiffness = s.at("stiffness").get<double>();
                spec.sigma = s.at("sigma").get<double>();
                spec.max_force = s.at("max_force").get<double>();
                spec.cutoff = s.at("cutoff").get<double>();
                sim.set_hand_avoidance(spec);
            } else if (d.contains("damper")) {
                sim.set_damper(d["damper"].get<bool>());
            }
        }
        sim.step();
    }
    RunResult out;
    out.status = sim.status();
    out.trace = session_trace(sim);
    out.metrics = compute_metrics(out.trace, metrics_options(cfg));
    return out;
}

}  // namespace vmc
