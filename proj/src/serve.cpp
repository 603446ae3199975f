#include "vmc/serve.hpp"

#include <chrono>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "vmc/simulation.hpp"

namespace vmc {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace ws = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;

RunConfig with_live_hand(const RunConfig& cfg) {
    for (const auto& h : cfg.hands) {
        if (h.mode == HandMode::Live) {
            return cfg;
        }
    }
    json hands = cfg.source.contains("hands") ? cfg.source["hands"] : json::array();
    // Keep scheduled humans in place: fill missing entries with empty objects.
    while (hands.size() < cfg.hands.size()) {
        hands.push_back(json::object());
    }
    hands.push_back({{"mode", "live"}});
    json patch = {{"hands", hands}};
    if (cfg.source.contains("scenario") && cfg.source["scenario"].contains("humans")) {
        patch["scenario"]["humans"] = static_cast<int>(hands.size());
    }
    return with_overrides(cfg, patch);
}

GaussianSpringSpec hand_profile(int profile) {
    switch (profile) {
        case 1: return GaussianSpringSpec::from_sigma_fmax(0.09, -40.0);
        case 2: return GaussianSpringSpec::from_sigma_fmax(0.09, -60.0);
        case 3: return GaussianSpringSpec::from_sigma_fmax(0.18, -40.0);
        case 4: return GaussianSpringSpec::from_sigma_fmax(0.18, -60.0);
        default: throw ConfigError("profile must be 1..4");
    }
}

namespace {

class Session;

struct Command {
    std::weak_ptr<Session> from;
    json message;
};

}  // namespace

struct Server::Impl {
    RunConfig cfg;
    ServeOptions options;
    net::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::thread io_thread;
    std::atomic<bool> stopping{false};
    bool bound = false;

    std::mutex mutex;  // guards commands, live_hand, sim_time
    std::deque<Command> commands;
    std::shared_ptr<LiveHandMailbox> live_hand;
    int live_index = -1;
    double sim_time = 0.0;
    std::string hello;

    std::vector<std::weak_ptr<Session>> sessions;  // io thread only

    void accept();
    void broadcast(std::string text);
    void handle(const std::shared_ptr<Session>& s, const std::string& text);
};

namespace {

class Session : public std::enable_shared_from_this<Session> {
public:
    Session(tcp::socket socket, Server::Impl& server) : ws_(std::move(socket)), server_(server) {}

    void start(std::string hello) {
        ws_.text(true);
        ws_.async_accept([self = shared_from_this(), hello = std::move(hello)](beast::error_code ec) mutable {
            if (ec) return;
            self->open_ = true;
            self->replies_.push_front(std::move(hello));
            self->write();
            self->read();
        });
    }

    /// Latest-only: an unsent snapshot is replaced by a newer one.
    void send_snapshot(std::string text) {
        snapshot_ = std::move(text);
        has_snapshot_ = true;
        write();
    }

    void send_reply(std::string text) {
        replies_.push_back(std::move(text));
        write();
    }

    void close() {
        beast::error_code ec;
        beast::get_lowest_layer(ws_).socket().close(ec);
    }

private:
    void read() {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) return;  // disconnect; the hand times out on its own
            const std::string text = beast::buffers_to_string(self->buffer_.data());
            self->buffer_.consume(self->buffer_.size());
            self->server_.handle(self, text);
            self->read();
        });
    }

    void write() {
        if (!open_ || writing_) return;
        if (!replies_.empty()) {
            out_ = std::move(replies_.front());
            replies_.pop_front();
        } else if (has_snapshot_) {
            out_ = std::move(snapshot_);
            has_snapshot_ = false;
        } else {
            return;
        }
        writing_ = true;
        ws_.async_write(net::buffer(out_), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            self->writing_ = false;
            if (ec) return;
            self->write();
        });
    }

    ws::stream<beast::tcp_stream> ws_;
    Server::Impl& server_;
    beast::flat_buffer buffer_;
    std::deque<std::string> replies_;
    std::string snapshot_;
    bool has_snapshot_ = false;
    std::string out_;
    bool open_ = false;  // nothing goes out before the handshake completes
    bool writing_ = false;
};

json error_frame(const std::string& reason) { return {{"type", "error"}, {"reason", reason}}; }

Vec3 parse_point(const json& p, double default_z) {
    if (!p.is_array() || (p.size() != 2 && p.size() != 3)) {
        throw std::invalid_argument("position must be [x, y] or [x, y, z]");
    }
    for (const auto& v : p) {
        if (!v.is_number()) throw std::invalid_argument("position entries must be numbers");
    }
    Vec3 out(p[0].get<double>(), p[1].get<double>(), p.size() == 3 ? p[2].get<double>() : default_z);
    if (!out.allFinite()) throw std::invalid_argument("position must be finite");
    return out;
}

}  // namespace

void Server::Impl::accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
        if (ec) return;
        auto s = std::make_shared<Session>(std::move(socket), *this);
        sessions.push_back(s);
        std::string h;
        {
            std::lock_guard lock(mutex);
            h = hello;
        }
        s->start(std::move(h));
        accept();
    });
}

void Server::Impl::broadcast(std::string text) {
    net::post(ioc, [this, text = std::move(text)] {
        std::erase_if(sessions, [](const auto& w) { return w.expired(); });
        for (auto& w : sessions) {
            if (auto s = w.lock()) s->send_snapshot(text);
        }
    });
}

void Server::Impl::handle(const std::shared_ptr<Session>& s, const std::string& text) {
    json msg;
    try {
        msg = json::parse(text);
    } catch (const json::parse_error&) {
        s->send_reply(error_frame("malformed message: not JSON").dump());
        return;
    }
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
        s->send_reply(error_frame("malformed message: missing type").dump());
        return;
    }
    const auto type = msg["type"].get<std::string>();
    if (type == "hello") {
        if (msg.value("schema", -1) != kWireSchema) {
            s->send_reply(error_frame("schema mismatch: server speaks " + std::to_string(kWireSchema)).dump());
        } else {
            s->send_reply(json{{"type", "ack"}, {"action", "hello"}}.dump());
        }
        return;
    }
    if (type == "hand_input") {
        try {
            const bool engaged = msg.value("engaged", true);
            const double z = cfg.geometry.grasp_height + cfg.geometry.lift;
            const Vec3 p = engaged || msg.contains("position") ? parse_point(msg.at("position"), z) : Vec3::Zero();
            std::lock_guard lock(mutex);
            live_hand->post(p, engaged, sim_time);
        } catch (const std::exception& e) {
            s->send_reply(error_frame(std::string("hand_input rejected: ") + e.what()).dump());
        }
        return;
    }
    if (type == "control") {
        std::lock_guard lock(mutex);
        commands.push_back({s, msg});
        return;
    }
    s->send_reply(error_frame("unknown message type: " + type).dump());
}

Server::Server(RunConfig cfg, ServeOptions options) : impl_(std::make_unique<Impl>()) {
    impl_->cfg = with_live_hand(cfg);
    impl_->options = std::move(options);
    if (impl_->options.snapshot_rate < 30.0) {
        throw ConfigError("serve: snapshot rate must be at least 30 Hz");
    }
}

Server::~Server() {
    stop();
    if (impl_->io_thread.joinable()) impl_->io_thread.join();
}

void Server::bind() {
    if (impl_->bound) return;
    auto& a = impl_->acceptor;
    const tcp::endpoint ep(net::ip::make_address(impl_->options.address), impl_->options.port);
    a.open(ep.protocol());
    a.set_option(net::socket_base::reuse_address(true));
    a.bind(ep);
    a.listen();
    impl_->bound = true;
}

unsigned short Server::port() const { return impl_->acceptor.local_endpoint().port(); }

void Server::stop() {
    impl_->stopping = true;
}

void Server::run() {
    using clock = std::chrono::steady_clock;
    auto& im = *impl_;
    bind();

    auto sim = std::make_unique<Simulation>(im.cfg);
    int epoch = 0;
    auto find_live = [&] {
        for (int h = 0;; ++h) {
            auto mb = sim->hand_mailbox(h);
            if (mb) return std::make_pair(h, mb);
            if (h > 64) return std::make_pair(-1, std::shared_ptr<LiveHandMailbox>());
        }
    };
    {
        auto [idx, mb] = find_live();
        std::lock_guard lock(im.mutex);
        im.live_index = idx;
        im.live_hand = mb;
        im.hello = json{{"type", "hello"},
                        {"schema", kWireSchema},
                        {"robots", sim->robots().size()},
                        {"humans", sim->config().hands.size()},
                        {"live_hand", idx},
                        {"seed", sim->config().seed},
                        {"dt", sim->config().dt},
                        {"realtime_factor", im.options.realtime_factor},
                        {"profiles", {1, 2, 3, 4}},
                        {"layout", layout_to_json(sim->world().layout)}}
                       .dump();
    }
    im.accept();
    im.io_thread = std::thread([&im] { im.ioc.run(); });

    bool running = im.options.autostart;
    const auto wall_start = clock::now();
    auto origin_wall = wall_start;
    double origin_sim = 0.0;
    const auto snapshot_period = std::chrono::duration<double>(1.0 / im.options.snapshot_rate);
    auto next_snapshot = wall_start;

    auto reply = [&](const std::weak_ptr<Session>& to, json j) {
        net::post(im.ioc, [to, text = j.dump()] {
            if (auto s = to.lock()) s->send_reply(text);
        });
    };

    while (!im.stopping) {
        const auto now = clock::now();
        if (im.options.max_wall_seconds > 0.0 &&
            std::chrono::duration<double>(now - wall_start).count() >= im.options.max_wall_seconds) {
            break;
        }

        // Control commands apply at step boundaries.
        std::deque<Command> pending;
        {
            std::lock_guard lock(im.mutex);
            pending.swap(im.commands);
        }
        for (auto& c : pending) {
            const auto action = c.message.value("action", std::string());
            try {
                if (action == "start") {
                    running = true;
                    origin_wall = clock::now();
                    origin_sim = sim->time();
                } else if (action == "pause") {
                    running = false;
                } else if (action == "reset") {
                    sim = std::make_unique<Simulation>(im.cfg);
                    ++epoch;
                    auto [idx, mb] = find_live();
                    std::lock_guard lock(im.mutex);
                    im.live_index = idx;
                    im.live_hand = mb;
                    im.sim_time = 0.0;
                    origin_wall = clock::now();
                    origin_sim = 0.0;
                } else if (action == "profile") {
                    if (!c.message.contains("profile") || !c.message["profile"].is_number_integer()) {
                        throw ConfigError("profile must be an integer 1..4");
                    }
                    if (sim->manipulating()) {
                        throw ConfigError("profile switch refused while a robot is grasping or releasing");
                    }
                    sim->set_hand_avoidance(hand_profile(c.message["profile"].get<int>()));
                } else if (action == "damper") {
                    if (!c.message.contains("enabled") || !c.message["enabled"].is_boolean()) {
                        throw ConfigError("damper needs enabled: true|false");
                    }
                    sim->set_damper(c.message["enabled"].get<bool>());
                } else {
                    throw ConfigError("unknown control action: " + action);
                }
                reply(c.from, {{"type", "ack"}, {"action", action}, {"t", sim->time()}});
            } catch (const std::exception& e) {
                reply(c.from, error_frame(e.what()));
            }
        }

        if (running && sim->status() == RunStatus::Running) {
            const double target =
                origin_sim + std::chrono::duration<double>(clock::now() - origin_wall).count() *
                                 im.options.realtime_factor;
            while (sim->time() + 1e-12 < target && sim->status() == RunStatus::Running) {
                sim->step();
            }
            std::lock_guard lock(im.mutex);
            im.sim_time = sim->time();
        } else {
            origin_wall = clock::now();
            origin_sim = sim->time();
        }

        if (clock::now() >= next_snapshot) {
            json snap = sim->snapshot();
            snap["type"] = "snapshot";
            snap["epoch"] = epoch;
            snap["running"] = running;
            im.broadcast(snap.dump());
            next_snapshot += std::chrono::duration_cast<clock::duration>(snapshot_period);
            if (next_snapshot < clock::now()) next_snapshot = clock::now();
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }

    if (!im.options.trace_path.empty()) {
        std::ofstream out(im.options.trace_path);
        const auto trace = session_trace(*sim);
        write_trace(out, trace);
    }

    net::post(im.ioc, [&im] {
        beast::error_code ec;
        im.acceptor.close(ec);
        for (auto& w : im.sessions) {
            if (auto s = w.lock()) s->close();
        }
        im.sessions.clear();
    });
    im.ioc.stop();
    if (im.io_thread.joinable()) im.io_thread.join();
}

}  // namespace vmc
