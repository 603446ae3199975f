#pragma once

// Live session over a websocket: the simulation steps in scaled wall-clock
// time, snapshots are broadcast to every client, and a driver client feeds
// hand positions and control commands.
//
// Text frames carry one JSON object each, tagged by "type":
//   server -> client: hello, snapshot, ack, error
//   client -> server: hello, hand_input, control

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>

#include "vmc/config.hpp"

namespace vmc {

inline constexpr int kWireSchema = 1;

struct ServeOptions {
    std::string address = "127.0.0.1";
    unsigned short port = 8765;  // 0 picks a free port
    double snapshot_rate = 50.0;  // Hz
    double realtime_factor = 1.0;
    bool autostart = true;
    double max_wall_seconds = 0.0;  // 0 = until stopped
    std::string trace_path;         // written when the session ends
};

/// Returns `cfg` with a live hand added when it has none.
RunConfig with_live_hand(const RunConfig& cfg);

/// Hand-avoidance spring of a shipped profile (1..4).
GaussianSpringSpec hand_profile(int profile);

class Server {
public:
    Server(RunConfig cfg, ServeOptions options);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds the socket. After this, port() is valid.
    void bind();
    unsigned short port() const;
    /// Serves until stop() or the wall-clock limit. Binds if needed.
    void run();
    /// Safe to call from any thread or a signal-driven watcher.
    void stop();

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

}  // namespace vmc
