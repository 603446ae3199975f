#pragma once

// Run traces: a header document followed by one record per sampled step and
// a footer, written as newline-delimited JSON. Every line carries a SHA-256
// chained over the previous line's hash, so a single flipped byte is caught
// and located on read.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vmc/agent_dynamics.hpp"
#include "vmc/coordination.hpp"

namespace vmc {

inline constexpr int kTraceSchema = 1;

class TraceIntegrityError : public std::runtime_error {
public:
    TraceIntegrityError(std::int64_t line, const std::string& what)
        : std::runtime_error("trace line " + std::to_string(line) + ": " + what), line_(line) {}
    /// 1-based line number of the first bad record (1 = header).
    std::int64_t line() const { return line_; }

private:
    std::int64_t line_;
};

inline std::array<Vec3, kComponentKindCount> zero_forces() {
    std::array<Vec3, kComponentKindCount> out;
    out.fill(Vec3::Zero());
    return out;
}

struct AgentRecord {
    Vec3 position = Vec3::Zero();
    Vec3 velocity = Vec3::Zero();
    Vec3 waypoint = Vec3::Zero();
    Vec3 anchor = Vec3::Zero();  // filtered goal position
    std::string phase;
    int grasped = -1;
    double rho = 0.0;
    double f_net = 0.0;
    double f_tot = 0.0;
    bool stalled = false;  // detector output at this step
    std::array<Vec3, kComponentKindCount> force_by_kind = zero_forces();
    std::array<bool, kComponentKindCount> enabled{};  // every attachment of the kind is on
    std::vector<std::pair<int, Vec3>> attachment_forces;  // only with full detail
};

struct HandRecord {
    bool present = false;
    std::vector<Vec3> keypoints;
};

struct TraceEvent {
    std::string type;
    int robot = -1;
    int block = -1;
    int cell = -1;
    int round = -1;
    int winner = -1;
    double time = 0.0;
    Vec3 from = Vec3::Zero();  // transfer source (grasped events)
    Vec3 to = Vec3::Zero();    // transfer destination (grasped events)
    nlohmann::json detail;     // control events: the change applied
};

struct TraceRecord {
    std::int64_t step = 0;
    double time = 0.0;
    std::vector<AgentRecord> robots;
    std::vector<HandRecord> hands;
    int holder = -1;
    std::vector<int> counters;
    std::vector<NegotiationMessage> messages;  // sent since the previous record
    std::vector<TraceEvent> events;            // raised since the previous record
};

struct TraceHeader {
    int schema = kTraceSchema;
    std::string config_hash;
    std::uint64_t seed = 0;
    double dt = 0.0;
    int robots = 0;
    int humans = 0;
    nlohmann::json config;
    nlohmann::json layout;
};

struct TraceFooter {
    std::string status;  // completed | capped | faulted
    std::string fault;
    double end_time = 0.0;
    std::int64_t steps = 0;
    int blocks_total = 0;  // blocks the task has to place
};

struct SimTrace {
    TraceHeader header;
    std::vector<TraceRecord> records;
    TraceFooter footer;
};

nlohmann::json to_json(const TraceRecord& r);
TraceRecord record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NegotiationMessage& m);
NegotiationMessage message_from_json(const nlohmann::json& j);

std::string sha256_hex(const std::string& data);

/// Streams a trace line by line, extending the hash chain.
class TraceWriter {
public:
    explicit TraceWriter(std::ostream& out) : out_(out) {}
    void header(const TraceHeader& h);
    void record(const TraceRecord& r);
    void footer(const TraceFooter& f);

private:
    void emit(nlohmann::json line);
    std::ostream& out_;
    std::string prev_;
};

void write_trace(std::ostream& out, const SimTrace& trace);
std::string serialize_trace(const SimTrace& trace);

/// Parses and verifies the hash chain. Throws TraceIntegrityError naming the
/// first line that fails to parse or to verify.
SimTrace read_trace(std::istream& in);
SimTrace read_trace_file(const std::string& path);

}  // namespace vmc
