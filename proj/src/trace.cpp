#include "vmc/trace.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

namespace vmc {

using nlohmann::json;

namespace {

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

MessageKind message_kind_from(const std::string& s) {
    if (s == "bid") return MessageKind::Bid;
    if (s == "grant") return MessageKind::Grant;
    if (s == "release") return MessageKind::Release;
    throw std::invalid_argument("unknown message kind '" + s + "'");
}

NodeStatus node_status_from(const std::string& s) {
    if (s == "stalled") return NodeStatus::Stalled;
    if (s == "not_stalled") return NodeStatus::NotStalled;
    if (s == "finished") return NodeStatus::Finished;
    throw std::invalid_argument("unknown node status '" + s + "'");
}

json agent_json(const AgentRecord& a) {
    json forces = json::object();
    json enabled = json::object();
    for (int k = 0; k < kComponentKindCount; ++k) {
        const auto kind = static_cast<ComponentKind>(k);
        forces[to_string(kind)] = vec(a.force_by_kind[static_cast<std::size_t>(k)]);
        enabled[to_string(kind)] = a.enabled[static_cast<std::size_t>(k)];
    }
    json j = {
        {"x", vec(a.position)},    {"v", vec(a.velocity)},   {"wp", vec(a.waypoint)},
        {"anchor", vec(a.anchor)}, {"phase", a.phase},       {"grasped", a.grasped},
        {"rho", a.rho},            {"f_net", a.f_net},       {"f_tot", a.f_tot},
        {"stalled", a.stalled},    {"forces", forces},       {"enabled", enabled},
    };
    if (!a.attachment_forces.empty()) {
        json per = json::array();
        for (const auto& [id, f] : a.attachment_forces) {
            per.push_back(json::array({id, f.x(), f.y(), f.z()}));
        }
        j["attachments"] = per;
    }
    return j;
}

AgentRecord agent_from(const json& j) {
    AgentRecord a;
    a.position = vec_from(j.at("x"));
    a.velocity = vec_from(j.at("v"));
    a.waypoint = vec_from(j.at("wp"));
    a.anchor = vec_from(j.at("anchor"));
    a.phase = j.at("phase").get<std::string>();
    a.grasped = j.at("grasped").get<int>();
    a.rho = j.at("rho").get<double>();
    a.f_net = j.at("f_net").get<double>();
    a.f_tot = j.at("f_tot").get<double>();
    a.stalled = j.at("stalled").get<bool>();
    for (int k = 0; k < kComponentKindCount; ++k) {
        const char* name = to_string(static_cast<ComponentKind>(k));
        a.force_by_kind[static_cast<std::size_t>(k)] = vec_from(j.at("forces").at(name));
        a.enabled[static_cast<std::size_t>(k)] = j.at("enabled").at(name).get<bool>();
    }
    if (j.contains("attachments")) {
        for (const auto& e : j.at("attachments")) {
            a.attachment_forces.emplace_back(e.at(0).get<int>(),
                                             Vec3(e.at(1).get<double>(), e.at(2).get<double>(), e.at(3).get<double>()));
        }
    }
    return a;
}

json event_json(const TraceEvent& e) {
    json j = {{"type", e.type}, {"t", e.time}};
    if (e.robot >= 0) j["robot"] = e.robot;
    if (e.block >= 0) j["block"] = e.block;
    if (e.cell >= 0) j["cell"] = e.cell;
    if (e.round >= 0) j["round"] = e.round;
    if (e.winner >= 0) j["winner"] = e.winner;
    if (e.type == "grasped") {
        j["from"] = vec(e.from);
        j["to"] = vec(e.to);
    }
    if (!e.detail.is_null()) j["detail"] = e.detail;
    return j;
}

TraceEvent event_from(const json& j) {
    TraceEvent e;
    e.type = j.at("type").get<std::string>();
    e.time = j.at("t").get<double>();
    e.robot = j.value("robot", -1);
    e.block = j.value("block", -1);
    e.cell = j.value("cell", -1);
    e.round = j.value("round", -1);
    e.winner = j.value("winner", -1);
    if (j.contains("from")) e.from = vec_from(j.at("from"));
    if (j.contains("to")) e.to = vec_from(j.at("to"));
    if (j.contains("detail")) e.detail = j.at("detail");
    return e;
}

json header_json(const TraceHeader& h) {
    return {{"schema", h.schema}, {"config_hash", h.config_hash}, {"seed", h.seed}, {"dt", h.dt},
            {"robots", h.robots}, {"humans", h.humans},           {"config", h.config}, {"layout", h.layout}};
}

TraceHeader header_from(const json& j) {
    TraceHeader h;
    h.schema = j.at("schema").get<int>();
    h.config_hash = j.at("config_hash").get<std::string>();
    h.seed = j.at("seed").get<std::uint64_t>();
    h.dt = j.at("dt").get<double>();
    h.robots = j.at("robots").get<int>();
    h.humans = j.at("humans").get<int>();
    h.config = j.at("config");
    h.layout = j.at("layout");
    return h;
}

json footer_json(const TraceFooter& f) {
    json j = {{"status", f.status}, {"end_time", f.end_time}, {"steps", f.steps}, {"blocks_total", f.blocks_total}};
    if (!f.fault.empty()) j["fault"] = f.fault;
    return j;
}

TraceFooter footer_from(const json& j) {
    TraceFooter f;
    f.status = j.at("status").get<std::string>();
    f.end_time = j.at("end_time").get<double>();
    f.steps = j.at("steps").get<std::int64_t>();
    f.blocks_total = j.at("blocks_total").get<int>();
    f.fault = j.value("fault", std::string());
    return f;
}

constexpr const char* kPrefix = "{\"h\":\"";
constexpr std::size_t kHashLen = 64;
constexpr const char* kMid = "\",\"d\":";

}  // namespace

json to_json(const NegotiationMessage& m) {
    return {{"kind", to_string(m.kind)},
            {"sender", m.sender},
            {"round", m.round},
            {"state", to_string(m.state)},
            {"count", m.priority_count},
            {"dist_to_goal", m.dist_to_goal},
            {"grasping", m.grasping},
            {"dist_to_nearest", m.dist_to_nearest_robot},
            {"t", m.timestamp},
            {"winner", m.winner}};
}

NegotiationMessage message_from_json(const json& j) {
    NegotiationMessage m;
    m.kind = message_kind_from(j.at("kind").get<std::string>());
    m.sender = j.at("sender").get<int>();
    m.round = j.at("round").get<int>();
    m.state = node_status_from(j.at("state").get<std::string>());
    m.priority_count = j.at("count").get<int>();
    m.dist_to_goal = j.at("dist_to_goal").get<double>();
    m.grasping = j.at("grasping").get<bool>();
    m.dist_to_nearest_robot = j.at("dist_to_nearest").get<double>();
    m.timestamp = j.at("t").get<double>();
    m.winner = j.at("winner").get<int>();
    return m;
}

json to_json(const TraceRecord& r) {
    json robots = json::array();
    for (const auto& a : r.robots) robots.push_back(agent_json(a));
    json hands = json::array();
    for (const auto& h : r.hands) {
        json kp = json::array();
        for (const auto& p : h.keypoints) kp.push_back(vec(p));
        hands.push_back({{"present", h.present}, {"keypoints", kp}});
    }
    json messages = json::array();
    for (const auto& m : r.messages) messages.push_back(to_json(m));
    json events = json::array();
    for (const auto& e : r.events) events.push_back(event_json(e));
    return {{"step", r.step},       {"t", r.time},           {"robots", robots},
            {"hands", hands},       {"holder", r.holder},    {"counters", r.counters},
            {"messages", messages}, {"events", events}};
}

TraceRecord record_from_json(const json& j) {
    TraceRecord r;
    r.step = j.at("step").get<std::int64_t>();
    r.time = j.at("t").get<double>();
    for (const auto& a : j.at("robots")) r.robots.push_back(agent_from(a));
    for (const auto& h : j.at("hands")) {
        HandRecord hr;
        hr.present = h.at("present").get<bool>();
        for (const auto& p : h.at("keypoints")) hr.keypoints.push_back(vec_from(p));
        r.hands.push_back(std::move(hr));
    }
    r.holder = j.at("holder").get<int>();
    r.counters = j.at("counters").get<std::vector<int>>();
    for (const auto& m : j.at("messages")) r.messages.push_back(message_from_json(m));
    for (const auto& e : j.at("events")) r.events.push_back(event_from(e));
    return r;
}

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

void TraceWriter::emit(json line) {
    const std::string payload = line.dump();
    prev_ = sha256_hex(prev_ + payload);
    out_ << kPrefix << prev_ << kMid << payload << "}\n";
}

void TraceWriter::header(const TraceHeader& h) { emit({{"header", header_json(h)}}); }
void TraceWriter::record(const TraceRecord& r) { emit({{"record", to_json(r)}}); }
void TraceWriter::footer(const TraceFooter& f) { emit({{"footer", footer_json(f)}}); }

void write_trace(std::ostream& out, const SimTrace& trace) {
    TraceWriter w(out);
    w.header(trace.header);
    for (const auto& r : trace.records) w.record(r);
    w.footer(trace.footer);
}

std::string serialize_trace(const SimTrace& trace) {
    std::ostringstream out;
    write_trace(out, trace);
    return out.str();
}

SimTrace read_trace(std::istream& in) {
    SimTrace trace;
    std::string prev;
    std::string line;
    std::int64_t n = 0;
    bool have_header = false;
    bool have_footer = false;
    const std::string prefix = kPrefix;
    const std::string mid = kMid;
    while (std::getline(in, line)) {
        ++n;
        if (have_footer) {
            throw TraceIntegrityError(n, "content after footer");
        }
        const std::size_t payload_at = prefix.size() + kHashLen + mid.size();
        if (line.size() < payload_at + 1 || line.compare(0, prefix.size(), prefix) != 0 ||
            line.compare(prefix.size() + kHashLen, mid.size(), mid) != 0 || line.back() != '}') {
            throw TraceIntegrityError(n, "malformed line framing");
        }
        const std::string hash = line.substr(prefix.size(), kHashLen);
        const std::string payload = line.substr(payload_at, line.size() - payload_at - 1);
        if (sha256_hex(prev + payload) != hash) {
            throw TraceIntegrityError(n, "hash chain mismatch");
        }
        prev = hash;
        json j;
        try {
            j = json::parse(payload);
            if (j.contains("header")) {
                if (have_header) throw std::invalid_argument("second header");
                trace.header = header_from(j.at("header"));
                have_header = true;
            } else if (j.contains("record")) {
                if (!have_header) throw std::invalid_argument("record before header");
                trace.records.push_back(record_from_json(j.at("record")));
                if (trace.records.size() > 1 &&
                    !(trace.records.back().time > trace.records[trace.records.size() - 2].time)) {
                    throw std::invalid_argument("timestamps not strictly increasing");
                }
            } else if (j.contains("footer")) {
                trace.footer = footer_from(j.at("footer"));
                have_footer = true;
            } else {
                throw std::invalid_argument("unknown line kind");
            }
        } catch (const TraceIntegrityError&) {
            throw;
        } catch (const std::exception& e) {
            throw TraceIntegrityError(n, e.what());
        }
    }
    if (!have_header) {
        throw TraceIntegrityError(n + 1, "missing header");
    }
    if (!have_footer) {
        throw TraceIntegrityError(n + 1, "missing footer (truncated trace)");
    }
    return trace;
}

SimTrace read_trace_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open trace " + path);
    }
    return read_trace(in);
}

}  // namespace vmc
