#include <algorithm>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "bpmux/bp/codec.hpp"
#include "bpmux/cla/mtcp.hpp"
#include "bpmux/common/log.hpp"
#include "bpmux/harness/harness.hpp"
#include "bpmux/storage/command.hpp"

namespace bpmux::harness {

using json = nlohmann::json;
using namespace std::chrono_literals;

namespace {

constexpr const char* kDefaultAdmin = "harness-admin";
constexpr const char* kSecret = "harness";
constexpr const char* kControlAgent = "harness-ctl";
constexpr DtnTimeMs kDefaultSimStart = 700'000'000'000;

aap2::Bytes bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

aap2::Bytes from_hex(const std::string& hex)
{
    if (hex.size() % 2 != 0)
        throw ScenarioError("odd-length hex string");
    aap2::Bytes out;
    for (std::size_t i = 0; i < hex.size(); i += 2)
        out.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
    return out;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to)
{
    for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size())
        s.replace(pos, from.size(), to);
    return s;
}

// {"min": a, "max": b} or a plain number.
struct Range {
    std::uint64_t min = 0;
    std::uint64_t max = UINT64_MAX;

    static Range of(const json& j)
    {
        if (j.is_number_integer() && j.get<std::int64_t>() >= 0)
            return {j.get<std::uint64_t>(), j.get<std::uint64_t>()};
        Range r;
        if (!j.is_object())
            throw ScenarioError("expected a count or {min, max}, got " + std::string(j.type_name()) + " " + j.dump());
        if (j.contains("min"))
            r.min = j.at("min").get<std::uint64_t>();
        if (j.contains("max"))
            r.max = j.at("max").get<std::uint64_t>();
        return r;
    }
    bool contains(std::uint64_t v) const { return v >= min && v <= max; }
    bool exact() const { return min == max; }
    std::string text() const
    {
        if (exact())
            return std::to_string(min);
        return "[" + std::to_string(min) + ", " + (max == UINT64_MAX ? "inf" : std::to_string(max)) + "]";
    }
};

dispatch::DispatchDecision decision_of(const json& j)
{
    const std::string action = j.value("action", "drop");
    if (action == "forward") {
        std::vector<dispatch::NextHop> hops;
        auto add = [&](const json& h) {
            if (h.is_string()) {
                hops.push_back({bp::EndpointId::parse_node_id(h.get<std::string>()), {}});
            } else {
                const std::string cla = h.value("cla", "");
                hops.push_back({bp::EndpointId::parse_node_id(h.at("node").get<std::string>()),
                                cla.empty() ? cla::ClaAddress{} : cla::ClaAddress::parse(cla)});
            }
        };
        if (j.contains("via")) {
            if (j.at("via").is_array())
                for (const auto& h : j.at("via"))
                    add(h);
            else
                add(j.at("via"));
        }
        std::optional<std::uint64_t> max_fragment;
        if (j.contains("max_fragment"))
            max_fragment = j.at("max_fragment").get<std::uint64_t>();
        return dispatch::DispatchDecision::forward(std::move(hops), max_fragment);
    }
    if (action == "store")
        return dispatch::DispatchDecision::store();
    if (action == "drop")
        return dispatch::DispatchDecision::drop(j.value("reason", "scripted"));
    throw ScenarioError("unknown dispatcher action '" + action + "'");
}

std::uint64_t stat_field(const bpa::NodeStats& s, const std::string& name)
{
    static const std::map<std::string, std::function<std::uint64_t(const bpa::NodeStats&)>> fields = {
        {"received", [](const auto& s) { return s.received; }},
        {"redispatched", [](const auto& s) { return s.redispatched; }},
        {"reassembled", [](const auto& s) { return s.reassembled; }},
        {"delivered", [](const auto& s) { return s.delivered; }},
        {"forwarded", [](const auto& s) { return s.forwarded; }},
        {"stored", [](const auto& s) { return s.stored; }},
        {"dropped", [](const auto& s) { return s.dropped_total(); }},
        {"unsupported_version", [](const auto& s) { return s.unsupported_version; }},
        {"malformed", [](const auto& s) { return s.malformed; }},
        {"bdm_requests", [](const auto& s) { return s.bdm_requests; }},
        {"bdm_timeouts", [](const auto& s) { return s.bdm_timeouts; }},
    };
    auto it = fields.find(name);
    if (it == fields.end())
        throw ScenarioError("unknown statistic '" + name + "'");
    return it->second(s);
}

std::optional<core::DropReason> drop_reason_of(const std::string& name)
{
    for (std::size_t i = 0; i < core::kDropReasonCount; ++i) {
        const auto r = static_cast<core::DropReason>(i);
        if (name == core::to_string(r))
            return r;
    }
    return std::nullopt;
}

std::string xml_escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

class Runner {
public:
    Runner(const json& spec, const RunOptions& options) : spec_(spec), options_(options)
    {
        result_.name = spec.value("name", "unnamed");
        seed_ = options.seed.value_or(spec.value("seed", std::uint64_t{1}));
        const std::string clock = spec.value("clock", "real");
        if (clock == "sim") {
            sim_ = std::make_unique<SimClock>(spec.value("sim_start_ms", kDefaultSimStart));
            sim_start_ = sim_->now();
        } else if (clock != "real") {
            throw ScenarioError("clock must be \"real\" or \"sim\"");
        }
        std::random_device rd;
        tmp_ = std::filesystem::temp_directory_path() /
               ("bpmux-harness-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(tmp_);
    }

    ~Runner()
    {
        shutdown();
        std::error_code ec;
        std::filesystem::remove_all(tmp_, ec);
    }

    ScenarioResult run()
    {
        const auto started = std::chrono::steady_clock::now();
        started_ = started;
        try {
            for (const auto& n : spec_.at("nodes")) {
                NodeSlot slot;
                slot.name = n.at("name").get<std::string>();
                slot.config_json = n.at("config");
                nodes_.push_back(std::move(slot));
            }
            for (auto& slot : nodes_)
                start_node(slot, false);

            std::size_t index = 0;
            for (const auto& step : spec_.at("steps")) {
                StepResult sr;
                sr.index = index++;
                sr.op = step.at("op").get<std::string>();
                try {
                    sr.message = run_step(step);
                    if (sim_)
                        quiesce();
                } catch (const std::exception& e) {
                    sr.passed = false;
                    sr.message = e.what();
                }
                log::info("harness", result_.name, " step ", sr.index, " ", sr.op, sr.passed ? " ok" : " FAILED",
                          sr.message.empty() ? "" : ": ", sr.message);
                result_.steps.push_back(sr);
                if (!sr.passed) {
                    result_.failure = "step " + std::to_string(sr.index) + " (" + sr.op + "): " + sr.message;
                    break;
                }
            }
        } catch (const std::exception& e) {
            result_.failure = e.what();
        }

        collect_reports();
        if (result_.failure.empty()) {
            for (const auto& n : result_.nodes) {
                if (!n.accounting_closed()) {
                    result_.failure = "accounting does not close on node " + n.name;
                    break;
                }
            }
        }
        shutdown();
        result_.passed = result_.failure.empty();
        result_.wall_time =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
        result_.simulated_clock = sim_ != nullptr;
        result_.simulated_ms = sim_ ? sim_->now() - sim_start_ : 0;
        return std::move(result_);
    }

private:
    struct SinkSlot {
        std::vector<aap2::BundleAdu> earlier;
        std::unique_ptr<Sink> live;
        std::string secret;
    };
    struct BdmSlot {
        std::vector<Route> routes;
        dispatch::DispatchDecision fallback;
        std::uint64_t earlier_requests = 0;
        std::unique_ptr<ScriptedBdm> live;
    };
    struct NodeSlot {
        std::string name;
        json config_json;
        std::unique_ptr<bpa::Node> node;
        std::uint16_t mtcp_port = 0;
        std::uint16_t aap2_port = 0;
        std::vector<bpa::NodeStats> past_stats;
        std::vector<std::string> past_events;
        std::map<std::string, std::unique_ptr<aap2::Client>> senders;
        std::unique_ptr<aap2::Client> link_control;
        std::map<std::string, SinkSlot> sinks;
        std::optional<BdmSlot> bdm;
        std::vector<net::Socket> raw;
    };

    // ---- node lifecycle ----

    json expand(const json& j) const
    {
        if (j.is_string())
            return expand_text(j.get<std::string>());
        if (j.is_array() || j.is_object()) {
            json out = j;
            for (auto& [k, v] : out.items())
                v = expand(v);
            return out;
        }
        return j;
    }

    std::string expand_text(std::string s) const
    {
        if (s.find('$') == std::string::npos)
            return s;
        s = replace_all(s, "$tmp", tmp_.string());
        for (const auto& n : nodes_) {
            if (!n.node)
                continue;
            s = replace_all(s, "$" + n.name + ".mtcp", "127.0.0.1:" + std::to_string(n.mtcp_port));
            s = replace_all(s, "$" + n.name + ".aap2", n.node->aap2_target());
            s = replace_all(s, "$" + n.name + ".id", n.node->config().node_id.to_text());
        }
        if (s.find('$') != std::string::npos)
            throw ScenarioError("unresolved placeholder in '" + s + "'");
        return s;
    }

    void start_node(NodeSlot& slot, bool restart)
    {
        json cfg = expand(slot.config_json);
        if (!cfg.contains("admin_secret"))
            cfg["admin_secret"] = kDefaultAdmin;
        if (!cfg.contains("aap2"))
            cfg["aap2"] = json::object();
        if (!cfg["aap2"].contains("tcp"))
            cfg["aap2"]["tcp"] = "127.0.0.1:0";
        if (restart) {
            // Same ports as before, so peers and placeholders stay valid.
            if (slot.aap2_port)
                cfg["aap2"]["tcp"] = "127.0.0.1:" + std::to_string(slot.aap2_port);
            if (cfg.contains("clas"))
                for (auto& c : cfg["clas"])
                    if (c.value("type", "") == "mtcp" && slot.mtcp_port)
                        c["listen"] = "127.0.0.1:" + std::to_string(slot.mtcp_port);
        }
        auto config = bpa::NodeConfig::from_json_text(cfg.dump());
        slot.node = std::make_unique<bpa::Node>(std::move(config), sim_.get());
        slot.node->start();
        slot.mtcp_port = slot.node->mtcp_port();
        slot.aap2_port = slot.node->aap2_port();

        const std::string target = slot.node->aap2_target();
        for (auto& [agent, sink] : slot.sinks)
            sink.live = std::make_unique<Sink>(target, agent, sink.secret);
        if (slot.bdm) {
            slot.bdm->live = std::make_unique<ScriptedBdm>(target, slot.node->config().admin_secret,
                                                           slot.bdm->routes, slot.bdm->fallback);
            slot.bdm->live->start();
        }
    }

    // Disconnects the scripted dispatcher and waits for the node to log the
    // detach, so the line lands at the same place in every run.
    void retire_bdm(NodeSlot& slot)
    {
        if (!slot.bdm->live)
            return;
        auto detaches = [&] {
            const auto log = slot.node->event_log();
            return std::count_if(log.begin(), log.end(),
                                 [](const std::string& line) { return line.ends_with("dispatcher module detached"); });
        };
        const auto before = detaches();
        slot.bdm->earlier_requests += slot.bdm->live->requests();
        slot.bdm->live.reset();
        poll([&] { return detaches() > before; }, options_.poll_timeout);
    }

    void stop_node(NodeSlot& slot)
    {
        if (!slot.node)
            return;
        for (auto& [agent, sink] : slot.sinks) {
            if (sink.live) {
                auto got = sink.live->received();
                sink.earlier.insert(sink.earlier.end(), got.begin(), got.end());
                sink.live.reset();
            }
        }
        if (slot.bdm)
            retire_bdm(slot);
        slot.senders.clear();
        slot.link_control.reset();
        slot.raw.clear();
        slot.past_stats.push_back(slot.node->stats());
        auto events = slot.node->event_log();
        slot.past_events.insert(slot.past_events.end(), events.begin(), events.end());
        slot.node->stop();
        slot.node.reset();
    }

    void collect_reports()
    {
        for (auto& slot : nodes_) {
            NodeReport r;
            r.name = slot.name;
            r.stats = slot.past_stats;
            r.event_log = slot.past_events;
            if (slot.node) {
                r.stats.push_back(slot.node->stats());
                auto events = slot.node->event_log();
                r.event_log.insert(r.event_log.end(), events.begin(), events.end());
            }
            result_.nodes.push_back(std::move(r));
        }
    }

    void shutdown()
    {
        for (auto& slot : nodes_)
            stop_node(slot);
    }

    NodeSlot& slot_of(const json& step)
    {
        const std::string name = step.at("node").get<std::string>();
        for (auto& s : nodes_)
            if (s.name == name)
                return s;
        throw ScenarioError("unknown node '" + name + "'");
    }

    bpa::Node& running(NodeSlot& slot)
    {
        if (!slot.node)
            throw ScenarioError("node '" + slot.name + "' is not running");
        return *slot.node;
    }

    aap2::Client& sender(NodeSlot& slot, const std::string& agent, const std::string& secret)
    {
        auto& c = slot.senders[agent];
        if (!c) {
            c = std::make_unique<aap2::Client>(aap2::Client::connect(running(slot).aap2_target()));
            const auto reply = c->configure({true, agent, bytes_of(secret), 0, {}});
            if (reply.status != aap2::Response::Status::Ok) {
                slot.senders.erase(agent);
                throw ScenarioError("sender registration refused: " + std::string(aap2::to_string(reply.status)));
            }
        }
        return *c;
    }

    SinkSlot& sink(NodeSlot& slot, const std::string& agent, const std::string& secret)
    {
        auto& s = slot.sinks[agent];
        if (!s.live) {
            s.secret = secret;
            s.live = std::make_unique<Sink>(running(slot).aap2_target(), agent, secret);
        }
        return s;
    }

    std::vector<aap2::BundleAdu> sink_contents(const SinkSlot& s) const
    {
        auto all = s.earlier;
        if (s.live) {
            auto now = s.live->received();
            all.insert(all.end(), now.begin(), now.end());
        }
        return all;
    }

    std::chrono::milliseconds timeout_of(const json& step) const
    {
        return std::chrono::milliseconds(
            step.value("timeout_ms", static_cast<std::uint64_t>(options_.poll_timeout.count())));
    }

    template <typename Pred>
    bool poll(Pred pred, std::chrono::milliseconds timeout)
    {
        const auto end = std::chrono::steady_clock::now() + timeout;
        while (std::chrono::steady_clock::now() < end) {
            if (pred())
                return true;
            std::this_thread::sleep_for(10ms);
        }
        return pred();
    }

    aap2::Bytes payload_for(const json& step, const std::string& label)
    {
        if (step.contains("payload"))
            return bytes_of(step.at("payload").get<std::string>());
        const auto size = step.at("size").get<std::size_t>();
        std::mt19937_64 rng(seed_ ^ std::hash<std::string>{}(label));
        aap2::Bytes out(size);
        for (auto& b : out)
            b = static_cast<std::uint8_t>(rng());
        return out;
    }

    // Under the simulated clock every step runs to completion before the
    // next one starts, so independent activities never interleave: wait
    // until no node has work queued and nothing changed for a few polls.
    void quiesce()
    {
        auto snapshot = [&] {
            std::vector<std::uint64_t> v;
            bool busy = false;
            for (auto& slot : nodes_) {
                if (!slot.node)
                    continue;
                const auto st = slot.node->stats();
                v.insert(v.end(), {st.bundles_in(), st.outcomes(), st.unsupported_version, st.malformed,
                                   st.bdm_requests, st.links});
                busy = busy || st.awaiting_dispatch > 0;
                for (const auto& l : slot.node->links()) {
                    v.push_back(l.sent);
                    busy = busy || l.queued > 0;
                }
                for (const auto& [agent, sink] : slot.sinks)
                    v.push_back(sink.live ? sink.live->count() : 0);
                v.push_back(bdm_requests(slot));
                v.push_back(slot.node->event_log().size());
            }
            return std::make_pair(busy, v);
        };
        const auto end = std::chrono::steady_clock::now() + options_.poll_timeout;
        auto last = snapshot();
        int stable = 0;
        while (std::chrono::steady_clock::now() < end) {
            std::this_thread::sleep_for(15ms);
            auto now = snapshot();
            stable = (!now.first && now == last) ? stable + 1 : 0;
            if (stable >= 3)
                return;
            last = std::move(now);
        }
        throw ScenarioError("nodes did not settle");
    }

    // ---- steps ----

    std::string run_step(const json& step)
    {
        const std::string op = step.at("op").get<std::string>();
        if (op == "link")
            return step_link(step);
        if (op == "listen") {
            sink(slot_of(step), step.at("agent").get<std::string>(), step.value("secret", kSecret));
            return {};
        }
        if (op == "send")
            return step_send(step);
        if (op == "storage")
            return step_storage(step);
        if (op == "bdm")
            return step_bdm(step);
        if (op == "bdm_detach") {
            auto& slot = slot_of(step);
            if (slot.bdm) {
                running(slot);
                retire_bdm(slot);
                slot.bdm.reset();
            }
            return {};
        }
        if (op == "stop") {
            stop_node(slot_of(step));
            return {};
        }
        if (op == "start") {
            auto& slot = slot_of(step);
            if (slot.node)
                throw ScenarioError("node '" + slot.name + "' is already running");
            start_node(slot, true);
            return {};
        }
        if (op == "restart") {
            auto& slot = slot_of(step);
            stop_node(slot);
            start_node(slot, true);
            return {};
        }
        if (op == "advance") {
            if (!sim_)
                throw ScenarioError("advance needs the simulated clock");
            sim_->advance(step.at("ms").get<std::uint64_t>());
            return "t+" + std::to_string(sim_->now() - sim_start_) + " ms";
        }
        if (op == "comment")
            return {};
        if (op == "sleep") {
            std::this_thread::sleep_for(std::chrono::milliseconds(step.at("ms").get<std::uint64_t>()));
            return {};
        }
        if (op == "raw_mtcp")
            return step_raw_mtcp(step);
        if (op == "expect_delivered")
            return expect_delivered(step);
        if (op == "expect_stats")
            return expect_stats(step);
        if (op == "expect_bdm")
            return expect_bdm(step);
        if (op == "expect_storage_files")
            return expect_storage_files(step);
        if (op == "expect_log")
            return expect_log(step);
        if (op == "expect_accounting")
            return expect_accounting(step);
        if (op == "expect_elapsed")
            return expect_elapsed(step);
        throw ScenarioError("unknown op '" + op + "'");
    }

    std::string step_link(const json& step)
    {
        auto& slot = slot_of(step);
        auto& node = running(slot);
        if (!slot.link_control) {
            slot.link_control = std::make_unique<aap2::Client>(aap2::Client::connect(node.aap2_target()));
            const auto reply = slot.link_control->configure(
                {true, "", {}, aap2::auth::kLinkControl, bytes_of(node.config().admin_secret)});
            if (reply.status != aap2::Response::Status::Ok)
                throw ScenarioError("link control refused: " + std::string(aap2::to_string(reply.status)));
        }
        const std::string action = step.value("action", "up");
        aap2::Link link;
        link.op = action == "up" ? aap2::Link::Op::Up : aap2::Link::Op::Down;
        if (action != "up" && action != "down")
            throw ScenarioError("link action must be up or down");
        link.node_id = bp::EndpointId::parse_node_id(expand_text(step.at("peer").get<std::string>()));
        link.cla_address = expand_text(step.at("cla").get<std::string>());
        link.direct = step.value("direct", false);
        const auto reply = slot.link_control->call(link);
        const auto* r = std::get_if<aap2::Response>(&reply);
        if (!r)
            throw ScenarioError("link control: unexpected answer");
        const std::string expected = step.value("expect_status", "OK");
        if (expected != aap2::to_string(r->status))
            throw ScenarioError("link " + action + " answered " + aap2::to_string(r->status) + " " + r->detail +
                                ", expected " + expected);
        return r->detail;
    }

    std::string step_send(const json& step)
    {
        auto& slot = slot_of(step);
        auto& c = sender(slot, step.value("agent", "app"), step.value("secret", kSecret));
        const auto to = bp::EndpointId::parse(expand_text(step.at("to").get<std::string>()));
        const std::string base = step.value("label", "step" + std::to_string(result_.steps.size()));
        const std::size_t count = step.value("count", std::size_t{1});
        for (std::size_t i = 0; i < count; ++i) {
            const std::string label = count == 1 ? base : base + "#" + std::to_string(i);
            aap2::BundleAdu adu{{}, to, {}, payload_for(step, label)};
            if (step.contains("lifetime_ms"))
                adu.lifetime_ms = step.at("lifetime_ms").get<std::uint64_t>();
            sent_[label] = adu.payload;
            const auto reply = c.call(adu);
            const auto* r = std::get_if<aap2::Response>(&reply);
            if (!r || r->status != aap2::Response::Status::Ok)
                throw ScenarioError("send refused: " + (r ? r->detail : std::string("unexpected answer")));
            if (sim_)
                quiesce();
        }
        return std::to_string(count) + " sent";
    }

    std::string step_storage(const json& step)
    {
        auto& slot = slot_of(step);
        auto& node = running(slot);
        if (!node.config().storage)
            throw ScenarioError("node '" + slot.name + "' has no storage");
        storage::StorageCommand cmd;
        const std::string verb = step.value("verb", "query");
        if (verb == "query")
            cmd.verb = storage::Verb::Query;
        else if (verb == "delete")
            cmd.verb = storage::Verb::Delete;
        else if (verb == "recall")
            cmd.verb = storage::Verb::Recall;
        else
            throw ScenarioError("unknown storage verb '" + verb + "'");
        if (step.contains("dest"))
            cmd.filter.destination_pattern = expand_text(step.at("dest").get<std::string>());
        if (step.contains("source"))
            cmd.filter.source = bp::EndpointId::parse(expand_text(step.at("source").get<std::string>()));
        if (step.contains("limit"))
            cmd.filter.limit = step.at("limit").get<std::uint64_t>();

        auto& replies = sink(slot, kControlAgent, kSecret);
        const std::size_t before = sink_contents(replies).size();
        auto& c = sender(slot, kControlAgent, kSecret);
        const auto to = node.config().node_id.with_demux(node.config().storage->endpoint);
        const auto answer = c.call(aap2::BundleAdu{{}, to, {}, storage::encode_command(cmd)});
        if (!std::holds_alternative<aap2::Response>(answer) ||
            std::get<aap2::Response>(answer).status != aap2::Response::Status::Ok)
            throw ScenarioError("storage command not accepted");
        if (!poll([&] { return sink_contents(replies).size() > before; }, timeout_of(step)))
            throw ScenarioError("no storage reply");
        const auto reply = storage::decode_reply(sink_contents(replies)[before].payload);
        if (reply.status != storage::CommandReply::Status::Ok)
            throw ScenarioError("storage error: " + reply.error);
        const std::uint64_t n = cmd.verb == storage::Verb::Query ? reply.records.size() : reply.count;
        if (step.contains("expect")) {
            const auto want = Range::of(step.at("expect"));
            if (!want.contains(n))
                throw ScenarioError(verb + " matched " + std::to_string(n) + ", expected " + want.text());
        }
        return verb + " matched " + std::to_string(n);
    }

    std::string step_bdm(const json& step)
    {
        auto& slot = slot_of(step);
        auto& node = running(slot);
        BdmSlot b;
        for (const auto& r : step.value("routes", json::array()))
            b.routes.push_back({expand_text(r.at("dest").get<std::string>()), decision_of(expand(r))});
        b.fallback = decision_of(step.value("default", json{{"action", "drop"}, {"reason", "no route"}}));
        if (slot.bdm) {
            // Hot swap: the old module goes away first.
            retire_bdm(slot);
            b.earlier_requests = slot.bdm->earlier_requests;
            slot.bdm.reset();
        }
        slot.bdm = std::move(b);
        // The node notices the old connection closing asynchronously.
        std::string last;
        const bool ok = poll(
            [&] {
                auto fresh = std::make_unique<ScriptedBdm>(node.aap2_target(), node.config().admin_secret,
                                                           slot.bdm->routes, slot.bdm->fallback);
                try {
                    fresh->start();
                } catch (const std::exception& e) {
                    last = e.what();
                    return false;
                }
                slot.bdm->live = std::move(fresh);
                return true;
            },
            timeout_of(step));
        if (!ok)
            throw ScenarioError(last);
        return std::to_string(slot.bdm->routes.size()) + " routes";
    }

    std::string step_raw_mtcp(const json& step)
    {
        auto& slot = slot_of(step);
        running(slot);
        if (!slot.mtcp_port)
            throw ScenarioError("node '" + slot.name + "' has no MTCP listener");
        auto s = net::connect_tcp("127.0.0.1", slot.mtcp_port);
        for (const auto& f : step.at("frames")) {
            aap2::Bytes data;
            if (f.contains("hex")) {
                data = from_hex(f.at("hex").get<std::string>());
            } else {
                const auto& b = f.at("bundle");
                const DtnTimeMs now = sim_ ? sim_->now() : RealClock().now();
                auto bundle = bp::make_bundle(bp::EndpointId::parse(expand_text(b.at("to").get<std::string>())),
                                              bp::EndpointId::parse(expand_text(b.at("from").get<std::string>())),
                                              {now, b.value("seq", std::uint64_t{0})},
                                              b.value("lifetime_ms", std::uint64_t{3600000}),
                                              bytes_of(b.value("payload", std::string())));
                data = bp::encode_bundle(bundle);
                if (b.contains("label"))
                    sent_[b.at("label").get<std::string>()] = bundle.payload();
            }
            if (!s.write_all(cla::mtcp_frame(data)))
                throw ScenarioError("MTCP write failed");
        }
        slot.raw.push_back(std::move(s));
        return std::to_string(step.at("frames").size()) + " frames";
    }

    std::string expect_delivered(const json& step)
    {
        auto& slot = slot_of(step);
        const std::string agent = step.at("agent").get<std::string>();
        auto it = slot.sinks.find(agent);
        if (it == slot.sinks.end())
            throw ScenarioError("nobody listens as '" + agent + "' on " + slot.name);
        auto& s = it->second;

        std::vector<std::string> labels;
        if (step.contains("labels"))
            labels = step.at("labels").get<std::vector<std::string>>();
        if (step.contains("label_prefix")) {
            const std::string p = step.at("label_prefix").get<std::string>();
            for (const auto& [label, payload] : sent_)
                if (label.rfind(p, 0) == 0)
                    labels.push_back(label);
        }
        const Range want = step.contains("count") ? Range::of(step.at("count")) : Range{labels.size(), labels.size()};
        const auto begin = std::chrono::steady_clock::now();
        const auto timeout = step.contains("within_ms") ? std::chrono::milliseconds(step.at("within_ms").get<std::uint64_t>())
                                                        : timeout_of(step);
        const bool reached = poll([&] { return sink_contents(s).size() >= want.min; }, timeout);
        const auto took =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - begin);
        if (!reached)
            throw ScenarioError("received " + std::to_string(sink_contents(s).size()) + " ADUs, expected " +
                                want.text() + " within " + std::to_string(timeout.count()) + " ms");
        std::this_thread::sleep_for(std::chrono::milliseconds(step.value("settle_ms", 100)));
        const auto got = sink_contents(s);
        if (!want.contains(got.size()))
            throw ScenarioError("received " + std::to_string(got.size()) + " ADUs, expected " + want.text());

        std::vector<const aap2::Bytes*> pool;
        for (const auto& adu : got)
            pool.push_back(&adu.payload);
        for (const auto& label : labels) {
            auto sent = sent_.find(label);
            if (sent == sent_.end())
                throw ScenarioError("nothing was sent as '" + label + "'");
            auto match = std::find_if(pool.begin(), pool.end(), [&](const aap2::Bytes* p) { return *p == sent->second; });
            if (match == pool.end())
                throw ScenarioError("payload '" + label + "' (" + std::to_string(sent->second.size()) +
                                    " bytes) not delivered byte-identical");
            pool.erase(match);
        }
        if (step.contains("from")) {
            const auto from = bp::EndpointId::parse(expand_text(step.at("from").get<std::string>()));
            for (const auto& adu : got)
                if (adu.src != from)
                    throw ScenarioError("ADU from " + adu.src.to_text() + ", expected " + from.to_text());
        }
        return std::to_string(got.size()) + " ADUs in " + std::to_string(took.count()) + " ms";
    }

    std::string check_stats(const bpa::NodeStats& s, const json& step) const
    {
        for (const auto& [key, value] : step.items()) {
            if (key == "op" || key == "node" || key == "timeout_ms" || key == "comment")
                continue;
            if (key == "drops") {
                for (const auto& [reason, v] : value.items()) {
                    const auto r = drop_reason_of(reason);
                    if (!r)
                        throw ScenarioError("unknown drop reason '" + reason + "'");
                    const auto want = Range::of(v);
                    if (!want.contains(s.drops(*r)))
                        return "drops." + reason + " = " + std::to_string(s.drops(*r)) + ", expected " + want.text();
                }
                continue;
            }
            const auto want = Range::of(value);
            const auto have = stat_field(s, key);
            if (!want.contains(have))
                return key + " = " + std::to_string(have) + ", expected " + want.text();
        }
        return {};
    }

    std::string expect_stats(const json& step)
    {
        auto& node = running(slot_of(step));
        std::string mismatch;
        const bool ok = poll(
            [&] {
                mismatch = check_stats(node.stats(), step);
                return mismatch.empty();
            },
            timeout_of(step));
        if (!ok)
            throw ScenarioError(mismatch);
        return {};
    }

    std::uint64_t bdm_requests(const NodeSlot& slot) const
    {
        if (!slot.bdm)
            return 0;
        return slot.bdm->earlier_requests + (slot.bdm->live ? slot.bdm->live->requests() : 0);
    }

    std::string expect_bdm(const json& step)
    {
        auto& slot = slot_of(step);
        const auto want = Range::of(step.at("requests"));
        if (!poll([&] { return bdm_requests(slot) >= want.min; }, timeout_of(step)))
            throw ScenarioError("dispatcher module saw " + std::to_string(bdm_requests(slot)) + " requests, expected " +
                                want.text());
        std::this_thread::sleep_for(std::chrono::milliseconds(step.value("settle_ms", 200)));
        if (!want.contains(bdm_requests(slot)))
            throw ScenarioError("dispatcher module saw " + std::to_string(bdm_requests(slot)) + " requests, expected " +
                                want.text());
        return std::to_string(bdm_requests(slot)) + " requests";
    }

    std::string expect_storage_files(const json& step)
    {
        auto& slot = slot_of(step);
        const auto cfg = bpa::NodeConfig::from_json_text(expand(slot.config_json).dump());
        if (!cfg.storage)
            throw ScenarioError("node '" + slot.name + "' has no storage");
        const auto want = Range::of(step.at("count"));
        auto count = [&] {
            std::uint64_t n = 0;
            std::error_code ec;
            for (auto it = std::filesystem::recursive_directory_iterator(cfg.storage->path, ec);
                 !ec && it != std::filesystem::recursive_directory_iterator(); it.increment(ec))
                if (it->is_regular_file() && it->path().extension() == ".bp7")
                    ++n;
            return n;
        };
        if (!poll([&] { return want.contains(count()); }, timeout_of(step)))
            throw ScenarioError(std::to_string(count()) + " bundle files on disk, expected " + want.text());
        return std::to_string(count()) + " files";
    }

    std::string expect_log(const json& step)
    {
        auto& slot = slot_of(step);
        const std::string needle = step.at("contains").get<std::string>();
        auto found = [&] {
            auto events = slot.past_events;
            if (slot.node) {
                auto now = slot.node->event_log();
                events.insert(events.end(), now.begin(), now.end());
            }
            return std::any_of(events.begin(), events.end(),
                               [&](const std::string& e) { return e.find(needle) != std::string::npos; });
        };
        if (!poll(found, timeout_of(step)))
            throw ScenarioError("no event containing '" + needle + "'");
        return {};
    }

    std::string expect_accounting(const json& step)
    {
        std::vector<NodeSlot*> which;
        if (step.contains("node"))
            which.push_back(&slot_of(step));
        else
            for (auto& s : nodes_)
                which.push_back(&s);
        for (auto* slot : which) {
            if (!slot->node)
                continue;
            const auto s = slot->node->stats();
            if (s.bundles_in() != s.outcomes())
                throw ScenarioError(slot->name + ": bundles_in " + std::to_string(s.bundles_in()) + " != outcomes " +
                                    std::to_string(s.outcomes()));
        }
        return {};
    }

    std::string expect_elapsed(const json& step)
    {
        std::string out;
        if (step.contains("sim_max_ms")) {
            if (!sim_)
                throw ScenarioError("sim_max_ms needs the simulated clock");
            const auto t = sim_->now() - sim_start_;
            if (t > step.at("sim_max_ms").get<std::uint64_t>())
                throw ScenarioError("simulated time " + std::to_string(t) + " ms exceeds the bound");
            out = "simulated " + std::to_string(t) + " ms";
        }
        if (step.contains("real_max_ms")) {
            const auto t = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started_);
            if (static_cast<std::uint64_t>(t.count()) > step.at("real_max_ms").get<std::uint64_t>())
                throw ScenarioError("real time " + std::to_string(t.count()) + " ms exceeds the bound");
            out += (out.empty() ? "" : ", ") + std::string("real ") + std::to_string(t.count()) + " ms";
        }
        return out;
    }

    const json& spec_;
    RunOptions options_;
    ScenarioResult result_;
    std::uint64_t seed_ = 1;
    std::unique_ptr<SimClock> sim_;
    DtnTimeMs sim_start_ = 0;
    std::chrono::steady_clock::time_point started_;
    std::filesystem::path tmp_;
    std::vector<NodeSlot> nodes_;
    std::map<std::string, aap2::Bytes> sent_;
};

} // namespace

bool NodeReport::accounting_closed() const
{
    return std::all_of(stats.begin(), stats.end(), [](const bpa::NodeStats& s) { return s.bundles_in() == s.outcomes(); });
}

std::string ScenarioResult::event_log_text() const
{
    std::string out;
    for (const auto& n : nodes) {
        for (const auto& e : n.event_log)
            out += n.name + " " + e + "\n";
    }
    return out;
}

ScenarioResult run_scenario(const json& spec, const RunOptions& options)
{
    try {
        Runner runner(spec, options);
        return runner.run();
    } catch (const std::exception& e) {
        ScenarioResult r;
        r.name = spec.is_object() ? spec.value("name", "unnamed") : "unnamed";
        r.failure = e.what();
        return r;
    }
}

ScenarioResult run_scenario_file(const std::filesystem::path& path, const RunOptions& options)
{
    std::ifstream in(path);
    if (!in)
        throw ScenarioError("cannot read " + path.string());
    json spec;
    try {
        spec = json::parse(in);
    } catch (const json::exception& e) {
        throw ScenarioError(path.string() + ": " + e.what());
    }
    if (!spec.contains("name"))
        spec["name"] = path.stem().string();
    return run_scenario(spec, options);
}

std::string to_junit(const std::vector<ScenarioResult>& results)
{
    std::size_t failures = 0;
    double total = 0;
    for (const auto& r : results) {
        failures += r.passed ? 0 : 1;
        total += static_cast<double>(r.wall_time.count()) / 1000.0;
    }
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<testsuite name=\"bpmux-scenarios\" tests=\"" << results.size() << "\" failures=\"" << failures
       << "\" time=\"" << total << "\">\n";
    for (const auto& r : results) {
        os << "  <testcase classname=\"scenarios\" name=\"" << xml_escape(r.name) << "\" time=\""
           << static_cast<double>(r.wall_time.count()) / 1000.0 << "\">\n";
        if (!r.passed)
            os << "    <failure message=\"" << xml_escape(r.failure) << "\"/>\n";
        os << "    <system-out>";
        for (const auto& s : r.steps)
            os << xml_escape(std::to_string(s.index) + " " + s.op + (s.passed ? " ok" : " FAILED") +
                             (s.message.empty() ? "" : ": " + s.message))
               << "\n";
        os << "</system-out>\n";
        os << "  </testcase>\n";
    }
    os << "</testsuite>\n";
    return os.str();
}

} // namespace bpmux::harness
