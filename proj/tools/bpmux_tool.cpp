// bpmux-tool: single-shot AAP2 client for sending, receiving, link control,
// storage commands and FIB inspection.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>

#include <CLI11.hpp>

#include "bpmux/aap2/client.hpp"
#include "bpmux/storage/command.hpp"
#include "common.hpp"

using namespace bpmux;

namespace {

struct ProtocolFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

aap2::Bytes bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

aap2::Response expect_response(const aap2::Message& m)
{
    if (const auto* r = std::get_if<aap2::Response>(&m))
        return *r;
    throw ProtocolFailure(std::string("unexpected ") + aap2::to_string(aap2::tag_of(m)));
}

void require_ok(const aap2::Response& r, const std::string& what)
{
    if (r.status != aap2::Response::Status::Ok)
        throw ProtocolFailure(what + ": " + aap2::to_string(r.status) + (r.detail.empty() ? "" : " " + r.detail));
}

aap2::Client open(const std::string& target, const aap2::ConnectionConfig& cfg)
{
    auto c = aap2::Client::connect(target);
    require_ok(c.configure(cfg), "configuration");
    return c;
}

aap2::Bytes read_all(std::istream& in)
{
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Options {
    std::string target;
    std::uint64_t timeout_ms = 10000;

    struct {
        std::string to, agent, file, secret;
        std::uint64_t lifetime_ms = 0;
    } send;
    struct {
        std::string agent, secret, out_dir;
        std::size_t count = 1;
        std::uint64_t timeout_ms = 0;
    } recv;
    struct {
        std::string action, node, cla, secret;
        bool direct = false;
    } link;
    struct {
        std::string verb, dest, source, secret, agent = "bpmux-tool", endpoint = "sqa";
        std::optional<std::uint64_t> after, before, limit;
    } storage;
    struct {
        std::string secret;
    } fib;
};

int cmd_send(const Options& o)
{
    aap2::BundleAdu adu;
    adu.dst = bp::EndpointId::parse(o.send.to);
    if (o.send.file.empty() || o.send.file == "-") {
        adu.payload = read_all(std::cin);
    } else {
        std::ifstream in(o.send.file, std::ios::binary);
        if (!in)
            throw CLI::ValidationError("--file", "cannot read " + o.send.file);
        adu.payload = read_all(in);
    }
    if (o.send.lifetime_ms)
        adu.lifetime_ms = o.send.lifetime_ms;
    auto c = open(o.target, {true, o.send.agent, bytes_of(o.send.secret), 0, {}});
    const auto r = expect_response(c.call(adu, std::chrono::milliseconds(o.timeout_ms)));
    require_ok(r, "send");
    std::cout << "sent " << adu.payload.size() << " bytes to " << adu.dst.to_text() << " " << r.detail << "\n";
    return tools::kOk;
}

int cmd_recv(const Options& o)
{
    auto c = open(o.target, {false, o.recv.agent, bytes_of(o.recv.secret), 0, {}});
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(o.recv.timeout_ms);
    std::size_t got = 0;
    while (got < o.recv.count) {
        auto wait = std::chrono::milliseconds(1000);
        if (o.recv.timeout_ms) {
            const auto left =
                std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0)
                throw ProtocolFailure("timeout after " + std::to_string(got) + " of " + std::to_string(o.recv.count));
            wait = std::min(wait, left);
        }
        auto m = c.receive(wait);
        if (!m)
            continue;
        c.send(aap2::Response::ok());
        const auto* adu = std::get_if<aap2::BundleAdu>(&*m);
        if (!adu)
            continue;
        ++got;
        std::cerr << "[INFO] recv: " << adu->payload.size() << " bytes from " << adu->src.to_text() << " creation="
                  << adu->creation.dtn_time_ms << "." << adu->creation.sequence_number << "\n";
        if (!o.recv.out_dir.empty()) {
            const auto path = o.recv.out_dir + "/" + std::to_string(got) + ".bin";
            std::ofstream out(path, std::ios::binary);
            out.write(reinterpret_cast<const char*>(adu->payload.data()), static_cast<std::streamsize>(adu->payload.size()));
        } else {
            std::cout.write(reinterpret_cast<const char*>(adu->payload.data()),
                            static_cast<std::streamsize>(adu->payload.size()));
            std::cout.flush();
        }
    }
    return tools::kOk;
}

int cmd_link(const Options& o)
{
    aap2::Link link;
    link.op = o.link.action == "up" ? aap2::Link::Op::Up : aap2::Link::Op::Down;
    link.node_id = bp::EndpointId::parse_node_id(o.link.node);
    link.cla_address = o.link.cla;
    link.direct = o.link.direct;
    auto c = open(o.target, {true, "", {}, aap2::auth::kLinkControl, bytes_of(o.link.secret)});
    require_ok(expect_response(c.call(link, std::chrono::milliseconds(o.timeout_ms))), "link " + o.link.action);
    std::cout << "link " << o.link.action << " " << link.node_id.to_text() << " via " << link.cla_address << "\n";
    return tools::kOk;
}

int cmd_storage(const Options& o)
{
    storage::StorageCommand cmd;
    cmd.verb = o.storage.verb == "query" ? storage::Verb::Query
               : o.storage.verb == "delete" ? storage::Verb::Delete
                                            : storage::Verb::Recall;
    if (!o.storage.dest.empty())
        cmd.filter.destination_pattern = o.storage.dest;
    if (!o.storage.source.empty())
        cmd.filter.source = bp::EndpointId::parse(o.storage.source);
    cmd.filter.creation_after = o.storage.after;
    cmd.filter.creation_before = o.storage.before;
    cmd.filter.limit = o.storage.limit;

    // The reply comes back as a bundle to the same agent, so listen first.
    auto rx = open(o.target, {false, o.storage.agent, bytes_of(o.storage.secret), 0, {}});
    auto tx = open(o.target, {true, o.storage.agent, bytes_of(o.storage.secret), 0, {}});
    const auto to = tx.node_id().with_demux(o.storage.endpoint);
    require_ok(expect_response(tx.call(aap2::BundleAdu{{}, to, {}, storage::encode_command(cmd)},
                                       std::chrono::milliseconds(o.timeout_ms))),
               "storage command");

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(o.timeout_ms);
    for (;;) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0)
            throw ProtocolFailure("no storage reply");
        auto m = rx.receive(left);
        if (!m)
            continue;
        rx.send(aap2::Response::ok());
        const auto* adu = std::get_if<aap2::BundleAdu>(&*m);
        if (!adu)
            continue;
        const auto reply = storage::decode_reply(adu->payload);
        if (reply.status != storage::CommandReply::Status::Ok)
            throw ProtocolFailure("storage: " + reply.error);
        if (cmd.verb != storage::Verb::Query) {
            std::cout << reply.count << " bundles " << (cmd.verb == storage::Verb::Delete ? "deleted" : "recalled")
                      << "\n";
            return tools::kOk;
        }
        std::cout << std::left << std::setw(18) << "ID" << std::setw(28) << "DESTINATION" << std::setw(28) << "SOURCE"
                  << std::setw(24) << "CREATION" << "SIZE\n";
        for (const auto& r : reply.records)
            std::cout << std::setw(18) << r.storage_id.substr(0, 16) << std::setw(28) << r.destination.to_text()
                      << std::setw(28) << r.source.to_text() << std::setw(24)
                      << (std::to_string(r.creation.dtn_time_ms) + "." + std::to_string(r.creation.sequence_number))
                      << r.size << "\n";
        return tools::kOk;
    }
}

int cmd_fib(const Options& o)
{
    // A passive link controller gets the FIB as NOTIFY_UP messages ending
    // with a Keepalive.
    auto c = open(o.target, {false, "", {}, aap2::auth::kLinkControl, bytes_of(o.fib.secret)});
    std::cout << std::left << std::setw(28) << "NODE" << std::setw(32) << "CLA" << std::setw(8) << "DIRECT"
              << "CONNECTED\n";
    for (;;) {
        auto m = c.receive(std::chrono::milliseconds(o.timeout_ms));
        if (!m)
            throw ProtocolFailure("FIB snapshot incomplete");
        c.send(aap2::Response::ok());
        if (std::holds_alternative<aap2::Keepalive>(*m))
            return tools::kOk;
        if (const auto* l = std::get_if<aap2::Link>(&*m); l && l->op == aap2::Link::Op::NotifyUp)
            std::cout << std::setw(28) << l->node_id.to_text() << std::setw(32) << l->cla_address << std::setw(8)
                      << (l->direct ? "yes" : "no") << (l->connected ? "yes" : "no") << "\n";
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"bpmux client tool"};
    app.require_subcommand(1);
    Options o;
    const char* env_target = std::getenv("BPMUX_AAP2");
    o.target = env_target ? env_target : "127.0.0.1:4244";
    std::string level = "warn";
    app.add_option("-t,--target", o.target, "daemon socket: host:port or a filesystem path")->capture_default_str();
    app.add_option("--timeout", o.timeout_ms, "answer timeout in ms");
    app.add_option("--log-level", level)->check(CLI::IsMember({"debug", "info", "warn", "error"}));

    auto* send = app.add_subcommand("send", "send one ADU read from a file or stdin");
    send->add_option("--to", o.send.to, "destination EID")->required();
    send->add_option("--from-agent", o.send.agent, "local agent id")->required();
    send->add_option("-f,--file", o.send.file, "payload file, '-' or absent for stdin");
    send->add_option("--lifetime", o.send.lifetime_ms, "bundle lifetime in ms");
    send->add_option("--secret", o.send.secret, "shared secret of the registration");

    auto* recv = app.add_subcommand("recv", "receive ADUs for an agent");
    recv->add_option("--agent", o.recv.agent, "local agent id")->required();
    recv->add_option("-n,--count", o.recv.count, "number of ADUs")->check(CLI::PositiveNumber);
    recv->add_option("--wait", o.recv.timeout_ms, "give up after this many ms (0: never)");
    recv->add_option("--out-dir", o.recv.out_dir, "write payloads as <n>.bin instead of stdout")
        ->check(CLI::ExistingDirectory);
    recv->add_option("--secret", o.recv.secret, "shared secret of the registration");

    auto* link = app.add_subcommand("link", "bring a link up or down");
    link->add_option("action", o.link.action)->required()->check(CLI::IsMember({"up", "down"}));
    link->add_option("--node", o.link.node, "peer node id")->required();
    link->add_option("--cla", o.link.cla, "CLA address, e.g. mtcp:127.0.0.1:4556")->required();
    link->add_option("--secret", o.link.secret, "admin secret")->required();
    link->add_flag("--direct", o.link.direct, "forward to this node without asking a dispatcher module");

    auto* stor = app.add_subcommand("storage", "query, delete or recall stored bundles");
    stor->add_option("verb", o.storage.verb)->required()->check(CLI::IsMember({"query", "delete", "recall"}));
    stor->add_option("--dest", o.storage.dest, "destination pattern, '*' matches any run");
    stor->add_option("--source", o.storage.source, "exact source EID");
    stor->add_option("--after", o.storage.after, "creation time lower bound (DTN ms)");
    stor->add_option("--before", o.storage.before, "creation time upper bound (DTN ms)");
    stor->add_option("--limit", o.storage.limit, "at most this many bundles");
    stor->add_option("--secret", o.storage.secret, "shared secret for the reply registration");
    stor->add_option("--agent", o.storage.agent, "agent id used for command and reply")->capture_default_str();
    stor->add_option("--endpoint", o.storage.endpoint, "storage endpoint demux")->capture_default_str();

    auto* fib = app.add_subcommand("fib", "show the forwarding information base");
    fib->add_option("action", o.storage.verb)->required()->check(CLI::IsMember({"show"}));
    fib->add_option("--secret", o.fib.secret, "admin secret")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return tools::usage_exit(app, e);
    }
    log::set_level(tools::parse_level(level));

    try {
        if (send->parsed())
            return cmd_send(o);
        if (recv->parsed())
            return cmd_recv(o);
        if (link->parsed())
            return cmd_link(o);
        if (stor->parsed())
            return cmd_storage(o);
        return cmd_fib(o);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "[ERROR] bpmux-tool: " << e.what() << "\n";
        return tools::kUsageError;
    } catch (const bp::EidError& e) {
        std::cerr << "[ERROR] bpmux-tool: " << e.what() << "\n";
        return tools::kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "[ERROR] bpmux-tool: " << e.what() << "\n";
        return tools::kProtocolError;
    }
}
