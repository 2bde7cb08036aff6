#include <doctest.h>

#include <set>
#include <thread>

#include "bpmux/aap2/client.hpp"
#include "bpmux/bp/codec.hpp"
#include "bpmux/bpa/node.hpp"
#include "bpmux/storage/command.hpp"
#include "temp_dir.hpp"
#include "test_util.hpp"

using namespace bpmux;
using namespace std::chrono_literals;
using aap2::Client;

namespace {

constexpr const char* kAdmin = "s3cret";

bpa::NodeConfig base_config(const std::string& name)
{
    auto cfg = bpa::NodeConfig::from_json_text(R"({"node_id": "dtn://)" + name + R"(.dtn/",
        "admin_secret": "s3cret", "aap2": {"tcp": "127.0.0.1:0", "keepalive_timeout_ms": 3000}})");
    return cfg;
}

aap2::Bytes bytes(const std::string& s) { return {s.begin(), s.end()}; }

aap2::ConnectionConfig cfg(bool active, std::string agent, std::string secret = "k", std::uint8_t auth = 0,
                           std::string admin = "")
{
    return {active, std::move(agent), bytes(secret), auth, bytes(admin)};
}

Client connect(bpa::Node& node) { return Client::connect(node.aap2_target()); }

aap2::Response::Status configure(bpa::Node& node, const aap2::ConnectionConfig& c)
{
    auto client = connect(node);
    return client.configure(c).status;
}

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds timeout = 5000ms)
{
    const auto end = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < end) {
        if (pred())
            return true;
        std::this_thread::sleep_for(5ms);
    }
    return pred();
}

// Receives the next non-Keepalive message on a passive connection,
// answering everything with OK.
std::optional<aap2::Message> next_call(Client& c, std::chrono::milliseconds timeout = 5000ms)
{
    const auto end = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < end) {
        auto m = c.receive(std::chrono::duration_cast<std::chrono::milliseconds>(end - std::chrono::steady_clock::now()));
        if (!m)
            return std::nullopt;
        if (!std::holds_alternative<aap2::DispatchRequest>(*m))
            c.send(aap2::Response::ok());
        if (!std::holds_alternative<aap2::Keepalive>(*m))
            return m;
    }
    return std::nullopt;
}

bool is_closed(Client& c)
{
    try {
        for (int i = 0; i < 50; ++i)
            c.receive(100ms);
    } catch (const aap2::Aap2Error& e) {
        return e.kind() == aap2::Aap2Error::Kind::ConnectionClosed;
    }
    return false;
}

} // namespace

TEST_CASE("config parsing")
{
    const auto cfg = bpa::NodeConfig::from_json_text(R"({"node_id": "dtn://a.dtn"})");
    CHECK(cfg.node_id.to_text() == "dtn://a.dtn/");
    CHECK(bpa::NodeConfig::from_json_text(R"({"node_id": "ipn:7.0"})").node_id.to_text() == "ipn:7.0");

    auto key_of = [](const std::string& text) {
        try {
            bpa::NodeConfig::from_json_text(text);
        } catch (const bpa::ConfigError& e) {
            return e.key();
        }
        return std::string("<accepted>");
    };
    CHECK(key_of("{") == "<root>");
    CHECK(key_of(R"({})") == "node_id");
    CHECK(key_of(R"({"node_id": "dtn://a.dtn/x"})") == "node_id");
    CHECK(key_of(R"({"node_id": "dtn://a.dtn/", "clas": [{"type": "mtcp"}, {"type": "tcpcl"}]})") == "clas[1].type");
    CHECK(key_of(R"({"node_id": "dtn://a.dtn/", "clas": [{"type": "mtcp", "listen": 5}]})") == "clas[0].listen");
    CHECK(key_of(R"({"node_id": "dtn://a.dtn/", "storage": {}})") == "storage.path");
    CHECK(key_of(R"({"node_id": "dtn://a.dtn/", "aap2": {"tpc": "x"}})") == "aap2.tpc");
    CHECK(key_of(R"({"node_id": "ipn:1.0", "storage": {"path": "/tmp/x"}})") == "storage.endpoint");
    CHECK(key_of(R"({"node_id": "dtn://a.dtn/", "dispatch": {"cache": 1}})") == "dispatch.cache");
}

TEST_CASE("Welcome is the first message on the wire")
{
    bpa::Node node(base_config("w"));
    node.start();
    auto s = net::connect_tcp("127.0.0.1", node.aap2_port());
    std::uint8_t buf[64];
    REQUIRE(s.wait_readable(2000ms));
    const auto n = s.read_some(buf);
    REQUIRE(n);
    aap2::Deframer d;
    d.feed(std::span<const std::uint8_t>(buf, *n));
    auto m = d.next();
    REQUIRE(m);
    REQUIRE(std::holds_alternative<aap2::Welcome>(*m));
    CHECK(std::get<aap2::Welcome>(*m).node_id.to_text() == "dtn://w.dtn/");
}

TEST_CASE("live conformance: every client-sent cell")
{
    bpa::Node node(base_config("c"));
    node.start();

    const std::vector<std::pair<aap2::Kind, aap2::Message>> samples = {
        {aap2::Kind::Welcome, aap2::Welcome{bp::EndpointId::dtn("x.dtn")}},
        {aap2::Kind::ConnectionConfig, cfg(true, "")},
        {aap2::Kind::BundleAdu, aap2::BundleAdu{{}, bp::EndpointId::dtn("nowhere.dtn", "x"), {}, bytes("hi")}},
        {aap2::Kind::DispatchRequest, aap2::DispatchRequest{}},
        {aap2::Kind::DispatchResponse, aap2::DispatchResponse{}},
        {aap2::Kind::LinkUp, aap2::Link{aap2::Link::Op::Up, bp::EndpointId::dtn("x.dtn"), "nosuch:1"}},
        {aap2::Kind::LinkDown, aap2::Link{aap2::Link::Op::Down, bp::EndpointId::dtn("x.dtn"), "nosuch:1"}},
        {aap2::Kind::LinkNotifyUp, aap2::Link{aap2::Link::Op::NotifyUp, bp::EndpointId::dtn("x.dtn"), "m:1"}},
        {aap2::Kind::LinkNotifyDown, aap2::Link{aap2::Link::Op::NotifyDown, bp::EndpointId::dtn("x.dtn"), "m:1"}},
        {aap2::Kind::Keepalive, aap2::Keepalive{}},
        {aap2::Kind::Response, aap2::Response::ok()},
    };
    REQUIRE(samples.size() == aap2::kKindCount);

    for (const auto& [kind, msg] : samples) {
        const std::string kind_name(aap2::to_string(kind));
        CAPTURE(kind_name);

        // AWAIT_CONFIG: only ConnectionConfig is handled.
        {
            auto c = connect(node);
            const auto reply = c.call(msg);
            REQUIRE(std::holds_alternative<aap2::Response>(reply));
            if (kind == aap2::Kind::ConnectionConfig) {
                CHECK(std::get<aap2::Response>(reply).status == aap2::Response::Status::Ok);
                CHECK(c.call(aap2::Keepalive{}) == aap2::Message{aap2::Response::ok()});
            } else {
                CHECK(std::get<aap2::Response>(reply).status == aap2::Response::Status::Error);
                CHECK(is_closed(c));
            }
        }

        // ACTIVE_CLIENT_CONTROL, registered with LINK_CONTROL.
        {
            auto c = connect(node);
            REQUIRE(c.configure(cfg(true, "act", "k", aap2::auth::kLinkControl, kAdmin)).status ==
                    aap2::Response::Status::Ok);
            const auto reply = c.call(msg);
            REQUIRE(std::holds_alternative<aap2::Response>(reply));
            const auto status = std::get<aap2::Response>(reply).status;
            const bool handled = aap2::permitted(aap2::Phase::ActiveClientControl, kind, aap2::Sender::Client);
            if (handled) {
                // Handled calls are answered and the connection stays up; the
                // link calls fail on the unknown CLA name, the ADU is accepted.
                if (kind == aap2::Kind::BundleAdu || kind == aap2::Kind::Keepalive)
                    CHECK(status == aap2::Response::Status::Ok);
                CHECK(c.call(aap2::Keepalive{}) == aap2::Message{aap2::Response::ok()});
            } else {
                CHECK(status == aap2::Response::Status::Error);
                CHECK(is_closed(c));
            }
        }

        // PASSIVE_DAEMON_CONTROL: the daemon has issued nothing, so every
        // client message is either out of direction or unsolicited.
        {
            auto c = connect(node);
            REQUIRE(c.configure(cfg(false, "pas")).status == aap2::Response::Status::Ok);
            c.send(msg);
            std::optional<aap2::Message> reply;
            while ((reply = c.receive(2000ms)) && std::holds_alternative<aap2::Keepalive>(*reply))
                c.send(aap2::Response::ok());
            REQUIRE(reply);
            REQUIRE(std::holds_alternative<aap2::Response>(*reply));
            CHECK(std::get<aap2::Response>(*reply).status == aap2::Response::Status::Error);
            CHECK(is_closed(c));
        }
    }
}

TEST_CASE("send/receive decoupling and metadata fidelity")
{
    bpa::Node node(base_config("p"));
    node.start();
    auto sender = connect(node);
    REQUIRE(sender.configure(cfg(true, "echo")).status == aap2::Response::Status::Ok);
    auto rx = connect(node);
    REQUIRE(rx.configure(cfg(false, "echo")).status == aap2::Response::Status::Ok);
    auto other = connect(node);
    REQUIRE(other.configure(cfg(false, "other")).status == aap2::Response::Status::Ok);

    const auto reply = sender.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("p.dtn", "echo"), {}, bytes("one")});
    REQUIRE(std::holds_alternative<aap2::Response>(reply));
    const auto& r = std::get<aap2::Response>(reply);
    REQUIRE(r.status == aap2::Response::Status::Ok);

    auto got = next_call(rx);
    REQUIRE(got);
    REQUIRE(std::holds_alternative<aap2::BundleAdu>(*got));
    const auto& adu = std::get<aap2::BundleAdu>(*got);
    CHECK(adu.payload == bytes("one"));
    CHECK(adu.src.to_text() == "dtn://p.dtn/echo");
    // The daemon reports the creation timestamp it assigned; the delivery
    // carries the same one.
    CHECK(r.detail == "creation=" + std::to_string(adu.creation.dtn_time_ms) + "." +
                          std::to_string(adu.creation.sequence_number));
    CHECK(adu.creation.dtn_time_ms > 0);

    CHECK_FALSE(next_call(other, 300ms));
    const auto s = node.stats();
    CHECK(s.delivered == 1);
    CHECK(s.bundles_in() == s.outcomes());
}

TEST_CASE("shared-secret re-registration matrix")
{
    bpa::Node node(base_config("r"));
    node.start();
    using S = aap2::Response::Status;
    struct Cell {
        bool same_secret;
        bool same_direction;
        S expected;
    };
    const Cell cells[] = {
        {true, false, S::Ok},
        {true, true, S::Occupied},
        {false, false, S::Occupied},
        {false, true, S::Occupied},
    };
    int n = 0;
    for (const auto& cell : cells) {
        for (bool first_active : {true, false}) {
            const std::string agent = "m" + std::to_string(n++);
            auto first = connect(node);
            REQUIRE(first.configure(cfg(first_active, agent, "k1")).status == S::Ok);
            const bool second_active = cell.same_direction ? first_active : !first_active;
            auto second = connect(node);
            CAPTURE(agent);
            CHECK(second.configure(cfg(second_active, agent, cell.same_secret ? "k1" : "k2")).status == cell.expected);
        }
    }

    // A registration is released when its connection goes away.
    {
        auto first = connect(node);
        REQUIRE(first.configure(cfg(true, "gone", "k1")).status == S::Ok);
    }
    CHECK(eventually([&] { return configure(node, cfg(true, "gone", "k2")) == S::Ok; }));

    CHECK(configure(node, cfg(true, "bad id")) == S::Error);
}

TEST_CASE("authorization")
{
    bpa::Node node(base_config("z"));
    node.start();
    using S = aap2::Response::Status;

    auto wrong = connect(node);
    CHECK(wrong.configure(cfg(true, "", "", aap2::auth::kLinkControl, "nope")).status == S::Unauthorized);
    CHECK(is_closed(wrong));

    auto lc = connect(node);
    CHECK(lc.configure(cfg(true, "", "", aap2::auth::kLinkControl, kAdmin)).status == S::Ok);

    // LINK_CONTROL missing: the call is refused but the connection survives.
    auto plain = connect(node);
    REQUIRE(plain.configure(cfg(true, "")).status == S::Ok);
    const auto refused = plain.call(aap2::Link{aap2::Link::Op::Up, bp::EndpointId::dtn("q.dtn"), "mtcp:127.0.0.1:1"});
    CHECK(std::get<aap2::Response>(refused).status == S::Unauthorized);
    CHECK(plain.call(aap2::Keepalive{}) == aap2::Message{aap2::Response::ok()});

    auto active_dispatch = connect(node);
    CHECK(active_dispatch.configure(cfg(true, "", "", aap2::auth::kDispatch, kAdmin)).status == S::Error);

    auto bdm1 = connect(node);
    CHECK(bdm1.configure(cfg(false, "", "", aap2::auth::kDispatch, kAdmin)).status == S::Ok);
    auto bdm2 = connect(node);
    CHECK(bdm2.configure(cfg(false, "", "", aap2::auth::kDispatch, kAdmin)).status == S::Occupied);
    CHECK(is_closed(bdm2));
    bdm1.close();
    CHECK(eventually([&] { return configure(node, cfg(false, "", "", aap2::auth::kDispatch, kAdmin)) == S::Ok; }));
}

TEST_CASE("a node without admin secret grants nothing")
{
    auto c = base_config("n");
    c.admin_secret.clear();
    bpa::Node node(c);
    node.start();
    CHECK(configure(node, cfg(true, "", "", aap2::auth::kLinkControl, "")) == aap2::Response::Status::Unauthorized);
}

TEST_CASE("link control: unreachable peer and FIB snapshot")
{
    auto c = bpa::NodeConfig::from_json_text(R"({"node_id": "dtn://l.dtn/", "admin_secret": "s3cret",
        "clas": [{"type": "mtcp", "listen": "127.0.0.1:0"}], "aap2": {"tcp": "127.0.0.1:0"}})");
    bpa::Node node(c);
    node.start();
    bpa::NodeConfig peer_cfg = c;
    peer_cfg.node_id = bp::EndpointId::dtn("m.dtn");
    bpa::Node peer(peer_cfg);
    peer.start();

    auto ctl = connect(node);
    REQUIRE(ctl.configure(cfg(true, "", "", aap2::auth::kLinkControl, kAdmin)).status == aap2::Response::Status::Ok);

    // A closed port.
    auto probe = net::listen_tcp("127.0.0.1", 0);
    const auto closed_port = probe.port;
    probe.socket.reset();
    auto failed = std::get<aap2::Response>(ctl.call(
        aap2::Link{aap2::Link::Op::Up, bp::EndpointId::dtn("m.dtn"), "mtcp:127.0.0.1:" + std::to_string(closed_port)}));
    CHECK(failed.status == aap2::Response::Status::Error);
    CHECK(failed.detail.find("ConnectionFailed") != std::string::npos);
    CHECK(node.fib_entries().empty());

    const std::string addr = "mtcp:127.0.0.1:" + std::to_string(peer.mtcp_port());
    auto up = std::get<aap2::Response>(
        ctl.call(aap2::Link{aap2::Link::Op::Up, bp::EndpointId::dtn("m.dtn"), addr, true}));
    CHECK(up.status == aap2::Response::Status::Ok);
    const auto entries = node.fib_entries();
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].direct());
    CHECK(entries[0].connected());

    // A late-joining controller gets the snapshot, then a Keepalive.
    auto watcher = connect(node);
    REQUIRE(watcher.configure(cfg(false, "", "", aap2::auth::kLinkControl, kAdmin)).status ==
            aap2::Response::Status::Ok);
    auto first = watcher.receive(2000ms);
    REQUIRE(first);
    REQUIRE(std::holds_alternative<aap2::Link>(*first));
    const auto& n = std::get<aap2::Link>(*first);
    CHECK(n.op == aap2::Link::Op::NotifyUp);
    CHECK(n.node_id.to_text() == "dtn://m.dtn/");
    CHECK(n.cla_address == addr);
    CHECK(n.direct);
    CHECK(n.connected);
    watcher.send(aap2::Response::ok());
    auto end = watcher.receive(2000ms);
    REQUIRE(end);
    CHECK(std::holds_alternative<aap2::Keepalive>(*end));
    watcher.send(aap2::Response::ok());

    // Link down is announced.
    CHECK(std::get<aap2::Response>(ctl.call(aap2::Link{aap2::Link::Op::Down, bp::EndpointId::dtn("m.dtn"), addr}))
              .status == aap2::Response::Status::Ok);
    auto down = next_call(watcher);
    REQUIRE(down);
    REQUIRE(std::holds_alternative<aap2::Link>(*down));
    CHECK(std::get<aap2::Link>(*down).op == aap2::Link::Op::NotifyDown);
    CHECK(node.fib_entries().empty());

    // The FIB equals the fold of everything it emitted.
    std::map<std::pair<bp::EndpointId, cla::ClaAddress>, fib::FibEntry> folded;
    for (const auto& e : node.fib_events())
        fib::fold(folded, e);
    CHECK(folded.empty());
}

TEST_CASE("active connection closes after the keepalive timeout")
{
    auto c = base_config("k");
    c.aap2.keepalive_timeout_ms = 300;
    bpa::Node node(c);
    node.start();
    auto client = connect(node);
    REQUIRE(client.configure(cfg(true, "idle")).status == aap2::Response::Status::Ok);
    for (int i = 0; i < 4; ++i) {
        std::this_thread::sleep_for(100ms);
        REQUIRE(client.call(aap2::Keepalive{}) == aap2::Message{aap2::Response::ok()});
    }
    CHECK(is_closed(client));
}

TEST_CASE("passive connection that stops answering is closed")
{
    auto c = base_config("q");
    c.aap2.keepalive_timeout_ms = 300;
    bpa::Node node(c);
    node.start();
    auto client = connect(node);
    REQUIRE(client.configure(cfg(false, "mute")).status == aap2::Response::Status::Ok);
    auto ka = client.receive(2000ms);
    REQUIRE(ka);
    CHECK(std::holds_alternative<aap2::Keepalive>(*ka));
    CHECK(is_closed(client));
}

TEST_CASE("ingest policy")
{
    SimClock clock(1'000'000);
    bpa::Node node(base_config("i"), &clock);
    node.start();
    auto tx = connect(node);
    REQUIRE(tx.configure(cfg(true, "src")).status == aap2::Response::Status::Ok);

    // Lifetime 0 has already expired.
    aap2::BundleAdu expired{{}, bp::EndpointId::dtn("far.dtn", "x"), {}, bytes("e")};
    expired.lifetime_ms = 0;
    REQUIRE(std::get<aap2::Response>(tx.call(expired)).status == aap2::Response::Status::Ok);

    // No registration and no storage.
    REQUIRE(std::get<aap2::Response>(tx.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("i.dtn", "nobody"), {}, bytes("n")}))
                .status == aap2::Response::Status::Ok);

    // No FIB entry, no dispatcher module, no storage.
    REQUIRE(std::get<aap2::Response>(tx.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("far.dtn", "x"), {}, bytes("r")}))
                .status == aap2::Response::Status::Ok);

    const auto s = node.stats();
    CHECK(s.drops(core::DropReason::Expired) == 1);
    CHECK(s.drops(core::DropReason::NoSuchEndpoint) == 1);
    CHECK(s.drops(core::DropReason::NoRoute) == 1);
    CHECK(s.received == 3);
    CHECK(s.bundles_in() == s.outcomes());

    // Consecutive creation timestamps are strictly increasing.
    auto a = std::get<aap2::Response>(tx.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("far.dtn", "x"), {}, {}}));
    auto b = std::get<aap2::Response>(tx.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("far.dtn", "x"), {}, {}}));
    CHECK(a.detail == "creation=1000000.3");
    CHECK(b.detail == "creation=1000000.4");
}

TEST_CASE("storage: unregistered local endpoint keeps bundles until someone listens")
{
    test::TempDir dir;
    auto c = base_config("s");
    c.storage = bpa::StorageConfig{dir.path() / "store"};
    bpa::Node node(c);
    node.start();
    auto tx = connect(node);
    REQUIRE(tx.configure(cfg(true, "src")).status == aap2::Response::Status::Ok);
    for (int i = 0; i < 3; ++i)
        REQUIRE(std::get<aap2::Response>(
                    tx.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("s.dtn", "late"), {}, bytes("m" + std::to_string(i))}))
                    .status == aap2::Response::Status::Ok);
    CHECK(eventually([&] { return node.storage()->query({}).size() == 3; }));
    CHECK(node.stats().stored == 3);

    auto rx = connect(node);
    REQUIRE(rx.configure(cfg(false, "late")).status == aap2::Response::Status::Ok);
    std::set<std::string> got;
    for (int i = 0; i < 3; ++i) {
        auto m = next_call(rx);
        REQUIRE(m);
        REQUIRE(std::holds_alternative<aap2::BundleAdu>(*m));
        const auto& p = std::get<aap2::BundleAdu>(*m).payload;
        got.insert(std::string(p.begin(), p.end()));
    }
    CHECK(got == std::set<std::string>{"m0", "m1", "m2"});
    CHECK(eventually([&] { return node.storage()->query({}).empty(); }));
    const auto s = node.stats();
    CHECK(s.bundles_in() == s.outcomes());
}

TEST_CASE("storage commands over the protocol")
{
    test::TempDir dir;
    auto c = base_config("t");
    c.storage = bpa::StorageConfig{dir.path() / "store"};
    bpa::Node node(c);
    node.start();
    auto tx = connect(node);
    REQUIRE(tx.configure(cfg(true, "ctl")).status == aap2::Response::Status::Ok);
    auto rx = connect(node);
    REQUIRE(rx.configure(cfg(false, "ctl")).status == aap2::Response::Status::Ok);

    for (int i = 0; i < 3; ++i)
        tx.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("b.dtn", "app"), {}, bytes("x" + std::to_string(i))});
    tx.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("c.dtn", "app"), {}, bytes("y")});
    CHECK(eventually([&] { return node.storage()->query({}).size() == 4; }));

    storage::StorageCommand q;
    q.filter.destination_pattern = "dtn://b.dtn/*";
    tx.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("t.dtn", "sqa"), {}, storage::encode_command(q)});
    auto m = next_call(rx);
    REQUIRE(m);
    REQUIRE(std::holds_alternative<aap2::BundleAdu>(*m));
    const auto reply = storage::decode_reply(std::get<aap2::BundleAdu>(*m).payload);
    CHECK(reply.status == storage::CommandReply::Status::Ok);
    CHECK(reply.records.size() == 3);

    storage::StorageCommand del;
    del.verb = storage::Verb::Delete;
    del.filter.source = bp::EndpointId::ipn(9, 1);
    tx.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("t.dtn", "sqa"), {}, storage::encode_command(del)});
    m = next_call(rx);
    REQUIRE(m);
    CHECK(storage::decode_reply(std::get<aap2::BundleAdu>(*m).payload).count == 0);

    tx.call(aap2::BundleAdu{{}, bp::EndpointId::dtn("t.dtn", "sqa"), {}, bytes("garbage")});
    m = next_call(rx);
    REQUIRE(m);
    CHECK(storage::decode_reply(std::get<aap2::BundleAdu>(*m).payload).status == storage::CommandReply::Status::Error);
}
