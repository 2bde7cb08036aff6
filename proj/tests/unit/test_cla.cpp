#include <doctest.h>

#include <json.hpp>
#include <random>
#include <thread>

#include "bpmux/bp/codec.hpp"
#include "bpmux/cla/loopback.hpp"
#include "bpmux/cla/mtcp.hpp"
#include "test_host.hpp"
#include "test_util.hpp"

using namespace bpmux;
using namespace std::chrono_literals;

namespace {

bp::Bundle numbered_bundle(std::uint64_t seq, std::size_t payload_size = 8)
{
    return bp::make_bundle(bp::EndpointId::parse("dtn://b.dtn/app"), bp::EndpointId::parse("dtn://a.dtn/src"),
                           {1000, seq}, 60000, cla::Bytes(payload_size, static_cast<std::uint8_t>(seq)));
}

cla::Bytes iota_bytes(std::size_t n)
{
    cla::Bytes out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<std::uint8_t>(i % 256);
    return out;
}

cla::ClaError::Kind deframe_error(cla::MtcpDeframer& d)
{
    try {
        d.next();
    } catch (const cla::ClaError& e) {
        return e.kind();
    }
    FAIL("deframe unexpectedly succeeded");
    return cla::ClaError::Kind::MalformedFrame;
}

struct LinkFixture {
    SimClock clock{1000};
    test::RecordingHost a{clock};
    test::RecordingHost b{clock};
    std::shared_ptr<cla::LoopbackHub> hub = std::make_shared<cla::LoopbackHub>();
};

} // namespace

TEST_CASE("CLA registry")
{
    auto hub = std::make_shared<cla::LoopbackHub>();
    cla::ClaRegistry registry;
    auto mtcp = std::make_shared<cla::MtcpCla>(cla::MtcpCla::Options{.listen = false});
    registry.register_cla("mtcp", mtcp);

    const auto addr = registry.parse_for_use("mtcp:127.0.0.1:4556");
    CHECK(addr.cla_name == "mtcp");
    CHECK(addr.detail == "127.0.0.1:4556");
    CHECK(registry.resolve(addr.cla_name) == mtcp);

    try {
        registry.register_cla("mtcp", std::make_shared<cla::MtcpCla>(cla::MtcpCla::Options{.listen = false}));
        FAIL("duplicate accepted");
    } catch (const cla::ClaError& e) {
        CHECK(e.kind() == cla::ClaError::Kind::DuplicateClaName);
    }
    try {
        registry.parse_for_use("nosuch:x");
        FAIL("unknown CLA accepted");
    } catch (const cla::ClaError& e) {
        CHECK(e.kind() == cla::ClaError::Kind::UnknownCla);
    }
    CHECK_THROWS_AS(cla::ClaAddress::parse("no-colon"), cla::ClaError);
    // Only the first colon separates the name.
    CHECK(cla::ClaAddress::parse("bibe:dtn://c.dtn/bibe").detail == "dtn://c.dtn/bibe");
    CHECK(cla::ClaAddress::parse("bibe:dtn://c.dtn/bibe").to_text() == "bibe:dtn://c.dtn/bibe");
}

TEST_CASE("MTCP frames match golden vectors")
{
    for (std::size_t n : {20u, 300u}) {
        const auto golden = test::read_testdata_hex("mtcp/frame_" + std::to_string(n) + ".hex");
        const auto content = iota_bytes(n);
        CHECK(cla::mtcp_frame(content) == golden);
        // Independent encoder: a CBOR byte string of the same content.
        CHECK(nlohmann::json::to_cbor(nlohmann::json::binary(content)) == golden);
    }
    CHECK(cla::mtcp_frame(iota_bytes(20))[0] == 0x54);
    const auto f300 = cla::mtcp_frame(iota_bytes(300));
    CHECK(std::vector<std::uint8_t>(f300.begin(), f300.begin() + 3) == std::vector<std::uint8_t>{0x59, 0x01, 0x2C});
    CHECK(cla::mtcp_frame_header(0) == cla::Bytes{0x40});
    CHECK(cla::mtcp_frame_header(70000) == cla::Bytes{0x5A, 0x00, 0x01, 0x11, 0x70});
}

TEST_CASE("MTCP deframing survives arbitrary split points")
{
    std::mt19937_64 rng(7);
    const auto b1 = iota_bytes(20);
    const auto b2 = iota_bytes(300);
    cla::Bytes stream = cla::mtcp_frame(b1);
    const auto f2 = cla::mtcp_frame(b2);
    stream.insert(stream.end(), f2.begin(), f2.end());

    for (std::size_t split = 0; split <= stream.size(); ++split) {
        cla::MtcpDeframer d;
        std::vector<cla::Bytes> out;
        d.feed(std::span(stream).first(split));
        while (auto f = d.next())
            out.push_back(*f);
        d.feed(std::span(stream).subspan(split));
        while (auto f = d.next())
            out.push_back(*f);
        REQUIRE(out.size() == 2);
        CHECK(out[0] == b1);
        CHECK(out[1] == b2);
        CHECK(d.buffered() == 0);
    }

    // Byte-at-a-time and random chunking.
    for (int round = 0; round < 50; ++round) {
        cla::MtcpDeframer d;
        std::vector<cla::Bytes> out;
        std::size_t pos = 0;
        while (pos < stream.size()) {
            std::size_t n = std::uniform_int_distribution<std::size_t>(1, 17)(rng);
            n = std::min(n, stream.size() - pos);
            d.feed(std::span(stream).subspan(pos, n));
            pos += n;
            while (auto f = d.next())
                out.push_back(*f);
        }
        REQUIRE(out.size() == 2);
        CHECK(out[1] == b2);
    }
}

TEST_CASE("MTCP deframing errors")
{
    cla::MtcpDeframer text;
    const cla::Bytes text_item{0x63, 'a', 'b', 'c'};
    text.feed(text_item);
    CHECK(deframe_error(text) == cla::ClaError::Kind::MalformedFrame);

    cla::MtcpDeframer indefinite;
    const cla::Bytes indef{0x5F, 0x41, 0x00, 0xFF};
    indefinite.feed(indef);
    CHECK(deframe_error(indefinite) == cla::ClaError::Kind::MalformedFrame);

    cla::MtcpDeframer small(100);
    const auto big = cla::mtcp_frame(iota_bytes(101));
    // Rejected from the header alone, before the content arrives.
    small.feed(std::span(big).first(2));
    CHECK(deframe_error(small) == cla::ClaError::Kind::FrameTooLarge);

    cla::MtcpDeframer exact(100);
    exact.feed(cla::mtcp_frame(iota_bytes(100)));
    CHECK(exact.next().value().size() == 100);

    cla::MtcpDeframer partial;
    const cla::Bytes head{0x59, 0x01};
    partial.feed(head);
    CHECK_FALSE(partial.next().has_value());
}

TEST_CASE("MTCP link over a live TCP connection")
{
    SimClock clock(5000);
    test::RecordingHost server_host(clock);
    test::RecordingHost client_host(clock);

    cla::MtcpCla server({.listen_host = "127.0.0.1", .listen_port = 0});
    server.start(server_host);
    REQUIRE(server.bound_port() != 0);
    cla::MtcpCla client({.listen = false});
    client.start(client_host);

    const std::string detail = "127.0.0.1:" + std::to_string(server.bound_port());
    auto transport = client.open(detail);
    REQUIRE(server_host.wait_for([](auto& h) { return h.inbound.size() == 1; }));

    cla::Link out(1, {"mtcp", detail}, std::move(transport), client_host, client.max_bundle_size());
    out.start();
    CHECK(out.state() == cla::LinkState::Active);

    std::unique_ptr<cla::LinkTransport> accepted = std::move(server_host.inbound[0].transport);
    cla::Link in(2, {"mtcp", server_host.inbound[0].detail}, std::move(accepted), server_host, 0);
    in.start();

    std::vector<bp::Bundle> sent;
    for (std::uint64_t i = 0; i < 20; ++i) {
        sent.push_back(numbered_bundle(i, 10 + i * 100));
        REQUIRE(out.enqueue({sent.back(), clock.now()}));
    }
    REQUIRE(server_host.wait_for([](auto& h) { return h.received.size() == 20; }));
    for (std::size_t i = 0; i < sent.size(); ++i)
        CHECK(server_host.received[i].data == bp::encode_bundle(sent[i]));

    // The connection is bidirectional.
    REQUIRE(in.enqueue({numbered_bundle(99), clock.now()}));
    REQUIRE(client_host.wait_for([](auto& h) { return h.received.size() == 1; }));
    CHECK(bp::decode_bundle(client_host.received[0].data) == numbered_bundle(99));

    CHECK(out.close().empty());
    // The peer notices the closed connection.
    REQUIRE(server_host.wait_for([](auto& h) { return h.lost.size() == 1; }));
    CHECK(server_host.lost[0] == 2);
    in.close();
    server.stop();
    client.stop();
}

TEST_CASE("MTCP open to a closed port fails")
{
    cla::MtcpCla client({.listen = false});
    auto probe = net::listen_tcp("127.0.0.1", 0);
    const auto port = probe.port;
    probe.socket.reset();
    try {
        client.open("127.0.0.1:" + std::to_string(port));
        FAIL("connected to a closed port");
    } catch (const cla::ClaError& e) {
        CHECK(e.kind() == cla::ClaError::Kind::ConnectionFailed);
    }
    CHECK_THROWS_AS(client.open("not-an-address"), cla::ClaError);
}

TEST_CASE("MTCP malformed input closes the connection")
{
    SimClock clock;
    test::RecordingHost host(clock);
    cla::MtcpCla server({.listen_host = "127.0.0.1", .listen_port = 0});
    server.start(host);
    auto sock = net::connect_tcp("127.0.0.1", server.bound_port());
    REQUIRE(host.wait_for([](auto& h) { return h.inbound.size() == 1; }));
    cla::Link in(1, {"mtcp", host.inbound[0].detail}, std::move(host.inbound[0].transport), host, 0);
    in.start();
    const cla::Bytes garbage{0x63, 'a', 'b', 'c'};
    REQUIRE(sock.write_all(garbage));
    REQUIRE(host.wait_for([](auto& h) { return h.lost.size() == 1; }));
    CHECK(host.received.empty());
    in.close();
    server.stop();
}

TEST_CASE_FIXTURE(LinkFixture, "loopback delivers byte-exact, in order")
{
    cla::LoopbackCla la({.instance_name = "a"}, hub);
    cla::LoopbackCla lb({.instance_name = "b"}, hub);
    la.start(a);
    lb.start(b);
    auto t = la.open("b");
    REQUIRE(b.inbound.size() == 1);
    CHECK(b.inbound[0].detail == "a");

    cla::Link out(1, {"loopback", "b"}, std::move(t), a, la.max_bundle_size());
    cla::Link in(2, {"loopback", "a"}, std::move(b.inbound[0].transport), b, 0);
    out.start();
    in.start();
    std::vector<bp::Bundle> sent;
    for (std::uint64_t i = 0; i < 100; ++i) {
        sent.push_back(numbered_bundle(i, i));
        REQUIRE(out.enqueue({sent.back(), clock.now()}));
    }
    REQUIRE(b.wait_for([](auto& h) { return h.received.size() == 100; }));
    for (std::size_t i = 0; i < sent.size(); ++i)
        CHECK(b.received[i].data == bp::encode_bundle(sent[i]));
    out.close();
    in.close();

    CHECK_THROWS_AS(la.open("nobody"), cla::ClaError);
}

TEST_CASE_FIXTURE(LinkFixture, "loopback drop probability 1.0 delivers nothing")
{
    cla::LoopbackCla la({.instance_name = "a", .drop_probability = 1.0}, hub);
    cla::LoopbackCla lb({.instance_name = "b"}, hub);
    la.start(a);
    lb.start(b);
    cla::Link out(1, {"loopback", "b"}, la.open("b"), a, 0);
    cla::Link in(2, {"loopback", "a"}, std::move(b.inbound[0].transport), b, 0);
    out.start();
    in.start();
    for (std::uint64_t i = 0; i < 10; ++i)
        REQUIRE(out.enqueue({numbered_bundle(i), clock.now()}));
    for (int i = 0; i < 200 && out.sent_count() < 10; ++i)
        std::this_thread::sleep_for(5ms);
    CHECK(out.sent_count() == 10);
    std::this_thread::sleep_for(20ms);
    CHECK(b.received_count() == 0);
    out.close();
    in.close();
}

TEST_CASE_FIXTURE(LinkFixture, "loopback delay follows the simulated clock")
{
    cla::LoopbackCla la({.instance_name = "a", .delay_ms = 100}, hub);
    cla::LoopbackCla lb({.instance_name = "b"}, hub);
    la.start(a);
    lb.start(b);
    cla::Link out(1, {"loopback", "b"}, la.open("b"), a, 0);
    cla::Link in(2, {"loopback", "a"}, std::move(b.inbound[0].transport), b, 0);
    out.start();
    in.start();
    const DtnTimeMs sent_at = clock.now();
    REQUIRE(out.enqueue({numbered_bundle(1), sent_at}));
    std::this_thread::sleep_for(50ms);
    CHECK(b.received_count() == 0);
    clock.advance(99);
    std::this_thread::sleep_for(30ms);
    CHECK(b.received_count() == 0);
    clock.advance(1);
    REQUIRE(b.wait_for([](auto& h) { return h.received.size() == 1; }));
    CHECK(b.received[0].at == sent_at + 100);
    out.close();
    in.close();
}

TEST_CASE_FIXTURE(LinkFixture, "loopback honours max bundle size")
{
    cla::LoopbackCla la({.instance_name = "a", .max_bundle_size = 200}, hub);
    cla::LoopbackCla lb({.instance_name = "b"}, hub);
    la.start(a);
    lb.start(b);
    cla::Link out(1, {"loopback", "b"}, la.open("b"), a, la.max_bundle_size());
    cla::Link in(2, {"loopback", "a"}, std::move(b.inbound[0].transport), b, 0);
    out.start();
    in.start();
    REQUIRE(out.enqueue({numbered_bundle(1, 500), clock.now()}));
    REQUIRE(out.enqueue({numbered_bundle(2, 10), clock.now()}));
    REQUIRE(b.wait_for([](auto& h) { return h.received.size() == 1; }));
    REQUIRE(a.wait_for([](auto& h) { return h.failed.size() == 1; }));
    CHECK(a.failed[0].item.bundle.creation.sequence_number == 1);
    out.close();
    in.close();
}

TEST_CASE_FIXTURE(LinkFixture, "closing a link returns queued bundles")
{
    cla::LoopbackCla la({.instance_name = "a", .delay_ms = 0}, hub);
    cla::LoopbackCla lb({.instance_name = "b"}, hub);
    la.start(a);
    lb.start(b);
    // Enqueue is refused outside ACTIVE.
    cla::Link out(1, {"loopback", "b"}, la.open("b"), a, 0);
    CHECK_FALSE(out.enqueue({numbered_bundle(0), clock.now()}));
    out.start();
    out.close();
    CHECK_FALSE(out.enqueue({numbered_bundle(0), clock.now()}));

    // A transport that never completes a send keeps the rest queued.
    struct Stalled final : cla::LinkTransport {
        std::mutex m;
        std::condition_variable cv;
        bool stop = false;
        cla::SendResult send(const cla::Transmission&) override
        {
            std::unique_lock lock(m);
            cv.wait(lock, [&] { return stop; });
            return cla::SendResult::broken("shut down");
        }
        std::optional<cla::Bytes> receive() override
        {
            std::unique_lock lock(m);
            cv.wait(lock, [&] { return stop; });
            return std::nullopt;
        }
        void shutdown() override
        {
            std::lock_guard lock(m);
            stop = true;
            cv.notify_all();
        }
    };
    cla::Link stalled(3, {"loopback", "x"}, std::make_unique<Stalled>(), a, 0, 8);
    stalled.start();
    for (std::uint64_t i = 0; i < 3; ++i)
        REQUIRE(stalled.enqueue({numbered_bundle(i), clock.now()}));
    const auto back = stalled.close();
    REQUIRE(back.size() == 3);
    std::vector<std::uint64_t> seqs;
    for (const auto& item : back)
        seqs.push_back(item.bundle.creation.sequence_number);
    std::sort(seqs.begin(), seqs.end());
    CHECK(seqs == std::vector<std::uint64_t>{0, 1, 2});
    // Closing is not a loss: the host hears nothing.
    CHECK(a.lost.empty());
}

TEST_CASE_FIXTURE(LinkFixture, "bundle age grows by residence time on egress")
{
    cla::LoopbackCla la({.instance_name = "a"}, hub);
    cla::LoopbackCla lb({.instance_name = "b"}, hub);
    la.start(a);
    lb.start(b);
    cla::Link out(1, {"loopback", "b"}, la.open("b"), a, 0);
    cla::Link in(2, {"loopback", "a"}, std::move(b.inbound[0].transport), b, 0);
    auto bundle = numbered_bundle(1);
    bundle.creation.dtn_time_ms = 0;
    bp::set_bundle_age_ms(bundle, 250);
    const DtnTimeMs received_at = clock.now();
    clock.advance(1234);
    out.start();
    in.start();
    REQUIRE(out.enqueue({bundle, received_at}));
    REQUIRE(b.wait_for([](auto& h) { return h.received.size() == 1; }));
    CHECK(bp::bundle_age_ms(bp::decode_bundle(b.received[0].data)) == 250 + 1234);
    out.close();
    in.close();
}
