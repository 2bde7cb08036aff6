#include <doctest.h>

#include <random>

#include "bpmux/aap2/messages.hpp"
#include "generators.hpp"
#include "test_util.hpp"

using namespace bpmux;
using namespace bpmux::aap2;

namespace {

Message random_message(std::mt19937_64& rng)
{
    switch (rng() % 8) {
    case 0:
        return Welcome{test::random_eid(rng)};
    case 1:
        return ConnectionConfig{rng() % 2 == 0, "agent" + std::to_string(rng() % 100), test::random_bytes(rng, rng() % 16),
                                static_cast<std::uint8_t>(rng() % 4), test::random_bytes(rng, rng() % 16)};
    case 2: {
        BundleAdu m;
        m.src = test::random_eid(rng);
        m.dst = test::random_eid(rng);
        m.creation = {rng() % (1ull << 40), rng() % 100};
        m.payload = test::random_bytes(rng, rng() % 2000);
        m.is_bibe = rng() % 2;
        if (rng() % 2)
            m.lifetime_ms = rng() % 100000;
        return m;
    }
    case 3: {
        DispatchRequest m;
        m.request_id = rng();
        m.meta = {test::random_eid(rng), test::random_eid(rng), {rng() % 1000, rng() % 10}, rng() % 100000,
                  rng() % 100000};
        return m;
    }
    case 4: {
        DispatchResponse m;
        m.request_id = rng() % 1000;
        switch (rng() % 3) {
        case 0: {
            std::vector<dispatch::NextHop> hops;
            for (std::size_t i = 0, n = 1 + rng() % 3; i < n; ++i) {
                dispatch::NextHop hop{bp::EndpointId::dtn("n" + std::to_string(i) + ".dtn")};
                if (rng() % 2)
                    hop.cla_address = {"mtcp", "127.0.0.1:" + std::to_string(4000 + i)};
                hops.push_back(hop);
            }
            m.decision = dispatch::DispatchDecision::forward(hops);
            if (rng() % 2)
                m.decision.max_fragment_payload = 1 + rng() % 5000;
            break;
        }
        case 1: m.decision = dispatch::DispatchDecision::store(); break;
        default: m.decision = dispatch::DispatchDecision::drop("no route " + std::to_string(rng() % 10)); break;
        }
        return m;
    }
    case 5:
        return Link{static_cast<Link::Op>(rng() % 4), test::random_eid(rng), "mtcp:host:" + std::to_string(rng() % 65536),
                    rng() % 2 == 0, rng() % 2 == 0};
    case 6:
        return Keepalive{};
    default:
        return Response{static_cast<Response::Status>(rng() % 5), rng() % 2 ? "detail" : ""};
    }
}

} // namespace

TEST_CASE("Keepalive golden vector")
{
    const auto golden = test::read_testdata_hex("aap2/keepalive.hex");
    CHECK(test::to_hex(golden) == "000000038206a0");
    CHECK(frame(Keepalive{}) == golden);

    Deframer d;
    d.feed(golden);
    auto m = d.next();
    REQUIRE(m);
    CHECK(std::holds_alternative<Keepalive>(*m));
    CHECK(d.buffered() == 0);
}

TEST_CASE("frame then deframe is identity")
{
    std::mt19937_64 rng(77);
    for (int i = 0; i < 2000; ++i) {
        const Message m = random_message(rng);
        Deframer d;
        d.feed(frame(m));
        const auto back = d.next();
        REQUIRE(back);
        REQUIRE(*back == m);
        REQUIRE(encode_message(*back) == encode_message(m));
    }
}

TEST_CASE("stream split at every boundary")
{
    std::mt19937_64 rng(5);
    std::vector<Message> sent;
    Bytes stream;
    for (int i = 0; i < 30; ++i) {
        sent.push_back(random_message(rng));
        const auto f = frame(sent.back());
        stream.insert(stream.end(), f.begin(), f.end());
    }
    for (std::size_t chunk : {1u, 2u, 3u, 7u, 64u, 1000u}) {
        Deframer d;
        std::vector<Message> got;
        for (std::size_t pos = 0; pos < stream.size(); pos += chunk) {
            const std::size_t n = std::min(chunk, stream.size() - pos);
            d.feed(std::span<const std::uint8_t>(stream).subspan(pos, n));
            while (auto m = d.next())
                got.push_back(std::move(*m));
        }
        CHECK(got == sent);
        CHECK(d.buffered() == 0);
    }
}

TEST_CASE("truncated frames wait for more bytes")
{
    const auto golden = test::read_testdata_hex("aap2/keepalive.hex");
    Deframer d;
    d.feed(std::span<const std::uint8_t>(golden).first(2));
    CHECK_FALSE(d.next());
    d.feed(std::span<const std::uint8_t>(golden).subspan(2, 3));
    CHECK_FALSE(d.next());
    d.feed(std::span<const std::uint8_t>(golden).subspan(5));
    CHECK(d.next());
}

TEST_CASE("oversized frame is rejected before buffering the body")
{
    Deframer d;
    const Bytes head{0x01, 0x10, 0x00, 0x01}; // 17 MiB + 1
    d.feed(head);
    try {
        d.next();
        FAIL("accepted");
    } catch (const Aap2Error& e) {
        CHECK(e.kind() == Aap2Error::Kind::FrameTooLarge);
    }
    Deframer exact;
    exact.feed(Bytes{0x01, 0x10, 0x00, 0x00});
    CHECK_FALSE(exact.next());
}

TEST_CASE("malformed messages")
{
    auto expect_malformed = [](const Bytes& body) {
        try {
            decode_message(body);
            FAIL("accepted");
        } catch (const Aap2Error& e) {
            CHECK(e.kind() == Aap2Error::Kind::MalformedMessage);
        }
    };
    expect_malformed({});
    expect_malformed({0x82, 0x08, 0xA0});       // unknown tag 8
    expect_malformed({0x83, 0x06, 0xA0, 0x00}); // three elements
    expect_malformed({0x82, 0x06});             // missing body
    expect_malformed({0x82, 0x06, 0xA0, 0x00}); // trailing byte
    expect_malformed({0x82, 0x07, 0xA1, 0x00, 0x09}); // status 9
    expect_malformed({0x82, 0x05, 0xA1, 0x00, 0x04}); // link op 4
    expect_malformed({0x82, 0x00, 0xA1, 0x00, 0x63, 'x', 'y', 'z'}); // bad EID
}

TEST_CASE("unknown body keys are ignored")
{
    // Response {0: 0, 1: "ok", 9: [1, 2], 10: h'00'}
    const Bytes body{0x82, 0x07, 0xA4, 0x00, 0x00, 0x01, 0x62, 'o', 'k', 0x09, 0x82, 0x01, 0x02, 0x0A, 0x41, 0x00};
    const auto m = decode_message(body);
    REQUIRE(std::holds_alternative<Response>(m));
    CHECK(std::get<Response>(m) == Response::ok("ok"));
}

TEST_CASE("conformance table")
{
    // Expected cells, written out independently of permitted().
    using K = Kind;
    const std::vector<std::tuple<Phase, Sender, std::vector<K>>> allowed = {
        {Phase::AwaitConfig, Sender::Client, {K::ConnectionConfig}},
        {Phase::AwaitConfig, Sender::Daemon, {K::Welcome, K::Response}},
        {Phase::ActiveClientControl, Sender::Client, {K::BundleAdu, K::LinkUp, K::LinkDown, K::Keepalive}},
        {Phase::ActiveClientControl, Sender::Daemon, {K::Response}},
        {Phase::PassiveDaemonControl, Sender::Client, {K::Response, K::DispatchResponse}},
        {Phase::PassiveDaemonControl, Sender::Daemon,
         {K::BundleAdu, K::DispatchRequest, K::LinkNotifyUp, K::LinkNotifyDown, K::Keepalive}},
        {Phase::Closed, Sender::Client, {}},
        {Phase::Closed, Sender::Daemon, {}},
    };
    int cells = 0;
    int permitted_cells = 0;
    for (const auto& [phase, sender, kinds] : allowed) {
        for (int k = 0; k < kKindCount; ++k) {
            const auto kind = static_cast<Kind>(k);
            const bool expected = std::find(kinds.begin(), kinds.end(), kind) != kinds.end();
            CAPTURE(to_string(phase));
            CAPTURE(to_string(kind));
            CHECK(permitted(phase, kind, sender) == expected);
            ++cells;
            permitted_cells += expected;
        }
    }
    CHECK(cells == 88);
    CHECK(permitted_cells == 15);
}

TEST_CASE("kind_of splits Link by op")
{
    CHECK(kind_of(Link{Link::Op::Up}) == Kind::LinkUp);
    CHECK(kind_of(Link{Link::Op::Down}) == Kind::LinkDown);
    CHECK(kind_of(Link{Link::Op::NotifyUp}) == Kind::LinkNotifyUp);
    CHECK(kind_of(Link{Link::Op::NotifyDown}) == Kind::LinkNotifyDown);
    CHECK(kind_of(Keepalive{}) == Kind::Keepalive);
    CHECK(tag_of(Response{}) == Tag::Response);
}
