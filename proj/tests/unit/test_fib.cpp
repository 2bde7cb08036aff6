#include <doctest.h>

#include <random>

#include "bpmux/fib/fib.hpp"

using namespace bpmux;
using dispatch::DispatchDecision;
using dispatch::NextHop;

namespace {

const auto kB = bp::EndpointId::parse("dtn://b.dtn/");
const auto kC = bp::EndpointId::parse("dtn://c.dtn/");
const auto kMtcpB = cla::ClaAddress::parse("mtcp:127.0.0.1:4556");
const auto kMtcpC = cla::ClaAddress::parse("mtcp:127.0.0.1:4557");

struct Recorder {
    std::vector<fib::FibEvent> events;
    void attach(fib::Fib& f)
    {
        f.set_listener([this](const fib::FibEvent& e) { events.push_back(e); });
    }
};

std::map<std::pair<bp::EndpointId, cla::ClaAddress>, fib::FibEntry> as_map(const fib::Fib& f)
{
    std::map<std::pair<bp::EndpointId, cla::ClaAddress>, fib::FibEntry> out;
    for (const auto& e : f.entries())
        out[{e.node_id, e.cla_address}] = e;
    return out;
}

} // namespace

TEST_CASE("upsert, lookup, remove")
{
    fib::Fib f;
    Recorder rec;
    rec.attach(f);

    f.upsert(kB, kMtcpB, fib::flags::kDirect);
    auto found = f.lookup(kB);
    REQUIRE(found.size() == 1);
    CHECK(found[0].direct());
    CHECK_FALSE(found[0].connected());
    CHECK(rec.events.size() == 1);

    // Identical upsert changes nothing and stays silent.
    f.upsert(kB, kMtcpB, fib::flags::kDirect);
    CHECK(rec.events.size() == 1);

    // A full EID is reduced to its node.
    CHECK(f.lookup(bp::EndpointId::parse("dtn://b.dtn/app")).size() == 1);

    f.remove(kC, kMtcpC);
    CHECK(rec.events.size() == 1);

    f.remove(kB, kMtcpB);
    CHECK(f.lookup(kB).empty());
    REQUIRE(rec.events.size() == 2);
    CHECK(rec.events[1].kind == fib::FibEvent::Kind::Removed);
}

TEST_CASE("lookup lists CONNECTED entries first")
{
    fib::Fib f;
    const auto slow = cla::ClaAddress::parse("mtcp:10.0.0.1:1");
    const auto fast = cla::ClaAddress::parse("mtcp:10.0.0.2:1");
    f.upsert(kB, slow, 0);
    f.upsert(kB, fast, 0);
    f.link_up(fast, 7);
    auto entries = f.lookup(kB);
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].cla_address == fast);
    CHECK(entries[0].connected());
    CHECK(entries[0].link_id == cla::LinkId{7});
    CHECK_FALSE(entries[1].connected());
}

TEST_CASE("link state sets and clears CONNECTED")
{
    fib::Fib f;
    Recorder rec;
    rec.attach(f);
    f.link_up(kMtcpB, 3);
    CHECK(rec.events.empty());
    // An entry added while the link is up is connected straight away.
    f.upsert(kB, kMtcpB, fib::flags::kDirect);
    CHECK(f.lookup(kB)[0].connected());

    f.link_down(kMtcpB);
    CHECK_FALSE(f.lookup(kB)[0].connected());
    CHECK_FALSE(f.lookup(kB)[0].link_id.has_value());
    CHECK(rec.events.size() == 2);
    // Down again: nothing left to change.
    f.link_down(kMtcpB);
    CHECK(rec.events.size() == 2);
}

TEST_CASE("dispatch cache")
{
    fib::Fib f;
    f.upsert(kB, kMtcpB, 0);
    const auto via_b = DispatchDecision::forward({NextHop{kB, kMtcpB}});
    const auto dest = bp::EndpointId::parse("dtn://c.dtn/app");

    SUBCASE("only decisions over CONNECTED links are cached")
    {
        CHECK_FALSE(f.cache_put(dest, via_b, 0));
        f.link_up(kMtcpB, 1);
        CHECK(f.cache_put(dest, via_b, 0));
        CHECK_FALSE(f.cache_put(dest, DispatchDecision::store(), 0));
        CHECK_FALSE(f.cache_put(dest, DispatchDecision::drop("x"), 0));
    }
    SUBCASE("keyed by destination node")
    {
        f.link_up(kMtcpB, 1);
        REQUIRE(f.cache_put(dest, via_b, 0));
        CHECK(f.cache_get(bp::EndpointId::parse("dtn://c.dtn/other")) == via_b);
        CHECK_FALSE(f.cache_get(bp::EndpointId::parse("dtn://d.dtn/app")).has_value());
    }
    SUBCASE("link down invalidates")
    {
        f.link_up(kMtcpB, 1);
        REQUIRE(f.cache_put(dest, via_b, 0));
        f.link_down(kMtcpB);
        CHECK(f.cache_size() == 0);
        f.link_up(kMtcpB, 2);
        CHECK_FALSE(f.cache_get(dest).has_value());
    }
    SUBCASE("hop without explicit address is resolved through the FIB")
    {
        f.link_up(kMtcpB, 1);
        const auto any_b = DispatchDecision::forward({NextHop{kB, {}}});
        REQUIRE(f.cache_put(dest, any_b, 0));
        f.link_down(kMtcpB);
        CHECK_FALSE(f.cache_get(dest).has_value());
    }
    SUBCASE("FIB change for the destination invalidates")
    {
        f.link_up(kMtcpB, 1);
        const auto direct_c = DispatchDecision::forward({NextHop{kB, kMtcpB}});
        REQUIRE(f.cache_put(kC, direct_c, 0));
        f.upsert(kC, kMtcpC, 0);
        CHECK_FALSE(f.cache_get(kC).has_value());
    }
    SUBCASE("disabled cache")
    {
        f.link_up(kMtcpB, 1);
        f.set_cache_enabled(false);
        CHECK_FALSE(f.cache_put(dest, via_b, 0));
        CHECK_FALSE(f.cache_get(dest).has_value());
    }
}

TEST_CASE("FIB state equals the fold of its events under random operations")
{
    std::mt19937_64 rng(42);
    fib::Fib f;
    std::map<std::pair<bp::EndpointId, cla::ClaAddress>, fib::FibEntry> folded;
    std::size_t events = 0;
    f.set_listener([&](const fib::FibEvent& e) {
        fib::fold(folded, e);
        ++events;
    });

    std::vector<bp::EndpointId> nodes;
    std::vector<cla::ClaAddress> addrs;
    for (int i = 0; i < 4; ++i) {
        nodes.push_back(bp::EndpointId::dtn("n" + std::to_string(i) + ".dtn"));
        addrs.push_back(cla::ClaAddress::parse("mtcp:127.0.0.1:" + std::to_string(5000 + i)));
    }
    std::map<bp::EndpointId, DispatchDecision> cached;
    auto pick = [&](auto& v) { return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)]; };

    cla::LinkId next_link = 1;
    for (int step = 0; step < 5000; ++step) {
        switch (std::uniform_int_distribution<int>(0, 5)(rng)) {
        case 0:
        case 1: f.upsert(pick(nodes), pick(addrs), rng() % 2 ? fib::flags::kDirect : 0); break;
        case 2: f.remove(pick(nodes), pick(addrs)); break;
        case 3: f.link_up(pick(addrs), next_link++); break;
        case 4: f.link_down(pick(addrs)); break;
        case 5: {
            auto dest = pick(nodes);
            f.cache_put(dest, DispatchDecision::forward({NextHop{pick(nodes), pick(addrs)}}), 0);
            break;
        }
        }
        REQUIRE(as_map(f) == folded);
        // CONNECTED always mirrors link state.
        for (const auto& e : f.entries())
            REQUIRE(e.connected() == f.is_connected(e.cla_address));
        // No cached decision ever points at a link that is not up.
        for (const auto& node : nodes) {
            if (auto d = f.cache_get(node)) {
                for (const auto& hop : d->next_hops)
                    REQUIRE(f.is_connected(hop.cla_address));
            }
        }
    }
    CHECK(events > 100);
}
