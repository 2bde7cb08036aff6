#include <doctest.h>

#include <fstream>
#include <random>
#include <regex>
#include <set>

#include "bpmux/bp/codec.hpp"
#include "bpmux/storage/storage_cla.hpp"
#include "generators.hpp"
#include "temp_dir.hpp"
#include "test_host.hpp"

using namespace bpmux;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

bp::Bundle bundle_to(const std::string& dst, std::uint64_t seq, std::size_t payload = 32,
                     const std::string& src = "dtn://a.dtn/src", std::uint64_t lifetime = 60000,
                     DtnTimeMs created = 1000)
{
    return bp::make_bundle(bp::EndpointId::parse(dst), bp::EndpointId::parse(src), {created, seq}, lifetime,
                           bp::Bytes(payload, static_cast<std::uint8_t>(seq)));
}

storage::BundleFilter all() { return storage::BundleFilter{.destination_pattern = "*"}; }

// Independent glob semantics: '*' becomes '.*', everything else literal.
bool regex_glob(const std::string& pattern, const std::string& text)
{
    std::string re;
    for (char c : pattern) {
        if (c == '*')
            re += ".*";
        else if (std::isalnum(static_cast<unsigned char>(c)))
            re += c;
        else
            re += std::string("\\") + c;
    }
    return std::regex_match(text, std::regex(re));
}

} // namespace

TEST_CASE("glob matching")
{
    CHECK(storage::glob_match("*", ""));
    CHECK(storage::glob_match("*", "dtn://b.dtn/app"));
    CHECK(storage::glob_match("dtn://b.dtn/*", "dtn://b.dtn/app"));
    CHECK(storage::glob_match("dtn://b.dtn/*", "dtn://b.dtn/"));
    CHECK_FALSE(storage::glob_match("dtn://b.dtn/*", "dtn://c.dtn/app"));
    CHECK(storage::glob_match("dtn://*/app", "dtn://x.dtn/app"));
    CHECK_FALSE(storage::glob_match("dtn://b.dtn/app", "dtn://b.dtn/app2"));

    std::mt19937_64 rng(3);
    const std::string alphabet = "ab/*";
    for (int i = 0; i < 3000; ++i) {
        std::string p, t;
        for (int k = rng() % 7; k > 0; --k)
            p += alphabet[rng() % alphabet.size()];
        for (int k = rng() % 8; k > 0; --k)
            t += alphabet[rng() % 3];
        REQUIRE_MESSAGE(storage::glob_match(p, t) == regex_glob(p, t), p, " vs ", t);
    }
}

TEST_CASE("store survives a restart")
{
    test::TempDir dir;
    const auto b = bundle_to("dtn://b.dtn/app", 1);
    std::string id;
    {
        storage::Store s(dir.path());
        id = s.put(b, 4242);
        CHECK(id.size() == 64);
        CHECK(s.count() == 1);
    }
    storage::Store again(dir.path());
    auto records = again.query(all());
    REQUIRE(records.size() == 1);
    CHECK(records[0].storage_id == id);
    CHECK(records[0].destination == b.destination);
    CHECK(records[0].source == b.source);
    CHECK(records[0].creation == b.creation);
    CHECK(records[0].lifetime_ms == b.lifetime_ms);
    CHECK(records[0].stored_at == 4242);
    CHECK(records[0].size == bp::encode_bundle(b).size());
    // Bytes on disk are exactly the serialized bundle.
    CHECK(again.load(id) == bp::encode_bundle(b));
    CHECK(fs::exists(dir.path() / id.substr(0, 2) / (id + ".bp7")));
}

TEST_CASE("store is idempotent and content addressed")
{
    test::TempDir dir;
    storage::Store s(dir.path());
    const auto b = bundle_to("dtn://b.dtn/app", 1);
    const auto id1 = s.put(b, 1);
    const auto id2 = s.put(b, 2);
    CHECK(id1 == id2);
    CHECK(s.count() == 1);
    CHECK(id1 == storage::content_id(bp::encode_bundle(b)));
    // SHA-256 of "abc".
    const std::string abc = "abc";
    CHECK(storage::content_id(std::span(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size())) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("quota")
{
    test::TempDir dir;
    storage::Store s(dir.path(), 1024);
    try {
        s.put(bundle_to("dtn://b.dtn/app", 1, 2048), 0);
        FAIL("oversize bundle stored");
    } catch (const storage::StorageError& e) {
        CHECK(e.kind() == storage::StorageError::Kind::StorageFull);
    }
    CHECK(s.count() == 0);
    s.put(bundle_to("dtn://b.dtn/app", 1, 600), 0);
    CHECK_THROWS_AS(s.put(bundle_to("dtn://b.dtn/app", 2, 600), 0), storage::StorageError);
    CHECK(s.count() == 1);
    s.remove(all());
    CHECK(s.bytes_used() == 0);
    s.put(bundle_to("dtn://b.dtn/app", 2, 600), 0);
}

TEST_CASE("filters")
{
    test::TempDir dir;
    storage::Store s(dir.path());
    for (std::uint64_t i = 0; i < 3; ++i)
        s.put(bundle_to("dtn://b.dtn/app", i, 10, "dtn://a.dtn/src", 60000, 1000 + i), i);
    s.put(bundle_to("dtn://c.dtn/app", 9, 10, "ipn:9.2"), 10);

    CHECK(s.query({.destination_pattern = "dtn://b.dtn/*"}).size() == 3);
    CHECK(s.query({}).size() == 4);
    CHECK(s.query({.source = bp::EndpointId::parse("ipn:9.2")}).size() == 1);
    CHECK(s.query({.creation_after = 1000}).size() == 2);
    CHECK(s.query({.creation_after = 999}).size() == 4);
    CHECK(s.query({.creation_after = 1000, .creation_before = 1002}).size() == 1);
    auto limited = s.query({.limit = 2});
    REQUIRE(limited.size() == 2);
    CHECK(limited[0].stored_at == 0);
    CHECK(limited[1].stored_at == 1);
    CHECK(s.remove({.source = bp::EndpointId::parse("ipn:9.1")}) == 0);
    CHECK(s.remove({.destination_pattern = "dtn://b.dtn/*", .limit = 1}) == 1);
    CHECK(s.count() == 3);
}

TEST_CASE("expire sweep removes exactly the expired subset")
{
    test::TempDir dir;
    storage::Store s(dir.path());
    std::mt19937_64 rng(11);
    std::set<std::string> expected_left;
    const DtnTimeMs now = 100000;
    for (std::uint64_t i = 0; i < 60; ++i) {
        const DtnTimeMs created = std::uniform_int_distribution<DtnTimeMs>(1, 99000)(rng);
        const std::uint64_t lifetime = std::uniform_int_distribution<std::uint64_t>(1, 20000)(rng);
        const auto id = s.put(bundle_to("dtn://b.dtn/app", i, 8, "dtn://a.dtn/src", lifetime, created), created);
        if (created + lifetime > now)
            expected_left.insert(id);
    }
    const std::size_t before = s.count();
    const std::size_t removed = s.expire_sweep(now);
    CHECK(removed == before - expected_left.size());
    std::set<std::string> left;
    for (const auto& m : s.query({}))
        left.insert(m.storage_id);
    CHECK(left == expected_left);
    CHECK(s.expire_sweep(now) == 0);
}

TEST_CASE("crash before rename leaves nothing indexed")
{
    test::TempDir dir;
    const auto b = bundle_to("dtn://b.dtn/app", 1);
    {
        storage::Store s(dir.path());
        s.write_temp_only(bp::encode_bundle(b));
    }
    std::size_t temps = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir.path()))
        temps += e.path().extension() == ".tmp";
    CHECK(temps == 1);

    storage::Store after(dir.path());
    CHECK(after.count() == 0);
    temps = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir.path()))
        temps += e.path().extension() == ".tmp";
    CHECK(temps == 0);

    // A truncated or renamed file is not indexed either.
    const auto id = after.put(b, 0);
    const auto path = after.path_for(id);
    {
        const auto bytes = bp::encode_bundle(b);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() / 2));
    }
    storage::Store damaged(dir.path());
    CHECK(damaged.count() == 0);
}

TEST_CASE("command codec")
{
    storage::StorageCommand cmd{storage::Verb::Recall,
                                {.destination_pattern = "dtn://b.dtn/*",
                                 .source = bp::EndpointId::parse("ipn:9.1"),
                                 .creation_after = 5,
                                 .creation_before = 500,
                                 .limit = 3},
                                false};
    CHECK(storage::decode_command(storage::encode_command(cmd)) == cmd);
    CHECK(storage::decode_command(storage::encode_command({})) == storage::StorageCommand{});

    // Unknown keys are skipped.
    cbor::Writer w;
    w.map(2).uint(0).uint(1).uint(77).text("future");
    CHECK(storage::decode_command(w.data()).verb == storage::Verb::Delete);

    for (const cbor::Bytes& bad : {cbor::Bytes{0x80}, cbor::Bytes{0xA1, 0x00, 0x05}, cbor::Bytes{0xA0},
                                   cbor::Bytes{0xA1, 0x00}, cbor::Bytes{0xA1, 0x00, 0x00, 0x00}}) {
        try {
            storage::decode_command(bad);
            FAIL("malformed command accepted");
        } catch (const storage::StorageError& e) {
            CHECK(e.kind() == storage::StorageError::Kind::MalformedCommand);
        }
    }

    storage::CommandReply q;
    q.is_query = true;
    q.records.push_back({"ab", bp::EndpointId::parse("dtn://b.dtn/x"), bp::EndpointId::parse("ipn:1.2"), {3, 4},
                         5, 6, 7, 0});
    CHECK(storage::decode_reply(storage::encode_reply(q)) == q);
    storage::CommandReply c;
    c.count = 12;
    CHECK(storage::decode_reply(storage::encode_reply(c)) == c);
    storage::CommandReply err;
    err.status = storage::CommandReply::Status::Error;
    err.error = "bad";
    CHECK(storage::decode_reply(storage::encode_reply(err)) == err);
}

TEST_CASE("storage CLA")
{
    test::TempDir dir;
    SimClock clock(50000);
    test::RecordingHost host(clock, bp::EndpointId::parse("dtn://b.dtn/"));
    storage::StorageCla sc({.dir = dir.path(), .quota = 4096, .sweep_interval_ms = 0});
    sc.start(host);
    REQUIRE(host.services.count("sqa") == 1);

    cla::Link link(1, {"storage", "local"}, sc.open("local"), host, 0);
    link.start();
    for (std::uint64_t i = 0; i < 3; ++i)
        REQUIRE(link.enqueue({bundle_to("dtn://c.dtn/app", i), clock.now()}));
    for (int i = 0; i < 200 && link.sent_count() < 3; ++i)
        std::this_thread::sleep_for(5ms);
    REQUIRE(link.sent_count() == 3);
    CHECK(sc.query(all()).size() == 3);

    SUBCASE("StorageFull is a rejected transmission")
    {
        REQUIRE(link.enqueue({bundle_to("dtn://c.dtn/app", 99, 5000), clock.now()}));
        REQUIRE(host.wait_for([](auto& h) { return h.failed.size() == 1; }));
        CHECK(host.failed[0].reason == "StorageFull");
    }
    SUBCASE("query command answered with a reply bundle")
    {
        storage::StorageCommand cmd{storage::Verb::Query, {.destination_pattern = "dtn://c.dtn/*"}, true};
        auto command = bp::make_bundle(bp::EndpointId::parse("dtn://b.dtn/sqa"),
                                       bp::EndpointId::parse("dtn://b.dtn/tool"), {1, 1}, 1000,
                                       storage::encode_command(cmd));
        host.services["sqa"](command);
        REQUIRE(host.wait_for([](auto& h) { return h.received.size() == 1; }));
        const auto reply_bundle = bp::decode_bundle(host.received[0].data);
        CHECK(host.received[0].arrival == cla::Arrival::FromLocalCla);
        CHECK(reply_bundle.destination == bp::EndpointId::parse("dtn://b.dtn/tool"));
        CHECK(reply_bundle.source == bp::EndpointId::parse("dtn://b.dtn/sqa"));
        const auto reply = storage::decode_reply(reply_bundle.payload());
        CHECK(reply.status == storage::CommandReply::Status::Ok);
        CHECK(reply.records.size() == 3);
    }
    SUBCASE("commands from other nodes are ignored")
    {
        auto command = bp::make_bundle(bp::EndpointId::parse("dtn://b.dtn/sqa"),
                                       bp::EndpointId::parse("dtn://evil.dtn/x"), {1, 1}, 1000,
                                       storage::encode_command({storage::Verb::Delete, all(), true}));
        host.services["sqa"](command);
        std::this_thread::sleep_for(50ms);
        CHECK(host.received_count() == 0);
        CHECK(sc.query(all()).size() == 3);
    }
    SUBCASE("malformed command gets an error reply")
    {
        auto command = bp::make_bundle(bp::EndpointId::parse("dtn://b.dtn/sqa"),
                                       bp::EndpointId::parse("dtn://b.dtn/tool"), {1, 1}, 1000, bp::Bytes{0x01});
        host.services["sqa"](command);
        REQUIRE(host.wait_for([](auto& h) { return h.received.size() == 1; }));
        const auto reply = storage::decode_reply(bp::decode_bundle(host.received[0].data).payload());
        CHECK(reply.status == storage::CommandReply::Status::Error);
    }
    SUBCASE("recall re-emits the bundles and deletes them by default")
    {
        clock.advance(700);
        auto reply = sc.execute({storage::Verb::Recall, {.limit = 2}, true});
        CHECK(reply.count == 2);
        REQUIRE(host.wait_for([](auto& h) { return h.received.size() == 2; }));
        for (const auto& r : host.received) {
            CHECK(r.arrival == cla::Arrival::FromLocalCla);
            CHECK(bp::decode_bundle(r.data).destination == bp::EndpointId::parse("dtn://c.dtn/app"));
        }
        CHECK(sc.query(all()).size() == 1);
        reply = sc.execute({storage::Verb::Recall, all(), false});
        CHECK(reply.count == 1);
        CHECK(sc.query(all()).size() == 1);
    }
    SUBCASE("expiry sweep")
    {
        clock.advance(60000);
        CHECK(sc.sweep_now() == 3);
    }
    link.close();
    sc.stop();
}

TEST_CASE("recall adds storage time to the bundle age")
{
    test::TempDir dir;
    SimClock clock(10000);
    test::RecordingHost host(clock, bp::EndpointId::parse("dtn://b.dtn/"));
    storage::StorageCla sc({.dir = dir.path(), .sweep_interval_ms = 0});
    sc.start(host);
    cla::Link link(1, {"storage", "local"}, sc.open("local"), host, 0);
    link.start();
    auto b = bundle_to("dtn://c.dtn/app", 1);
    b.creation.dtn_time_ms = 0;
    bp::set_bundle_age_ms(b, 100);
    REQUIRE(link.enqueue({b, clock.now()}));
    for (int i = 0; i < 200 && link.sent_count() < 1; ++i)
        std::this_thread::sleep_for(5ms);
    clock.advance(5000);
    sc.execute({storage::Verb::Recall, all(), true});
    REQUIRE(host.wait_for([](auto& h) { return h.received.size() == 1; }));
    CHECK(bp::bundle_age_ms(bp::decode_bundle(host.received[0].data)) == 5100);
    link.close();
    sc.stop();
}
