#include "bpmux/storage/command.hpp"

namespace bpmux::storage {

namespace {

[[noreturn]] void malformed(const std::string& why)
{
    throw StorageError(StorageError::Kind::MalformedCommand, "malformed storage message: " + why);
}

void write_filter(cbor::Writer& w, const BundleFilter& f)
{
    std::size_t n = (f.destination_pattern ? 1 : 0) + (f.source ? 1 : 0) + (f.creation_after ? 1 : 0) +
                    (f.creation_before ? 1 : 0) + (f.limit ? 1 : 0);
    w.map(n);
    if (f.destination_pattern)
        w.uint(0).text(*f.destination_pattern);
    if (f.source)
        w.uint(1).text(f.source->to_text());
    if (f.creation_after)
        w.uint(2).uint(*f.creation_after);
    if (f.creation_before)
        w.uint(3).uint(*f.creation_before);
    if (f.limit)
        w.uint(4).uint(*f.limit);
}

BundleFilter read_filter(cbor::Reader& r)
{
    BundleFilter f;
    for (std::size_t i = 0, n = r.read_map(); i < n; ++i) {
        switch (r.read_uint()) {
        case 0: f.destination_pattern = r.read_text(); break;
        case 1: f.source = bp::EndpointId::parse(r.read_text()); break;
        case 2: f.creation_after = r.read_uint(); break;
        case 3: f.creation_before = r.read_uint(); break;
        case 4: f.limit = r.read_uint(); break;
        default: r.skip();
        }
    }
    return f;
}

void write_record(cbor::Writer& w, const RecordMeta& m)
{
    w.map(7);
    w.uint(0).text(m.storage_id);
    w.uint(1).text(m.destination.to_text());
    w.uint(2).text(m.source.to_text());
    w.uint(3).array(2).uint(m.creation.dtn_time_ms).uint(m.creation.sequence_number);
    w.uint(4).uint(m.lifetime_ms);
    w.uint(5).uint(m.stored_at);
    w.uint(6).uint(m.size);
}

RecordMeta read_record(cbor::Reader& r)
{
    RecordMeta m;
    for (std::size_t i = 0, n = r.read_map(); i < n; ++i) {
        switch (r.read_uint()) {
        case 0: m.storage_id = r.read_text(); break;
        case 1: m.destination = bp::EndpointId::parse(r.read_text()); break;
        case 2: m.source = bp::EndpointId::parse(r.read_text()); break;
        case 3:
            if (r.read_array() != 2u)
                malformed("creation timestamp");
            m.creation.dtn_time_ms = r.read_uint();
            m.creation.sequence_number = r.read_uint();
            break;
        case 4: m.lifetime_ms = r.read_uint(); break;
        case 5: m.stored_at = r.read_uint(); break;
        case 6: m.size = r.read_uint(); break;
        default: r.skip();
        }
    }
    return m;
}

template <typename Fn>
auto guarded(std::span<const std::uint8_t> payload, Fn fn)
{
    try {
        cbor::Reader r(payload);
        auto out = fn(r);
        if (!r.at_end())
            malformed("trailing bytes");
        return out;
    } catch (const cbor::Error& e) {
        malformed(e.what());
    } catch (const bp::EidError& e) {
        malformed(e.what());
    }
}

} // namespace

Bytes encode_command(const StorageCommand& cmd)
{
    cbor::Writer w;
    w.map(3);
    w.uint(0).uint(static_cast<std::uint64_t>(cmd.verb));
    w.uint(1);
    write_filter(w, cmd.filter);
    w.uint(2).boolean(cmd.delete_after);
    return std::move(w).take();
}

StorageCommand decode_command(std::span<const std::uint8_t> payload)
{
    return guarded(payload, [](cbor::Reader& r) {
        StorageCommand cmd;
        bool has_verb = false;
        for (std::size_t i = 0, n = r.read_map(); i < n; ++i) {
            switch (r.read_uint()) {
            case 0: {
                const auto verb = r.read_uint();
                if (verb > 2)
                    malformed("unknown verb " + std::to_string(verb));
                cmd.verb = static_cast<Verb>(verb);
                has_verb = true;
                break;
            }
            case 1: cmd.filter = read_filter(r); break;
            case 2: cmd.delete_after = r.read_bool(); break;
            default: r.skip();
            }
        }
        if (!has_verb)
            malformed("missing verb");
        return cmd;
    });
}

Bytes encode_reply(const CommandReply& reply)
{
    cbor::Writer w;
    w.map(reply.error.empty() ? 2 : 3);
    w.uint(0).uint(static_cast<std::uint64_t>(reply.status));
    w.uint(1);
    if (reply.is_query) {
        w.array(reply.records.size());
        for (const auto& m : reply.records)
            write_record(w, m);
    } else {
        w.uint(reply.count);
    }
    if (!reply.error.empty())
        w.uint(2).text(reply.error);
    return std::move(w).take();
}

CommandReply decode_reply(std::span<const std::uint8_t> payload)
{
    return guarded(payload, [](cbor::Reader& r) {
        CommandReply reply;
        for (std::size_t i = 0, n = r.read_map(); i < n; ++i) {
            switch (r.read_uint()) {
            case 0: reply.status = r.read_uint() == 0 ? CommandReply::Status::Ok : CommandReply::Status::Error; break;
            case 1:
                if (r.peek_type() == cbor::MajorType::Array) {
                    reply.is_query = true;
                    const auto count = r.read_array();
                    if (!count)
                        malformed("indefinite record list");
                    for (std::size_t k = 0; k < *count; ++k)
                        reply.records.push_back(read_record(r));
                } else {
                    reply.count = r.read_uint();
                }
                break;
            case 2: reply.error = r.read_text(); break;
            default: r.skip();
            }
        }
        return reply;
    });
}

} // namespace bpmux::storage
