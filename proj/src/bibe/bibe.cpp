#include "bpmux/bibe/bibe.hpp"

#include <condition_variable>
#include <mutex>

#include "bpmux/bp/codec.hpp"
#include "bpmux/common/log.hpp"

namespace bpmux::bibe {

namespace {

[[noreturn]] void malformed(const std::string& why)
{
    throw BibeError(BibeError::Kind::MalformedBpdu, "malformed BIBE PDU: " + why);
}

class BibeTransport final : public cla::LinkTransport {
public:
    BibeTransport(BibeCla& owner, bp::EndpointId outer_dest, std::string detail)
        : owner_(owner), outer_dest_(std::move(outer_dest)), detail_(std::move(detail))
    {
    }

    cla::SendResult send(const cla::Transmission& tx) override
    {
        auto& host = owner_.host();
        const DtnTimeMs now = host.clock().now();
        OuterParams params;
        params.destination = outer_dest_;
        params.source = host.local_node_id().with_demux(owner_.options().endpoint);
        params.creation = {now, owner_.next_sequence()};
        params.lifetime_ms = owner_.options().outer_lifetime_ms;
        params.inner_remaining_ms = bp::remaining_lifetime(tx.bundle, tx.received_at, now);
        params.max_outer_size = owner_.options().max_outer_size;
        try {
            const bp::Bundle outer = encapsulate(tx.bundle, params);
            host.bundle_received({"bibe", detail_}, bp::encode_bundle(outer), cla::Arrival::FromLocalCla);
        } catch (const BibeError& e) {
            return cla::SendResult::rejected(e.what());
        }
        return cla::SendResult::ok();
    }

    // Nothing ever arrives on the link itself; inner bundles come in through
    // the service endpoint.
    std::optional<cla::Bytes> receive() override
    {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stopped_; });
        return std::nullopt;
    }

    void shutdown() override
    {
        std::lock_guard lock(mutex_);
        stopped_ = true;
        cv_.notify_all();
    }

private:
    BibeCla& owner_;
    bp::EndpointId outer_dest_;
    std::string detail_;
    std::mutex mutex_;
    std::condition_variable cv_;
    bool stopped_ = false;
};

} // namespace

Bytes encode_bpdu(const BibePdu& pdu)
{
    cbor::Writer w;
    w.array(3).uint(pdu.transmission_id).uint(pdu.retransmission_time).bytes(pdu.encapsulated);
    return std::move(w).take();
}

BibePdu decode_bpdu(std::span<const std::uint8_t> payload)
{
    BibePdu pdu;
    try {
        cbor::Reader r(payload);
        if (r.at_end() || r.peek_type() != cbor::MajorType::Array)
            malformed("not an array");
        if (r.read_array() != 3u)
            malformed("expected 3 elements");
        pdu.transmission_id = r.read_uint();
        pdu.retransmission_time = r.read_uint();
        auto inner = r.read_bytes();
        pdu.encapsulated.assign(inner.begin(), inner.end());
        if (!r.at_end())
            malformed("trailing bytes");
    } catch (const cbor::Error& e) {
        malformed(e.what());
    }
    if (pdu.transmission_id != 0 || pdu.retransmission_time != 0)
        malformed("custody transfer is not supported");
    return pdu;
}

bp::Bundle encapsulate(const bp::Bundle& inner, const OuterParams& p)
{
    BibePdu pdu{0, 0, bp::encode_bundle(inner)};
    bp::Bundle outer = bp::make_bundle(p.destination, p.source, p.creation,
                                       std::min(p.lifetime_ms, p.inner_remaining_ms), encode_bpdu(pdu), p.crc);
    outer.proc_flags |= bp::bundle_flags::kAdminRecord;
    if (p.max_outer_size != 0) {
        const std::size_t size = bp::encoded_size(outer);
        if (size > p.max_outer_size)
            throw BibeError(BibeError::Kind::InnerTooLarge, "encapsulated bundle of " + std::to_string(size) +
                                                                 " bytes exceeds " + std::to_string(p.max_outer_size));
    }
    return outer;
}

bp::Bundle decapsulate(const bp::Bundle& outer)
{
    const BibePdu pdu = decode_bpdu(outer.payload());
    try {
        return bp::decode_bundle(pdu.encapsulated);
    } catch (const bp::BundleError& e) {
        throw BibeError(BibeError::Kind::InnerDecodeFailed, std::string("encapsulated bundle: ") + e.what());
    }
}

void BibeCla::start(cla::ClaHost& host)
{
    host_ = &host;
    host.register_service_endpoint(options_.endpoint, [this](bp::Bundle outer) { on_outer(outer); });
}

std::unique_ptr<cla::LinkTransport> BibeCla::open(const std::string& detail)
{
    bp::EndpointId dest;
    try {
        dest = bp::EndpointId::parse(detail);
    } catch (const bp::EidError& e) {
        throw cla::ClaError(cla::ClaError::Kind::InvalidAddress, "bibe address needs an EID: " + detail);
    }
    return std::make_unique<BibeTransport>(*this, dest, detail);
}

void BibeCla::on_outer(const bp::Bundle& outer)
{
    try {
        BibePdu pdu = decode_bpdu(outer.payload());
        // The inner bundle goes through ingest again, so expiry and hop
        // limits are enforced there; decoding here only rejects garbage early.
        decapsulate(outer);
        host_->bundle_received({"bibe", outer.source.to_text()}, std::move(pdu.encapsulated), cla::Arrival::FromPeer);
    } catch (const BibeError& e) {
        log::warn("bibe", "discarding bundle from ", outer.source.to_text(), ": ", e.what());
    }
}

} // namespace bpmux::bibe
