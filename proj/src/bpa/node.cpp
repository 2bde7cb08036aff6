#include "bpmux/bpa/node.hpp"

#include "bpmux/bp/codec.hpp"
#include "bpmux/bp/fragment.hpp"
#include "bpmux/common/log.hpp"

namespace bpmux::bpa {

namespace {

const char* to_string(core::Origin origin)
{
    switch (origin) {
    case core::Origin::Cla: return "cla";
    case core::Origin::Agent: return "agent";
    case core::Origin::Storage: return "storage";
    }
    return "?";
}

aap2::Link notify_for(const fib::FibEvent& event)
{
    aap2::Link m;
    m.op = event.kind == fib::FibEvent::Kind::Upserted ? aap2::Link::Op::NotifyUp : aap2::Link::Op::NotifyDown;
    m.node_id = event.entry.node_id;
    m.cla_address = event.entry.cla_address.to_text();
    m.direct = event.entry.direct();
    m.connected = event.kind == fib::FibEvent::Kind::Upserted && event.entry.connected();
    return m;
}

} // namespace

std::uint64_t NodeStats::dropped_total() const
{
    std::uint64_t n = 0;
    for (auto d : dropped)
        n += d;
    return n;
}

Node::Node(NodeConfig config, const Clock* clock, std::shared_ptr<cla::LoopbackHub> hub)
    : config_(std::move(config)),
      clock_(clock ? clock : &real_clock_),
      hub_(std::move(hub)),
      dispatcher_(fib_, *clock_, *this, dispatch::Dispatcher::Options{config_.bdm_timeout_ms})
{
    fib_.set_cache_enabled(config_.dispatch_cache);
    fib_.set_listener([this](const fib::FibEvent& e) { on_fib_event(e); });
}

Node::~Node() { stop(); }

bool Node::post(std::function<void()> fn) { return tasks_.try_push(std::move(fn)); }

template <typename Fn>
auto Node::call(Fn fn) -> decltype(fn())
{
    using R = decltype(fn());
    auto task = std::make_shared<std::packaged_task<R()>>(std::move(fn));
    auto result = task->get_future();
    if (!running_.load() || !post([task] { (*task)(); }))
        throw std::runtime_error("node " + config_.node_id.to_text() + " is not running");
    return result.get();
}

void Node::start()
{
    if (config_.mtcp) {
        cla::MtcpCla::Options o;
        const auto [host, port] = net::split_host_port(config_.mtcp->listen);
        o.listen_host = host;
        o.listen_port = port;
        o.listen = config_.mtcp->accept;
        o.max_bundle_size = config_.mtcp->max_bundle_size;
        mtcp_ = std::make_shared<cla::MtcpCla>(o);
        registry_.register_cla("mtcp", mtcp_);
        clas_.push_back(mtcp_);
    }
    for (const auto& l : config_.loopback) {
        auto cla = std::make_shared<cla::LoopbackCla>(
            cla::LoopbackCla::Options{l.instance, l.max_bundle_size, l.delay_ms, l.drop_probability, l.seed}, hub_);
        registry_.register_cla("loopback", cla);
        clas_.push_back(cla);
    }
    if (config_.bibe) {
        bibe_ = std::make_shared<bibe::BibeCla>(
            bibe::BibeCla::Options{config_.bibe->endpoint, config_.bibe->outer_lifetime_ms, config_.bibe->max_outer_size});
        registry_.register_cla("bibe", bibe_);
        clas_.push_back(bibe_);
    }
    if (config_.storage) {
        storage::StorageCla::Options o;
        o.dir = config_.storage->path;
        o.quota = config_.storage->quota_bytes;
        o.endpoint = config_.storage->endpoint;
        o.sweep_interval_ms = config_.storage->sweep_interval_ms;
        storage_ = std::make_shared<storage::StorageCla>(o);
        registry_.register_cla("storage", storage_);
        clas_.push_back(storage_);
    }

    // CLAs register their service endpoints here, before the loop runs.
    for (auto& c : clas_)
        c->start(*this);

    running_ = true;
    loop_thread_ = std::thread([this] { loop(); });

    if (storage_) {
        auto transport = std::make_shared<std::unique_ptr<cla::LinkTransport>>(storage_->open("local"));
        call([this, transport] { storage_link_ = install_link({"storage", "local"}, std::move(*transport)); });
    }

    aap2::Server::Options so;
    so.tcp = config_.aap2.tcp;
    so.socket_path = config_.aap2.socket;
    so.session.keepalive_timeout = std::chrono::milliseconds(config_.aap2.keepalive_timeout_ms);
    so.session.max_outbound = config_.aap2.max_outbound;
    server_ = std::make_unique<aap2::Server>(*this, so);
    server_->start();

    log::info("node", "ready: node ", config_.node_id.to_text(), ", aap2 ", aap2_target(),
              mtcp_ ? ", mtcp port " + std::to_string(mtcp_->bound_port()) : std::string());
}

void Node::stop()
{
    if (!running_.load())
        return;
    if (server_)
        server_->stop();
    if (mtcp_)
        mtcp_->stop();
    for (auto& c : clas_)
        if (c->name() == "loopback")
            c->stop();
    try {
        call([this] {
            std::size_t lost = 0;
            while (!links_.empty()) {
                auto link = std::move(links_.begin()->second);
                links_.erase(links_.begin());
                lost += link->close().size();
            }
            link_by_address_.clear();
            storage_link_.reset();
            if (lost)
                log::warn("node", "shutdown discards ", lost, " queued bundles");
        });
    } catch (const std::exception&) {
    }
    running_ = false;
    for (auto& c : clas_)
        c->stop();
    tasks_.close();
    if (loop_thread_.joinable())
        loop_thread_.join();
    log::info("node", "stopped ", config_.node_id.to_text());
}

std::uint16_t Node::aap2_port() const { return server_ ? server_->tcp_port() : 0; }

std::uint16_t Node::mtcp_port() const { return mtcp_ ? mtcp_->bound_port() : 0; }

std::string Node::aap2_target() const
{
    if (!config_.aap2.tcp.empty() && server_) {
        const auto [host, port] = net::split_host_port(config_.aap2.tcp);
        return host + ":" + std::to_string(server_->tcp_port());
    }
    return config_.aap2.socket;
}

void Node::loop()
{
    for (;;) {
        auto task = tasks_.pop_for(std::chrono::milliseconds(20));
        if (task) {
            try {
                (*task)();
            } catch (const std::exception& e) {
                log::error("node", "processing loop: ", e.what());
            }
        } else if (tasks_.closed()) {
            return;
        }
        dispatcher_.tick();
    }
}

// ---- Observation ----

NodeStats Node::stats()
{
    return call([this] {
        NodeStats s = stats_;
        s.bdm_requests = dispatcher_.bdm_requests();
        s.bdm_timeouts = dispatcher_.bdm_timeouts();
        s.awaiting_dispatch = dispatcher_.pending_bundles();
        s.links = links_.size();
        return s;
    });
}

std::vector<fib::FibEntry> Node::fib_entries()
{
    return call([this] { return fib_.entries(); });
}

std::vector<fib::FibEvent> Node::fib_events()
{
    return call([this] { return fib_events_; });
}

std::vector<LinkInfo> Node::links()
{
    return call([this] {
        std::vector<LinkInfo> out;
        for (const auto& [id, link] : links_)
            out.push_back({id, link->address(), link->state(), link->queued(), link->sent_count()});
        return out;
    });
}

std::vector<std::string> Node::event_log()
{
    return call([this] { return events_; });
}

std::size_t Node::dispatch_cache_size()
{
    return call([this] { return fib_.cache_size(); });
}

void Node::record(const std::string& event)
{
    events_.push_back("t=" + std::to_string(clock_->now()) + " " + event);
}

std::string Node::describe(const bp::Bundle& b) const
{
    std::string s = b.source.to_text() + "@" + std::to_string(b.creation.dtn_time_ms) + "." +
                    std::to_string(b.creation.sequence_number);
    if (b.is_fragment())
        s += "+" + std::to_string(b.fragment_offset);
    return s + " -> " + b.destination.to_text();
}

// ---- CLA host ----

void Node::register_service_endpoint(const std::string& demux, ServiceHandler handler)
{
    services_[demux] = std::move(handler);
}

void Node::bundle_received(const cla::ClaAddress& via, cla::Bytes data, cla::Arrival arrival)
{
    post([this, via, data = std::move(data), arrival]() mutable { on_wire(via, std::move(data), arrival); });
}

bool Node::bundles_received(const cla::ClaAddress& via, std::vector<cla::Bytes> batch, cla::Arrival arrival)
{
    auto holder = std::make_shared<std::vector<cla::Bytes>>(std::move(batch));
    return post([this, via, holder, arrival] {
        for (auto& data : *holder)
            on_wire(via, std::move(data), arrival);
    });
}

void Node::inbound_link(const std::string& cla_name, std::string detail, std::unique_ptr<cla::LinkTransport> transport)
{
    auto holder = std::make_shared<std::unique_ptr<cla::LinkTransport>>(std::move(transport));
    cla::ClaAddress address{cla_name, std::move(detail)};
    if (!post([this, address, holder] { install_link(address, std::move(*holder)); }))
        (*holder)->shutdown();
}

void Node::link_lost(cla::LinkId id)
{
    post([this, id] { close_link(id); });
}

void Node::transmission_failed(cla::LinkId id, cla::OutboundBundle item, std::string reason)
{
    auto holder = std::make_shared<cla::OutboundBundle>(std::move(item));
    post([this, id, holder, reason] {
        core::BundleDescriptor desc{std::move(holder->bundle), core::Origin::Cla, "link " + std::to_string(id),
                                    holder->received_at, true};
        ++stats_.redispatched;
        record("in " + describe(desc.bundle) + " from failed transmission");
        log::warn("node", "transmission of ", describe(desc.bundle), " failed: ", reason);
        outcome(desc, dispatch::Outcome::Dropped,
                reason == "StorageFull" ? core::DropReason::StorageFull : core::DropReason::NoRoute);
    });
}

cla::LinkId Node::install_link(const cla::ClaAddress& address, std::unique_ptr<cla::LinkTransport> transport)
{
    const cla::LinkId id = next_link_id_++;
    std::size_t max = 0;
    if (auto c = registry_.find(address.cla_name))
        max = c->max_bundle_size();
    auto link = std::make_unique<cla::Link>(id, address, std::move(transport), *this, max, config_.link_queue_capacity);
    link->start();
    links_.emplace(id, std::move(link));
    link_by_address_[address] = id;
    fib_.link_up(address, id);
    log::info("node", "link ", id, " up: ", address.to_text());
    return id;
}

void Node::close_link(cla::LinkId id)
{
    auto it = links_.find(id);
    if (it == links_.end())
        return;
    auto link = std::move(it->second);
    links_.erase(it);
    const cla::ClaAddress address = link->address();
    if (auto a = link_by_address_.find(address); a != link_by_address_.end() && a->second == id) {
        link_by_address_.erase(a);
        fib_.link_down(address);
    }
    if (storage_link_ == id)
        storage_link_.reset();
    auto unsent = link->close();
    log::info("node", "link ", id, " down: ", address.to_text(), ", ", unsent.size(), " bundles to redispatch");
    for (auto& item : unsent)
        redispatch(std::move(item));
}

void Node::redispatch(cla::OutboundBundle item)
{
    core::BundleDescriptor desc{std::move(item.bundle), core::Origin::Cla, "requeue", item.received_at, true};
    ++stats_.redispatched;
    record("in " + describe(desc.bundle) + " requeued");
    dispatcher_.dispatch(std::move(desc));
}

// ---- Ingest ----

void Node::on_wire(const cla::ClaAddress& via, cla::Bytes data, cla::Arrival arrival)
{
    bp::Bundle bundle;
    try {
        bundle = bp::decode_bundle(data);
    } catch (const bp::BundleError& e) {
        if (e.kind() == bp::BundleError::Kind::UnsupportedVersion) {
            ++stats_.unsupported_version;
            record("discard UnsupportedVersion(" + std::to_string(e.detail()) + ")");
            log::warn("node", "drop UnsupportedVersion(", e.detail(), ") from ", via.to_text());
        } else {
            ++stats_.malformed;
            record("discard " + std::string(bp::to_string(e.kind())));
            log::warn("node", "drop undecodable bundle from ", via.to_text(), ": ", e.what());
        }
        return;
    }
    const core::Origin origin = via.cla_name == "storage" ? core::Origin::Storage : core::Origin::Cla;
    ingest({std::move(bundle), origin, via.to_text(), clock_->now(), false}, arrival);
}

void Node::ingest(core::BundleDescriptor desc, cla::Arrival arrival)
{
    ++stats_.received;
    record("in " + describe(desc.bundle) + " from " + to_string(desc.origin));
    const DtnTimeMs now = clock_->now();

    DtnTimeMs expiry = 0;
    try {
        expiry = bp::expiry_time(desc.bundle, desc.received_at);
    } catch (const bp::BundleError& e) {
        log::warn("node", describe(desc.bundle), ": ", e.what());
    }
    if (expiry <= now) {
        outcome(desc, dispatch::Outcome::Dropped, core::DropReason::Expired);
        return;
    }

    if (arrival == cla::Arrival::FromPeer) {
        if (auto hc = bp::hop_count(desc.bundle)) {
            ++hc->count;
            if (hc->count > hc->limit) {
                outcome(desc, dispatch::Outcome::Dropped, core::DropReason::HopLimitExceeded);
                return;
            }
            bp::set_hop_count(desc.bundle, *hc);
        }
    }

    if (desc.bundle.destination.same_node(config_.node_id))
        deliver_local(std::move(desc));
    else
        dispatcher_.dispatch(std::move(desc));
}

void Node::deliver_local(core::BundleDescriptor desc)
{
    if (!desc.bundle.is_fragment()) {
        deliver_whole(std::move(desc));
        return;
    }
    const auto& b = desc.bundle;
    const std::string key = b.source.to_text() + "|" + std::to_string(b.creation.dtn_time_ms) + "|" +
                            std::to_string(b.creation.sequence_number) + "|" + std::to_string(b.total_adu_length);
    auto& parts = reassembly_[key];
    parts.push_back(b);
    // The fragment's journey ends here; the rebuilt bundle is a new ingest.
    ++stats_.delivered;
    record("delivered " + describe(b) + " to reassembly");
    if (!bp::missing_ranges(parts).empty())
        return;
    bp::Bundle whole;
    try {
        whole = bp::reassemble(parts);
    } catch (const bp::BundleError& e) {
        log::warn("node", "reassembly of ", key, " failed: ", e.what());
        reassembly_.erase(key);
        return;
    }
    reassembly_.erase(key);
    ++stats_.reassembled;
    record("in " + describe(whole) + " reassembled");
    deliver_whole({std::move(whole), desc.origin, desc.origin_detail, desc.received_at, false});
}

void Node::deliver_whole(core::BundleDescriptor desc)
{
    const std::string demux = desc.bundle.destination.demux();

    if (auto s = services_.find(demux); s != services_.end()) {
        ++stats_.delivered;
        record("delivered " + describe(desc.bundle) + " to service " + demux);
        s->second(std::move(desc.bundle));
        return;
    }

    if (auto r = registrations_.find(demux); r != registrations_.end() && r->second.sink_ready &&
                                             holder_alive(r->second.passive)) {
        auto session = r->second.passive->session.lock();
        const auto& b = desc.bundle;
        aap2::BundleAdu adu{b.source, b.destination, b.creation, b.payload(), b.is_admin_record(), b.lifetime_ms};
        if (session->push(std::move(adu))) {
            ++stats_.delivered;
            record("delivered " + describe(b) + " to agent " + demux);
            return;
        }
        r->second.sink_ready = false;
    }

    if (storage_link_) {
        auto it = links_.find(*storage_link_);
        if (it != links_.end() && it->second->enqueue({desc.bundle, desc.received_at})) {
            outcome(desc, dispatch::Outcome::Stored, std::nullopt);
            return;
        }
    }
    outcome(desc, dispatch::Outcome::Dropped, core::DropReason::NoSuchEndpoint);
}

// ---- Dispatch port ----

bool Node::enqueue(cla::LinkId link, cla::OutboundBundle item)
{
    auto it = links_.find(link);
    return it != links_.end() && it->second->enqueue(std::move(item));
}

std::size_t Node::link_max_bundle_size(cla::LinkId link) const
{
    auto it = links_.find(link);
    return it == links_.end() ? 0 : it->second->max_bundle_size();
}

void Node::outcome(const core::BundleDescriptor& desc, dispatch::Outcome outcome, std::optional<core::DropReason> reason)
{
    switch (outcome) {
    case dispatch::Outcome::Forwarded:
        ++stats_.forwarded;
        record("forwarded " + describe(desc.bundle));
        break;
    case dispatch::Outcome::Stored:
        ++stats_.stored;
        record("stored " + describe(desc.bundle));
        break;
    case dispatch::Outcome::Dropped: {
        const auto r = reason.value_or(core::DropReason::NoRoute);
        ++stats_.dropped[static_cast<std::size_t>(r)];
        record("dropped " + describe(desc.bundle) + " " + core::to_string(r));
        log::info("node", "drop ", describe(desc.bundle), " ", core::to_string(r));
        break;
    }
    }
}

bool Node::send_request(const dispatch::DispatchRequest& request)
{
    if (!holder_alive(dispatch_holder_))
        return false;
    record("dispatch request " + std::to_string(request.request_id) + " for " + request.meta.destination.to_text());
    return dispatch_holder_->session.lock()->push(request);
}

// ---- FIB ----

void Node::on_fib_event(const fib::FibEvent& event)
{
    fib_events_.push_back(event);
    const auto& e = event.entry;
    record(std::string(event.kind == fib::FibEvent::Kind::Upserted ? "fib upsert " : "fib remove ") +
           e.node_id.to_text() + " " + e.cla_address.cla_name + (e.direct() ? " direct" : "") +
           (e.connected() ? " connected" : ""));
    notify_link_controllers(notify_for(event));
}

void Node::notify_link_controllers(const aap2::Message& m)
{
    for (auto it = link_controllers_.begin(); it != link_controllers_.end();) {
        auto s = it->second.lock();
        if (!s || !s->push(m))
            it = link_controllers_.erase(it);
        else
            ++it;
    }
}

// ---- Protocol backend ----

bool Node::holder_alive(const std::optional<Holder>& holder) const
{
    if (!holder)
        return false;
    auto s = holder->session.lock();
    return s && !s->closing() && !s->finished();
}

aap2::ConfigResult Node::configure(const std::shared_ptr<aap2::Session>& session, const aap2::ConnectionConfig& cfg)
{
    using Status = aap2::Response::Status;
    try {
        return call([&]() -> aap2::ConfigResult {
            const bool active = cfg.is_active_client;
            const std::string& agent = cfg.agent_id;
            if (!agent.empty()) {
                if (!bp::is_valid_agent_id(agent))
                    return {aap2::Response::error("invalid agent id")};
                try {
                    config_.node_id.with_demux(agent);
                } catch (const bp::EidError& e) {
                    return {aap2::Response::error(e.what())};
                }
                if (services_.count(agent))
                    return {{Status::Occupied, "endpoint reserved by the node"}};
            }
            if (cfg.auth & ~(aap2::auth::kLinkControl | aap2::auth::kDispatch))
                return {aap2::Response::error("unknown auth bits")};
            if (cfg.auth != 0) {
                const aap2::Bytes secret(config_.admin_secret.begin(), config_.admin_secret.end());
                if (secret.empty() || cfg.admin_secret != secret)
                    return {{Status::Unauthorized, "admin secret mismatch"}};
            }
            const bool dispatch = cfg.auth & aap2::auth::kDispatch;
            if (dispatch) {
                if (active)
                    return {aap2::Response::error("DISPATCH requires a passive connection")};
                if (holder_alive(dispatch_holder_))
                    return {{Status::Occupied, "another dispatcher module is attached"}};
            }
            if (!agent.empty()) {
                auto it = registrations_.find(agent);
                if (it != registrations_.end()) {
                    auto& reg = it->second;
                    if (!holder_alive(reg.active))
                        reg.active.reset();
                    if (!holder_alive(reg.passive)) {
                        reg.passive.reset();
                        reg.sink_ready = false;
                    }
                    if (!reg.active && !reg.passive)
                        registrations_.erase(it);
                }
                it = registrations_.find(agent);
                if (it != registrations_.end()) {
                    auto& reg = it->second;
                    if (reg.secret != cfg.shared_secret)
                        return {{Status::Occupied, "shared secret mismatch"}};
                    if ((active && reg.active) || (!active && reg.passive))
                        return {{Status::Occupied, "endpoint already registered in this direction"}};
                }
                auto& reg = registrations_[agent];
                reg.secret = cfg.shared_secret;
                (active ? reg.active : reg.passive) = Holder{session->id(), session};
            }
            if (dispatch) {
                // A previous holder that is going away must not keep requests.
                dispatcher_.set_bdm(nullptr);
                dispatch_holder_ = Holder{session->id(), session};
                dispatcher_.set_bdm(this);
                record("dispatcher module attached");
            }
            return {aap2::Response::ok(), cfg.auth};
        });
    } catch (const std::exception& e) {
        return {aap2::Response::error(e.what())};
    }
}

void Node::activated(const std::shared_ptr<aap2::Session>& session)
{
    const std::string agent = session->config().agent_id;
    try {
        call([&] {
            if (!agent.empty()) {
                auto it = registrations_.find(agent);
                if (it != registrations_.end() && it->second.passive && it->second.passive->id == session->id())
                    it->second.sink_ready = true;
            }
            if (session->granted() & aap2::auth::kLinkControl) {
                link_controllers_[session->id()] = session;
                for (const auto& e : fib_.entries())
                    session->push(notify_for({fib::FibEvent::Kind::Upserted, e}));
                // Marks the end of the snapshot.
                session->push(aap2::Keepalive{});
            }
        });
    } catch (const std::exception&) {
        return;
    }
    if (storage_ && !agent.empty()) {
        // Bundles kept for this endpoint while nobody was listening.
        storage::StorageCommand cmd;
        cmd.verb = storage::Verb::Recall;
        cmd.filter.destination_pattern = config_.node_id.with_demux(agent).to_text();
        try {
            const auto reply = storage_->execute(cmd);
            if (reply.count)
                log::info("node", "recalled ", reply.count, " stored bundles for ", agent);
        } catch (const std::exception& e) {
            log::warn("node", "recall for ", agent, " failed: ", e.what());
        }
    }
}

aap2::Response Node::send_adu(aap2::Session& session, const aap2::BundleAdu& adu)
{
    try {
        return call([&]() -> aap2::Response {
            const std::string& agent = session.config().agent_id;
            auto it = registrations_.find(agent);
            if (agent.empty() || it == registrations_.end() || !it->second.active ||
                it->second.active->id != session.id())
                return aap2::Response::error("no registration on this connection");
            if (adu.dst.is_none())
                return aap2::Response::error("destination dtn:none");

            const DtnTimeMs now = clock_->now();
            if (now > last_creation_) {
                last_creation_ = now;
                next_sequence_ = 0;
            }
            const bp::CreationTimestamp creation{last_creation_, next_sequence_++};
            bp::Bundle b = bp::make_bundle(adu.dst, config_.node_id.with_demux(agent), creation,
                                           adu.lifetime_ms.value_or(config_.default_lifetime_ms), adu.payload,
                                           config_.crc);
            if (adu.is_bibe)
                b.proc_flags |= bp::bundle_flags::kAdminRecord;
            if (creation.dtn_time_ms == 0)
                bp::set_bundle_age_ms(b, 0);
            ingest({std::move(b), core::Origin::Agent, "session " + std::to_string(session.id()), now, false},
                   cla::Arrival::FromLocalCla);
            return aap2::Response::ok("creation=" + std::to_string(creation.dtn_time_ms) + "." +
                                      std::to_string(creation.sequence_number));
        });
    } catch (const std::exception& e) {
        return aap2::Response::error(e.what());
    }
}

aap2::Response Node::link_request(aap2::Session&, const aap2::Link& link)
{
    cla::ClaAddress address;
    try {
        address = registry_.parse_for_use(link.cla_address);
    } catch (const cla::ClaError& e) {
        return aap2::Response::error(e.what());
    }
    const bp::EndpointId node = link.node_id.node_id();
    try {
        if (link.op == aap2::Link::Op::Down) {
            call([&] {
                fib_.remove(node, address);
                if (fib_.has_entries_for(address))
                    return;
                auto it = link_by_address_.find(address);
                if (it != link_by_address_.end() && it->second != storage_link_)
                    close_link(it->second);
            });
            return aap2::Response::ok();
        }

        const bool have = call([&] { return link_by_address_.count(address) > 0; });
        std::shared_ptr<std::unique_ptr<cla::LinkTransport>> transport;
        if (!have) {
            try {
                // Connecting may block; it must not happen on the loop.
                transport = std::make_shared<std::unique_ptr<cla::LinkTransport>>(
                    registry_.resolve(address.cla_name)->open(address.detail));
            } catch (const cla::ClaError& e) {
                return aap2::Response::error(std::string(cla::to_string(e.kind())) + ": " + e.what());
            }
        }
        call([&] {
            if (transport) {
                if (link_by_address_.count(address))
                    (*transport)->shutdown();
                else
                    install_link(address, std::move(*transport));
            }
            fib_.upsert(node, address, link.direct ? fib::flags::kDirect : 0);
        });
        return aap2::Response::ok();
    } catch (const std::exception& e) {
        return aap2::Response::error(e.what());
    }
}

void Node::dispatch_response(aap2::Session& session, const aap2::DispatchResponse& response)
{
    const aap2::SessionId id = session.id();
    post([this, id, response] {
        if (!dispatch_holder_ || dispatch_holder_->id != id)
            return;
        record("dispatch response " + std::to_string(response.request_id) + " " +
               dispatch::to_string(response.decision.action));
        dispatcher_.on_response(response.request_id, response.decision);
    });
}

void Node::closed(aap2::Session& session)
{
    const aap2::SessionId id = session.id();
    try {
        call([&] {
            for (auto it = registrations_.begin(); it != registrations_.end();) {
                auto& reg = it->second;
                if (reg.active && reg.active->id == id)
                    reg.active.reset();
                if (reg.passive && reg.passive->id == id) {
                    reg.passive.reset();
                    reg.sink_ready = false;
                }
                if (!reg.active && !reg.passive)
                    it = registrations_.erase(it);
                else
                    ++it;
            }
            if (dispatch_holder_ && dispatch_holder_->id == id) {
                dispatch_holder_.reset();
                dispatcher_.set_bdm(nullptr);
                record("dispatcher module detached");
            }
            link_controllers_.erase(id);
        });
    } catch (const std::exception&) {
    }
}

} // namespace bpmux::bpa
