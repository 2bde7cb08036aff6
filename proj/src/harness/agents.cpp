#include "bpmux/common/log.hpp"
#include "bpmux/harness/harness.hpp"
#include "bpmux/storage/store.hpp"

namespace bpmux::harness {

using namespace std::chrono_literals;

namespace {

aap2::Bytes bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

} // namespace

ScriptedBdm::ScriptedBdm(std::string target, std::string admin_secret, std::vector<Route> routes,
                         dispatch::DispatchDecision fallback)
    : target_(std::move(target)), admin_secret_(std::move(admin_secret)), routes_(std::move(routes)),
      fallback_(std::move(fallback))
{
}

ScriptedBdm::~ScriptedBdm() { stop(); }

dispatch::DispatchDecision ScriptedBdm::decide(const std::vector<Route>& routes,
                                               const dispatch::DispatchDecision& fallback,
                                               const aap2::DispatchRequest& request)
{
    const std::string dest = request.meta.destination.to_text();
    for (const auto& r : routes)
        if (storage::glob_match(r.pattern, dest))
            return r.decision;
    return fallback;
}

void ScriptedBdm::start()
{
    client_ = std::make_unique<aap2::Client>(aap2::Client::connect(target_));
    const auto reply = client_->configure({false, "", {}, aap2::auth::kDispatch, bytes_of(admin_secret_)});
    if (reply.status != aap2::Response::Status::Ok)
        throw ScenarioError(std::string("dispatcher registration refused: ") + aap2::to_string(reply.status) + " " +
                            reply.detail);
    thread_ = std::thread([this] { run(); });
}

void ScriptedBdm::stop()
{
    stop_ = true;
    if (thread_.joinable())
        thread_.join();
    if (client_)
        client_->close();
}

std::vector<aap2::DispatchRequest> ScriptedBdm::request_log() const
{
    std::lock_guard lock(mutex_);
    return log_;
}

void ScriptedBdm::run()
{
    try {
        while (!stop_) {
            auto m = client_->receive(50ms);
            if (!m)
                continue;
            if (auto* req = std::get_if<aap2::DispatchRequest>(&*m)) {
                {
                    std::lock_guard lock(mutex_);
                    log_.push_back(*req);
                }
                ++requests_;
                client_->send(aap2::DispatchResponse{req->request_id, decide(routes_, fallback_, *req)});
            } else {
                client_->send(aap2::Response::ok());
            }
        }
    } catch (const std::exception& e) {
        if (!stop_)
            log::warn("harness", "dispatcher module connection ended: ", e.what());
    }
}

Sink::Sink(const std::string& target, const std::string& agent, const std::string& secret)
{
    client_ = std::make_unique<aap2::Client>(aap2::Client::connect(target));
    const auto reply = client_->configure({false, agent, bytes_of(secret), 0, {}});
    if (reply.status != aap2::Response::Status::Ok)
        throw ScenarioError("registration of '" + agent + "' refused: " + aap2::to_string(reply.status) + " " +
                            reply.detail);
    thread_ = std::thread([this] { run(); });
}

Sink::~Sink() { stop(); }

void Sink::stop()
{
    stop_ = true;
    if (thread_.joinable())
        thread_.join();
    if (client_)
        client_->close();
}

std::vector<aap2::BundleAdu> Sink::received() const
{
    std::lock_guard lock(mutex_);
    return received_;
}

std::size_t Sink::count() const
{
    std::lock_guard lock(mutex_);
    return received_.size();
}

void Sink::run()
{
    try {
        while (!stop_) {
            auto m = client_->receive(50ms);
            if (!m)
                continue;
            if (auto* adu = std::get_if<aap2::BundleAdu>(&*m)) {
                std::lock_guard lock(mutex_);
                received_.push_back(std::move(*adu));
            }
            client_->send(aap2::Response::ok());
        }
    } catch (const std::exception& e) {
        if (!stop_)
            log::debug("harness", "sink connection ended: ", e.what());
    }
    done_ = true;
}

} // namespace bpmux::harness
