#include "bpmux/bpa/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bpmux::bpa {

using nlohmann::json;

namespace {

// Typed accessors that report the JSON path of whatever is wrong.
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object())
            throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
    bool has(const std::string& k) const { return j_.contains(k); }
    const json& at(const std::string& k) const { return j_.at(k); }

    std::string str(const std::string& k, std::optional<std::string> def = std::nullopt) const
    {
        if (!has(k)) {
            if (def)
                return *def;
            throw ConfigError(key(k), "missing");
        }
        if (!j_[k].is_string())
            throw ConfigError(key(k), "expected a string");
        return j_[k].get<std::string>();
    }

    std::uint64_t uint(const std::string& k, std::uint64_t def) const
    {
        if (!has(k))
            return def;
        if (!j_[k].is_number_unsigned())
            throw ConfigError(key(k), "expected a non-negative integer");
        return j_[k].get<std::uint64_t>();
    }

    bool boolean(const std::string& k, bool def) const
    {
        if (!has(k))
            return def;
        if (!j_[k].is_boolean())
            throw ConfigError(key(k), "expected true or false");
        return j_[k].get<bool>();
    }

    double number(const std::string& k, double def) const
    {
        if (!has(k))
            return def;
        if (!j_[k].is_number())
            throw ConfigError(key(k), "expected a number");
        return j_[k].get<double>();
    }

    void only(std::initializer_list<const char*> allowed) const
    {
        const std::set<std::string> ok(allowed.begin(), allowed.end());
        for (const auto& [k, v] : j_.items())
            if (!ok.count(k))
                throw ConfigError(key(k), "unknown key");
    }

private:
    const json& j_;
    std::string path_;
};

} // namespace

NodeConfig NodeConfig::from_json_text(const std::string& text)
{
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
    }
    const Obj top(root, "");
    top.only({"node_id", "clas", "storage", "admin_secret", "aap2", "dispatch", "link_queue_capacity", "crc",
              "default_lifetime_ms"});

    NodeConfig cfg;
    try {
        cfg.node_id = bp::EndpointId::parse_node_id(top.str("node_id"));
    } catch (const bp::EidError& e) {
        throw ConfigError("node_id", e.what());
    }
    cfg.admin_secret = top.str("admin_secret", "");
    cfg.link_queue_capacity = top.uint("link_queue_capacity", cfg.link_queue_capacity);
    if (cfg.link_queue_capacity == 0)
        throw ConfigError("link_queue_capacity", "must be at least 1");
    cfg.default_lifetime_ms = top.uint("default_lifetime_ms", cfg.default_lifetime_ms);
    const std::string crc = top.str("crc", "crc16");
    if (crc == "none")
        cfg.crc = bp::CrcType::None;
    else if (crc == "crc16")
        cfg.crc = bp::CrcType::Crc16X25;
    else if (crc == "crc32c")
        cfg.crc = bp::CrcType::Crc32C;
    else
        throw ConfigError("crc", "expected none, crc16 or crc32c");

    if (top.has("clas")) {
        const json& clas = top.at("clas");
        if (!clas.is_array())
            throw ConfigError("clas", "expected an array");
        std::set<std::string> instances;
        for (std::size_t i = 0; i < clas.size(); ++i) {
            const Obj c(clas[i], "clas[" + std::to_string(i) + "]");
            const std::string type = c.str("type");
            if (type == "mtcp") {
                if (cfg.mtcp)
                    throw ConfigError(c.key("type"), "only one mtcp CLA is supported");
                c.only({"type", "listen", "accept", "max_bundle_size"});
                MtcpConfig m;
                m.listen = c.str("listen", m.listen);
                m.accept = c.boolean("accept", m.accept);
                m.max_bundle_size = c.uint("max_bundle_size", 0);
                cfg.mtcp = m;
            } else if (type == "loopback") {
                c.only({"type", "instance", "max_bundle_size", "delay_ms", "drop_probability", "seed"});
                LoopbackConfig l;
                l.instance = c.str("instance");
                if (!instances.insert(l.instance).second)
                    throw ConfigError(c.key("instance"), "duplicate loopback instance");
                l.max_bundle_size = c.uint("max_bundle_size", 0);
                l.delay_ms = c.uint("delay_ms", 0);
                l.drop_probability = c.number("drop_probability", 0.0);
                if (l.drop_probability < 0.0 || l.drop_probability > 1.0)
                    throw ConfigError(c.key("drop_probability"), "must be within [0, 1]");
                l.seed = c.uint("seed", 1);
                if (!cfg.loopback.empty())
                    throw ConfigError(c.key("type"), "only one loopback CLA is supported");
                cfg.loopback.push_back(l);
            } else if (type == "bibe") {
                if (cfg.bibe)
                    throw ConfigError(c.key("type"), "only one bibe CLA is supported");
                c.only({"type", "endpoint", "outer_lifetime_ms", "max_outer_size"});
                BibeConfig b;
                b.endpoint = c.str("endpoint", b.endpoint);
                b.outer_lifetime_ms = c.uint("outer_lifetime_ms", b.outer_lifetime_ms);
                b.max_outer_size = c.uint("max_outer_size", 0);
                cfg.bibe = b;
            } else {
                throw ConfigError(c.key("type"), "unknown CLA type '" + type + "'");
            }
        }
    }

    if (top.has("storage")) {
        const Obj s(top.at("storage"), "storage");
        s.only({"path", "quota_bytes", "endpoint", "sweep_interval_ms"});
        StorageConfig sc;
        sc.path = s.str("path");
        sc.quota_bytes = s.uint("quota_bytes", sc.quota_bytes);
        sc.endpoint = s.str("endpoint", sc.endpoint);
        sc.sweep_interval_ms = s.uint("sweep_interval_ms", sc.sweep_interval_ms);
        cfg.storage = sc;
    }

    if (top.has("aap2")) {
        const Obj a(top.at("aap2"), "aap2");
        a.only({"tcp", "socket", "keepalive_timeout_ms", "max_outbound"});
        cfg.aap2.tcp = a.str("tcp", cfg.aap2.tcp);
        cfg.aap2.socket = a.str("socket", "");
        cfg.aap2.keepalive_timeout_ms = a.uint("keepalive_timeout_ms", cfg.aap2.keepalive_timeout_ms);
        if (cfg.aap2.keepalive_timeout_ms < 2)
            throw ConfigError("aap2.keepalive_timeout_ms", "too small");
        cfg.aap2.max_outbound = a.uint("max_outbound", cfg.aap2.max_outbound);
        if (cfg.aap2.max_outbound == 0)
            throw ConfigError("aap2.max_outbound", "must be at least 1");
    }

    if (top.has("dispatch")) {
        const Obj d(top.at("dispatch"), "dispatch");
        d.only({"bdm_timeout_ms", "cache"});
        cfg.bdm_timeout_ms = d.uint("bdm_timeout_ms", cfg.bdm_timeout_ms);
        cfg.dispatch_cache = d.boolean("cache", cfg.dispatch_cache);
    }

    const bool ipn = cfg.node_id.scheme == bp::EndpointId::Scheme::Ipn;
    auto check_demux = [&](const std::string& key, const std::string& demux) {
        if (!bp::is_valid_agent_id(demux))
            throw ConfigError(key, "invalid endpoint '" + demux + "'");
        if (ipn && demux.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError(key, "ipn nodes need a numeric service number");
    };
    if (cfg.storage)
        check_demux("storage.endpoint", cfg.storage->endpoint);
    if (cfg.bibe)
        check_demux("clas.bibe.endpoint", cfg.bibe->endpoint);
    if (cfg.storage && cfg.bibe && cfg.storage->endpoint == cfg.bibe->endpoint)
        throw ConfigError("storage.endpoint", "collides with the bibe endpoint");
    return cfg;
}

NodeConfig NodeConfig::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("<file>", "cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

} // namespace bpmux::bpa
