#pragma once

// Daemon configuration, read from JSON. docs/config.md has the schema.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bpmux/bp/bundle.hpp"

namespace bpmux::bpa {

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& what)
        : std::runtime_error(key + ": " + what), key_(std::move(key))
    {
    }
    /// JSON path of the offending key, e.g. "clas[1].listen".
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct MtcpConfig {
    std::string listen = "127.0.0.1:4556";
    bool accept = true;
    std::size_t max_bundle_size = 0;
};

struct LoopbackConfig {
    std::string instance;
    std::size_t max_bundle_size = 0;
    std::uint64_t delay_ms = 0;
    double drop_probability = 0.0;
    std::uint64_t seed = 1;
};

struct BibeConfig {
    std::string endpoint = "bibe";
    std::uint64_t outer_lifetime_ms = 24ull * 3600 * 1000;
    std::size_t max_outer_size = 0;
};

struct StorageConfig {
    std::filesystem::path path;
    std::uint64_t quota_bytes = 64ull * 1024 * 1024;
    std::string endpoint = "sqa";
    std::uint64_t sweep_interval_ms = 10000;
};

struct Aap2Config {
    /// Empty disables the listener.
    std::string tcp = "127.0.0.1:4244";
    std::string socket;
    std::uint64_t keepalive_timeout_ms = 30000;
    std::size_t max_outbound = 64;
};

struct NodeConfig {
    bp::EndpointId node_id;
    std::optional<MtcpConfig> mtcp;
    std::vector<LoopbackConfig> loopback;
    std::optional<BibeConfig> bibe;
    std::optional<StorageConfig> storage;
    std::string admin_secret;
    Aap2Config aap2;
    std::uint64_t bdm_timeout_ms = 2000;
    bool dispatch_cache = true;
    std::size_t link_queue_capacity = 256;
    bp::CrcType crc = bp::CrcType::Crc16X25;
    std::uint64_t default_lifetime_ms = 24ull * 3600 * 1000;

    /// Throws ConfigError.
    static NodeConfig from_json_text(const std::string& text);
    static NodeConfig load(const std::filesystem::path& path);
};

} // namespace bpmux::bpa
