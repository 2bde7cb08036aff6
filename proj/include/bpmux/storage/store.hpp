#pragma once

// On-disk bundle store. One file per bundle at <dir>/<id[0:2]>/<id>.bp7
// holding exactly the serialized bundle; the id is the SHA-256 of those
// bytes. The in-memory index is rebuilt by scanning the directory. The
// file's mtime carries the DTN time the bundle was stored.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bpmux/bp/bundle.hpp"

namespace bpmux::storage {

using Bytes = std::vector<std::uint8_t>;

class StorageError : public std::runtime_error {
public:
    enum class Kind { StorageFull, IoFailure, MalformedCommand };

    StorageError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct RecordMeta {
    std::string storage_id;
    bp::EndpointId destination;
    bp::EndpointId source;
    bp::CreationTimestamp creation;
    std::uint64_t lifetime_ms = 0;
    DtnTimeMs stored_at = 0;
    std::uint64_t size = 0;
    /// Derived from the bundle; used by the expiry sweep.
    DtnTimeMs expires_at = 0;

    friend bool operator==(const RecordMeta&, const RecordMeta&) = default;
};

/// Matches `text` against `pattern`, where '*' stands for any run of characters.
bool glob_match(std::string_view pattern, std::string_view text);

struct BundleFilter {
    std::optional<std::string> destination_pattern;
    std::optional<bp::EndpointId> source;
    std::optional<DtnTimeMs> creation_after;
    std::optional<DtnTimeMs> creation_before;
    std::optional<std::uint64_t> limit;

    /// Ignores `limit`, which applies to a result set.
    bool matches(const RecordMeta& meta) const;

    friend bool operator==(const BundleFilter&, const BundleFilter&) = default;
};

std::string content_id(std::span<const std::uint8_t> serialized);

class Store {
public:
    static constexpr std::uint64_t kDefaultQuota = 64ull * 1024 * 1024;

    /// Creates the directory if needed, deletes leftover temp files and
    /// indexes every file that decodes.
    Store(std::filesystem::path dir, std::uint64_t quota = kDefaultQuota);

    /// Durably stores the bundle and returns its id. Storing identical bytes
    /// again is a no-op. Throws StorageError(StorageFull | IoFailure).
    std::string put(const bp::Bundle& bundle, DtnTimeMs stored_at);
    std::string put_serialized(std::span<const std::uint8_t> serialized, DtnTimeMs stored_at);

    /// Matching records ordered by (stored_at, id), truncated to the limit.
    std::vector<RecordMeta> query(const BundleFilter& filter) const;
    std::size_t remove(const BundleFilter& filter);
    bool remove_id(const std::string& id);
    Bytes load(const std::string& id) const;
    std::optional<RecordMeta> find(const std::string& id) const;

    /// Removes every bundle whose expiry time is <= now.
    std::size_t expire_sweep(DtnTimeMs now);

    std::size_t count() const { return index_.size(); }
    std::uint64_t bytes_used() const { return used_; }
    std::uint64_t quota() const { return quota_; }
    const std::filesystem::path& dir() const { return dir_; }
    std::filesystem::path path_for(const std::string& id) const;

    /// Test hook: write and sync the temp file, then stop as if the process
    /// died before the rename.
    void write_temp_only(std::span<const std::uint8_t> serialized);

private:
    void scan();
    std::filesystem::path temp_path_for(const std::string& id) const;

    std::filesystem::path dir_;
    std::uint64_t quota_;
    std::uint64_t used_ = 0;
    std::map<std::string, RecordMeta> index_;
};

RecordMeta meta_of(const bp::Bundle& bundle, const std::string& id, std::uint64_t size, DtnTimeMs stored_at);

} // namespace bpmux::storage
