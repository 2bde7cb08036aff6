#pragma once

// Storage commands travel as bundle payloads addressed to the storage
// endpoint; replies come back as bundles to the command's source.
//
//   command: {0: verb, 1: {0: dest pattern, 1: source, 2: after, 3: before,
//             4: limit}, 2: delete_after}
//   reply:   {0: status, 1: [record...] or count, 2: error text}
//   record:  {0: id, 1: dest, 2: source, 3: [time, seq], 4: lifetime,
//             5: stored_at, 6: size}

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bpmux/storage/store.hpp"

namespace bpmux::storage {

enum class Verb : std::uint8_t { Query = 0, Delete = 1, Recall = 2 };

struct StorageCommand {
    Verb verb = Verb::Query;
    BundleFilter filter;
    bool delete_after = true;

    friend bool operator==(const StorageCommand&, const StorageCommand&) = default;
};

struct CommandReply {
    enum class Status : std::uint8_t { Ok = 0, Error = 1 };

    Status status = Status::Ok;
    /// QUERY only.
    std::vector<RecordMeta> records;
    /// DELETE and RECALL.
    std::uint64_t count = 0;
    bool is_query = false;
    std::string error;

    friend bool operator==(const CommandReply&, const CommandReply&) = default;
};

Bytes encode_command(const StorageCommand& cmd);
/// Throws StorageError(MalformedCommand).
StorageCommand decode_command(std::span<const std::uint8_t> payload);

Bytes encode_reply(const CommandReply& reply);
/// Throws StorageError(MalformedCommand).
CommandReply decode_reply(std::span<const std::uint8_t> payload);

} // namespace bpmux::storage
