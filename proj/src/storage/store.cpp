#include "bpmux/storage/store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include <openssl/evp.h>

#include "bpmux/bp/codec.hpp"
#include "bpmux/common/log.hpp"

namespace fs = std::filesystem;

namespace bpmux::storage {

namespace {

constexpr std::uint64_t kDtnEpochUnixMs = kDtnEpochUnixSeconds * 1000;

[[noreturn]] void io_fail(const std::string& what)
{
    throw StorageError(StorageError::Kind::IoFailure, what + ": " + std::strerror(errno));
}

void write_file_durably(const fs::path& path, std::span<const std::uint8_t> data, DtnTimeMs mtime_dtn)
{
    int fd = ::open(path.c_str(), O_CREAT | O_WRONLY | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0)
        io_fail("open " + path.string());
    std::size_t done = 0;
    while (done < data.size()) {
        ssize_t n = ::write(fd, data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            ::close(fd);
            io_fail("write " + path.string());
        }
        done += static_cast<std::size_t>(n);
    }
    const std::uint64_t unix_ms = mtime_dtn + kDtnEpochUnixMs;
    struct timespec times[2];
    times[0].tv_sec = times[1].tv_sec = static_cast<time_t>(unix_ms / 1000);
    times[0].tv_nsec = times[1].tv_nsec = static_cast<long>((unix_ms % 1000) * 1000000);
    if (::futimens(fd, times) != 0 || ::fsync(fd) != 0) {
        ::close(fd);
        io_fail("sync " + path.string());
    }
    ::close(fd);
}

void sync_dir(const fs::path& dir)
{
    int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (fd >= 0) {
        ::fsync(fd);
        ::close(fd);
    }
}

DtnTimeMs mtime_as_dtn(const fs::path& path)
{
    struct stat st {};
    if (::stat(path.c_str(), &st) != 0)
        return 0;
    const std::uint64_t unix_ms =
        static_cast<std::uint64_t>(st.st_mtim.tv_sec) * 1000 + static_cast<std::uint64_t>(st.st_mtim.tv_nsec) / 1000000;
    return unix_ms > kDtnEpochUnixMs ? unix_ms - kDtnEpochUnixMs : 0;
}

Bytes read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw StorageError(StorageError::Kind::IoFailure, "cannot read " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace

bool glob_match(std::string_view pattern, std::string_view text)
{
    std::size_t p = 0, t = 0;
    std::size_t star = std::string_view::npos, resume = 0;
    while (t < text.size()) {
        if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            resume = t;
        } else if (p < pattern.size() && pattern[p] == text[t]) {
            ++p;
            ++t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++resume;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*')
        ++p;
    return p == pattern.size();
}

bool BundleFilter::matches(const RecordMeta& meta) const
{
    if (destination_pattern && !glob_match(*destination_pattern, meta.destination.to_text()))
        return false;
    if (source && *source != meta.source)
        return false;
    if (creation_after && !(meta.creation.dtn_time_ms > *creation_after))
        return false;
    if (creation_before && !(meta.creation.dtn_time_ms < *creation_before))
        return false;
    return true;
}

std::string content_id(std::span<const std::uint8_t> serialized)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(serialized.data(), serialized.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw StorageError(StorageError::Kind::IoFailure, "SHA-256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

RecordMeta meta_of(const bp::Bundle& bundle, const std::string& id, std::uint64_t size, DtnTimeMs stored_at)
{
    return {id,
            bundle.destination,
            bundle.source,
            bundle.creation,
            bundle.lifetime_ms,
            stored_at,
            size,
            bp::expiry_time(bundle, stored_at)};
}

Store::Store(fs::path dir, std::uint64_t quota) : dir_(std::move(dir)), quota_(quota)
{
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec)
        throw StorageError(StorageError::Kind::IoFailure, "cannot create " + dir_.string() + ": " + ec.message());
    scan();
}

fs::path Store::path_for(const std::string& id) const { return dir_ / id.substr(0, 2) / (id + ".bp7"); }

fs::path Store::temp_path_for(const std::string& id) const { return dir_ / id.substr(0, 2) / (id + ".tmp"); }

void Store::scan()
{
    for (const auto& entry : fs::recursive_directory_iterator(dir_)) {
        if (!entry.is_regular_file())
            continue;
        const auto& path = entry.path();
        if (path.extension() == ".tmp") {
            log::info("storage", "removing incomplete write ", path.string());
            std::error_code ec;
            fs::remove(path, ec);
            continue;
        }
        if (path.extension() != ".bp7")
            continue;
        try {
            const Bytes data = read_file(path);
            const std::string id = content_id(data);
            if (id != path.stem().string()) {
                log::warn("storage", "ignoring ", path.string(), ": content does not match its name");
                continue;
            }
            const bp::Bundle bundle = bp::decode_bundle(data);
            index_[id] = meta_of(bundle, id, data.size(), mtime_as_dtn(path));
            used_ += data.size();
        } catch (const std::exception& e) {
            log::warn("storage", "ignoring ", path.string(), ": ", e.what());
        }
    }
    log::info("storage", "indexed ", index_.size(), " bundles in ", dir_.string());
}

std::string Store::put(const bp::Bundle& bundle, DtnTimeMs stored_at)
{
    return put_serialized(bp::encode_bundle(bundle), stored_at);
}

std::string Store::put_serialized(std::span<const std::uint8_t> serialized, DtnTimeMs stored_at)
{
    const std::string id = content_id(serialized);
    if (index_.count(id))
        return id;
    if (used_ + serialized.size() > quota_)
        throw StorageError(StorageError::Kind::StorageFull,
                           "storage quota of " + std::to_string(quota_) + " bytes exceeded");
    const bp::Bundle bundle = bp::decode_bundle(serialized);

    const fs::path final_path = path_for(id);
    const fs::path temp_path = temp_path_for(id);
    std::error_code ec;
    fs::create_directories(final_path.parent_path(), ec);
    write_file_durably(temp_path, serialized, stored_at);
    if (::rename(temp_path.c_str(), final_path.c_str()) != 0)
        io_fail("rename " + temp_path.string());
    sync_dir(final_path.parent_path());

    index_[id] = meta_of(bundle, id, serialized.size(), stored_at);
    used_ += serialized.size();
    return id;
}

void Store::write_temp_only(std::span<const std::uint8_t> serialized)
{
    const std::string id = content_id(serialized);
    std::error_code ec;
    fs::create_directories(temp_path_for(id).parent_path(), ec);
    write_file_durably(temp_path_for(id), serialized, 0);
}

std::vector<RecordMeta> Store::query(const BundleFilter& filter) const
{
    std::vector<RecordMeta> out;
    for (const auto& [id, meta] : index_)
        if (filter.matches(meta))
            out.push_back(meta);
    std::sort(out.begin(), out.end(), [](const RecordMeta& a, const RecordMeta& b) {
        return std::tie(a.stored_at, a.storage_id) < std::tie(b.stored_at, b.storage_id);
    });
    if (filter.limit && out.size() > *filter.limit)
        out.resize(*filter.limit);
    return out;
}

bool Store::remove_id(const std::string& id)
{
    auto it = index_.find(id);
    if (it == index_.end())
        return false;
    std::error_code ec;
    fs::remove(path_for(id), ec);
    if (ec)
        log::warn("storage", "cannot remove ", path_for(id).string(), ": ", ec.message());
    used_ -= it->second.size;
    index_.erase(it);
    return true;
}

std::size_t Store::remove(const BundleFilter& filter)
{
    std::size_t n = 0;
    for (const auto& meta : query(filter))
        n += remove_id(meta.storage_id) ? 1 : 0;
    return n;
}

Bytes Store::load(const std::string& id) const
{
    if (!index_.count(id))
        throw StorageError(StorageError::Kind::IoFailure, "no stored bundle " + id);
    return read_file(path_for(id));
}

std::optional<RecordMeta> Store::find(const std::string& id) const
{
    auto it = index_.find(id);
    if (it == index_.end())
        return std::nullopt;
    return it->second;
}

std::size_t Store::expire_sweep(DtnTimeMs now)
{
    std::vector<std::string> dead;
    for (const auto& [id, meta] : index_)
        if (meta.expires_at <= now)
            dead.push_back(id);
    for (const auto& id : dead)
        remove_id(id);
    if (!dead.empty())
        log::info("storage", "expired ", dead.size(), " stored bundles");
    return dead.size();
}

} // namespace bpmux::storage
