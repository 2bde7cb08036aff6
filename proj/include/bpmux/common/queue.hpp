#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <mutex>
#include <optional>
#include <vector>

namespace bpmux {

/// Multi-producer multi-consumer FIFO with an optional capacity bound.
/// A closed queue rejects pushes; pops drain what is left, then return nullopt.
template <typename T>
class MessageQueue {
public:
    static constexpr std::size_t kUnbounded = 0;

    explicit MessageQueue(std::size_t capacity = kUnbounded) : capacity_(capacity) {}

    MessageQueue(const MessageQueue&) = delete;
    MessageQueue& operator=(const MessageQueue&) = delete;

    bool try_push(T item)
    {
        {
            std::lock_guard lock(mutex_);
            if (closed_ || (capacity_ != kUnbounded && items_.size() >= capacity_))
                return false;
            items_.push_back(std::move(item));
        }
        not_empty_.notify_one();
        return true;
    }

    // Blocks while full. Returns false if the queue was closed.
    bool push(T item)
    {
        {
            std::unique_lock lock(mutex_);
            not_full_.wait(lock, [&] {
                return closed_ || capacity_ == kUnbounded || items_.size() < capacity_;
            });
            if (closed_)
                return false;
            items_.push_back(std::move(item));
        }
        not_empty_.notify_one();
        return true;
    }

    std::optional<T> pop()
    {
        std::unique_lock lock(mutex_);
        not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
        return take_locked();
    }

    template <typename Rep, typename Period>
    std::optional<T> pop_for(std::chrono::duration<Rep, Period> timeout)
    {
        std::unique_lock lock(mutex_);
        not_empty_.wait_for(lock, timeout, [&] { return closed_ || !items_.empty(); });
        return take_locked();
    }

    std::optional<T> try_pop()
    {
        std::lock_guard lock(mutex_);
        return take_locked();
    }

    std::vector<T> drain()
    {
        std::vector<T> out;
        {
            std::lock_guard lock(mutex_);
            out.reserve(items_.size());
            for (auto& item : items_)
                out.push_back(std::move(item));
            items_.clear();
        }
        not_full_.notify_all();
        return out;
    }

    void close()
    {
        {
            std::lock_guard lock(mutex_);
            closed_ = true;
        }
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    bool closed() const
    {
        std::lock_guard lock(mutex_);
        return closed_;
    }

    std::size_t size() const
    {
        std::lock_guard lock(mutex_);
        return items_.size();
    }

    std::size_t capacity() const { return capacity_; }

private:
    std::optional<T> take_locked()
    {
        if (items_.empty())
            return std::nullopt;
        T item = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return item;
    }

    const std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable not_empty_;
    std::condition_variable not_full_;
    std::deque<T> items_;
    bool closed_ = false;
};

} // namespace bpmux
