#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <queue>
#include <string>
#include <thread>
#include <vector>

#include "buffer.hpp"
#include "types.hpp"

namespace loom {

/// One payload in flight. `tag` uniquely identifies (object, revision)
/// program-wide; control traffic sets the top tag bit.
struct message {
    rank_id src = 0;
    rank_id dst = 0;
    std::uint64_t tag = 0;
    buffer_ptr payload;

    std::uint64_t length() const { return payload ? payload->size() : 0; }
};

namespace detail {
inline std::uint64_t payload_checksum(const buffer_ptr& p) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    if (p)
        for (std::byte b : p->bytes) {
            h ^= static_cast<std::uint64_t>(b);
            h *= 0x100000001b3ull;
        }
    return h;
}
} // namespace detail

/// Reliable, asynchronous rank-to-rank byte transport. Delivery is
/// per-(sender, receiver, tag) unambiguous; a failure tears the whole
/// run down rather than being retried.
class fabric {
public:
    using delivery_fn = std::function<void(rank_id src, std::uint64_t tag, buffer_ptr payload)>;

    virtual ~fabric() = default;

    virtual rank_id nranks() const = 0;
    virtual void attach(rank_id self, delivery_fn handler) = 0;
    virtual void detach(rank_id self) = 0;
    /// Asynchronous; returns as soon as the message is queued. Kernel
    /// workers are never blocked behind the wire.
    virtual void send(rank_id src, rank_id dst, std::uint64_t tag, buffer_ptr payload) = 0;
    /// Blocks until everything queued by `self` has been handed to the
    /// wire (socket mode) or the delivery queue (simulated mode).
    virtual void flush(rank_id self) = 0;

    void post_abort(const std::string& reason) {
        std::lock_guard lk(abort_mu_);
        if (!aborted_.exchange(true)) abort_reason_ = reason;
    }
    bool aborted() const { return aborted_.load(); }
    std::string abort_reason() const {
        std::lock_guard lk(abort_mu_);
        return abort_reason_;
    }

    // --- transfer accounting (debug checks and tests) ---
    std::uint64_t send_count(std::uint64_t tag) const {
        std::lock_guard lk(stats_mu_);
        auto it = send_counts_.find(tag);
        return it == send_counts_.end() ? 0 : it->second;
    }
    std::uint64_t total_messages() const {
        std::lock_guard lk(stats_mu_);
        return total_messages_;
    }
    std::uint64_t total_bytes() const {
        std::lock_guard lk(stats_mu_);
        return total_bytes_;
    }
    /// FNV checksum of the last payload sent / delivered under `tag`;
    /// equal values mean bytes arrived exactly as sent.
    std::uint64_t sent_checksum(std::uint64_t tag) const {
        std::lock_guard lk(stats_mu_);
        auto it = sent_sum_.find(tag);
        return it == sent_sum_.end() ? 0 : it->second;
    }
    std::uint64_t received_checksum(std::uint64_t tag) const {
        std::lock_guard lk(stats_mu_);
        auto it = recv_sum_.find(tag);
        return it == recv_sum_.end() ? 0 : it->second;
    }

protected:
    void note_sent(const message& m) {
        if (m.tag & control_tag_bit) return; // stats cover payload traffic only
        std::lock_guard lk(stats_mu_);
        ++send_counts_[m.tag];
        ++total_messages_;
        total_bytes_ += m.length();
        sent_sum_[m.tag] = detail::payload_checksum(m.payload);
    }
    void note_received(const message& m) {
        if (m.tag & control_tag_bit) return;
        std::lock_guard lk(stats_mu_);
        recv_sum_[m.tag] = detail::payload_checksum(m.payload);
    }

private:
    std::atomic<bool> aborted_{false};
    mutable std::mutex abort_mu_;
    std::string abort_reason_;

    mutable std::mutex stats_mu_;
    std::map<std::uint64_t, std::uint64_t> send_counts_;
    std::map<std::uint64_t, std::uint64_t> sent_sum_;
    std::map<std::uint64_t, std::uint64_t> recv_sum_;
    std::uint64_t total_messages_ = 0;
    std::uint64_t total_bytes_ = 0;
};

/// All ranks live in one process; a delivery thread moves queued
/// messages to their destination handler after the injected latency.
/// Latency injection exists so computation/communication overlap can be
/// asserted without real hardware.
class simulated_fabric final : public fabric {
public:
    explicit simulated_fabric(rank_id nranks, double latency_ms = 0.0)
        : nranks_(nranks), latency_(latency_ms), handlers_(nranks), parked_(nranks) {
        deliverer_ = std::thread([this] { deliver_loop(); });
    }

    ~simulated_fabric() override {
        {
            std::lock_guard lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        deliverer_.join();
    }

    rank_id nranks() const override { return nranks_; }

    void attach(rank_id self, delivery_fn handler) override {
        {
            std::lock_guard lk(mu_);
            handlers_.at(self) = std::move(handler);
            // messages that raced ahead of this rank's startup
            for (auto& m : parked_.at(self)) queue_.push(item{clock::now(), seq_++, std::move(m)});
            parked_.at(self).clear();
        }
        cv_.notify_all();
    }

    void detach(rank_id self) override {
        std::lock_guard lk(mu_);
        handlers_.at(self) = nullptr;
        parked_.at(self).clear(); // anything still parked at teardown is stray
    }

    void send(rank_id src, rank_id dst, std::uint64_t tag, buffer_ptr payload) override {
        if (dst >= nranks_) fail(errc::bad_rank, "send to unknown rank " + std::to_string(dst));
        message m{src, dst, tag, std::move(payload)};
        note_sent(m);
        auto due = clock::now() + std::chrono::duration_cast<clock::duration>(
                                      std::chrono::duration<double, std::milli>(latency_));
        {
            std::lock_guard lk(mu_);
            queue_.push(item{due, seq_++, std::move(m)});
        }
        cv_.notify_all();
    }

    void flush(rank_id) override {
        // sends are handed over synchronously; nothing to wait for
    }

    /// Blocks until every queued message has been delivered.
    void drain() {
        std::unique_lock lk(mu_);
        drained_cv_.wait(lk, [this] { return queue_.empty() && !delivering_; });
    }

    double latency_ms() const { return latency_; }

private:
    using clock = std::chrono::steady_clock;

    struct item {
        clock::time_point due;
        std::uint64_t seq;
        message msg;

        bool operator>(const item& o) const {
            return due != o.due ? due > o.due : seq > o.seq;
        }
    };

    void deliver_loop() {
        std::unique_lock lk(mu_);
        for (;;) {
            if (stop_) return;
            if (queue_.empty()) {
                drained_cv_.notify_all();
                cv_.wait(lk, [this] { return stop_ || !queue_.empty(); });
                continue;
            }
            auto due = queue_.top().due;
            if (clock::now() < due) {
                cv_.wait_until(lk, due);
                continue;
            }
            message m = queue_.top().msg;
            queue_.pop();
            delivery_fn handler = handlers_.at(m.dst);
            if (!handler) {
                // destination not up yet: park until it attaches
                parked_.at(m.dst).push_back(std::move(m));
                continue;
            }
            delivering_ = true;
            lk.unlock();
            note_received(m);
            handler(m.src, m.tag, m.payload);
            lk.lock();
            delivering_ = false;
            if (queue_.empty()) drained_cv_.notify_all();
        }
    }

    rank_id nranks_;
    double latency_;
    std::vector<delivery_fn> handlers_;
    std::vector<std::vector<message>> parked_; // per destination, until it attaches

    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable drained_cv_;
    std::priority_queue<item, std::vector<item>, std::greater<item>> queue_;
    std::uint64_t seq_ = 0;
    bool stop_ = false;
    bool delivering_ = false;
    std::thread deliverer_;
};

} // namespace loom
