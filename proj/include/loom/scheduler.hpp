#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <queue>
#include <sstream>
#include <thread>
#include <vector>

#include "dag.hpp"
#include "kernel.hpp"
#include "store.hpp"
#include "types.hpp"

namespace loom {

struct exec_report {
    rank_id rank = 0;
    std::uint64_t ops_run = 0;
    std::uint64_t bytes_copied = 0;
    double wall_ms = 0.0;

    std::string to_json() const {
        std::ostringstream os;
        os << "{\"rank\":" << rank << ",\"ops_run\":" << ops_run << ",\"bytes_copied\":"
           << bytes_copied << ",\"wall_ms\":" << wall_ms << "}";
        return os.str();
    }
};

/// Executes the local slice of the DAG on a pool of W workers.
///
/// Ops move through blocked -> ready -> claimed -> done. The claim is a
/// single compare-and-swap, so an op runs exactly once no matter how
/// many workers race for it; a worker whose claim fails simply moves on.
/// Readiness is dependency counting: each op holds the number of read
/// revisions not yet present on this rank, decremented as generators
/// complete locally or payloads arrive from other ranks.
class executor {
public:
    using send_fn = std::function<void(revision&, rank_id dst)>;

    executor(object_store& store, dag& graph, rank_id self, unsigned workers, send_fn send = {})
        : store_(store), dag_(graph), self_(self), send_(std::move(send)) {
        for (unsigned i = 0; i < workers; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~executor() {
        {
            std::lock_guard lk(mu_);
            stop_ = true;
        }
        work_cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    executor(const executor&) = delete;
    executor& operator=(const executor&) = delete;

    /// Registers the ops of one epoch: local ones get dependency counts
    /// and enter the ready queue as their inputs become present; sends
    /// already satisfiable are issued immediately.
    void begin_epoch(op_id first, op_id last, std::size_t expected_inbound,
                     std::size_t expected_outbound) {
        std::lock_guard lk(mu_);
        inbound_remaining_ += static_cast<std::int64_t>(expected_inbound);
        outbound_remaining_ += static_cast<std::int64_t>(expected_outbound);
        while (ops_.size() < last) ops_.emplace_back();
        for (op_id id = first; id < last; ++id) {
            const auto& rec = dag_.op(id);
            auto& ox = ops_[id];
            if (rec.placement != self_) {
                ox.state.store(op_done, std::memory_order_relaxed);
                continue;
            }
            ++local_remaining_;
            std::uint32_t missing = 0;
            for (const auto& a : rec.args) {
                if (a.prior_unset) continue;
                auto& rev = store_.rev(a.object, a.read_index);
                if (!rev.locally_present()) {
                    rev.waiters.push_back(id);
                    ++missing;
                }
            }
            ox.missing.store(missing, std::memory_order_relaxed);
            if (missing == 0) {
                ox.state.store(op_ready, std::memory_order_relaxed);
                ready_.push(id);
            }
        }
        // revisions already present may have freshly planned edges
        for (op_id id = first; id < last; ++id)
            for (const auto& a : dag_.op(id).args) {
                if (a.prior_unset) continue;
                pump_sends_locked(store_.rev(a.object, a.read_index));
            }
        epoch_started_ = clock::now();
        work_cv_.notify_all();
    }

    /// Payload for a revision this rank consumes or forwards arrived.
    void on_arrival(revision& rev, buffer_ptr payload) {
        std::lock_guard lk(mu_);
        if (rev.state.load() == rev_state::pending) store_.mark_ready(rev, std::move(payload));
        --inbound_remaining_;
        cascade_present_locked(rev);
        check_done_locked();
    }

    /// Blocks the recording flow until every local op of the epoch ran,
    /// every expected arrival landed, and every planned send was handed
    /// to the fabric. Throws if a kernel failed, the DAG stalled, or a
    /// peer aborted the run.
    void wait_epoch(const std::function<bool()>& abort_poll = {}) {
        std::unique_lock lk(mu_);
        for (;;) {
            if (failed_) {
                auto err = first_error_;
                lk.unlock();
                std::rethrow_exception(err);
            }
            if (epoch_complete_locked()) break;
            detect_stall_locked();
            if (failed_) continue;
            sync_cv_.wait_for(lk, std::chrono::milliseconds(100));
            if (abort_poll && abort_poll()) {
                lk.unlock();
                fail(errc::transport_down, "run aborted by a peer rank");
            }
        }
        wall_ms_ += std::chrono::duration<double, std::milli>(clock::now() - epoch_started_).count();
    }

    /// Injects a failure from outside (peer abort, transport loss).
    void fail_with(std::exception_ptr err) {
        {
            std::lock_guard lk(mu_);
            if (!failed_) {
                failed_ = true;
                first_error_ = std::move(err);
            }
        }
        work_cv_.notify_all();
        sync_cv_.notify_all();
    }

    exec_report report() const {
        exec_report r;
        r.rank = self_;
        r.ops_run = ops_run_.load();
        r.bytes_copied = bytes_copied_.load();
        r.wall_ms = wall_ms_;
        return r;
    }

    // --- introspection & single-stepping (tests, W = 0 mode) ---

    std::size_t ready_count() {
        std::lock_guard lk(mu_);
        return ready_.size();
    }

    std::vector<op_id> ready_snapshot() {
        std::lock_guard lk(mu_);
        auto copy = ready_;
        std::vector<op_id> ids;
        while (!copy.empty()) {
            ids.push_back(copy.top());
            copy.pop();
        }
        return ids;
    }

    std::uint32_t missing_inputs(op_id id) {
        std::lock_guard lk(mu_);
        return ops_.at(id).missing.load();
    }

    bool try_claim(op_id id) {
        std::uint8_t expected = op_ready;
        return ops_.at(id).state.compare_exchange_strong(expected, op_claimed);
    }

    /// Runs exactly one ready op on the calling thread; returns false if
    /// none was ready.
    bool step_one() {
        op_id id;
        {
            std::lock_guard lk(mu_);
            if (ready_.empty()) return false;
            id = ready_.top();
            ready_.pop();
            in_flight_.fetch_add(1);
        }
        if (!try_claim(id)) {
            in_flight_.fetch_sub(1);
            return false;
        }
        run_op(id);
        return true;
    }

    std::size_t in_flight() const { return in_flight_.load(); }

    /// Prints every incomplete local op and the state of its inputs to
    /// stderr; for debugging stuck runs from a debugger or signal handler.
    void debug_dump() {
        std::lock_guard lk(mu_);
        std::fprintf(stderr, "rank %u: local=%lld inbound=%lld outbound=%lld ready=%zu\n",
                     self_, (long long)local_remaining_, (long long)inbound_remaining_,
                     (long long)outbound_remaining_, ready_.size());
        for (op_id id = 0; id < ops_.size(); ++id) {
            const auto& rec = dag_.op(id);
            if (rec.placement != self_) continue;
            auto st = ops_[id].state.load();
            if (st == op_done) continue;
            std::fprintf(stderr, "  op %llu '%s' state=%u missing=%u\n", (unsigned long long)id,
                         rec.kernel->name.c_str(), st, ops_[id].missing.load());
            for (const auto& a : rec.args) {
                if (a.prior_unset) continue;
                const auto& rev = store_.rev(a.object, a.read_index);
                std::fprintf(stderr,
                             "    reads obj%llu:v%llu state=%u owners=%zu out=%zu sends=%u\n",
                             (unsigned long long)a.object, (unsigned long long)a.read_index,
                             (unsigned)rev.state.load(), rev.owners.size(), rev.planned_out.size(),
                             rev.pending_consumers.load());
            }
        }
    }

private:
    using clock = std::chrono::steady_clock;

    static constexpr std::uint8_t op_blocked = 0;
    static constexpr std::uint8_t op_ready = 1;
    static constexpr std::uint8_t op_claimed = 2;
    static constexpr std::uint8_t op_done = 3;

    struct op_exec {
        std::atomic<std::uint8_t> state{op_blocked};
        std::atomic<std::uint32_t> missing{0};
    };

    void worker_loop() {
        std::unique_lock lk(mu_);
        for (;;) {
            if (stop_) return;
            if (failed_ || ready_.empty()) {
                work_cv_.wait(lk, [this] { return stop_ || (!failed_ && !ready_.empty()); });
                continue;
            }
            op_id id = ready_.top();
            ready_.pop();
            in_flight_.fetch_add(1); // visible before the queue looks empty
            lk.unlock();
            if (try_claim(id))
                run_op(id); // a failed claim just moves on
            else
                in_flight_.fetch_sub(1);
            lk.lock();
        }
    }

    /// Executes one claimed op; decrements in_flight_ when done.
    void run_op(op_id id) {
        const auto& rec = dag_.op(id);
        std::vector<kernel_args::slot> slots;
        try {
            slots = resolve_args(rec);
            kernel_args args(std::move(slots));
            rec.kernel->body(args);
            complete_op(rec, args);
        } catch (const std::exception& e) {
            in_flight_.fetch_sub(1);
            fail_with(std::make_exception_ptr(error(
                errc::kernel_failure, "op #" + std::to_string(rec.id) + " kernel '" +
                                          rec.kernel->name + "' failed: " + e.what())));
            return;
        }
        in_flight_.fetch_sub(1);
    }

    /// Builds the kernel's view of its arguments. Const args share the
    /// recorded revision's buffer untouched. Mutating args stage the new
    /// revision's buffer: the predecessor's buffer handed over in place
    /// when the recorded steal flag allows it, a fresh copy otherwise --
    /// the copy-on-write that keeps older readers valid.
    std::vector<kernel_args::slot> resolve_args(const op_record& rec) {
        std::vector<kernel_args::slot> slots(rec.args.size());
        for (std::size_t i = 0; i < rec.args.size(); ++i) {
            const auto& a = rec.args[i];
            auto& obj = store_.at(handle{a.object});
            auto& s = slots[i];
            s.mode = a.mode;
            s.type = obj.type;
            s.dynamic = obj.dynamic();
            if (a.mode == arg_mode::in) {
                auto& rev = store_.rev(a.object, a.read_index);
                if (!rev.locally_present())
                    fail(errc::not_ready, "input revision not present at execution");
                s.input = payload_view({rev.payload->data(), rev.payload->size()}, obj.type);
                continue;
            }
            if (a.prior_unset) {
                s.staging = make_buffer(s.dynamic ? 0 : obj.size_bytes); // zero-filled
            } else {
                auto& prior = store_.rev(a.object, a.read_index);
                if (!prior.locally_present())
                    fail(errc::not_ready, "prior revision not present at execution");
                if (a.steal) {
                    std::lock_guard lk(mu_);
                    s.staging = store_.take_payload(prior);
                } else {
                    s.staging = make_buffer({prior.payload->data(), prior.payload->size()});
                    bytes_copied_.fetch_add(s.staging->size());
                }
            }
            s.input = payload_view({s.staging->data(), s.staging->size()}, obj.type);
        }
        return slots;
    }

    void complete_op(const op_record& rec, kernel_args& args) {
        std::lock_guard lk(mu_);
        for (std::size_t i = 0; i < rec.args.size(); ++i) {
            const auto& a = rec.args[i];
            if (a.mode != arg_mode::inout) continue;
            auto& rev = store_.rev(a.object, a.write_index);
            store_.mark_ready(rev, std::move(args.raw_slot(i).staging));
            cascade_present_locked(rev);
        }
        for (const auto& a : rec.args) {
            if (a.prior_unset) continue;
            auto& rev = store_.rev(a.object, a.read_index);
            if (a.mode == arg_mode::inout && a.steal) continue; // already retired by handoff
            rev.pending_consumers.fetch_sub(1);
            store_.retire_if_dead(rev);
        }
        ops_[rec.id].state.store(op_done);
        ops_run_.fetch_add(1);
        --local_remaining_;
        check_done_locked();
    }

    /// A revision just became locally present: wake ops waiting on it
    /// and issue any planned outgoing edges.
    void cascade_present_locked(revision& rev) {
        for (op_id waiter : rev.waiters) {
            auto& ox = ops_[waiter];
            if (ox.missing.fetch_sub(1) == 1) {
                ox.state.store(op_ready);
                ready_.push(waiter);
                work_cv_.notify_one();
            }
        }
        rev.waiters.clear();
        pump_sends_locked(rev);
    }

    void pump_sends_locked(revision& rev) {
        if (rev.planned_out.empty() || !rev.locally_present()) return;
        for (rank_id dst : rev.planned_out) {
            send_(rev, dst);
            rev.pending_sends.fetch_sub(1);
            --outbound_remaining_;
        }
        rev.planned_out.clear();
        store_.retire_if_dead(rev);
        check_done_locked();
    }

    bool epoch_complete_locked() const {
        return local_remaining_ == 0 && inbound_remaining_ <= 0 && outbound_remaining_ <= 0;
    }

    void check_done_locked() {
        if (epoch_complete_locked()) sync_cv_.notify_all();
    }

    /// No runnable op, nothing in flight, nothing to arrive, yet local
    /// ops remain: the recorded program cannot make progress.
    void detect_stall_locked() {
        if (local_remaining_ > 0 && ready_.empty() && in_flight_.load() == 0 &&
            inbound_remaining_ <= 0 && !failed_) {
            failed_ = true;
            first_error_ = std::make_exception_ptr(
                error(errc::stalled_dag, "no ready op, none in flight, no pending transfer, " +
                                             std::to_string(local_remaining_) +
                                             " local ops incomplete"));
            work_cv_.notify_all();
        }
    }

    object_store& store_;
    dag& dag_;
    rank_id self_;
    send_fn send_;

    std::mutex mu_;
    std::condition_variable work_cv_;
    std::condition_variable sync_cv_;
    std::priority_queue<op_id, std::vector<op_id>, std::greater<>> ready_;
    std::deque<op_exec> ops_;
    std::int64_t local_remaining_ = 0;
    std::int64_t inbound_remaining_ = 0;
    std::int64_t outbound_remaining_ = 0;
    bool stop_ = false;
    bool failed_ = false;
    std::exception_ptr first_error_;

    std::vector<std::thread> workers_;
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::uint64_t> ops_run_{0};
    std::atomic<std::uint64_t> bytes_copied_{0};
    double wall_ms_ = 0.0;
    clock::time_point epoch_started_{};
};

} // namespace loom
