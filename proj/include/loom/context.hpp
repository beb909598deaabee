#pragma once

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dag.hpp"
#include "distribution.hpp"
#include "kernel.hpp"
#include "scheduler.hpp"
#include "store.hpp"
#include "transport.hpp"
#include "types.hpp"

namespace loom {

namespace detail {

enum class ctl : std::uint32_t { fingerprint = 1, verdict = 2, abort = 3 };

inline std::uint64_t ctl_tag(ctl kind, rank_id src) {
    return control_tag_bit | (static_cast<std::uint64_t>(kind) << 32) | src;
}

} // namespace detail

/// One rank's view of the whole program: records the sequential flow
/// into the DAG, derives transfers at every sync point, and executes the
/// local slice on the worker pool. Recording is strictly single-flow;
/// everything behind it is safe for the executor and transport threads.
class context {
public:
    /// `workers` = 0 spawns no pool: ops only run via exec().step_one()
    /// (instrumented tests); real programs need at least one worker.
    context(fabric& fab, rank_id self, unsigned workers)
        : fab_(fab), self_(self), nranks_(fab.nranks()), store_(self),
          exec_(store_, dag_, self, workers,
                [this](revision& rev, rank_id dst) { issue_send(rev, dst); }) {
        fetch_kernel_ = &declare_kernel("fetch", {arg_mode::in}, [](kernel_args&) {});
        fab_.attach(self_, [this](rank_id src, std::uint64_t tag, buffer_ptr payload) {
            deliver(src, tag, std::move(payload));
        });
    }

    ~context() { fab_.detach(self_); }

    context(const context&) = delete;
    context& operator=(const context&) = delete;

    rank_id rank() const noexcept { return self_; }
    rank_id nranks() const noexcept { return nranks_; }

    // ---- kernels ----

    const kernel_spec& declare_kernel(std::string name, std::vector<arg_mode> modes,
                                      kernel_fn body) {
        for (const auto& k : kernels_)
            if (k.name == name) fail(errc::duplicate_kernel, "kernel '" + name + "' already declared");
        kernels_.push_back(kernel_spec{std::move(name), std::move(modes), std::move(body)});
        return kernels_.back();
    }

    const kernel_spec* find_kernel(const std::string& name) const {
        for (const auto& k : kernels_)
            if (k.name == name) return &k;
        return nullptr;
    }

    // ---- objects ----

    /// Output-only object: revision 0 has no payload anywhere and is only
    /// usable as the prior state of a first mutation (seen as zeros).
    handle create(std::uint64_t size_bytes, elem_type type) {
        return store_.create_object(size_bytes, type, {}, false, current_scope());
    }

    /// Literal-initialized object; the payload lives on the rank whose
    /// scope is active at creation and is materialized only there.
    handle create(std::uint64_t size_bytes, elem_type type, std::span<const std::byte> init) {
        return store_.create_object(size_bytes, type, init, true, current_scope());
    }

    /// Literal initialization where building the bytes is only worth
    /// doing on the owning rank; `make` runs there and nowhere else.
    handle create_with(std::uint64_t size_bytes, elem_type type,
                       const std::function<std::vector<std::byte>()>& make) {
        rank_id owner = current_scope();
        if (owner == self_) {
            auto bytes = make();
            return store_.create_object(size_bytes, type, bytes, true, owner);
        }
        return store_.create_object(size_bytes, type, {}, true, owner);
    }

    std::uint64_t head(handle h) const { return store_.head(h); }

    // ---- recording ----

    /// Records one kernel call: const args consume the current head
    /// revision of their object, mutating args additionally generate the
    /// next revision. Placement is the innermost active scope.
    op_id record_call(const kernel_spec& kernel, const std::vector<handle>& args) {
        if (args.size() != kernel.arity())
            fail(errc::arity, "kernel '" + kernel.name + "' takes " +
                                  std::to_string(kernel.arity()) + " args, got " +
                                  std::to_string(args.size()));
        for (std::size_t i = 0; i < args.size(); ++i)
            for (std::size_t j = i + 1; j < args.size(); ++j) {
                if (args[i] != args[j]) continue;
                const bool wi = kernel.modes[i] == arg_mode::inout;
                const bool wj = kernel.modes[j] == arg_mode::inout;
                if (wi && wj)
                    fail(errc::double_write, "kernel '" + kernel.name +
                                                 "' takes the same object as two mutable args");
                if (wi || wj)
                    fail(errc::aliased_args, "kernel '" + kernel.name +
                                                 "' aliases one object as const and mutable");
            }

        const rank_id placement = current_scope();
        const op_id id = dag_.size();
        op_record rec;
        rec.kernel = &kernel;
        rec.placement = placement;
        rec.args.reserve(args.size());
        for (std::size_t i = 0; i < args.size(); ++i) {
            auto& obj = store_.at(args[i]);
            auto& prior = obj.revs[obj.head];
            op_record::arg_slot slot;
            slot.mode = kernel.modes[i];
            slot.object = args[i].id;
            slot.read_index = obj.head;
            slot.prior_unset = prior.unset;
            if (slot.mode == arg_mode::in && prior.unset)
                fail(errc::use_before_init, "object " + std::to_string(args[i].id) +
                                                " read before any generator completed");
            if (!prior.unset && placement == self_) {
                prior.pending_consumers.fetch_add(1);
                ++prior.epoch_local_consumers;
            }
            if (slot.mode == arg_mode::inout) {
                auto& next = store_.open_new_version(args[i], id, placement);
                slot.write_index = next.index;
                dag_.note_generator(args[i].id, next.index, id);
            }
            rec.args.push_back(slot);
        }
        dag_.append(std::move(rec));
        return id;
    }

    /// Records a payload-less read of `h`'s head on `to`, forcing the
    /// revision to become present there (verification, result gathering).
    void fetch(handle h, rank_id to) {
        node_scope_push(to);
        record_call(*fetch_kernel_, {h});
        node_scope_pop();
    }

    // ---- execution ----

    /// Blocks the recording flow until every op recorded so far that this
    /// rank executes, every payload it must receive, and every send it
    /// must source are complete. Equivalent ops on other ranks are
    /// observed through the arrivals they feed.
    void sync() {
        stage();
        wait_staged();
    }

    /// First half of sync(): plans the epoch's transfers and hands its
    /// ops to the executor, without waiting. Recording must not resume
    /// until wait_staged() returns; exposed for instrumented stepping.
    void stage() {
        const op_id first = synced_upto_;
        const op_id last = dag_.size();
        auto plan = plan_transfers(dag_, first, last, store_, nranks_);
        finalize_steal_flags(dag_, first, last, store_);

        std::vector<std::pair<revision*, buffer_ptr>> early;
        {
            std::lock_guard lk(inbox_mu_);
            for (const auto& p : plan.plans) {
                for (auto [parent, child] : p.tree) {
                    if (child != self_) continue;
                    auto* rev = store_.rev_by_tag(p.tag);
                    if (auto it = inbox_.find(p.tag); it != inbox_.end()) {
                        early.emplace_back(rev, std::move(it->second));
                        inbox_.erase(it);
                    } else {
                        expected_.emplace(p.tag, rev);
                    }
                }
            }
        }
        for (auto& p : plan.plans) plan_log_.push_back(std::move(p));

        exec_.begin_epoch(first, last, plan.inbound_for_self, plan.sends_from_self);
        for (auto& [rev, payload] : early) exec_.on_arrival(*rev, std::move(payload));
        synced_upto_ = last;
    }

    void wait_staged() {
        try {
            exec_.wait_epoch([this] { return fab_.aborted(); });
        } catch (const error& e) {
            if (e.code() != errc::transport_down) fab_.post_abort(e.what());
            throw;
        }
    }

    /// Final sync, transport drain, and the cross-rank fingerprint check.
    exec_report finish() {
        sync();
        fab_.flush(self_);
        const std::uint64_t fp = dag_.fingerprint();
        if (nranks_ > 1) exchange_fingerprints(fp);
        auto rep = exec_.report();
        rep.rank = self_;
        return rep;
    }

    std::uint64_t fingerprint() const { return dag_.fingerprint(); }

    // ---- scope guards ----

    void node_scope_push(rank_id r) {
        if (r >= nranks_)
            fail(errc::bad_rank, "scope rank " + std::to_string(r) + " out of range (P = " +
                                     std::to_string(nranks_) + ")");
        scopes_.push_back(r);
    }
    void node_scope_pop() { scopes_.pop_back(); }
    rank_id current_scope() const { return scopes_.empty() ? rank_id{0} : scopes_.back(); }

    // ---- introspection ----

    dag& graph() { return dag_; }
    const dag& graph() const { return dag_; }
    object_store& objects() { return store_; }
    executor& exec() { return exec_; }
    const std::vector<transfer_plan>& planned() const { return plan_log_; }

    std::string dot(bool with_plans = true) const {
        std::vector<std::string> lines;
        if (with_plans)
            for (const auto& p : plan_log_) lines.push_back(p.to_string());
        return dag_.dot_string(lines);
    }

    /// Copy of the head revision's payload; requires it locally present
    /// (fetch it here first if it lives elsewhere).
    std::vector<std::byte> read_bytes(handle h) const {
        auto span = store_.read_bytes(h);
        return {span.begin(), span.end()};
    }

    template <typename T>
    std::vector<T> read_as(handle h) const {
        auto bytes = read_bytes(h);
        std::vector<T> out(bytes.size() / sizeof(T));
        std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
        return out;
    }

private:
    void issue_send(revision& rev, rank_id dst) {
        fab_.send(self_, dst, rev.tag(), rev.payload);
    }

    void deliver(rank_id src, std::uint64_t tag, buffer_ptr payload) {
        if (tag & control_tag_bit) {
            const auto kind = static_cast<detail::ctl>((tag >> 32) & 0xFFFF);
            if (kind == detail::ctl::abort) {
                exec_.fail_with(std::make_exception_ptr(
                    error(errc::transport_down, "peer rank " + std::to_string(src) + " aborted")));
                return;
            }
            std::lock_guard lk(ctl_mu_);
            ctl_inbox_[tag] = std::move(payload);
            ctl_cv_.notify_all();
            return;
        }
        revision* rev = nullptr;
        {
            std::lock_guard lk(inbox_mu_);
            auto it = expected_.find(tag);
            if (it == expected_.end()) {
                inbox_[tag] = std::move(payload);
                return;
            }
            rev = it->second;
            expected_.erase(it);
        }
        exec_.on_arrival(*rev, std::move(payload));
    }

    void send_ctl(rank_id dst, detail::ctl kind, std::span<const std::byte> bytes) {
        fab_.send(self_, dst, detail::ctl_tag(kind, self_), make_buffer(bytes));
    }

    buffer_ptr wait_ctl(detail::ctl kind, rank_id src) {
        const std::uint64_t tag = detail::ctl_tag(kind, src);
        std::unique_lock lk(ctl_mu_);
        for (;;) {
            if (auto it = ctl_inbox_.find(tag); it != ctl_inbox_.end()) {
                auto p = std::move(it->second);
                ctl_inbox_.erase(it);
                return p;
            }
            if (fab_.aborted()) fail(errc::transport_down, fab_.abort_reason());
            ctl_cv_.wait_for(lk, std::chrono::milliseconds(100));
        }
    }

    void exchange_fingerprints(std::uint64_t fp) {
        std::array<std::byte, 8> fp_bytes;
        for (int i = 0; i < 8; ++i) fp_bytes[i] = static_cast<std::byte>((fp >> (8 * i)) & 0xFF);
        if (self_ == 0) {
            bool all_equal = true;
            for (rank_id r = 1; r < nranks_; ++r) {
                auto p = wait_ctl(detail::ctl::fingerprint, r);
                std::uint64_t theirs = 0;
                for (int i = 0; i < 8; ++i)
                    theirs |= std::to_integer<std::uint64_t>(p->bytes.at(i)) << (8 * i);
                all_equal = all_equal && theirs == fp;
            }
            std::byte verdict{all_equal ? std::uint8_t{1} : std::uint8_t{0}};
            for (rank_id r = 1; r < nranks_; ++r)
                send_ctl(r, detail::ctl::verdict, {&verdict, 1});
            if (!all_equal)
                fail(errc::diverged_dag, "rank DAG fingerprints differ; the program executed "
                                         "divergently across ranks");
        } else {
            send_ctl(0, detail::ctl::fingerprint, fp_bytes);
            auto v = wait_ctl(detail::ctl::verdict, 0);
            if (v->bytes.empty() || v->bytes[0] == std::byte{0})
                fail(errc::diverged_dag, "rank DAG fingerprints differ; the program executed "
                                         "divergently across ranks");
        }
    }

    fabric& fab_;
    rank_id self_;
    rank_id nranks_;
    object_store store_;
    dag dag_;
    std::deque<kernel_spec> kernels_;
    const kernel_spec* fetch_kernel_ = nullptr;
    std::vector<rank_id> scopes_;
    op_id synced_upto_ = 0;
    std::vector<transfer_plan> plan_log_;

    std::mutex inbox_mu_;
    std::map<std::uint64_t, buffer_ptr> inbox_;    // arrivals not yet planned for
    std::map<std::uint64_t, revision*> expected_;  // planned, not yet arrived

    std::mutex ctl_mu_;
    std::condition_variable ctl_cv_;
    std::map<std::uint64_t, buffer_ptr> ctl_inbox_;

    executor exec_; // declared last: workers must die before the rest
};

/// Stack-discipline placement declaration: every op recorded while alive
/// is placed on `r`; nesting allowed, innermost wins.
class node_scope {
public:
    node_scope(context& ctx, rank_id r) : ctx_(ctx) { ctx_.node_scope_push(r); }
    ~node_scope() { ctx_.node_scope_pop(); }

    node_scope(const node_scope&) = delete;
    node_scope& operator=(const node_scope&) = delete;

private:
    context& ctx_;
};

template <typename Body>
void scoped(context& ctx, rank_id r, Body&& body) {
    node_scope guard(ctx, r);
    std::forward<Body>(body)();
}

/// Pairwise combination of n partial results in ceil(log2 n) levels:
/// stride s = 1, 2, 4, ... combining replicas[w-s] += replicas[w]. Each
/// combine runs on the rank holding its destination replica. `combine`
/// must take (in source, inout destination). Returns replicas[0], whose
/// final revision carries the full result.
inline handle apply_reduction_schedule(context& ctx, const kernel_spec& combine,
                                       std::span<const handle> replicas) {
    if (replicas.empty()) fail(errc::empty_reduction, "no replicas to reduce");
    auto home = [&](handle h) {
        const auto& obj = ctx.objects().at(h);
        return obj.revs[obj.head].generator_rank;
    };
    const std::size_t n = replicas.size();
    for (std::size_t s = 1; s < n; s *= 2)
        for (std::size_t w = s; w < n; w += 2 * s)
            scoped(ctx, home(replicas[w - s]),
                   [&] { ctx.record_call(combine, {replicas[w], replicas[w - s]}); });
    return replicas[0];
}

/// One simulated rank plus its fabric, for single-rank use.
struct local_runtime {
    simulated_fabric fabric;
    context ctx;

    explicit local_runtime(unsigned workers = 1, double latency_ms = 0.0)
        : fabric(1, latency_ms), ctx(fabric, 0, workers) {}
};

struct rank_result {
    exec_report report;
    std::uint64_t fingerprint = 0;
};

/// SPMD harness: runs `program` on P simulated ranks in one process,
/// each building its own DAG and executing its slice; fingerprints are
/// cross-checked at the end. The first rank failure aborts the group.
inline std::vector<rank_result> run_ranks(simulated_fabric& fab, unsigned workers,
                                          const std::function<void(context&)>& program) {
    const rank_id nranks = fab.nranks();
    std::vector<rank_result> results(nranks);
    std::vector<std::exception_ptr> errors(nranks);
    std::vector<std::thread> threads;
    threads.reserve(nranks);
    for (rank_id r = 0; r < nranks; ++r) {
        threads.emplace_back([&, r] {
            try {
                context ctx(fab, r, workers);
                program(ctx);
                results[r].report = ctx.finish();
                results[r].fingerprint = ctx.fingerprint();
            } catch (...) {
                errors[r] = std::current_exception();
                fab.post_abort("rank " + std::to_string(r) + " failed");
            }
        });
    }
    for (auto& t : threads) t.join();
    // prefer the root cause over the transport_down it induced on peers
    std::exception_ptr first;
    for (const auto& e : errors) {
        if (!e) continue;
        if (!first) first = e;
        try {
            std::rethrow_exception(e);
        } catch (const error& le) {
            if (le.code() != errc::transport_down) {
                first = e;
                break;
            }
        } catch (...) {
            first = e;
            break;
        }
    }
    if (first) std::rethrow_exception(first);
    return results;
}

inline std::vector<rank_result> run_ranks(rank_id nranks, unsigned workers,
                                          const std::function<void(context&)>& program,
                                          double latency_ms = 0.0) {
    simulated_fabric fab(nranks, latency_ms);
    return run_ranks(fab, workers, program);
}

} // namespace loom
