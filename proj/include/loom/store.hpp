#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "buffer.hpp"
#include "types.hpp"

namespace loom {

/// Declared size of objects whose extent is only known once a revision
/// is produced (keyed record collections). Fixed-size objects get the
/// PayloadSize check; dynamic ones accept whatever the generator made.
inline constexpr std::uint64_t dynamic_size = ~std::uint64_t{0};

enum class rev_state : std::uint8_t { pending, ready, retired };

/// One immutable state of one object, as seen by this rank. `state`
/// tracks the local replica: pending until the payload is generated
/// here or arrives here, ready while the bytes are live, retired once
/// reclaimed. Transitions only ever run forward.
struct revision {
    object_id object = 0;
    std::uint64_t index = 0;
    op_id generator = no_op;      // none for revision 0
    rank_id generator_rank = 0;   // rank producing the payload (creation scope for rev 0)
    bool unset = false;           // revision 0 created without an initializer

    std::atomic<rev_state> state{rev_state::pending};
    buffer_ptr payload;

    /// Plan-time knowledge, identical on every rank: ranks that hold or
    /// are scheduled to receive this revision. Mutated only while the
    /// recording flow plans an epoch.
    std::vector<rank_id> owners;

    /// Scheduled outgoing edges from this rank, drained once the payload
    /// is locally present.
    std::vector<rank_id> planned_out;

    /// Ops placed on this rank that still have to read this revision.
    std::atomic<std::uint32_t> pending_consumers{0};
    /// Outgoing sends from this rank not yet handed to the fabric.
    std::atomic<std::uint32_t> pending_sends{0};

    /// Set once this rank appears as a tree source for the revision;
    /// forbids handing the buffer over to a successor revision.
    bool ever_send_source = false;
    /// Local consumers recorded in the epoch being built (steal analysis).
    std::uint32_t epoch_local_consumers = 0;

    /// Ops waiting for this revision to become locally present.
    std::vector<op_id> waiters;

    bool locally_present() const { return state.load(std::memory_order_acquire) == rev_state::ready; }
    bool owned_by(rank_id r) const {
        for (rank_id o : owners)
            if (o == r) return true;
        return false;
    }
    std::uint64_t tag() const { return revision_tag(object, index); }
};

struct object_state {
    std::uint64_t size_bytes = 0; // dynamic_size if data-dependent
    elem_type type = elem_type::raw;
    std::uint64_t head = 0;
    std::deque<revision> revs; // deque: revisions must not move, they hold atomics

    bool dynamic() const { return size_bytes == dynamic_size; }
};

/// Per-rank store of all versioned objects. Object ids come from a
/// deterministic counter, so allocation order is identical across ranks
/// replaying the same program.
class object_store {
public:
    explicit object_store(rank_id self = 0) : self_(self) {}

    /// Creates an object with revision 0. With an initializer, revision 0
    /// is ready on `owner` (and only there); without one it stays pending
    /// forever and is only usable as the prior state of a first mutation.
    handle create_object(std::uint64_t size_bytes, elem_type type,
                         std::span<const std::byte> init, bool has_init, rank_id owner) {
        if (size_bytes == 0) fail(errc::zero_size, "create_object with zero size");
        // only the owner materializes the literal, so only it can check
        if (has_init && owner == self_ && size_bytes != dynamic_size && init.size() != size_bytes)
            fail(errc::payload_size, "initializer length does not match object size");
        object_id id = objects_.size();
        auto& obj = objects_.emplace_back();
        obj.size_bytes = size_bytes;
        obj.type = type;
        auto& r0 = obj.revs.emplace_back();
        r0.object = id;
        r0.index = 0;
        r0.generator_rank = owner;
        if (has_init) {
            r0.owners.push_back(owner);
            if (owner == self_) {
                r0.payload = make_buffer(init);
                r0.state.store(rev_state::ready, std::memory_order_release);
            }
        } else {
            r0.unset = true;
        }
        return handle{id};
    }

    /// Appends the next revision of `h` in pending state and advances the
    /// head. The generator op produces the payload on `producer`.
    revision& open_new_version(handle h, op_id generator, rank_id producer) {
        auto& obj = at(h);
        auto& rev = obj.revs.emplace_back();
        rev.object = h.id;
        rev.index = ++obj.head;
        rev.generator = generator;
        rev.generator_rank = producer;
        rev.owners.push_back(producer);
        return rev;
    }

    /// Publishes the payload of a pending revision. Immutable afterwards.
    void mark_ready(revision& rev, buffer_ptr payload) {
        if (rev.state.load(std::memory_order_acquire) != rev_state::pending)
            fail(errc::double_complete, "revision already completed");
        const auto& obj = objects_[rev.object];
        if (!obj.dynamic() && payload->size() != obj.size_bytes)
            fail(errc::payload_size, "payload length does not match object size");
        rev.payload = std::move(payload);
        rev.state.store(rev_state::ready, std::memory_order_release);
    }

    /// Frees the local payload iff nothing here still needs it: no
    /// pending local consumers, no pending sends, and a newer revision
    /// exists (the newest state of an object is never reclaimed).
    bool retire_if_dead(revision& rev) {
        if (rev.state.load(std::memory_order_acquire) != rev_state::ready) return false;
        if (rev.pending_consumers.load() != 0 || rev.pending_sends.load() != 0) return false;
        if (objects_[rev.object].head <= rev.index) return false;
        rev.payload.reset();
        rev.state.store(rev_state::retired, std::memory_order_release);
        return true;
    }

    /// Hands the buffer of a dead predecessor over to its successor
    /// (zero-copy). Caller must have established via the recorded steal
    /// flag that nobody else touches this copy.
    buffer_ptr take_payload(revision& rev) {
        buffer_ptr p = std::move(rev.payload);
        rev.state.store(rev_state::retired, std::memory_order_release);
        return p;
    }

    object_state& at(handle h) {
        if (h.id >= objects_.size()) fail(errc::not_ready, "unknown object handle");
        return objects_[h.id];
    }
    const object_state& at(handle h) const {
        if (h.id >= objects_.size()) fail(errc::not_ready, "unknown object handle");
        return objects_[h.id];
    }

    std::uint64_t head(handle h) const { return at(h).head; }

    revision& rev(object_id obj, std::uint64_t index) { return objects_.at(obj).revs.at(index); }
    const revision& rev(object_id obj, std::uint64_t index) const {
        return objects_.at(obj).revs.at(index);
    }

    revision* rev_by_tag(std::uint64_t tag) {
        object_id obj = tag >> 20;
        std::uint64_t index = tag & 0xFFFFF;
        if (obj >= objects_.size()) return nullptr;
        if (index >= objects_[obj].revs.size()) return nullptr;
        return &objects_[obj].revs[index];
    }

    /// Bytes of the head revision, which must be locally present.
    std::span<const std::byte> read_bytes(handle h) const {
        const auto& obj = at(h);
        const auto& rev = obj.revs.at(obj.head);
        if (!rev.locally_present()) fail(errc::not_ready, "head revision not present on this rank");
        return {rev.payload->data(), rev.payload->size()};
    }

    std::size_t object_count() const { return objects_.size(); }
    rank_id self() const { return self_; }

    /// Total payload bytes currently live on this rank (memory-overhead
    /// bookkeeping for the multi-version model).
    std::uint64_t live_payload_bytes() const {
        std::uint64_t sum = 0;
        for (const auto& obj : objects_)
            for (const auto& r : obj.revs)
                if (r.state.load() == rev_state::ready && r.payload) sum += r.payload->size();
        return sum;
    }

private:
    rank_id self_;
    std::deque<object_state> objects_;
};

} // namespace loom
