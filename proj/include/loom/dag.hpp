#pragma once

#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "kernel.hpp"
#include "types.hpp"

namespace loom {

struct revision_ref {
    object_id object;
    std::uint64_t index;

    friend bool operator==(revision_ref, revision_ref) = default;
};

/// One node of the transactional DAG: a recorded kernel call together
/// with the exact revisions it consumes and the revisions it generates.
struct op_record {
    struct arg_slot {
        arg_mode mode;
        object_id object;
        std::uint64_t read_index;   // revision consumed (inout: the prior state)
        std::uint64_t write_index;  // inout only: revision generated
        bool prior_unset = false;   // prior is an uninitialized revision 0: no data dependency
        bool steal = false;         // inout only: predecessor buffer may be handed over in place
    };

    op_id id = no_op;
    const kernel_spec* kernel = nullptr;
    rank_id placement = 0;
    std::vector<arg_slot> args;

    std::vector<revision_ref> reads() const {
        std::vector<revision_ref> r;
        r.reserve(args.size());
        for (const auto& a : args) r.push_back({a.object, a.read_index});
        return r;
    }

    std::vector<revision_ref> writes() const {
        std::vector<revision_ref> w;
        for (const auto& a : args)
            if (a.mode == arg_mode::inout) w.push_back({a.object, a.write_index});
        return w;
    }
};

namespace detail {

inline void put_u64(std::vector<std::byte>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t fnv1a(const std::vector<std::byte>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::byte b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace detail

/// Append-only, op_id-ordered operation graph. Consumers can only
/// reference already-recorded generators, so the graph is acyclic by
/// construction and topological order coincides with op_id order.
class dag {
public:
    op_record& append(op_record rec) {
        rec.id = ops_.size();
        ops_.push_back(std::move(rec));
        return ops_.back();
    }

    std::size_t size() const noexcept { return ops_.size(); }
    bool empty() const noexcept { return ops_.empty(); }
    const op_record& op(op_id id) const { return ops_.at(id); }
    op_record& op(op_id id) { return ops_.at(id); }

    auto begin() const { return ops_.begin(); }
    auto end() const { return ops_.end(); }

    /// 64-bit FNV-1a over a fixed-width little-endian serialization of
    /// (op_id, kernel name, reads, writes, placement) in op order.
    /// Identical across ranks and platforms for the same program; used
    /// as the execution-divergence detector.
    std::uint64_t fingerprint() const {
        std::vector<std::byte> buf;
        for (const auto& rec : ops_) {
            detail::put_u64(buf, rec.id);
            detail::put_u64(buf, rec.kernel->name.size());
            for (char c : rec.kernel->name) buf.push_back(static_cast<std::byte>(c));
            detail::put_u64(buf, rec.placement);
            const auto reads = rec.reads();
            detail::put_u64(buf, reads.size());
            for (auto r : reads) {
                detail::put_u64(buf, r.object);
                detail::put_u64(buf, r.index);
            }
            const auto writes = rec.writes();
            detail::put_u64(buf, writes.size());
            for (auto w : writes) {
                detail::put_u64(buf, w.object);
                detail::put_u64(buf, w.index);
            }
        }
        return detail::fnv1a(buf);
    }

    /// DOT export. Nodes are labeled "kernel#op_id@rank", edges carry
    /// the revision that flows along them as "objN:vK".
    void write_dot(std::ostream& os, const std::vector<std::string>& plan_lines = {}) const {
        os << "digraph dag {\n";
        for (const auto& rec : ops_)
            os << "  n" << rec.id << " [label=\"" << rec.kernel->name << "#" << rec.id << "@"
               << rec.placement << "\"];\n";
        // generator revision -> consumer op
        for (const auto& rec : ops_) {
            for (const auto& a : rec.args) {
                op_id gen = generator_of(a.object, a.read_index);
                if (gen != no_op)
                    os << "  n" << gen << " -> n" << rec.id << " [label=\"obj" << a.object << ":v"
                       << a.read_index << "\"];\n";
            }
        }
        for (const auto& line : plan_lines) os << "  // plan: " << line << "\n";
        os << "}\n";
    }

    std::string dot_string(const std::vector<std::string>& plan_lines = {}) const {
        std::ostringstream os;
        write_dot(os, plan_lines);
        return os.str();
    }

    /// Recorded generator of (object, index), or no_op for literal /
    /// uninitialized revision 0.
    op_id generator_of(object_id obj, std::uint64_t index) const {
        auto it = generators_.find(key(obj, index));
        return it == generators_.end() ? no_op : it->second;
    }

    void note_generator(object_id obj, std::uint64_t index, op_id op) {
        generators_.emplace(key(obj, index), op);
    }

private:
    static std::uint64_t key(object_id obj, std::uint64_t index) { return revision_tag(obj, index); }

    std::vector<op_record> ops_;
    std::unordered_map<std::uint64_t, op_id> generators_;
};

} // namespace loom
