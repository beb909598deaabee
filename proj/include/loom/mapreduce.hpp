#pragma once

#include <algorithm>
#include <cstring>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "context.hpp"
#include "types.hpp"

namespace loom {

using kv_pair = std::pair<std::int64_t, std::vector<std::byte>>;
using kv_pairs = std::vector<kv_pair>;

/// Per (key, grouped values) transformation. Values arrive as views into
/// the decoded partition; outputs are fresh pairs.
using kv_fn = std::function<kv_pairs(std::int64_t key,
                                     const std::vector<std::span<const std::byte>>& values)>;

namespace detail {

inline void kv_append_u64(std::vector<std::byte>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t kv_read_u64(const std::byte* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::to_integer<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

/// Records are {key: i64, length: u64, bytes}, concatenated in ascending
/// key order.
inline std::vector<std::byte> encode_pairs(const kv_pairs& pairs) {
    std::vector<std::byte> out;
    for (const auto& [key, value] : pairs) {
        kv_append_u64(out, static_cast<std::uint64_t>(key));
        kv_append_u64(out, value.size());
        out.insert(out.end(), value.begin(), value.end());
    }
    return out;
}

struct kv_cursor {
    std::span<const std::byte> bytes;
    std::size_t pos = 0;

    bool done() const { return pos >= bytes.size(); }

    std::pair<std::int64_t, std::span<const std::byte>> next() {
        std::int64_t key = static_cast<std::int64_t>(kv_read_u64(bytes.data() + pos));
        std::uint64_t len = kv_read_u64(bytes.data() + pos + 8);
        auto value = bytes.subspan(pos + 16, len);
        pos += 16 + len;
        return {key, value};
    }

    std::int64_t peek_key() const {
        return static_cast<std::int64_t>(kv_read_u64(bytes.data() + pos));
    }
};

inline void sort_pairs(kv_pairs& pairs) {
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const kv_pair& x, const kv_pair& y) { return x.first < y.first; });
}

/// Applies f per key group of a sorted pair list; result sorted again.
inline kv_pairs apply_grouped(const kv_pairs& sorted, const kv_fn& f) {
    kv_pairs out;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        std::vector<std::span<const std::byte>> values;
        while (j < sorted.size() && sorted[j].first == sorted[i].first) {
            values.emplace_back(sorted[j].second);
            ++j;
        }
        auto produced = f(sorted[i].first, values);
        for (auto& p : produced) out.push_back(std::move(p));
        i = j;
    }
    sort_pairs(out);
    return out;
}

} // namespace detail

/// Keyed record collection distributed over all ranks: rank r owns every
/// key with key mod P = r. map re-keys and implicitly shuffles each new
/// key to its owner before any reduce; reduce runs once per co-located
/// key group. An optional combiner runs on the mapping rank before the
/// shuffle moves anything.
class kv_store {
public:
    /// One partition object per rank; this rank contributes `local`
    /// (already keyed) and materializes only its own partition.
    static kv_store from_local(context& ctx, kv_pairs local) {
        detail::sort_pairs(local);
        kv_store store;
        store.ctx_ = &ctx;
        const rank_id nranks = ctx.nranks();
        for (rank_id r = 0; r < nranks; ++r)
            scoped(ctx, r, [&] {
                if (r == ctx.rank()) {
                    auto bytes = detail::encode_pairs(local);
                    store.parts_.push_back(ctx.create(dynamic_size, elem_type::raw, bytes));
                } else {
                    store.parts_.push_back(
                        ctx.create(dynamic_size, elem_type::raw, std::span<const std::byte>{}));
                }
            });
        return store;
    }

    rank_id owner_of(std::int64_t key) const {
        const auto nranks = static_cast<std::int64_t>(ctx_->nranks());
        return static_cast<rank_id>(((key % nranks) + nranks) % nranks);
    }

    /// Applies `f` per key group on the owning rank, re-keys the output,
    /// and shuffles every new key to its owner. With a combiner, each
    /// outgoing partition is pre-combined on the mapping rank first.
    kv_store map(const kv_fn& f, const kv_fn& combiner = {}) const {
        context& ctx = *ctx_;
        const rank_id nranks = ctx.nranks();
        const std::string stage = "@" + std::to_string(ctx.graph().size());

        // one op per rank: partition its records into P outgoing pieces
        std::vector<arg_mode> modes(1 + nranks, arg_mode::inout);
        modes[0] = arg_mode::in;
        const auto& map_k = ctx.declare_kernel(
            "map" + stage, modes, [f, combiner, nranks](kernel_args& args) {
                auto pieces = partition_records(args.in(0).bytes(), f, nranks);
                for (rank_id q = 0; q < nranks; ++q) {
                    if (combiner) pieces[q] = detail::apply_grouped(pieces[q], combiner);
                    args.set_output(1 + q, detail::encode_pairs(pieces[q]));
                }
            });

        std::vector<std::vector<handle>> pieces(nranks);
        for (rank_id r = 0; r < nranks; ++r)
            scoped(ctx, r, [&] {
                std::vector<handle> call_args{parts_[r]};
                for (rank_id q = 0; q < nranks; ++q) {
                    pieces[r].push_back(ctx.create(dynamic_size, elem_type::raw));
                    call_args.push_back(pieces[r].back());
                }
                ctx.record_call(map_k, call_args);
            });

        // the shuffle: destination q concatenates its P incoming pieces
        std::vector<arg_mode> merge_modes(nranks + 1, arg_mode::in);
        merge_modes[nranks] = arg_mode::inout;
        const auto& merge_k =
            ctx.declare_kernel("shuffle" + stage, merge_modes, [nranks](kernel_args& args) {
                std::vector<std::span<const std::byte>> inputs;
                for (rank_id r = 0; r < nranks; ++r) inputs.push_back(args.in(r).bytes());
                args.set_output(nranks, merge_sorted(inputs));
            });

        kv_store out;
        out.ctx_ = &ctx;
        for (rank_id q = 0; q < nranks; ++q)
            scoped(ctx, q, [&] {
                std::vector<handle> call_args;
                for (rank_id r = 0; r < nranks; ++r) call_args.push_back(pieces[r][q]);
                out.parts_.push_back(ctx.create(dynamic_size, elem_type::raw));
                call_args.push_back(out.parts_.back());
                ctx.record_call(merge_k, call_args);
            });
        return out;
    }

    /// Applies `f` once per key on the rank owning that key. Requires the
    /// shuffle to have co-located each key's values, which map guarantees.
    kv_store reduce(const kv_fn& f) const {
        context& ctx = *ctx_;
        const rank_id nranks = ctx.nranks();
        const std::string stage = "@" + std::to_string(ctx.graph().size());
        const auto& reduce_k = ctx.declare_kernel(
            "reduce" + stage, {arg_mode::in, arg_mode::inout}, [f](kernel_args& args) {
                auto pairs = decode_all(args.in(0).bytes());
                args.set_output(1, detail::encode_pairs(detail::apply_grouped(pairs, f)));
            });
        kv_store out;
        out.ctx_ = &ctx;
        for (rank_id q = 0; q < nranks; ++q)
            scoped(ctx, q, [&] {
                out.parts_.push_back(ctx.create(dynamic_size, elem_type::raw));
                ctx.record_call(reduce_k, {parts_[q], out.parts_.back()});
            });
        return out;
    }

    /// Merges every partition into one record stream on `to`, ascending
    /// by key (each key lives on exactly one rank, so this is a plain
    /// sorted merge).
    handle gather(rank_id to = 0) const {
        context& ctx = *ctx_;
        const rank_id nranks = ctx.nranks();
        const std::string stage = "@" + std::to_string(ctx.graph().size());
        std::vector<arg_mode> modes(nranks + 1, arg_mode::in);
        modes[nranks] = arg_mode::inout;
        const auto& gather_k =
            ctx.declare_kernel("gather" + stage, modes, [nranks](kernel_args& args) {
                std::vector<std::span<const std::byte>> inputs;
                for (rank_id r = 0; r < nranks; ++r) inputs.push_back(args.in(r).bytes());
                args.set_output(nranks, merge_sorted(inputs));
            });
        handle out;
        scoped(ctx, to, [&] {
            std::vector<handle> call_args(parts_.begin(), parts_.end());
            out = ctx.create(dynamic_size, elem_type::raw);
            call_args.push_back(out);
            ctx.record_call(gather_k, call_args);
        });
        return out;
    }

    const std::vector<handle>& parts() const { return parts_; }

    /// Decodes one partition's pairs (must be locally present).
    static kv_pairs decode(std::span<const std::byte> bytes) { return decode_all(bytes); }

private:
    static kv_pairs decode_all(std::span<const std::byte> bytes) {
        kv_pairs pairs;
        detail::kv_cursor cur{bytes};
        while (!cur.done()) {
            auto [key, value] = cur.next();
            pairs.emplace_back(key, std::vector<std::byte>(value.begin(), value.end()));
        }
        return pairs;
    }

    static std::vector<kv_pairs> partition_records(std::span<const std::byte> bytes,
                                                   const kv_fn& f, rank_id nranks) {
        auto sorted = decode_all(bytes);
        auto produced = detail::apply_grouped(sorted, f);
        std::vector<kv_pairs> pieces(nranks);
        const auto p = static_cast<std::int64_t>(nranks);
        for (auto& rec : produced)
            pieces[static_cast<rank_id>(((rec.first % p) + p) % p)].push_back(std::move(rec));
        return pieces;
    }

    static std::vector<std::byte> merge_sorted(
        const std::vector<std::span<const std::byte>>& inputs) {
        std::vector<detail::kv_cursor> cursors;
        for (auto in : inputs)
            if (!in.empty()) cursors.push_back(detail::kv_cursor{in});
        std::vector<std::byte> out;
        for (;;) {
            detail::kv_cursor* best = nullptr;
            for (auto& c : cursors)
                if (!c.done() && (!best || c.peek_key() < best->peek_key())) best = &c;
            if (!best) break;
            auto before = best->pos;
            best->next();
            out.insert(out.end(), best->bytes.begin() + before, best->bytes.begin() + best->pos);
        }
        return out;
    }

    context* ctx_ = nullptr;
    std::vector<handle> parts_;
};

/// Bucket key of a non-negative 31-bit value: its top log_bins bits.
/// Monotone in v, so concatenating sorted buckets in key order yields a
/// globally sorted sequence.
struct sort_config {
    unsigned log_bins = 8;

    std::int64_t bucket(std::int32_t v) const { return v >> (31 - log_bins); }
};

/// Distributed integer sort: bucket by the top bits, shuffle buckets to
/// their owners, sort within each bucket, concatenate in bucket order.
/// Returns a handle to the sorted i32 array, present on `to`.
inline handle sort_integers(context& ctx, std::span<const std::int32_t> values,
                            std::size_t chunk, const sort_config& cfg, rank_id to = 0) {
    if (cfg.log_bins < 1 || cfg.log_bins > 31)
        fail(errc::domain, "log_bins must lie in [1, 31]");
    if (chunk == 0) chunk = 1;
    for (std::int32_t v : values)
        if (v < 0) fail(errc::domain, "negative value: the bucket shift needs 31-bit inputs");

    // documents: fixed-size chunks of the input, doc d owned by rank d mod P
    const rank_id nranks = ctx.nranks();
    kv_pairs local;
    const std::size_t ndocs = (values.size() + chunk - 1) / chunk;
    for (std::size_t d = 0; d < ndocs; ++d) {
        if (rank_id(d % nranks) != ctx.rank()) continue;
        const std::size_t begin = d * chunk;
        const std::size_t end = std::min(values.size(), begin + chunk);
        std::vector<std::byte> bytes((end - begin) * sizeof(std::int32_t));
        std::memcpy(bytes.data(), values.data() + begin, bytes.size());
        local.emplace_back(static_cast<std::int64_t>(d), std::move(bytes));
    }

    auto store = kv_store::from_local(ctx, std::move(local));
    auto bucketed = store.map([cfg](std::int64_t, const std::vector<std::span<const std::byte>>&
                                                      docs) {
        kv_pairs out;
        for (auto doc : docs) {
            const auto* ints = reinterpret_cast<const std::int32_t*>(doc.data());
            const std::size_t n = doc.size() / sizeof(std::int32_t);
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<std::byte> value(sizeof(std::int32_t));
                std::memcpy(value.data(), &ints[i], sizeof(std::int32_t));
                out.emplace_back(cfg.bucket(ints[i]), std::move(value));
            }
        }
        return out;
    });
    auto sorted = bucketed.reduce([](std::int64_t key,
                                     const std::vector<std::span<const std::byte>>& vs) {
        std::vector<std::int32_t> ints;
        ints.reserve(vs.size());
        for (auto v : vs) {
            std::int32_t x;
            std::memcpy(&x, v.data(), sizeof x);
            ints.push_back(x);
        }
        std::sort(ints.begin(), ints.end());
        kv_pairs out;
        out.reserve(ints.size());
        for (std::int32_t x : ints) {
            std::vector<std::byte> value(sizeof x);
            std::memcpy(value.data(), &x, sizeof x);
            out.emplace_back(key, std::move(value));
        }
        return out;
    });

    // flatten the gathered (bucket, value) stream into a bare i32 array
    handle pairs = sorted.gather(to);
    const std::string stage = "@" + std::to_string(ctx.graph().size());
    const auto& flatten_k = ctx.declare_kernel(
        "flatten" + stage, {arg_mode::in, arg_mode::inout}, [](kernel_args& args) {
            auto pairs = kv_store::decode(args.in(0).bytes());
            std::vector<std::byte> out;
            out.reserve(pairs.size() * sizeof(std::int32_t));
            for (const auto& [key, value] : pairs)
                out.insert(out.end(), value.begin(), value.end());
            args.set_output(1, std::move(out));
        });
    handle result;
    scoped(ctx, to, [&] {
        result = ctx.create(dynamic_size, elem_type::i32);
        ctx.record_call(flatten_k, {pairs, result});
    });
    return result;
}

} // namespace loom
