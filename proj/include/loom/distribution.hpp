#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dag.hpp"
#include "store.hpp"
#include "types.hpp"

namespace loom {

/// Broadcast schedule for one revision: a binary tree spanning the
/// source rank and every rank that has to receive a copy.
struct transfer_plan {
    object_id object = 0;
    std::uint64_t index = 0;
    rank_id source = 0;
    std::uint64_t tag = 0;
    std::vector<rank_id> receivers;                      // ascending, excludes source
    std::vector<std::pair<rank_id, rank_id>> tree;       // parent -> child edges

    std::string to_string() const {
        std::ostringstream os;
        os << "obj" << object << ":v" << index << " src=" << source << " tree=[";
        for (std::size_t i = 0; i < tree.size(); ++i) {
            if (i) os << ",";
            os << "(" << tree[i].first << "," << tree[i].second << ")";
        }
        os << "] tag=" << tag;
        return os.str();
    }
};

/// Heap-shaped binary tree over [source] + receivers (receivers sorted
/// ascending): the node at position i feeds positions 2i+1 and 2i+2.
/// Exactly |receivers| edges; depth grows with ceil(log2) of the node
/// count. Deterministic, so every rank derives the same schedule.
inline std::vector<std::pair<rank_id, rank_id>> build_broadcast_tree(
    rank_id source, const std::vector<rank_id>& receivers) {
    std::vector<rank_id> nodes;
    nodes.reserve(receivers.size() + 1);
    nodes.push_back(source);
    for (rank_id r : receivers)
        if (r != source) nodes.push_back(r);
    std::vector<std::pair<rank_id, rank_id>> edges;
    edges.reserve(nodes.size() - 1);
    for (std::size_t i = 0; 2 * i + 1 < nodes.size(); ++i) {
        edges.emplace_back(nodes[i], nodes[2 * i + 1]);
        if (2 * i + 2 < nodes.size()) edges.emplace_back(nodes[i], nodes[2 * i + 2]);
    }
    return edges;
}

/// Longest root-to-leaf edge count of a broadcast tree.
inline std::size_t tree_depth(const std::vector<std::pair<rank_id, rank_id>>& edges,
                              rank_id source) {
    std::map<rank_id, std::size_t> depth;
    depth[source] = 0;
    std::size_t max_depth = 0;
    // edges are emitted parents-first, one pass suffices
    for (auto [p, c] : edges) {
        depth[c] = depth[p] + 1;
        max_depth = std::max(max_depth, depth[c]);
    }
    return max_depth;
}

struct epoch_plan {
    std::vector<transfer_plan> plans;
    std::size_t inbound_for_self = 0; // arrivals this rank will wait for
    std::size_t sends_from_self = 0;  // edges this rank is the parent of
};

/// Derives every transfer implied by the ops in [first, last): a revision
/// consumed on a rank that does not hold it gets a broadcast tree rooted
/// at its generator rank over the new receiving ranks. Updates the plan
/// state cached in the store (owners, outgoing edges), so re-reads in
/// later epochs hit the cache instead of re-sending.
inline epoch_plan plan_transfers(const dag& d, op_id first, op_id last, object_store& store,
                                 rank_id nranks) {
    const rank_id self = store.self();
    // (object, index) -> new consumer ranks, in deterministic order
    std::map<std::pair<object_id, std::uint64_t>, std::vector<rank_id>> needed;
    for (op_id id = first; id < last; ++id) {
        const auto& rec = d.op(id);
        for (const auto& a : rec.args) {
            if (a.prior_unset) continue;
            const auto& rev = store.rev(a.object, a.read_index);
            if (rev.owned_by(rec.placement)) continue;
            auto& ranks = needed[{a.object, a.read_index}];
            if (std::find(ranks.begin(), ranks.end(), rec.placement) == ranks.end())
                ranks.push_back(rec.placement);
        }
    }

    epoch_plan out;
    for (auto& [key, ranks] : needed) {
        auto& rev = store.rev(key.first, key.second);
        if (rev.unset || (rev.generator == no_op && rev.owners.empty()))
            fail(errc::unplaced_generator,
                 "revision obj" + std::to_string(key.first) + ":v" + std::to_string(key.second) +
                     " has no generator to source a transfer from");
        std::sort(ranks.begin(), ranks.end());
        ranks.erase(std::unique(ranks.begin(), ranks.end()), ranks.end());
        for (rank_id r : ranks)
            if (r >= nranks) fail(errc::bad_rank, "consumer rank out of range");

        transfer_plan plan;
        plan.object = key.first;
        plan.index = key.second;
        plan.source = rev.generator_rank;
        plan.tag = rev.tag();
        plan.receivers = ranks;
        plan.tree = build_broadcast_tree(plan.source, ranks);

        for (rank_id r : ranks) rev.owners.push_back(r);
        std::sort(rev.owners.begin(), rev.owners.end());
        rev.owners.erase(std::unique(rev.owners.begin(), rev.owners.end()), rev.owners.end());

        for (auto [parent, child] : plan.tree) {
            if (parent == self) {
                rev.planned_out.push_back(child);
                rev.pending_sends.fetch_add(1);
                rev.ever_send_source = true;
                ++out.sends_from_self;
            }
            if (child == self) ++out.inbound_for_self;
        }
        out.plans.push_back(std::move(plan));
    }
    return out;
}

/// Record-time zero-copy analysis for the ops of one epoch. A mutation
/// takes over its predecessor's buffer iff this op is the only local
/// consumer of that revision in the epoch and this rank never feeds the
/// revision into a transfer; everything else gets copy-on-write. The
/// decision is a pure function of the recorded program, so the copy
/// counts in the report are reproducible run to run.
inline void finalize_steal_flags(dag& d, op_id first, op_id last, object_store& store) {
    const rank_id self = store.self();
    for (op_id id = first; id < last; ++id) {
        auto& rec = d.op(id);
        if (rec.placement != self) continue;
        for (auto& a : rec.args) {
            if (a.mode != arg_mode::inout || a.prior_unset) continue;
            auto& prior = store.rev(a.object, a.read_index);
            a.steal = prior.epoch_local_consumers == 1 && !prior.ever_send_source;
        }
    }
    for (op_id id = first; id < last; ++id) {
        for (const auto& a : d.op(id).args) {
            if (a.prior_unset) continue;
            store.rev(a.object, a.read_index).epoch_local_consumers = 0;
        }
    }
}

} // namespace loom
