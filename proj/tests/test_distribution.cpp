#include <catch2/catch_amalgamated.hpp>
#include <loom/context.hpp>
#include <loom/random.hpp>

#include <cmath>
#include <mutex>
#include <numeric>
#include <set>

#include "helpers.hpp"

using namespace loom;
using namespace loom::testing;

namespace {

std::size_t ceil_log2(std::size_t n) {
    std::size_t levels = 0;
    while ((std::size_t{1} << levels) < n) ++levels;
    return levels;
}

} // namespace

TEST_CASE("scope guards assign placements, innermost wins") {
    simulated_fabric fab(4);
    context ctx(fab, 0, 1);
    auto& bump = ctx.declare_kernel("bump", {arg_mode::inout}, [](kernel_args&) {});
    handle h = make_f64(ctx, {0.0});

    op_id plain = ctx.record_call(bump, {h});
    op_id placed = no_op, inner = no_op;
    scoped(ctx, 2, [&] { placed = ctx.record_call(bump, {h}); });
    scoped(ctx, 1, [&] {
        scoped(ctx, 3, [&] { inner = ctx.record_call(bump, {h}); });
    });

    CHECK(ctx.graph().op(plain).placement == 0);
    CHECK(ctx.graph().op(placed).placement == 2);
    CHECK(ctx.graph().op(inner).placement == 3);
}

TEST_CASE("scope rank out of range is rejected at record time") {
    simulated_fabric fab(2);
    context ctx(fab, 0, 1);
    CHECK_THROWS_MATCHES(ctx.node_scope_push(2), error,
                         Catch::Matchers::Predicate<error>(
                             [](const error& e) { return e.code() == errc::bad_rank; }));
}

TEST_CASE("broadcast tree: single consumer is a direct send") {
    auto edges = build_broadcast_tree(0, {1});
    REQUIRE(edges.size() == 1);
    CHECK(edges[0] == std::pair<rank_id, rank_id>{0, 1});
}

TEST_CASE("broadcast tree: three consumers form the heap over [1,2,3]") {
    auto edges = build_broadcast_tree(0, {1, 2, 3});
    REQUIRE(edges.size() == 3);
    CHECK(edges[0] == std::pair<rank_id, rank_id>{0, 1});
    CHECK(edges[1] == std::pair<rank_id, rank_id>{0, 2});
    CHECK(edges[2] == std::pair<rank_id, rank_id>{1, 3});
    CHECK(tree_depth(edges, 0) == 2);
}

TEST_CASE("broadcast tree: full 8-rank collective") {
    std::vector<rank_id> receivers{1, 2, 3, 4, 5, 6, 7};
    auto edges = build_broadcast_tree(0, receivers);
    CHECK(edges.size() == 7);
    CHECK(tree_depth(edges, 0) == 3); // ceil(log2 8)
}

TEST_CASE("broadcast tree properties over random receiver sets") {
    splitmix64 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const rank_id nranks = 2 + rank_id(rng.next_below(31));
        rank_id source = rank_id(rng.next_below(nranks));
        std::set<rank_id> set;
        const std::size_t want = 1 + rng.next_below(nranks - 1);
        while (set.size() < want) {
            rank_id r = rank_id(rng.next_below(nranks));
            if (r != source) set.insert(r);
        }
        std::vector<rank_id> receivers(set.begin(), set.end());
        auto edges = build_broadcast_tree(source, receivers);

        // exactly one message per receiving rank
        CHECK(edges.size() == receivers.size());
        std::set<rank_id> reached{source};
        for (auto [p, c] : edges) {
            CHECK(reached.count(p) == 1); // parents appear before children
            CHECK(reached.count(c) == 0); // each rank receives once
            reached.insert(c);
        }
        CHECK(reached.size() == receivers.size() + 1);
        CHECK(tree_depth(edges, source) <= ceil_log2(receivers.size()) + 1);
    }
}

TEST_CASE("plan_transfers derives trees and caches owners") {
    simulated_fabric fab(4);
    context ctx(fab, 0, 1);
    handle h = make_f64(ctx, {1.0, 2.0});
    for (rank_id r : {1u, 2u, 3u}) ctx.fetch(h, r);
    ctx.stage();
    ctx.wait_staged();

    REQUIRE(ctx.planned().size() == 1);
    const auto& plan = ctx.planned()[0];
    CHECK(plan.source == 0);
    CHECK(plan.receivers == std::vector<rank_id>{1, 2, 3});
    REQUIRE(plan.tree.size() == 3);
    CHECK(plan.tree[0] == std::pair<rank_id, rank_id>{0, 1});
    CHECK(plan.tree[1] == std::pair<rank_id, rank_id>{0, 2});
    CHECK(plan.tree[2] == std::pair<rank_id, rank_id>{1, 3});
    CHECK(plan.to_string().find("src=0 tree=[(0,1),(0,2),(1,3)] tag=") != std::string::npos);

    // a later epoch re-reading the same revision finds it cached
    ctx.fetch(h, 1);
    ctx.sync();
    CHECK(ctx.planned().size() == 1);
}

TEST_CASE("plan_transfers rejects revisions nobody can source") {
    object_store store(0);
    dag d;
    kernel_spec kspec{"ghost", {arg_mode::in}, [](kernel_args&) {}};
    handle h = store.create_object(8, elem_type::f64, {}, false, 0);
    store.rev(h.id, 0).unset = true;
    op_record rec;
    rec.kernel = &kspec;
    rec.placement = 1;
    rec.args.push_back({arg_mode::in, h.id, 0, 0, false, false});
    d.append(std::move(rec));
    CHECK_THROWS_MATCHES(plan_transfers(d, 0, 1, store, 2), error,
                         Catch::Matchers::Predicate<error>([](const error& e) {
                             return e.code() == errc::unplaced_generator;
                         }));
}

TEST_CASE("plans computed independently on each rank are identical") {
    std::mutex mu;
    std::vector<std::string> dumps(4);
    run_ranks(4, 2, [&](context& ctx) {
        auto& bump = ctx.declare_kernel("bump", {arg_mode::inout}, [](kernel_args& args) {
            for (auto& v : args.out_as<double>(0)) v += 1.0;
        });
        handle h = make_f64(ctx, {0.0});
        for (rank_id r = 0; r < 4; ++r)
            scoped(ctx, r, [&] { ctx.record_call(bump, {h}); });
        ctx.sync();
        std::string dump;
        for (const auto& p : ctx.planned()) dump += p.to_string() + "\n";
        std::lock_guard lk(mu);
        dumps[ctx.rank()] = dump;
    });
    CHECK_FALSE(dumps[0].empty());
    for (const auto& d : dumps) CHECK(d == dumps[0]);
}

namespace {

/// Declares the i32 accumulate kernel and n replicas with the given
/// integer payloads, each homed on `home(i)`.
struct reduction_fixture {
    const kernel_spec* combine;
    std::vector<handle> replicas;

    reduction_fixture(context& ctx, const std::vector<std::int32_t>& values,
                      const std::function<rank_id(std::size_t)>& home) {
        combine = &ctx.declare_kernel("iacc", {arg_mode::in, arg_mode::inout},
                                      [](kernel_args& args) {
                                          auto src = args.in_as<std::int32_t>(0);
                                          auto dst = args.out_as<std::int32_t>(1);
                                          for (std::size_t i = 0; i < dst.size(); ++i)
                                              dst[i] += src[i];
                                      });
        for (std::size_t i = 0; i < values.size(); ++i)
            scoped(ctx, home(i), [&] {
                std::vector<std::int32_t> payload{values[i]};
                auto bytes = to_bytes(payload);
                replicas.push_back(ctx.create(bytes.size(), elem_type::i32, bytes));
            });
    }
};

/// (w, w-s) pairs actually recorded, in order.
std::vector<std::pair<std::size_t, std::size_t>> recorded_pairs(const context& ctx,
                                                                const reduction_fixture& fx,
                                                                op_id first_op) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    const auto& d = ctx.graph();
    for (op_id id = first_op; id < d.size(); ++id) {
        const auto& rec = d.op(id);
        if (rec.kernel != fx.combine) continue;
        std::size_t src = 0, dst = 0;
        for (std::size_t i = 0; i < fx.replicas.size(); ++i) {
            if (fx.replicas[i].id == rec.args[0].object) src = i;
            if (fx.replicas[i].id == rec.args[1].object) dst = i;
        }
        pairs.emplace_back(src, dst);
    }
    return pairs;
}

std::size_t levels_of(const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    std::set<std::size_t> strides;
    for (auto [w, d] : pairs) strides.insert(w - d);
    return strides.size();
}

} // namespace

TEST_CASE("reduction schedule: n=4 doubles the stride over two levels") {
    local_runtime rt(1);
    reduction_fixture fx(rt.ctx, {1, 2, 3, 4}, [](std::size_t) { return 0; });
    op_id first = rt.ctx.graph().size();
    handle out = apply_reduction_schedule(rt.ctx, *fx.combine, fx.replicas);
    auto pairs = recorded_pairs(rt.ctx, fx, first);
    CHECK(pairs == std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}, {3, 2}, {2, 0}});
    CHECK(levels_of(pairs) == 2);
    rt.ctx.sync();
    CHECK(out == fx.replicas[0]);
    CHECK(rt.ctx.read_as<std::int32_t>(out)[0] == 10);
}

TEST_CASE("reduction schedule: n=1 records nothing") {
    local_runtime rt(1);
    reduction_fixture fx(rt.ctx, {42}, [](std::size_t) { return 0; });
    op_id before = rt.ctx.graph().size();
    handle out = apply_reduction_schedule(rt.ctx, *fx.combine, fx.replicas);
    CHECK(rt.ctx.graph().size() == before);
    CHECK(out == fx.replicas[0]);
}

TEST_CASE("reduction schedule: empty input is rejected") {
    local_runtime rt(1);
    reduction_fixture fx(rt.ctx, {1}, [](std::size_t) { return 0; });
    CHECK_THROWS_MATCHES(
        apply_reduction_schedule(rt.ctx, *fx.combine, std::span<const handle>{}), error,
        Catch::Matchers::Predicate<error>(
            [](const error& e) { return e.code() == errc::empty_reduction; }));
}

TEST_CASE("reduction schedule matches the left-fold oracle for any n") {
    splitmix64 rng(5);
    for (std::size_t n : {2u, 3u, 5u, 7u, 16u, 21u}) {
        std::vector<std::int32_t> values(n);
        for (auto& v : values) v = std::int32_t(rng.next_below(1000));
        // independent oracle: plain left fold
        std::int32_t expected = 0;
        for (auto v : values) expected += v;

        local_runtime rt(2);
        reduction_fixture fx(rt.ctx, values, [](std::size_t) { return 0; });
        op_id first = rt.ctx.graph().size();
        handle out = apply_reduction_schedule(rt.ctx, *fx.combine, fx.replicas);
        auto pairs = recorded_pairs(rt.ctx, fx, first);
        CHECK(pairs.size() == n - 1);
        CHECK(levels_of(pairs) == ceil_log2(n));
        rt.ctx.sync();
        CHECK(rt.ctx.read_as<std::int32_t>(out)[0] == expected);
    }
}

TEST_CASE("distributed reduction lands each combine on its destination rank") {
    std::mutex mu;
    std::int32_t result = -1;
    auto results = run_ranks(4, 1, [&](context& ctx) {
        reduction_fixture fx(ctx, {10, 20, 30, 40, 50},
                             [](std::size_t i) { return rank_id(i % 4); });
        op_id first = ctx.graph().size();
        handle out = apply_reduction_schedule(ctx, *fx.combine, fx.replicas);
        // every combine is placed where its destination replica lives
        for (op_id id = first; id < ctx.graph().size(); ++id) {
            const auto& rec = ctx.graph().op(id);
            if (rec.kernel != fx.combine) continue;
            std::size_t dst = 0;
            for (std::size_t i = 0; i < fx.replicas.size(); ++i)
                if (fx.replicas[i].id == rec.args[1].object) dst = i;
            CHECK(rec.placement == rank_id(dst % 4));
        }
        ctx.fetch(out, 0);
        ctx.sync();
        if (ctx.rank() == 0) {
            std::lock_guard lk(mu);
            result = ctx.read_as<std::int32_t>(out)[0];
        }
    });
    CHECK(result == 150);
}

TEST_CASE("no transfer happens for locally consumed revisions") {
    simulated_fabric fab(2);
    run_ranks(fab, 1, [](context& ctx) {
        auto& bump = ctx.declare_kernel("bump", {arg_mode::inout}, [](kernel_args& args) {
            for (auto& v : args.out_as<double>(0)) v += 1.0;
        });
        scoped(ctx, 1, [&] {
            handle h = make_f64(ctx, {0.0});
            for (int i = 0; i < 5; ++i) ctx.record_call(bump, {h});
        });
        ctx.sync();
    });
    CHECK(fab.total_messages() == 0);
}
