#include <catch2/catch_amalgamated.hpp>
#include <loom/gemm.hpp>
#include <loom/mapreduce.hpp>
#include <loom/random.hpp>
#include <loom/strassen.hpp>
#include <loom/tiled.hpp>

#include <map>
#include <mutex>
#include <set>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace loom;
using namespace loom::testing;

namespace {

std::size_t count_ops(const context& ctx, const std::string& kernel_name) {
    std::size_t n = 0;
    for (const auto& rec : ctx.graph())
        if (rec.kernel->name == kernel_name) ++n;
    return n;
}

std::vector<double> dense_of(const context& ctx, const tiled_matrix& m) { return to_dense(ctx, m); }

} // namespace

TEST_CASE("tile multiply: identity, fixed 2x2 case, accumulation") {
    local_runtime rt(1);
    auto& ctx = rt.ctx;
    auto tk = tile_kernels::ensure(ctx);

    SECTION("identity leaves the other factor") {
        // IB=2 identity, column-major
        handle a = make_f64(ctx, {1, 0, 0, 1});
        handle x = make_f64(ctx, {3, 4, 5, 6});
        handle c = make_f64(ctx, {0, 0, 0, 0});
        ctx.record_call(*tk.gemm, {a, x, c});
        ctx.sync();
        CHECK(ctx.read_as<double>(c) == std::vector<double>{3, 4, 5, 6});
    }
    SECTION("hand-checked 2x2 product") {
        // a=[[1,2],[3,4]], b=[[5,6],[7,8]] -> a*b=[[19,22],[43,50]]
        handle a = make_f64(ctx, {1, 3, 2, 4});
        handle b = make_f64(ctx, {5, 7, 6, 8});
        handle c = make_f64(ctx, {0, 0, 0, 0});
        ctx.record_call(*tk.gemm, {a, b, c});
        ctx.sync();
        CHECK(ctx.read_as<double>(c) == std::vector<double>{19, 43, 22, 50});
    }
    SECTION("the multiply accumulates") {
        handle a = make_f64(ctx, {1, 3, 2, 4});
        handle b = make_f64(ctx, {5, 7, 6, 8});
        handle c = make_f64(ctx, {0, 0, 0, 0});
        ctx.record_call(*tk.gemm, {a, b, c});
        ctx.record_call(*tk.gemm, {a, b, c});
        ctx.sync();
        CHECK(ctx.read_as<double>(c) == std::vector<double>{38, 86, 44, 100});
    }
}

TEST_CASE("distributed multiply on a single tile degenerates to one product") {
    local_runtime rt(1);
    auto& ctx = rt.ctx;
    auto a = tiled_matrix::random(ctx, 4, 4, 4, 1);
    auto b = tiled_matrix::random(ctx, 4, 4, 4, 2);
    auto c = tiled_matrix::zeros(ctx, 4, 4, 4);
    distributed_gemm(ctx, a, b, c);
    CHECK(count_ops(ctx, "gemm") == 1);
    auto got = dense_of(ctx, c);
    auto want = oracles::naive_multiply(dense_of(ctx, a), dense_of(ctx, b), 4, 4, 4);
    CHECK(oracles::max_rel_error(got, want) < 1e-15);
}

TEST_CASE("distributed multiply matches the dense oracle across ranks") {
    const std::uint64_t n = 32, ib = 8;
    std::mutex mu;
    std::vector<double> got;
    run_ranks(4, 2, [&](context& ctx) {
        auto a = tiled_matrix::random(ctx, n, n, ib, 11);
        auto b = tiled_matrix::random(ctx, n, n, ib, 22);
        auto c = tiled_matrix::zeros(ctx, n, n, ib);
        distributed_gemm(ctx, a, b, c, {2, 2});
        fetch_all(ctx, c, 0);
        ctx.sync();
        if (ctx.rank() == 0) {
            std::lock_guard lk(mu);
            got = dense_of(ctx, c);
        }
    });

    local_runtime ref(1);
    auto a = tiled_matrix::random(ref.ctx, n, n, ib, 11);
    auto b = tiled_matrix::random(ref.ctx, n, n, ib, 22);
    ref.ctx.sync();
    auto want = oracles::naive_multiply(dense_of(ref.ctx, a), dense_of(ref.ctx, b), n, n, n);
    REQUIRE(got.size() == want.size());
    CHECK(oracles::max_rel_error(got, want) <= 1e-12);
}

TEST_CASE("integer-valued multiply is bitwise identical across rank counts") {
    const std::uint64_t n = 16, ib = 4;
    auto run_p = [&](rank_id nranks) {
        std::mutex mu;
        std::vector<std::byte> bytes;
        run_ranks(nranks, 2, [&](context& ctx) {
            auto a = tiled_matrix::random_integers(ctx, n, n, ib, 5);
            auto b = tiled_matrix::random_integers(ctx, n, n, ib, 6);
            auto c = tiled_matrix::zeros(ctx, n, n, ib);
            distributed_gemm(ctx, a, b, c, {1, 1});
            fetch_all(ctx, c, 0);
            ctx.sync();
            if (ctx.rank() == 0) {
                std::lock_guard lk(mu);
                for (std::uint64_t i = 0; i < c.mt(); ++i)
                    for (std::uint64_t j = 0; j < c.nt(); ++j) {
                        auto t = ctx.read_bytes(c.tile(i, j));
                        bytes.insert(bytes.end(), t.begin(), t.end());
                    }
            }
        });
        return bytes;
    };
    auto p1 = run_p(1);
    auto p2 = run_p(2);
    auto p4 = run_p(4);
    REQUIRE_FALSE(p1.empty());
    CHECK(p1 == p2);
    CHECK(p1 == p4);
}

TEST_CASE("strassen base case is a single product") {
    local_runtime rt(1);
    auto& ctx = rt.ctx;
    auto a = tiled_matrix::random(ctx, 8, 8, 8, 1);
    auto b = tiled_matrix::random(ctx, 8, 8, 8, 2);
    auto c = tiled_matrix::fresh(ctx, 8, 8, 8);
    strassen(ctx, a, b, c);
    CHECK(count_ops(ctx, "gemm") == 1);
}

TEST_CASE("strassen records seven products per recursion level") {
    local_runtime rt(1);
    auto& ctx = rt.ctx;
    auto a = tiled_matrix::random(ctx, 8, 8, 4, 1);
    auto b = tiled_matrix::random(ctx, 8, 8, 4, 2);
    auto c = tiled_matrix::fresh(ctx, 8, 8, 4);
    strassen(ctx, a, b, c); // 2x2 tile grid: one level
    CHECK(count_ops(ctx, "gemm") == 7);
    ctx.sync();
    auto want = oracles::naive_multiply(dense_of(ctx, a), dense_of(ctx, b), 8, 8, 8);
    CHECK(oracles::max_rel_error(dense_of(ctx, c), want) <= 1e-12);
}

TEST_CASE("strassen matches the oracle over two recursion levels") {
    for (unsigned workers : {1u, 8u}) {
        local_runtime rt(workers);
        auto& ctx = rt.ctx;
        const std::uint64_t n = 64, ib = 16; // 4x4 tile grid
        auto a = tiled_matrix::random(ctx, n, n, ib, 31);
        auto b = tiled_matrix::random(ctx, n, n, ib, 32);
        auto c = tiled_matrix::fresh(ctx, n, n, ib);
        strassen(ctx, a, b, c);
        CHECK(count_ops(ctx, "gemm") == 49); // 7^2
        ctx.sync();
        auto want = oracles::naive_multiply(dense_of(ctx, a), dense_of(ctx, b), n, n, n);
        CHECK(oracles::max_rel_error(dense_of(ctx, c), want) <= 1e-8);
    }
}

TEST_CASE("strassen rejects non-power-of-two grids") {
    local_runtime rt(1);
    auto& ctx = rt.ctx;
    auto a = tiled_matrix::random(ctx, 12, 12, 4, 1);
    auto b = tiled_matrix::random(ctx, 12, 12, 4, 2);
    auto c = tiled_matrix::fresh(ctx, 12, 12, 4);
    CHECK_THROWS_MATCHES(strassen(ctx, a, b, c), error,
                         Catch::Matchers::Predicate<error>(
                             [](const error& e) { return e.code() == errc::shape; }));
}

namespace {

kv_pairs int_pairs(std::initializer_list<std::pair<std::int64_t, std::int32_t>> items) {
    kv_pairs out;
    for (auto [k, v] : items) {
        std::vector<std::byte> bytes(sizeof v);
        std::memcpy(bytes.data(), &v, sizeof v);
        out.emplace_back(k, std::move(bytes));
    }
    return out;
}

std::vector<std::pair<std::int64_t, std::int32_t>> as_ints(const kv_pairs& pairs) {
    std::vector<std::pair<std::int64_t, std::int32_t>> out;
    for (const auto& [k, v] : pairs) {
        std::int32_t x;
        std::memcpy(&x, v.data(), sizeof x);
        out.emplace_back(k, x);
    }
    return out;
}

} // namespace

TEST_CASE("identity map leaves the store unchanged up to grouping") {
    local_runtime rt(1);
    auto store = kv_store::from_local(rt.ctx, int_pairs({{3, 30}, {1, 10}, {1, 11}}));
    auto mapped = store.map([](std::int64_t k, const std::vector<std::span<const std::byte>>& vs) {
        kv_pairs out;
        for (auto v : vs) out.emplace_back(k, std::vector<std::byte>(v.begin(), v.end()));
        return out;
    });
    rt.ctx.sync();
    auto pairs = as_ints(kv_store::decode(rt.ctx.objects().read_bytes(mapped.parts()[0])));
    CHECK(pairs == std::vector<std::pair<std::int64_t, std::int32_t>>{{1, 10}, {1, 11}, {3, 30}});
}

TEST_CASE("bucket keys follow the top-bits shift") {
    sort_config cfg{2};
    CHECK(cfg.bucket(0) == 0);
    CHECK(cfg.bucket(1 << 30) == 2);
    CHECK(cfg.bucket(0x7FFFFFFF) == 3);

    // monotone: v1 <= v2 implies bucket(v1) <= bucket(v2)
    splitmix64 rng(3);
    sort_config cfg8{8};
    for (int i = 0; i < 1000; ++i) {
        std::int32_t v1 = rng.next_i31();
        std::int32_t v2 = rng.next_i31();
        if (v1 > v2) std::swap(v1, v2);
        CHECK(cfg8.bucket(v1) <= cfg8.bucket(v2));
    }
}

TEST_CASE("shuffle co-locates keys on their owning rank") {
    std::mutex mu;
    std::map<rank_id, std::set<std::int64_t>> keys_by_rank;
    run_ranks(2, 1, [&](context& ctx) {
        // rank 0 contributes doc 0, rank 1 doc 1
        kv_pairs local;
        if (ctx.rank() == 0) local = int_pairs({{0, 100}});
        if (ctx.rank() == 1) local = int_pairs({{1, 200}});
        auto store = kv_store::from_local(ctx, local);
        auto mapped = store.map([](std::int64_t, const std::vector<std::span<const std::byte>>&) {
            return int_pairs({{0, 0}, {1, 1}, {2, 2}, {3, 3}});
        });
        ctx.sync();
        auto mine = kv_store::decode(ctx.objects().read_bytes(mapped.parts()[ctx.rank()]));
        std::lock_guard lk(mu);
        for (const auto& [k, v] : mine) keys_by_rank[ctx.rank()].insert(k);
    });
    CHECK(keys_by_rank[0] == std::set<std::int64_t>{0, 2});
    CHECK(keys_by_rank[1] == std::set<std::int64_t>{1, 3});
}

TEST_CASE("reduce sorts within a bucket") {
    local_runtime rt(1);
    auto store = kv_store::from_local(rt.ctx, int_pairs({{7, 3}, {7, 1}, {7, 2}}));
    auto reduced = store.reduce([](std::int64_t k,
                                   const std::vector<std::span<const std::byte>>& vs) {
        std::vector<std::int32_t> ints;
        for (auto v : vs) {
            std::int32_t x;
            std::memcpy(&x, v.data(), sizeof x);
            ints.push_back(x);
        }
        std::sort(ints.begin(), ints.end());
        kv_pairs out;
        for (auto x : ints) {
            std::vector<std::byte> b(sizeof x);
            std::memcpy(b.data(), &x, sizeof x);
            out.emplace_back(k, std::move(b));
        }
        return out;
    });
    rt.ctx.sync();
    auto pairs = as_ints(kv_store::decode(rt.ctx.objects().read_bytes(reduced.parts()[0])));
    CHECK(pairs == std::vector<std::pair<std::int64_t, std::int32_t>>{{7, 1}, {7, 2}, {7, 3}});
}

TEST_CASE("empty store maps and reduces to empty") {
    local_runtime rt(1);
    auto store = kv_store::from_local(rt.ctx, {});
    auto out = store
                   .map([](std::int64_t k, const std::vector<std::span<const std::byte>>& vs) {
                       kv_pairs o;
                       for (auto v : vs) o.emplace_back(k, std::vector<std::byte>(v.begin(), v.end()));
                       return o;
                   })
                   .reduce([](std::int64_t k, const std::vector<std::span<const std::byte>>& vs) {
                       kv_pairs o;
                       for (auto v : vs) o.emplace_back(k, std::vector<std::byte>(v.begin(), v.end()));
                       return o;
                   });
    rt.ctx.sync();
    CHECK(kv_store::decode(rt.ctx.objects().read_bytes(out.parts()[0])).empty());
}

TEST_CASE("a combiner shrinks shuffle traffic without changing results") {
    auto run = [](bool combine) {
        simulated_fabric fab(2);
        std::mutex mu;
        std::int64_t total = 0;
        std::uint64_t bytes = 0;
        run_ranks(fab, 1, [&](context& ctx) {
            kv_pairs local;
            for (std::int32_t i = 0; i < 100; ++i)
                local = [&] {
                    auto p = local;
                    std::vector<std::byte> b(sizeof i);
                    std::memcpy(b.data(), &i, sizeof i);
                    p.emplace_back(ctx.rank(), std::move(b));
                    return p;
                }();
            auto store = kv_store::from_local(ctx, local);
            kv_fn sum = [](std::int64_t k, const std::vector<std::span<const std::byte>>& vs) {
                std::int64_t s = 0;
                for (auto v : vs) {
                    std::int32_t x;
                    std::memcpy(&x, v.data(), sizeof x);
                    s += x;
                }
                std::vector<std::byte> b(sizeof s);
                std::memcpy(b.data(), &s, sizeof s);
                kv_pairs out;
                out.emplace_back((k + 1) % 2, std::move(b)); // re-key onto the other rank
                return out;
            };
            kv_fn resum = [](std::int64_t k, const std::vector<std::span<const std::byte>>& vs) {
                std::int64_t s = 0;
                for (auto v : vs) {
                    std::int64_t x;
                    std::memcpy(&x, v.data(), sizeof x);
                    s += x;
                }
                std::vector<std::byte> b(sizeof s);
                std::memcpy(b.data(), &s, sizeof s);
                kv_pairs out;
                out.emplace_back(k, std::move(b));
                return out;
            };
            // identity map emitting one record per value, optionally combined
            kv_fn explode = [](std::int64_t k, const std::vector<std::span<const std::byte>>& vs) {
                kv_pairs out;
                for (auto v : vs) {
                    std::int32_t x;
                    std::memcpy(&x, v.data(), sizeof x);
                    std::int64_t wide = x;
                    std::vector<std::byte> b(sizeof wide);
                    std::memcpy(b.data(), &wide, sizeof wide);
                    out.emplace_back((k + 1) % 2, std::move(b)); // crosses to the other rank
                }
                return out;
            };
            auto reduced = (combine ? store.map(explode, resum) : store.map(explode))
                               .reduce(resum);
            handle all = reduced.gather(0);
            ctx.sync();
            if (ctx.rank() == 0) {
                std::lock_guard lk(mu);
                for (const auto& [k, v] : kv_store::decode(ctx.objects().read_bytes(all))) {
                    std::int64_t x;
                    std::memcpy(&x, v.data(), sizeof x);
                    total += x;
                }
            }
            (void)sum;
        });
        bytes = fab.total_bytes();
        return std::pair{total, bytes};
    };
    auto [plain_total, plain_bytes] = run(false);
    auto [combined_total, combined_bytes] = run(true);
    CHECK(plain_total == combined_total);
    CHECK(combined_bytes < plain_bytes);
}

TEST_CASE("sort handles trivial inputs") {
    local_runtime rt(1);
    SECTION("empty") {
        handle out = sort_integers(rt.ctx, {}, 4, sort_config{4});
        rt.ctx.sync();
        CHECK(rt.ctx.read_as<std::int32_t>(out).empty());
    }
    SECTION("small fixed list") {
        std::vector<std::int32_t> vals{5, 1, 5, 0};
        handle out = sort_integers(rt.ctx, vals, 2, sort_config{4});
        rt.ctx.sync();
        CHECK(rt.ctx.read_as<std::int32_t>(out) == std::vector<std::int32_t>{0, 1, 5, 5});
    }
}

TEST_CASE("sort rejects negative values") {
    local_runtime rt(1);
    std::vector<std::int32_t> vals{3, -1};
    CHECK_THROWS_MATCHES(sort_integers(rt.ctx, vals, 2, sort_config{4}), error,
                         Catch::Matchers::Predicate<error>(
                             [](const error& e) { return e.code() == errc::domain; }));
}

TEST_CASE("distributed sort equals the standard sort oracle") {
    splitmix64 rng(777);
    std::vector<std::int32_t> values(10000);
    for (auto& v : values) v = 1 + std::int32_t(rng.next() % 0x7FFFFFFEull);

    std::mutex mu;
    std::vector<std::int32_t> got;
    run_ranks(2, 2, [&](context& ctx) {
        handle out = sort_integers(ctx, values, 128, sort_config{4});
        ctx.sync();
        if (ctx.rank() == 0) {
            std::lock_guard lk(mu);
            got = ctx.read_as<std::int32_t>(out);
        }
    });
    auto want = oracles::sorted_copy(values);
    CHECK(got == want);

    // permutation + order invariants, independent of the oracle
    CHECK(std::is_sorted(got.begin(), got.end()));
    CHECK(std::multiset<std::int32_t>(got.begin(), got.end()) ==
          std::multiset<std::int32_t>(values.begin(), values.end()));
}
