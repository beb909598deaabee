#pragma once

#include "context.hpp"
#include "tiled.hpp"

namespace loom {

/// Block-loop grouping for the distributed multiply. NP and NQ control
/// how many block rows/columns of output the loop nest touches before
/// each sync; the rank formula spreads replicas block-cyclically.
struct dist_gemm_config {
    std::uint64_t np = 1;
    std::uint64_t nq = 1;
};

/// Distributed tiled multiply-accumulate with logarithmic reduction:
/// C += A * B. Every output tile accumulates its a.nt partial products
/// in per-rank replica accumulators which a binary combining tree
/// collapses in ceil(log2 a.nt) levels. Replica 0 is seeded from C's
/// prior tile, the rest start at zero, preserving accumulate semantics.
inline void distributed_gemm(context& ctx, const tiled_matrix& a, const tiled_matrix& b,
                             tiled_matrix& c, const dist_gemm_config& cfg = {}) {
    if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols())
        fail(errc::shape, "gemm shapes do not conform");
    if (a.ib() != b.ib() || a.ib() != c.ib()) fail(errc::shape, "tile edges differ");
    if (cfg.np == 0 || cfg.nq == 0 || a.mt() % cfg.np != 0 || b.nt() % cfg.nq != 0)
        fail(errc::shape, "block factors must divide the tile grid");

    const auto tk = tile_kernels::ensure(ctx);
    const std::uint64_t nranks = ctx.nranks();
    const std::uint64_t depth = a.nt(); // replicas per output tile
    auto replica_rank = [&](std::uint64_t i, std::uint64_t k, std::uint64_t m) {
        return rank_id(((i % cfg.np) * cfg.nq + (k % cfg.nq) + m) % nranks);
    };

    for (std::uint64_t ii = 0; ii < a.mt() / cfg.np; ++ii)
        for (std::uint64_t kk = 0; kk < b.nt() / cfg.nq; ++kk) {
            for (std::uint64_t i = ii * cfg.np; i < (ii + 1) * cfg.np; ++i)
                for (std::uint64_t k = kk * cfg.nq; k < (kk + 1) * cfg.nq; ++k) {
                    std::vector<handle> replicas(depth);
                    for (std::uint64_t m = 0; m < depth; ++m)
                        scoped(ctx, replica_rank(i, k, m), [&] {
                            replicas[m] = ctx.create(a.ib() * a.ib() * sizeof(double),
                                                     elem_type::f64);
                        });
                    scoped(ctx, replica_rank(i, k, 0),
                           [&] { ctx.record_call(*tk.assign, {c.tile(i, k), replicas[0]}); });
                    for (std::uint64_t j = 0; j < depth; ++j) {
                        const std::uint64_t m = (depth - (k % depth) + j) % depth;
                        scoped(ctx, replica_rank(i, k, m), [&] {
                            ctx.record_call(*tk.gemm, {a.tile(i, j), b.tile(j, k), replicas[m]});
                        });
                    }
                    handle total = apply_reduction_schedule(ctx, *tk.add, replicas);
                    scoped(ctx, replica_rank(i, k, 0),
                           [&] { ctx.record_call(*tk.assign, {total, c.tile(i, k)}); });
                }
            ctx.sync();
        }
}

} // namespace loom
