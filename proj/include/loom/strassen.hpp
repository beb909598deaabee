#pragma once

#include "context.hpp"
#include "tiled.hpp"

namespace loom {

namespace detail {

/// One recursion node: seven half-size multiplies instead of eight.
/// Accumulates a * b onto c, so c (and the m1..m3 temporaries, created
/// fresh here) must start from zero. Recurses until a view is a single
/// tile, which drops to the accumulating tile multiply.
inline void strassen_node(context& ctx, const tile_kernels& tk, const subset_view& a,
                          const subset_view& b, const subset_view& c) {
    const std::uint64_t nt = c.nt() / 2;
    if (nt == 0) {
        ctx.record_call(*tk.gemm, {a.tile(0, 0), b.tile(0, 0), c.tile(0, 0)});
        return;
    }
    const std::uint64_t half = nt;
    const std::uint64_t edge = half * 2;

    auto quad = [&](const subset_view& v, std::uint64_t qi, std::uint64_t qj) {
        return v.subset(qi * half, qj * half, half, half);
    };

    // temporaries live as their own versioned tile grids
    const std::uint64_t tile_elems = ctx.objects().at(c.tile(0, 0)).size_bytes / sizeof(double);
    const std::uint64_t tib = static_cast<std::uint64_t>(std::llround(std::sqrt(double(tile_elems))));
    tiled_matrix m1 = tiled_matrix::fresh(ctx, half * tib, half * tib, tib);
    tiled_matrix m2 = tiled_matrix::fresh(ctx, half * tib, half * tib, tib);
    tiled_matrix m3 = tiled_matrix::fresh(ctx, half * tib, half * tib, tib);
    tiled_matrix m4 = tiled_matrix::fresh(ctx, half * tib, half * tib, tib);
    tiled_matrix m5 = tiled_matrix::fresh(ctx, half * tib, half * tib, tib);
    tiled_matrix d = tiled_matrix::fresh(ctx, edge * tib, edge * tib, tib);
    tiled_matrix e = tiled_matrix::fresh(ctx, edge * tib, edge * tib, tib);

    record_tilewise(ctx, *tk.assign, a, whole(d));
    record_tilewise(ctx, *tk.assign, quad(a, 0, 0), whole(m4));
    record_tilewise(ctx, *tk.assign, b, whole(e));
    record_tilewise(ctx, *tk.assign, quad(b, 0, 0), whole(m5));

    record_tilewise(ctx, *tk.add, quad(a, 0, 1), quad(whole(d), 0, 0));
    record_tilewise(ctx, *tk.sub, quad(a, 1, 1), quad(whole(d), 0, 1));
    record_tilewise(ctx, *tk.add, quad(a, 1, 0), quad(whole(d), 1, 1));
    record_tilewise(ctx, *tk.sub, quad(a, 0, 0), quad(whole(d), 1, 0));

    record_tilewise(ctx, *tk.add, quad(b, 0, 1), quad(whole(e), 0, 0));
    record_tilewise(ctx, *tk.sub, quad(b, 1, 1), quad(whole(e), 0, 1));
    record_tilewise(ctx, *tk.add, quad(b, 1, 0), quad(whole(e), 1, 1));
    record_tilewise(ctx, *tk.sub, quad(b, 0, 0), quad(whole(e), 1, 0));

    record_tilewise(ctx, *tk.add, quad(a, 1, 1), whole(m4));
    record_tilewise(ctx, *tk.add, quad(b, 1, 1), whole(m5));

    strassen_node(ctx, tk, quad(whole(d), 0, 1), quad(whole(e), 1, 1), quad(c, 0, 0));
    strassen_node(ctx, tk, quad(a, 0, 0), quad(whole(e), 0, 1), quad(c, 0, 1));
    strassen_node(ctx, tk, quad(whole(d), 1, 1), quad(b, 0, 0), quad(c, 1, 0));
    strassen_node(ctx, tk, quad(whole(d), 1, 0), quad(whole(e), 0, 0), quad(c, 1, 1));

    strassen_node(ctx, tk, whole(m4), whole(m5), whole(m1));
    strassen_node(ctx, tk, quad(whole(d), 0, 0), quad(b, 1, 1), whole(m2));
    strassen_node(ctx, tk, quad(a, 1, 1), quad(whole(e), 1, 0), whole(m3));

    record_tilewise(ctx, *tk.add, quad(c, 0, 1), quad(c, 1, 1));
    record_tilewise(ctx, *tk.sub, quad(c, 1, 0), quad(c, 1, 1));

    record_tilewise(ctx, *tk.add, whole(m1), quad(c, 0, 0));
    record_tilewise(ctx, *tk.add, whole(m1), quad(c, 1, 1));
    record_tilewise(ctx, *tk.add, whole(m2), quad(c, 0, 1));
    record_tilewise(ctx, *tk.sub, whole(m2), quad(c, 0, 0));
    record_tilewise(ctx, *tk.add, whole(m3), quad(c, 0, 0));
    record_tilewise(ctx, *tk.add, whole(m3), quad(c, 1, 0));
}

} // namespace detail

/// Recursive seven-multiply matrix multiplication over tile grids:
/// c += a * b with c starting from zero. Grids must be square with a
/// power-of-two tile count per edge.
inline void strassen(context& ctx, const tiled_matrix& a, const tiled_matrix& b,
                     tiled_matrix& c) {
    if (a.rows() != a.cols() || b.rows() != b.cols() || c.rows() != c.cols() ||
        a.rows() != b.rows() || a.rows() != c.rows())
        fail(errc::shape, "strassen requires equal square matrices");
    if (a.ib() != b.ib() || a.ib() != c.ib()) fail(errc::shape, "tile edges differ");
    const std::uint64_t nt = c.nt();
    if (nt == 0 || (nt & (nt - 1)) != 0)
        fail(errc::shape, "strassen requires a power-of-two tile grid");
    const auto tk = tile_kernels::ensure(ctx);
    detail::strassen_node(ctx, tk, whole(a), whole(b), whole(c));
}

} // namespace loom
