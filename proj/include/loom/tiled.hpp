#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "context.hpp"
#include "random.hpp"
#include "types.hpp"

namespace loom {

/// Matrix stored as a grid of independently versioned IB x IB tiles,
/// column-major within each tile. Dimensions must divide exactly.
class tiled_matrix {
public:
    tiled_matrix() = default;

    /// Tiles with literal zero payloads, owned by the current scope rank.
    static tiled_matrix zeros(context& ctx, std::uint64_t rows, std::uint64_t cols,
                              std::uint64_t ib) {
        tiled_matrix m(rows, cols, ib);
        std::vector<std::byte> zero(ib * ib * sizeof(double));
        for (std::uint64_t t = 0; t < m.mt_ * m.nt_; ++t)
            m.tiles_.push_back(ctx.create(zero.size(), elem_type::f64, zero));
        return m;
    }

    /// Output-only tiles: no payload until first written; a first
    /// accumulation sees zeros.
    static tiled_matrix fresh(context& ctx, std::uint64_t rows, std::uint64_t cols,
                              std::uint64_t ib) {
        tiled_matrix m(rows, cols, ib);
        for (std::uint64_t t = 0; t < m.mt_ * m.nt_; ++t)
            m.tiles_.push_back(ctx.create(ib * ib * sizeof(double), elem_type::f64));
        return m;
    }

    /// Deterministically seeded uniform [0,1) entries; tile (i,j) draws
    /// from its own substream so any rank could materialize any tile.
    static tiled_matrix random(context& ctx, std::uint64_t rows, std::uint64_t cols,
                               std::uint64_t ib, std::uint64_t seed) {
        tiled_matrix m(rows, cols, ib);
        for (std::uint64_t t = 0; t < m.mt_ * m.nt_; ++t) {
            m.tiles_.push_back(ctx.create_with(ib * ib * sizeof(double), elem_type::f64, [&] {
                splitmix64 rng(mix_seed(seed, t));
                std::vector<double> vals(ib * ib);
                for (auto& v : vals) v = rng.next_double();
                std::vector<std::byte> bytes(vals.size() * sizeof(double));
                std::memcpy(bytes.data(), vals.data(), bytes.size());
                return bytes;
            }));
        }
        return m;
    }

    /// Uniform small non-negative integers stored as doubles; sums over
    /// them stay exact in f64, so reductions are bitwise order-free.
    static tiled_matrix random_integers(context& ctx, std::uint64_t rows, std::uint64_t cols,
                                        std::uint64_t ib, std::uint64_t seed) {
        tiled_matrix m(rows, cols, ib);
        for (std::uint64_t t = 0; t < m.mt_ * m.nt_; ++t) {
            m.tiles_.push_back(ctx.create_with(ib * ib * sizeof(double), elem_type::f64, [&] {
                splitmix64 rng(mix_seed(seed, t));
                std::vector<double> vals(ib * ib);
                for (auto& v : vals) v = double(rng.next_below(8));
                std::vector<std::byte> bytes(vals.size() * sizeof(double));
                std::memcpy(bytes.data(), vals.data(), bytes.size());
                return bytes;
            }));
        }
        return m;
    }

    std::uint64_t rows() const { return rows_; }
    std::uint64_t cols() const { return cols_; }
    std::uint64_t ib() const { return ib_; }
    std::uint64_t mt() const { return mt_; }
    std::uint64_t nt() const { return nt_; }

    handle tile(std::uint64_t i, std::uint64_t j) const { return tiles_.at(i * nt_ + j); }

private:
    tiled_matrix(std::uint64_t rows, std::uint64_t cols, std::uint64_t ib)
        : rows_(rows), cols_(cols), ib_(ib), mt_(rows / ib), nt_(cols / ib) {
        if (ib == 0 || rows % ib != 0 || cols % ib != 0)
            fail(errc::shape, "matrix dimensions must divide the tile edge exactly");
        tiles_.reserve(mt_ * nt_);
    }

    std::uint64_t rows_ = 0, cols_ = 0, ib_ = 0, mt_ = 0, nt_ = 0;
    std::vector<handle> tiles_;
};

/// Rectangular window onto a tile grid, in tile coordinates. Aliases the
/// parent's tiles; no copies.
class subset_view {
public:
    subset_view(const tiled_matrix& m, std::uint64_t ti, std::uint64_t tj, std::uint64_t ht,
                std::uint64_t wt)
        : m_(&m), ti_(ti), tj_(tj), ht_(ht), wt_(wt) {
        if (ti + ht > m.mt() || tj + wt > m.nt()) fail(errc::shape, "subset exceeds tile grid");
    }

    std::uint64_t mt() const { return ht_; }
    std::uint64_t nt() const { return wt_; }

    handle tile(std::uint64_t i, std::uint64_t j) const { return m_->tile(ti_ + i, tj_ + j); }

    subset_view subset(std::uint64_t ti, std::uint64_t tj, std::uint64_t ht,
                       std::uint64_t wt) const {
        return subset_view(*m_, ti_ + ti, tj_ + tj, ht, wt);
    }

private:
    const tiled_matrix* m_;
    std::uint64_t ti_, tj_, ht_, wt_;
};

inline subset_view whole(const tiled_matrix& m) { return subset_view(m, 0, 0, m.mt(), m.nt()); }

/// The elementwise tile kernels every matrix workload records. Declared
/// once per context on first use.
struct tile_kernels {
    const kernel_spec* gemm;   // c += a * b
    const kernel_spec* assign; // dst = src
    const kernel_spec* add;    // dst += src
    const kernel_spec* sub;    // dst -= src

    static tile_kernels ensure(context& ctx) {
        tile_kernels tk;
        tk.gemm = ctx.find_kernel("gemm");
        if (!tk.gemm) {
            tk.gemm = &ctx.declare_kernel(
                "gemm", {arg_mode::in, arg_mode::in, arg_mode::inout}, [](kernel_args& args) {
                    auto a = args.in_as<double>(0);
                    auto b = args.in_as<double>(1);
                    auto c = args.out_as<double>(2);
                    const std::size_t n = static_cast<std::size_t>(std::llround(std::sqrt(double(c.size()))));
                    for (std::size_t j = 0; j < n; ++j)
                        for (std::size_t k = 0; k < n; ++k) {
                            const double bkj = b[k + j * n];
                            for (std::size_t i = 0; i < n; ++i) c[i + j * n] += a[i + k * n] * bkj;
                        }
                });
            tk.assign = &ctx.declare_kernel("assign", {arg_mode::in, arg_mode::inout},
                                            [](kernel_args& args) {
                                                auto src = args.in_as<double>(0);
                                                auto dst = args.out_as<double>(1);
                                                for (std::size_t i = 0; i < dst.size(); ++i)
                                                    dst[i] = src[i];
                                            });
            tk.add = &ctx.declare_kernel("add", {arg_mode::in, arg_mode::inout},
                                         [](kernel_args& args) {
                                             auto src = args.in_as<double>(0);
                                             auto dst = args.out_as<double>(1);
                                             for (std::size_t i = 0; i < dst.size(); ++i)
                                                 dst[i] += src[i];
                                         });
            tk.sub = &ctx.declare_kernel("sub", {arg_mode::in, arg_mode::inout},
                                         [](kernel_args& args) {
                                             auto src = args.in_as<double>(0);
                                             auto dst = args.out_as<double>(1);
                                             for (std::size_t i = 0; i < dst.size(); ++i)
                                                 dst[i] -= src[i];
                                         });
        } else {
            tk.assign = ctx.find_kernel("assign");
            tk.add = ctx.find_kernel("add");
            tk.sub = ctx.find_kernel("sub");
        }
        return tk;
    }
};

/// Records the dst = src / dst += src / dst -= src of two equally
/// shaped views, one op per tile pair.
inline void record_tilewise(context& ctx, const kernel_spec& k, const subset_view& src,
                            const subset_view& dst) {
    if (src.mt() != dst.mt() || src.nt() != dst.nt()) fail(errc::shape, "view shapes differ");
    for (std::uint64_t i = 0; i < src.mt(); ++i)
        for (std::uint64_t j = 0; j < src.nt(); ++j)
            ctx.record_call(k, {src.tile(i, j), dst.tile(i, j)});
}

/// Fetches every tile to `to` and assembles the dense column-major
/// matrix there (verification and result export).
inline void fetch_all(context& ctx, const tiled_matrix& m, rank_id to = 0) {
    for (std::uint64_t i = 0; i < m.mt(); ++i)
        for (std::uint64_t j = 0; j < m.nt(); ++j) ctx.fetch(m.tile(i, j), to);
}

inline std::vector<double> to_dense(const context& ctx, const tiled_matrix& m) {
    std::vector<double> dense(m.rows() * m.cols());
    const std::uint64_t ib = m.ib();
    for (std::uint64_t ti = 0; ti < m.mt(); ++ti)
        for (std::uint64_t tj = 0; tj < m.nt(); ++tj) {
            auto tile = ctx.read_as<double>(m.tile(ti, tj));
            for (std::uint64_t j = 0; j < ib; ++j)
                for (std::uint64_t i = 0; i < ib; ++i)
                    dense[(ti * ib + i) + (tj * ib + j) * m.rows()] = tile[i + j * ib];
        }
    return dense;
}

} // namespace loom
