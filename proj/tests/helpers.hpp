#pragma once

#include <loom/context.hpp>

#include <cstring>
#include <vector>

namespace loom::testing {

inline std::vector<std::byte> to_bytes(const std::vector<double>& v) {
    std::vector<std::byte> out(v.size() * sizeof(double));
    std::memcpy(out.data(), v.data(), out.size());
    return out;
}

inline std::vector<std::byte> to_bytes(const std::vector<std::int32_t>& v) {
    std::vector<std::byte> out(v.size() * sizeof(std::int32_t));
    std::memcpy(out.data(), v.data(), out.size());
    return out;
}

inline handle make_f64(context& ctx, const std::vector<double>& v) {
    auto bytes = to_bytes(v);
    return ctx.create(bytes.size(), elem_type::f64, bytes);
}

/// The two-phase program from the runtime's motivating example: n
/// multiply-accumulates read state v0 of `a`, a scale creates v1, m more
/// multiply-accumulates read v1. Both versions coexist, so all n + m
/// product ops are mutually independent.
struct fig1_program {
    handle a;
    std::vector<handle> x_pre, y_pre, x_post, y_post;
    std::vector<op_id> pre_ops, post_ops;
    op_id scale_op = no_op;
    std::size_t elems = 0;
};

inline fig1_program record_fig1(context& ctx, int n, int m, std::size_t elems = 4) {
    const auto& gemm = ctx.declare_kernel(
        "gemm", {arg_mode::in, arg_mode::in, arg_mode::inout}, [](kernel_args& args) {
            auto a = args.in_as<double>(0);
            auto x = args.in_as<double>(1);
            auto y = args.out_as<double>(2);
            for (std::size_t i = 0; i < y.size(); ++i) y[i] += a[i] * x[i];
        });
    const auto& scale = ctx.declare_kernel("scale", {arg_mode::inout}, [](kernel_args& args) {
        for (auto& v : args.out_as<double>(0)) v *= 2.0;
    });

    fig1_program p;
    p.elems = elems;
    std::vector<double> ones(elems, 1.0);
    p.a = make_f64(ctx, std::vector<double>(elems, 3.0));
    for (int i = 0; i < n; ++i) {
        p.x_pre.push_back(make_f64(ctx, ones));
        p.y_pre.push_back(make_f64(ctx, std::vector<double>(elems, 0.0)));
    }
    for (int i = 0; i < m; ++i) {
        p.x_post.push_back(make_f64(ctx, ones));
        p.y_post.push_back(make_f64(ctx, std::vector<double>(elems, 0.0)));
    }
    for (int i = 0; i < n; ++i)
        p.pre_ops.push_back(ctx.record_call(gemm, {p.a, p.x_pre[i], p.y_pre[i]}));
    p.scale_op = ctx.record_call(scale, {p.a});
    for (int i = 0; i < m; ++i)
        p.post_ops.push_back(ctx.record_call(gemm, {p.a, p.x_post[i], p.y_post[i]}));
    return p;
}

} // namespace loom::testing
