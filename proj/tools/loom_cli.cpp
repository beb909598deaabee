// Command-line harness for the bundled workloads: record, execute,
// verify, trace and time them on simulated or socket ranks.

#include <CLI11.hpp>
#include <loom/loom.hpp>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace loom;

// ---- built-in verification oracles ----

std::vector<double> naive_multiply(const std::vector<double>& a, const std::vector<double>& b,
                                   std::size_t n) {
    std::vector<double> c(n * n, 0.0);
    for (std::size_t col = 0; col < n; ++col)
        for (std::size_t inner = 0; inner < n; ++inner) {
            const double bv = b[inner + col * n];
            for (std::size_t row = 0; row < n; ++row) c[row + col * n] += a[row + inner * n] * bv;
        }
    return c;
}

double max_rel_error(const std::vector<double>& got, const std::vector<double>& want) {
    double worst = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double denom = std::max(1e-30, std::abs(want[i]));
        worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
    return worst;
}

struct run_spec {
    std::string workload;
    std::uint64_t n = 256;
    std::uint64_t ib = 32;
    std::uint64_t np = 1;
    std::uint64_t nq = 1;
    unsigned log_bins = 8;
    std::size_t chunk = 1024;
    std::uint64_t seed = 1;
    bool verify = false;
    std::string dot_path;
    double latency_ms = 0.0;
    bool include_recording = false;
};

std::vector<std::int32_t> make_sort_input(const run_spec& spec) {
    splitmix64 rng(spec.seed);
    std::vector<std::int32_t> values(spec.n);
    for (auto& v : values) v = 1 + std::int32_t(rng.next() % 0x7FFFFFFEull);
    return values;
}

/// Shared slots the per-rank program closures write into (rank 0 only).
struct run_sink {
    std::mutex mu;
    bool verify_ok = true;
    double verify_metric = 0.0;
    std::string dot;
};

void capture_trace(context& ctx, const run_spec& spec, run_sink& sink) {
    if (spec.dot_path.empty() || ctx.rank() != 0) return;
    std::lock_guard lk(sink.mu);
    sink.dot = ctx.dot(true);
}

std::function<void(context&)> build_program(const run_spec& spec, run_sink& sink) {
    if (spec.workload == "gemm") {
        return [&spec, &sink](context& ctx) {
            auto a = tiled_matrix::random(ctx, spec.n, spec.n, spec.ib, spec.seed);
            auto b = tiled_matrix::random(ctx, spec.n, spec.n, spec.ib, spec.seed + 1);
            auto c = tiled_matrix::zeros(ctx, spec.n, spec.n, spec.ib);
            distributed_gemm(ctx, a, b, c, {spec.np, spec.nq});
            if (spec.verify) {
                fetch_all(ctx, c, 0);
                ctx.sync();
                if (ctx.rank() == 0) {
                    auto want = naive_multiply(to_dense(ctx, a), to_dense(ctx, b), spec.n);
                    double err = max_rel_error(to_dense(ctx, c), want);
                    std::lock_guard lk(sink.mu);
                    sink.verify_metric = err;
                    sink.verify_ok = err <= 1e-12;
                }
            }
            capture_trace(ctx, spec, sink);
        };
    }
    if (spec.workload == "strassen") {
        return [&spec, &sink](context& ctx) {
            auto a = tiled_matrix::random(ctx, spec.n, spec.n, spec.ib, spec.seed);
            auto b = tiled_matrix::random(ctx, spec.n, spec.n, spec.ib, spec.seed + 1);
            auto c = tiled_matrix::fresh(ctx, spec.n, spec.n, spec.ib);
            strassen(ctx, a, b, c);
            if (spec.verify) {
                fetch_all(ctx, c, 0);
                ctx.sync();
                if (ctx.rank() == 0) {
                    auto want = naive_multiply(to_dense(ctx, a), to_dense(ctx, b), spec.n);
                    double err = max_rel_error(to_dense(ctx, c), want);
                    std::lock_guard lk(sink.mu);
                    sink.verify_metric = err;
                    sink.verify_ok = err <= 1e-8;
                }
            }
            capture_trace(ctx, spec, sink);
        };
    }
    if (spec.workload == "sort") {
        return [&spec, &sink](context& ctx) {
            auto values = make_sort_input(spec);
            handle out = sort_integers(ctx, values, spec.chunk, sort_config{spec.log_bins});
            ctx.sync();
            if (spec.verify && ctx.rank() == 0) {
                auto got = ctx.read_as<std::int32_t>(out);
                std::sort(values.begin(), values.end());
                std::lock_guard lk(sink.mu);
                sink.verify_ok = got == values;
            }
            capture_trace(ctx, spec, sink);
        };
    }
    if (spec.workload == "fig1") {
        return [&spec, &sink](context& ctx) {
            // two op families over two versions of one state object
            const std::uint64_t n = std::clamp<std::uint64_t>(spec.n, 1, 8), m = 2;
            auto& gemm = ctx.declare_kernel(
                "gemm", {arg_mode::in, arg_mode::in, arg_mode::inout}, [](kernel_args& args) {
                    auto a = args.in_as<double>(0);
                    auto x = args.in_as<double>(1);
                    auto y = args.out_as<double>(2);
                    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a[i] * x[i];
                });
            auto& scale = ctx.declare_kernel("scale", {arg_mode::inout}, [](kernel_args& args) {
                for (auto& v : args.out_as<double>(0)) v *= 2.0;
            });
            std::vector<double> init(16, 1.0);
            std::vector<std::byte> bytes(init.size() * sizeof(double));
            std::memcpy(bytes.data(), init.data(), bytes.size());
            handle a = ctx.create(bytes.size(), elem_type::f64, bytes);
            std::vector<handle> xs, ys;
            for (std::uint64_t i = 0; i < n + m; ++i) {
                xs.push_back(ctx.create(bytes.size(), elem_type::f64, bytes));
                ys.push_back(ctx.create(bytes.size(), elem_type::f64, bytes));
            }
            for (std::uint64_t i = 0; i < n; ++i) ctx.record_call(gemm, {a, xs[i], ys[i]});
            ctx.record_call(scale, {a});
            for (std::uint64_t i = n; i < n + m; ++i) ctx.record_call(gemm, {a, xs[i], ys[i]});
            ctx.sync();
            capture_trace(ctx, spec, sink);
        };
    }
    throw error(errc::domain, "unknown workload '" + spec.workload + "'");
}

struct combo_result {
    std::vector<exec_report> reports;
    std::uint64_t fingerprint = 0;
    bool verify_ok = true;
    double verify_metric = 0.0;
    double program_wall_ms = 0.0;
    std::string dot;
};

combo_result run_simulated(const run_spec& spec, rank_id nranks, unsigned workers) {
    run_sink sink;
    auto program = build_program(spec, sink);
    auto start = std::chrono::steady_clock::now();
    auto results = run_ranks(nranks, workers, program, spec.latency_ms);
    combo_result out;
    out.program_wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    for (auto& r : results) out.reports.push_back(r.report);
    out.fingerprint = results[0].fingerprint;
    out.verify_ok = sink.verify_ok;
    out.verify_metric = sink.verify_metric;
    out.dot = std::move(sink.dot);
    return out;
}

combo_result run_sockets(const run_spec& spec, rank_id rank, const std::vector<std::string>& peers,
                         unsigned workers) {
    run_sink sink;
    auto program = build_program(spec, sink);
    socket_fabric fab(rank, peers);
    auto start = std::chrono::steady_clock::now();
    context ctx(fab, rank, workers);
    program(ctx);
    combo_result out;
    out.reports.push_back(ctx.finish());
    out.program_wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    out.fingerprint = ctx.fingerprint();
    out.verify_ok = sink.verify_ok;
    out.verify_metric = sink.verify_metric;
    out.dot = std::move(sink.dot);
    return out;
}

std::vector<unsigned> parse_list(const std::string& csv) {
    std::vector<unsigned> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(unsigned(std::stoul(item)));
    if (out.empty()) out.push_back(1);
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"loom: record sequential programs into a versioned-operation DAG and run them "
                 "race-free across workers and ranks"};
    app.require_subcommand(1);

    run_spec spec;
    std::string ranks_csv = "1", workers_csv = "1", mode = "simulated", peers_csv;
    int rank_flag = -1;

    auto* run = app.add_subcommand("run", "run a bundled workload");
    run->add_option("workload", spec.workload, "gemm | strassen | sort | fig1")->required();
    run->add_option("--n", spec.n, "problem size (matrix edge or value count)");
    run->add_option("--ib", spec.ib, "tile edge in elements");
    run->add_option("--np", spec.np, "block rows per sync group");
    run->add_option("--nq", spec.nq, "block cols per sync group");
    run->add_option("--log-bins", spec.log_bins, "bucket bits for sort");
    run->add_option("--chunk", spec.chunk, "values per input document (sort)");
    run->add_option("--ranks", ranks_csv, "rank count, or comma list to sweep");
    run->add_option("--workers", workers_csv, "worker threads per rank, or comma list to sweep");
    run->add_option("--mode", mode, "simulated | sockets")
        ->check(CLI::IsMember({"simulated", "sockets"}));
    run->add_option("--rank-id", rank_flag, "this process's rank (sockets mode)");
    run->add_option("--peers", peers_csv, "host:port per rank, comma separated (sockets mode)");
    run->add_option("--seed", spec.seed, "input generator seed");
    run->add_flag("--verify", spec.verify, "check the result against the built-in oracle");
    run->add_option("--dot", spec.dot_path, "write the DAG and transfer plans as DOT");
    run->add_option("--latency-ms", spec.latency_ms, "injected per-message latency (simulated)");
    run->add_flag("--include-recording", spec.include_recording,
                  "time the whole run, not just execution");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        std::vector<timing_row> rows;
        bool all_ok = true;
        if (mode == "sockets") {
            std::vector<std::string> peers;
            std::stringstream ss(peers_csv);
            std::string item;
            while (std::getline(ss, item, ',')) peers.push_back(item);
            if (rank_flag < 0 || peers.empty()) {
                std::cerr << "sockets mode needs --rank-id and --peers\n";
                return 2;
            }
            auto workers = parse_list(workers_csv);
            auto res = run_sockets(spec, rank_id(rank_flag), peers, workers[0]);
            for (const auto& r : res.reports) std::cout << r.to_json() << "\n";
            if (!spec.dot_path.empty() && !res.dot.empty()) std::ofstream(spec.dot_path) << res.dot;
            if (spec.verify && rank_flag == 0)
                std::cout << (res.verify_ok ? "VERIFY OK" : "VERIFY FAILED") << "\n";
            rows.push_back({spec.workload, rank_id(peers.size()), workers[0],
                            spec.include_recording ? res.program_wall_ms : res.reports[0].wall_ms});
            std::cout << emit_timing_table(rows);
            return res.verify_ok ? 0 : 1;
        }

        for (unsigned nranks : parse_list(ranks_csv))
            for (unsigned workers : parse_list(workers_csv)) {
                auto res = run_simulated(spec, nranks, workers);
                for (const auto& r : res.reports) std::cout << r.to_json() << "\n";
                double wall = 0.0;
                for (const auto& r : res.reports) wall = std::max(wall, r.wall_ms);
                rows.push_back({spec.workload, nranks, workers,
                                spec.include_recording ? res.program_wall_ms : wall});
                if (spec.verify) {
                    std::cout << (res.verify_ok ? "VERIFY OK" : "VERIFY FAILED") << " (fingerprint "
                              << std::hex << res.fingerprint << std::dec << ")\n";
                    all_ok = all_ok && res.verify_ok;
                }
                if (!spec.dot_path.empty() && !res.dot.empty())
                    std::ofstream(spec.dot_path) << res.dot;
            }
        std::cout << emit_timing_table(rows);
        return all_ok ? 0 : 1;
    } catch (const error& e) {
        std::cerr << e.what() << "\n";
        switch (e.code()) {
        case errc::shape:
        case errc::domain:
        case errc::zero_size:
        case errc::bad_rank:
            return 2; // bad parameters
        default:
            return 1;
        }
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
}
