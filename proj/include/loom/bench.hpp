#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "types.hpp"

namespace loom {

struct timing_row {
    std::string workload;
    rank_id ranks = 1;
    unsigned workers = 1;
    double wall_ms = 0.0;
};

/// Fixed-column timing table. The speedup column compares against the
/// P=1, W=1 row and is omitted when no such baseline is present.
inline std::string emit_timing_table(const std::vector<timing_row>& rows) {
    const timing_row* baseline = nullptr;
    for (const auto& r : rows)
        if (r.ranks == 1 && r.workers == 1) {
            baseline = &r;
            break;
        }
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-10s %5s %5s %12s%s\n", "workload", "P", "W", "wall_ms",
                  baseline ? "      speedup" : "");
    out += line;
    for (const auto& r : rows) {
        if (baseline) {
            std::snprintf(line, sizeof line, "%-10s %5u %5u %12.2f %12.2f\n", r.workload.c_str(),
                          r.ranks, r.workers, r.wall_ms, baseline->wall_ms / r.wall_ms);
        } else {
            std::snprintf(line, sizeof line, "%-10s %5u %5u %12.2f\n", r.workload.c_str(), r.ranks,
                          r.workers, r.wall_ms);
        }
        out += line;
    }
    return out;
}

} // namespace loom
