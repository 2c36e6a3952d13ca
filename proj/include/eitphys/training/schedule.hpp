#pragma once

#include <cmath>
#include <cstdint>

#include "eitphys/common.hpp"

namespace eitphys::training {

// 1-cycle schedule: cosine warmup from max_lr/25 to max_lr over
// pct_start * total_steps, then cosine anneal down to max_lr/1e4, reaching it
// on the final step. Continuous at the junction.
inline double one_cycle_lr(int64_t step, int64_t total_steps, double max_lr,
                           double pct_start = 0.3) {
    if (step < 0 || step >= total_steps) {
        throw UsageError("one_cycle_lr: step " + std::to_string(step) + " outside [0," +
                         std::to_string(total_steps) + ")");
    }
    constexpr double pi = 3.14159265358979323846;
    const double start_lr = max_lr / 25.0;
    const double final_lr = max_lr / 1e4;
    const double warm = pct_start * static_cast<double>(total_steps);
    if (static_cast<double>(step) < warm) {
        const double u = static_cast<double>(step) / warm;
        return start_lr + (max_lr - start_lr) * 0.5 * (1.0 - std::cos(pi * u));
    }
    const double denom = static_cast<double>(total_steps - 1) - warm;
    const double u = denom > 0.0 ? (static_cast<double>(step) - warm) / denom : 1.0;
    return final_lr + (max_lr - final_lr) * 0.5 * (1.0 + std::cos(pi * u));
}

}  // namespace eitphys::training
