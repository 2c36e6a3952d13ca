#pragma once

#include "eitphys/phantom/record.hpp"

namespace eitphys::sigproc {

struct AlignOptions {
    int max_lag = 50;        // samples at 10 Hz
    double min_peak = 0.2;   // below this the segment is flagged unalignable
};

// Fine-aligns the EIT stack to the spirometry volume via the EIT sum signal,
// and the monitor channels (p_ab, p_es) via the monitor's p_aw copy against
// the spirometry p_aw. All channels are cropped to the common overlap so the
// result stays rectangular. Residual lags (re-estimated after shifting) are
// recorded in the metadata; a correlation peak below min_peak flags the
// record unalignable and leaves that device unshifted.
phantom::Record align_records(const phantom::Record& rec, const AlignOptions& opts = {});

}  // namespace eitphys::sigproc
