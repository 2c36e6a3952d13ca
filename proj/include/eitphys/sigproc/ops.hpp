#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "eitphys/sigproc/channel.hpp"

namespace eitphys::sigproc {

// Anti-aliased resampling to exactly 10 Hz: symmetric (zero-phase)
// Hamming-windowed-sinc low-pass at 5 Hz applied where the full kernel fits,
// then linear interpolation at the 10 Hz instants. Near the edges, where the
// kernel does not fit, the raw signal is interpolated instead. Source rates
// below 10 Hz are rejected; a 10 Hz input is returned unchanged.
Channel resample_10hz(const Channel& ch);

// Width of the edge-fallback region of resample_10hz, in output samples
// (kernel half-width 0.4 s at 10 Hz).
inline constexpr int kResampleEdge10Hz = 4;

struct Standardized {
    std::vector<double> y;
    double mean = 0.0;
    double sd = 0.0;
    bool degenerate = false;  // sd fell below eps; y is only mean-centered
};

// Population-SD standardization with a zero-variance guard (eps = 1e-8).
Standardized standardize(std::span<const double> x);

// Integer lag in [-max_lag, max_lag] maximizing the Pearson correlation of
// a[i] vs b[i+k] over the overlap. A positive result means b lags a. Lags are
// scanned in the order 0, +1, -1, +2, -2, ... and only strictly larger
// correlations replace the incumbent, so ties resolve to the smallest |lag|.
// Lags whose overlap is shorter than 2 samples (or constant) are skipped;
// if every lag is skipped an AlignError is thrown.
int estimate_lag(std::span<const double> a, std::span<const double> b, int max_lag);

// Peak correlation value found by the same scan (for unalignable detection).
double peak_correlation(std::span<const double> a, std::span<const double> b, int max_lag);

double rmse(std::span<const double> pred, std::span<const double> tgt);

// RMSE after shifting prediction and target to the cross-correlation local
// maximum with the smallest |lag|. max_lag = 0 reduces to plain rmse.
double shifted_rmse(std::span<const double> pred, std::span<const double> tgt, int max_lag);

// Classic dynamic time warping distance: |a_i - b_j| point cost, steps
// {(1,0),(0,1),(1,1)}, boundary-to-boundary, accumulated (not normalized).
double dtw(std::span<const double> a, std::span<const double> b);

enum class Rating { Plus, Circle, Minus };

inline const char* rating_name(Rating r) {
    switch (r) {
        case Rating::Plus: return "+";
        case Rating::Circle: return "o";
        case Rating::Minus: return "-";
    }
    return "?";
}

// Automated stand-in for the manual rating scheme. Plus: dominant frequency
// within 10%, amplitude ratio in [0.7, 1.4], best shifted correlation >= 0.8.
// Circle: frequency within 10% and correlation >= 0.6, amplitude free.
// Minus: anything else (including a zero-variance prediction).
Rating visual_rating(std::span<const double> pred, std::span<const double> tgt,
                     double rate = 10.0);

}  // namespace eitphys::sigproc
