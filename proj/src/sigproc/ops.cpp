#include "eitphys/sigproc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "eitphys/common.hpp"

namespace eitphys::sigproc {

namespace {

constexpr double kPi = 3.14159265358979323846;

double linear_interp(std::span<const double> x, double pos) {
    const auto n = static_cast<int64_t>(x.size());
    if (pos <= 0.0) return x[0];
    if (pos >= static_cast<double>(n - 1)) return x[static_cast<size_t>(n - 1)];
    const auto i = static_cast<int64_t>(pos);
    const double frac = pos - static_cast<double>(i);
    return x[static_cast<size_t>(i)] * (1.0 - frac) + x[static_cast<size_t>(i + 1)] * frac;
}

struct Moments {
    double mean, sd;
};

Moments moments(std::span<const double> x) {
    double sum = 0.0;
    for (double v : x) sum += v;
    const double mean = sum / static_cast<double>(x.size());
    double sq = 0.0;
    for (double v : x) sq += (v - mean) * (v - mean);
    return {mean, std::sqrt(sq / static_cast<double>(x.size()))};
}

// Pearson correlation of a[i] vs b[i+k] on the overlap; NaN when the overlap
// is shorter than 2 samples or either side is constant.
double lag_correlation(std::span<const double> a, std::span<const double> b, int64_t k) {
    const auto na = static_cast<int64_t>(a.size());
    const auto nb = static_cast<int64_t>(b.size());
    const int64_t lo = std::max<int64_t>(0, -k);
    const int64_t hi = std::min(na, nb - k);
    const int64_t n = hi - lo;
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    double sa = 0.0, sb = 0.0;
    for (int64_t i = lo; i < hi; ++i) {
        sa += a[static_cast<size_t>(i)];
        sb += b[static_cast<size_t>(i + k)];
    }
    const double ma = sa / static_cast<double>(n), mb = sb / static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (int64_t i = lo; i < hi; ++i) {
        const double da = a[static_cast<size_t>(i)] - ma;
        const double db = b[static_cast<size_t>(i + k)] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sab / std::sqrt(saa * sbb);
}

// Scan order 0, +1, -1, +2, -2, ... so the first strict maximum seen has the
// smallest |lag|.
template <typename Fn>
void for_each_lag(int max_lag, Fn&& fn) {
    fn(0);
    for (int k = 1; k <= max_lag; ++k) {
        fn(k);
        fn(-k);
    }
}

struct LagScan {
    int best_lag = 0;
    double best_r = -std::numeric_limits<double>::infinity();
    bool any = false;
};

LagScan scan_lags(std::span<const double> a, std::span<const double> b, int max_lag) {
    LagScan s;
    for_each_lag(max_lag, [&](int k) {
        const double r = lag_correlation(a, b, k);
        if (std::isnan(r)) return;
        s.any = true;
        if (r > s.best_r) {
            s.best_r = r;
            s.best_lag = k;
        }
    });
    return s;
}

}  // namespace

Channel resample_10hz(const Channel& ch) {
    constexpr double target = 10.0;
    constexpr double cutoff = 5.0;
    if (ch.rate < target) {
        throw UsageError("resample_10hz: unsupported source rate " + std::to_string(ch.rate) +
                         " Hz (must be >= 10)");
    }
    if (ch.samples.size() < 2) throw UsageError("resample_10hz: need at least 2 samples");
    Channel out;
    out.id = ch.id;
    out.unit = ch.unit;
    out.rate = target;
    if (ch.rate == target) {
        out.samples = ch.samples;
        return out;
    }

    const double fs = ch.rate;
    const auto n = static_cast<int64_t>(ch.samples.size());
    const auto half = static_cast<int64_t>(std::ceil(0.4 * fs));  // 0.4 s each side
    std::vector<double> kernel(static_cast<size_t>(2 * half + 1));
    double ksum = 0.0;
    for (int64_t j = -half; j <= half; ++j) {
        const double t = static_cast<double>(j) / fs;
        const double x = 2.0 * cutoff * t;
        const double sinc = x == 0.0 ? 1.0 : std::sin(kPi * x) / (kPi * x);
        const double win =
            0.54 + 0.46 * std::cos(kPi * static_cast<double>(j) / static_cast<double>(half));
        kernel[static_cast<size_t>(j + half)] = sinc * win;
        ksum += sinc * win;
    }
    for (double& k : kernel) k /= ksum;

    // Filtered values where the whole kernel fits.
    const int64_t lo = half, hi = n - 1 - half;
    std::vector<double> filtered;
    if (hi >= lo) {
        filtered.resize(static_cast<size_t>(hi - lo + 1));
        for (int64_t i = lo; i <= hi; ++i) {
            double acc = 0.0;
            const double* src = ch.samples.data() + (i - half);
            for (int64_t j = 0; j < 2 * half + 1; ++j) acc += kernel[static_cast<size_t>(j)] * src[j];
            filtered[static_cast<size_t>(i - lo)] = acc;
        }
    }

    const auto n_out = static_cast<int64_t>(std::floor(static_cast<double>(n - 1) * target / fs)) + 1;
    out.samples.resize(static_cast<size_t>(n_out));
    for (int64_t k = 0; k < n_out; ++k) {
        const double pos = static_cast<double>(k) * fs / target;
        const auto base = static_cast<int64_t>(pos);
        if (!filtered.empty() && base >= lo && base + 1 <= hi) {
            out.samples[static_cast<size_t>(k)] =
                linear_interp(filtered, pos - static_cast<double>(lo));
        } else if (!filtered.empty() && base >= lo && base <= hi && pos == static_cast<double>(base)) {
            out.samples[static_cast<size_t>(k)] = filtered[static_cast<size_t>(base - lo)];
        } else {
            out.samples[static_cast<size_t>(k)] = linear_interp(ch.samples, pos);
        }
    }
    return out;
}

Standardized standardize(std::span<const double> x) {
    if (x.size() < 2) throw UsageError("standardize: need at least 2 samples");
    constexpr double eps = 1e-8;
    const auto [mean, sd] = moments(x);
    Standardized out;
    out.mean = mean;
    out.y.resize(x.size());
    if (sd <= eps) {
        out.sd = eps;
        out.degenerate = true;
        for (size_t i = 0; i < x.size(); ++i) out.y[i] = x[i] - mean;
    } else {
        out.sd = sd;
        for (size_t i = 0; i < x.size(); ++i) out.y[i] = (x[i] - mean) / sd;
    }
    return out;
}

int estimate_lag(std::span<const double> a, std::span<const double> b, int max_lag) {
    if (max_lag < 0 || static_cast<size_t>(max_lag) >= std::min(a.size(), b.size())) {
        throw UsageError("estimate_lag: max_lag must be in [0, min(len))");
    }
    const LagScan s = scan_lags(a, b, max_lag);
    if (!s.any) throw AlignError("estimate_lag: no lag with a usable overlap");
    return s.best_lag;
}

double peak_correlation(std::span<const double> a, std::span<const double> b, int max_lag) {
    const LagScan s = scan_lags(a, b, max_lag);
    return s.any ? s.best_r : std::numeric_limits<double>::quiet_NaN();
}

double rmse(std::span<const double> pred, std::span<const double> tgt) {
    if (pred.size() != tgt.size()) {
        throw UsageError("rmse: length mismatch " + std::to_string(pred.size()) + " vs " +
                         std::to_string(tgt.size()));
    }
    if (pred.empty()) throw UsageError("rmse: empty input");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - tgt[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

double shifted_rmse(std::span<const double> pred, std::span<const double> tgt, int max_lag) {
    if (pred.size() != tgt.size()) {
        throw UsageError("shifted_rmse: length mismatch " + std::to_string(pred.size()) + " vs " +
                         std::to_string(tgt.size()));
    }
    if (pred.empty()) throw UsageError("shifted_rmse: empty input");
    if (max_lag < 0 || static_cast<size_t>(max_lag) >= (pred.size() + 1) / 2) {
        throw UsageError("shifted_rmse: max_lag must be < length/2");
    }
    int best = 0;
    if (max_lag > 0) {
        // Correlation over every candidate lag, then the local maximum with
        // the smallest |lag| ("closest maximum" rule). NaNs never qualify.
        std::vector<double> corr(static_cast<size_t>(2 * max_lag + 1));
        for (int k = -max_lag; k <= max_lag; ++k) {
            corr[static_cast<size_t>(k + max_lag)] = lag_correlation(pred, tgt, k);
        }
        auto at = [&](int k) { return corr[static_cast<size_t>(k + max_lag)]; };
        auto is_local_max = [&](int k) {
            const double c = at(k);
            if (std::isnan(c)) return false;
            const bool left_ok = k == -max_lag || std::isnan(at(k - 1)) || c >= at(k - 1);
            const bool right_ok = k == max_lag || std::isnan(at(k + 1)) || c >= at(k + 1);
            return left_ok && right_ok;
        };
        bool found = false;
        double found_r = 0.0;
        for_each_lag(max_lag, [&](int k) {
            if (!is_local_max(k)) return;
            if (!found) {
                found = true;
                best = k;
                found_r = at(k);
            } else if (std::abs(k) == std::abs(best) && at(k) > found_r) {
                best = k;
                found_r = at(k);
            }
        });
    }
    const auto n = static_cast<int64_t>(pred.size());
    const int64_t lo = std::max<int64_t>(0, -best);
    const int64_t hi = std::min<int64_t>(n, n - best);
    double acc = 0.0;
    for (int64_t i = lo; i < hi; ++i) {
        const double d = pred[static_cast<size_t>(i)] - tgt[static_cast<size_t>(i + best)];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(hi - lo));
}

double dtw(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw UsageError("dtw: empty input");
    const size_t n = a.size(), m = b.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
    prev[0] = 0.0;
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = inf;
        for (size_t j = 1; j <= m; ++j) {
            const double cost = std::abs(a[i - 1] - b[j - 1]);
            cur[j] = cost + std::min({prev[j], cur[j - 1], prev[j - 1]});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

Rating visual_rating(std::span<const double> pred, std::span<const double> tgt, double rate) {
    if (pred.size() != tgt.size() || pred.size() < 8) {
        throw UsageError("visual_rating: need equal-length sequences of at least 8 samples");
    }
    const auto [mp, sp] = moments(pred);
    const auto [mt, st] = moments(tgt);
    if (sp <= 1e-12 || st <= 1e-12) return Rating::Minus;

    // Dominant spectral peak in the 0.05-3 Hz band, mean removed.
    const auto n = static_cast<int64_t>(pred.size());
    auto dominant = [&](std::span<const double> x, double mean) {
        double best_mag = -1.0, best_f = 0.0;
        for (int64_t bin = 1; bin <= n / 2; ++bin) {
            const double f = static_cast<double>(bin) * rate / static_cast<double>(n);
            if (f < 0.05 || f > 3.0) continue;
            double re = 0.0, im = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const double ph = 2.0 * kPi * static_cast<double>(bin * i) / static_cast<double>(n);
                re += (x[static_cast<size_t>(i)] - mean) * std::cos(ph);
                im -= (x[static_cast<size_t>(i)] - mean) * std::sin(ph);
            }
            const double mag = re * re + im * im;
            if (mag > best_mag) {
                best_mag = mag;
                best_f = f;
            }
        }
        return best_f;
    };
    const double fp = dominant(pred, mp);
    const double ft = dominant(tgt, mt);
    if (ft <= 0.0) return Rating::Minus;

    const double freq_err = std::abs(fp - ft) / ft;
    const double amp_ratio = sp / st;
    double rho = -1.0;
    for_each_lag(10, [&](int k) {
        const double r = lag_correlation(pred, tgt, k);
        if (!std::isnan(r)) rho = std::max(rho, r);
    });

    if (freq_err <= 0.1 && amp_ratio >= 0.7 && amp_ratio <= 1.4 && rho >= 0.8) {
        return Rating::Plus;
    }
    if (freq_err <= 0.1 && rho >= 0.6) return Rating::Circle;
    return Rating::Minus;
}

}  // namespace eitphys::sigproc
