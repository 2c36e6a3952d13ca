#include "eitphys/sigproc/align.hpp"

#include <algorithm>
#include <cmath>

#include "eitphys/sigproc/ops.hpp"

namespace eitphys::sigproc {

using phantom::kEitPixels;
using phantom::Record;

Record align_records(const Record& rec, const AlignOptions& opts) {
    const auto& v = rec.channel(ChannelId::V).samples;
    const auto& eit_sum = rec.channel(ChannelId::EitSum).samples;
    const auto& paw = rec.channel(ChannelId::Paw).samples;
    const auto& mon_paw = rec.monitor_paw.samples;

    Record out = rec;
    int eit_shift = 0, mon_shift = 0;
    bool unalignable = false;

    const double eit_peak = peak_correlation(v, eit_sum, opts.max_lag);
    if (std::isnan(eit_peak) || eit_peak < opts.min_peak) {
        unalignable = true;
    } else {
        eit_shift = estimate_lag(v, eit_sum, opts.max_lag);
    }
    const double mon_peak = peak_correlation(paw, mon_paw, opts.max_lag);
    if (std::isnan(mon_peak) || mon_peak < opts.min_peak) {
        unalignable = true;
    } else {
        mon_shift = estimate_lag(paw, mon_paw, opts.max_lag);
    }

    // Crop window in spirometry indices such that j + shift stays valid for
    // every device. When a device actually moves, its resampling edge-fallback
    // region no longer lines up with the other streams', so those samples are
    // dropped too; a zero-shift record passes through untouched.
    const auto n = static_cast<int64_t>(v.size());
    const int64_t edge = (eit_shift != 0 || mon_shift != 0) ? kResampleEdge10Hz : 0;
    const int64_t lo = std::max<int64_t>({0, -eit_shift, -mon_shift}) + edge;
    const int64_t hi = std::min<int64_t>({n, n - eit_shift, n - mon_shift}) - edge;
    if (hi - lo < 2) throw AlignError("align_records: no usable overlap after shifting");
    const int64_t len = hi - lo;

    auto crop = [&](const std::vector<double>& src, int64_t shift) {
        return std::vector<double>(src.begin() + lo + shift, src.begin() + lo + shift + len);
    };

    for (auto& [id, ch] : out.channels) {
        switch (id) {
            case ChannelId::EitSum: ch.samples = crop(ch.samples, eit_shift); break;
            case ChannelId::Pes:
            case ChannelId::Pab: ch.samples = crop(ch.samples, mon_shift); break;
            default: ch.samples = crop(ch.samples, 0); break;
        }
    }
    out.monitor_paw.samples = crop(rec.monitor_paw.samples, mon_shift);
    out.eit.resize(static_cast<size_t>(len) * kEitPixels);
    std::copy_n(rec.eit.begin() + (lo + eit_shift) * kEitPixels,
                static_cast<size_t>(len) * kEitPixels, out.eit.begin());
    out.frames = len;

    out.meta.aligned = true;
    out.meta.unalignable = unalignable;
    out.meta.residual_eit_lag =
        unalignable ? 0
                    : estimate_lag(out.channel(ChannelId::V).samples,
                                   out.channel(ChannelId::EitSum).samples, opts.max_lag);
    out.meta.residual_monitor_lag =
        unalignable ? 0
                    : estimate_lag(out.channel(ChannelId::Paw).samples, out.monitor_paw.samples,
                                   opts.max_lag);
    return out;
}

}  // namespace eitphys::sigproc
