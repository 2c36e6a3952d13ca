#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eitphys/phantom/params.hpp"
#include "eitphys/sigproc/channel.hpp"

namespace eitphys::phantom {

inline constexpr int kEitDim = 32;
inline constexpr int kEitPixels = kEitDim * kEitDim;

struct RecordMeta {
    std::string patient_id;
    std::string record_id;
    // Device lags in samples at 10 Hz: how late each device's channels run
    // relative to the spirometry channels.
    int injected_eit_lag = 0;
    int injected_monitor_lag = 0;
    int residual_eit_lag = 0;
    int residual_monitor_lag = 0;
    bool aligned = false;
    bool unalignable = false;
    PatientParams params;
};

// One synthetic recording at 10 Hz: EIT frame stack plus physiological
// channels. p_ab, p_es and monitor_paw come from a second simulated device
// and carry the monitor lag; the EIT stack carries the EIT lag.
struct Record {
    RecordMeta meta;
    int64_t frames = 0;
    std::vector<float> eit;  // [frames * 32 * 32], row-major
    std::map<ChannelId, sigproc::Channel> channels;
    sigproc::Channel monitor_paw;  // second device's copy of p_aw, used for alignment
    double sample_rate = 10.0;

    const sigproc::Channel& channel(ChannelId id) const {
        auto it = channels.find(id);
        if (it == channels.end()) {
            throw UsageError(std::string("record has no channel ") + channel_name(id));
        }
        return it->second;
    }
};

}  // namespace eitphys::phantom
