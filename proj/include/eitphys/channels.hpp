#pragma once

#include <string>

#include "eitphys/common.hpp"

namespace eitphys {

// Physiological channels carried by a record. EitSum is the per-frame sum of
// the EIT image, used for device alignment.
enum class ChannelId { V, F, Paw, Pab, Pes, Ptp, EitSum };

inline const char* channel_name(ChannelId id) {
    switch (id) {
        case ChannelId::V: return "V";
        case ChannelId::F: return "F";
        case ChannelId::Paw: return "p_aw";
        case ChannelId::Pab: return "p_ab";
        case ChannelId::Pes: return "p_es";
        case ChannelId::Ptp: return "p_tp";
        case ChannelId::EitSum: return "eit_sum";
    }
    return "?";
}

inline const char* channel_unit(ChannelId id) {
    switch (id) {
        case ChannelId::V: return "ml";
        case ChannelId::F: return "l/s";
        case ChannelId::Paw:
        case ChannelId::Pes:
        case ChannelId::Ptp: return "cmH2O";
        case ChannelId::Pab: return "mmHg";
        case ChannelId::EitSum: return "a.u.";
    }
    return "?";
}

inline ChannelId channel_from_name(const std::string& name) {
    for (ChannelId id : {ChannelId::V, ChannelId::F, ChannelId::Paw, ChannelId::Pab,
                         ChannelId::Pes, ChannelId::Ptp, ChannelId::EitSum}) {
        if (name == channel_name(id)) return id;
    }
    throw ConfigError("unknown channel name: " + name);
}

}  // namespace eitphys
