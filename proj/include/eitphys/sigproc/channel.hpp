#pragma once

#include <string>
#include <vector>

#include "eitphys/channels.hpp"

namespace eitphys::sigproc {

struct Channel {
    ChannelId id = ChannelId::V;
    std::vector<double> samples;
    double rate = 10.0;  // Hz
    std::string unit;
};

}  // namespace eitphys::sigproc
