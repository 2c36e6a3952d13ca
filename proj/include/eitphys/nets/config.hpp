#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eitphys/channels.hpp"
#include "eitphys/common.hpp"

namespace eitphys::nets {

// Transpulmonary-pressure input/output wiring.
//   EitOnly:         EIT -> target(s)
//   EitJointOutputs: EIT -> target + airway pressure as an extra output
//   EitPlusPaw:      EIT + airway pressure (aux input path) -> target
enum class Variant { EitOnly = 1, EitJointOutputs = 2, EitPlusPaw = 3 };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::EitOnly: return "v1_eit_only";
        case Variant::EitJointOutputs: return "v2_joint_outputs";
        case Variant::EitPlusPaw: return "v3_eit_plus_paw";
    }
    return "?";
}

struct ModelConfig {
    int groups = 3;             // N
    int layers_per_group = 3;   // n_i
    int initial_features = 8;   // n_f
    int intermed_dim = 32;      // feature size entering the LSTM
    int lstm_hidden = 512;
    std::vector<ChannelId> output_channels = {ChannelId::V};
    Variant variant = Variant::EitOnly;
    int aux_hidden = 32;
    int image_size = 32;

    // Stem plus two convolutions per residual block; skip projections are
    // not counted.
    int conv_layer_count() const { return 1 + groups * layers_per_group * 2; }

    int lstm_input_size() const {
        return intermed_dim + (variant == Variant::EitPlusPaw ? aux_hidden : 0);
    }

    int output_size() const { return static_cast<int>(output_channels.size()); }

    void validate() const {
        if (groups < 1 || layers_per_group < 1 || initial_features < 1 || intermed_dim < 1 ||
            lstm_hidden < 1 || aux_hidden < 1 || image_size < 1) {
            throw ConfigError("model config: all dimensions must be positive");
        }
        if (output_channels.empty()) {
            throw ConfigError("model config: at least one output channel required");
        }
    }
};

}  // namespace eitphys::nets
