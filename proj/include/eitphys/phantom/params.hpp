#pragma once

#include <cstdint>
#include <vector>

#include "eitphys/common.hpp"

namespace eitphys::phantom {

enum class VentMode { PC, VC };

struct ModePhase {
    VentMode mode = VentMode::PC;
    double duration_s = 30.0;
};

struct PatientParams {
    double airway_resistance = 10.0;       // cmH2O*s/l
    double lung_compliance = 40.0;         // ml/cmH2O
    double chest_wall_compliance = 160.0;  // ml/cmH2O
    double resp_rate = 15.0;               // breaths/min
    double heart_rate = 80.0;              // beats/min
    double peep = 6.0;                     // cmH2O
    double driving_pressure = 13.0;        // cmH2O, pressure-controlled breaths
    double tidal_volume = 450.0;           // ml, volume-controlled breaths
    double arterial_lag_s = 0.2;           // cardiac action -> arterial wave
    double systolic = 120.0;               // mmHg
    double diastolic = 70.0;               // mmHg
    double es_ripple = 0.8;                // cardiac ripple amplitude in p_es, cmH2O
    uint64_t anatomy_seed = 0;
    double peristalsis_rate = 0.3;         // events/min
    double breath_jitter = 0.02;           // relative per-breath variation; 0 = exactly periodic
    std::vector<ModePhase> mode_schedule;  // empty = pressure-controlled throughout

    void validate() const {
        if (airway_resistance <= 0 || lung_compliance <= 0 || chest_wall_compliance <= 0) {
            throw ConfigError("patient params: resistance and compliances must be positive");
        }
        if (resp_rate < 8 || resp_rate > 35) {
            throw ConfigError("patient params: resp_rate outside [8,35] breaths/min");
        }
        if (heart_rate < 50 || heart_rate > 140) {
            throw ConfigError("patient params: heart_rate outside [50,140] beats/min");
        }
        if (arterial_lag_s < 0 || arterial_lag_s > 0.5) {
            throw ConfigError("patient params: arterial lag outside [0,0.5] s");
        }
        if (driving_pressure <= 0 || tidal_volume <= 0 || peep < 0) {
            throw ConfigError("patient params: pressures and tidal volume must be positive");
        }
        if (systolic <= diastolic) {
            throw ConfigError("patient params: systolic must exceed diastolic");
        }
    }

    // Series combination of lung and chest wall compliance.
    double total_compliance() const {
        return 1.0 / (1.0 / lung_compliance + 1.0 / chest_wall_compliance);
    }
};

}  // namespace eitphys::phantom
