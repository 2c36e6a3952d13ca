#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "eitphys/phantom/params.hpp"
#include "eitphys/phantom/record.hpp"

namespace eitphys::phantom {

// Per-patient image geometry derived from anatomy_seed: two elliptical lung
// gain masks and one cardiac ellipse with jittered position/size/rotation.
struct Anatomy {
    std::array<float, kEitPixels> lung_gain{};
    std::array<float, kEitPixels> heart_gain{};
    double lung_scale = 1.0;  // also couples into lung compliance when sampling patients
};

Anatomy make_anatomy(uint64_t seed);

// Centroid (x, y) of a gain mask, for geometry checks.
std::pair<double, double> mask_centroid(const std::array<float, kEitPixels>& gain);

struct PeristalsisEvent {
    double start_s = 0.0;
    double duration_s = 0.0;
    double amplitude = 0.0;  // cmH2O, strictly positive
};

// Native 100 Hz simulation traces (before device windowing and resampling).
struct NativeSim {
    double rate = 100.0;
    std::vector<double> volume_ml;
    std::vector<double> flow_lps;
    std::vector<double> paw;
    std::vector<double> pes;
    std::vector<double> ptp;          // paw - pes, exact
    std::vector<double> pab;
    std::vector<double> cardiac;      // unit-amplitude beat signal driving image/ripple
    std::vector<double> peristalsis;  // additive p_es component, >= 0
    std::vector<uint8_t> mode;        // 0 = PC, 1 = VC
    std::vector<uint8_t> inspiration;
    std::vector<PeristalsisEvent> events;
};

// Explicit Euler at 100 Hz of the single-compartment model. PC inspiration
// holds p_aw at PEEP + dp; VC inspiration holds flow constant until the
// target volume; expiration is passive against the total compliance.
NativeSim simulate_native(const PatientParams& params, double duration_s, uint64_t seed);

struct RenderConfig {
    double v_ref_ml = 500.0;     // volume normalization in image units
    double lung_gain = 1.0;
    double cardiac_gain = 0.10;  // fraction of the ventilation image amplitude
    double noise_sigma = 0.05;   // fraction of the ventilation image amplitude
};

// pixel(x,y,t) = g_L * V(t)/V_ref + g_H * cardiac(t - regional delay) + noise.
// vent and cardiac are already windowed/resampled 10 Hz signals.
std::vector<float> render_eit(const std::vector<double>& vent_rel,
                              const std::vector<double>& cardiac_sig, const Anatomy& anatomy,
                              const RenderConfig& cfg, uint64_t noise_seed);

struct SimulateOptions {
    RenderConfig render;
    int eit_lag = 0;      // injected device lags, samples at 10 Hz
    int monitor_lag = 0;
};

// Full record pipeline: native simulation, device windowing with injected
// lags, 10 Hz resampling, EIT rendering. duration_s must be >= 30.
Record simulate_record(const PatientParams& params, double duration_s, uint64_t seed,
                       const SimulateOptions& opts = {});

}  // namespace eitphys::phantom
