#include "eitphys/phantom/simulate.hpp"

#include <algorithm>
#include <cmath>

#include "eitphys/rng.hpp"
#include "eitphys/sigproc/ops.hpp"

namespace eitphys::phantom {

namespace {

constexpr double kNativeRate = 100.0;
constexpr double kNativeDt = 1.0 / kNativeRate;
// Device windows are offset by up to 30 samples at 10 Hz (3 s), so the
// native simulation carries a guard margin on both sides.
constexpr double kMarginS = 3.5;
constexpr int64_t kMarginSamples = static_cast<int64_t>(kMarginS * kNativeRate);

// Two-Gaussian systolic upstroke + dicrotic bump, peak ~1 at phase 0.18.
double beat_template(double phase) {
    const double d1 = (phase - 0.18) / 0.075;
    const double d2 = (phase - 0.47) / 0.06;
    return std::exp(-d1 * d1) + 0.35 * std::exp(-d2 * d2);
}

struct Ellipse {
    double cx, cy, a, b, rot;
};

void splat(std::array<float, kEitPixels>& gain, const Ellipse& e) {
    const double cr = std::cos(e.rot), sr = std::sin(e.rot);
    for (int y = 0; y < kEitDim; ++y) {
        for (int x = 0; x < kEitDim; ++x) {
            const double dx = x - e.cx, dy = y - e.cy;
            const double u = (cr * dx + sr * dy) / e.a;
            const double v = (-sr * dx + cr * dy) / e.b;
            const double r2 = u * u + v * v;
            if (r2 < 1.0) {
                const double g = (1.0 - r2) * (1.0 - r2);
                const size_t idx = static_cast<size_t>(y * kEitDim + x);
                gain[idx] = std::max(gain[idx], static_cast<float>(g));
            }
        }
    }
}

}  // namespace

Anatomy make_anatomy(uint64_t seed) {
    Rng rng(Rng::derive(seed, 0xA11A));
    Anatomy an;
    an.lung_scale = rng.uniform(0.8, 1.2);
    const double rot = rng.uniform(-0.12, 0.12);
    const double tx = rng.uniform(-1.5, 1.5);
    const double ty = rng.uniform(-1.5, 1.5);
    const double left_jit = rng.uniform(0.95, 1.05);
    const double right_jit = rng.uniform(0.95, 1.05);
    splat(an.lung_gain, {10.0 + tx, 17.0 + ty, 4.3 * an.lung_scale * left_jit,
                         7.6 * an.lung_scale * left_jit, rot});
    splat(an.lung_gain, {22.0 + tx, 17.0 + ty, 4.3 * an.lung_scale * right_jit,
                         7.6 * an.lung_scale * right_jit, rot});
    splat(an.heart_gain, {16.0 + rng.uniform(-1.0, 1.0), 10.5 + rng.uniform(-1.0, 1.0),
                          3.2 * rng.uniform(0.9, 1.1), 3.8 * rng.uniform(0.9, 1.1), rot});
    return an;
}

std::pair<double, double> mask_centroid(const std::array<float, kEitPixels>& gain) {
    double sx = 0.0, sy = 0.0, sw = 0.0;
    for (int y = 0; y < kEitDim; ++y) {
        for (int x = 0; x < kEitDim; ++x) {
            const double w = gain[static_cast<size_t>(y * kEitDim + x)];
            sx += w * x;
            sy += w * y;
            sw += w;
        }
    }
    if (sw == 0.0) return {0.0, 0.0};
    return {sx / sw, sy / sw};
}

NativeSim simulate_native(const PatientParams& params, double duration_s, uint64_t seed) {
    params.validate();
    if (duration_s < 30.0) throw ConfigError("simulate_native: duration must be >= 30 s");
    // Independent streams so changing the peristalsis rate leaves the
    // breathing pattern untouched and vice versa.
    Rng rng(Rng::derive(seed, 0x51A1));
    Rng peri_rng(Rng::derive(seed, 0x9E41));

    const auto n = static_cast<int64_t>(std::llround(duration_s * kNativeRate));
    NativeSim sim;
    sim.volume_ml.resize(static_cast<size_t>(n));
    sim.flow_lps.resize(static_cast<size_t>(n));
    sim.paw.resize(static_cast<size_t>(n));
    sim.pes.resize(static_cast<size_t>(n));
    sim.ptp.resize(static_cast<size_t>(n));
    sim.pab.resize(static_cast<size_t>(n));
    sim.cardiac.resize(static_cast<size_t>(n));
    sim.peristalsis.assign(static_cast<size_t>(n), 0.0);
    sim.mode.resize(static_cast<size_t>(n));
    sim.inspiration.resize(static_cast<size_t>(n));

    // Peristalsis events: Poisson arrivals, raised-cosine bumps, >= 3 s long.
    if (params.peristalsis_rate > 0.0) {
        const double mean_gap = 60.0 / params.peristalsis_rate;
        double t = -std::log(1.0 - peri_rng.uniform()) * mean_gap;
        while (t < duration_s) {
            PeristalsisEvent ev;
            ev.start_s = t;
            ev.duration_s = peri_rng.uniform(4.0, 8.0);
            ev.amplitude = peri_rng.uniform(3.0, 8.0);
            sim.events.push_back(ev);
            const int64_t i0 = std::max<int64_t>(0, static_cast<int64_t>(ev.start_s * kNativeRate));
            const int64_t i1 = std::min<int64_t>(
                n, static_cast<int64_t>((ev.start_s + ev.duration_s) * kNativeRate));
            for (int64_t i = i0; i < i1; ++i) {
                const double u = (static_cast<double>(i) * kNativeDt - ev.start_s) / ev.duration_s;
                sim.peristalsis[static_cast<size_t>(i)] +=
                    ev.amplitude * 0.5 * (1.0 - std::cos(2.0 * 3.14159265358979323846 * u));
            }
            t += -std::log(1.0 - peri_rng.uniform()) * mean_gap;
        }
    }

    // Breath-by-breath state. Small per-breath jitter of the period and target
    // keeps the record from being exactly periodic so correlation lags are
    // unambiguous.
    const double base_period = 60.0 / params.resp_rate;
    double breath_start = 0.0;
    double t_insp = base_period / 3.0;
    double period = base_period;
    double dp_breath = params.driving_pressure;
    double vt_breath = params.tidal_volume;
    VentMode mode = VentMode::PC;
    double vc_flow = 0.0;
    size_t phase_idx = 0;
    double phase_end = params.mode_schedule.empty()
                           ? duration_s + 1.0
                           : params.mode_schedule[0].duration_s;
    const double jit = params.breath_jitter;
    auto begin_breath = [&](double t0, double volume_now) {
        breath_start = t0;
        period = base_period * rng.uniform(1.0 - jit, 1.0 + jit);
        t_insp = period / 3.0;
        dp_breath = params.driving_pressure * rng.uniform(1.0 - jit, 1.0 + jit);
        vt_breath = params.tidal_volume * rng.uniform(1.0 - jit, 1.0 + jit);
        if (!params.mode_schedule.empty()) {
            while (t0 >= phase_end && phase_idx + 1 < params.mode_schedule.size()) {
                ++phase_idx;
                phase_end += params.mode_schedule[phase_idx].duration_s;
            }
            mode = params.mode_schedule[phase_idx].mode;
        }
        vc_flow = (vt_breath - volume_now) / 1000.0 / t_insp;  // l/s, constant over inspiration
    };

    const double r_aw = params.airway_resistance;
    const double c_lung = params.lung_compliance;
    const double c_tot = params.total_compliance();
    const double heart_period = 60.0 / params.heart_rate;
    const double pulse = params.systolic - params.diastolic;

    double volume = 0.0;  // ml above end-expiratory baseline
    begin_breath(0.0, volume);
    for (int64_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * kNativeDt;
        if (t - breath_start >= period) begin_breath(t, volume);
        const bool insp = (t - breath_start) < t_insp;
        double paw, flow;
        if (insp && mode == VentMode::PC) {
            paw = params.peep + dp_breath;
            flow = (paw - volume / c_lung - params.peep) / r_aw;
        } else if (insp && mode == VentMode::VC) {
            flow = vc_flow;
            paw = params.peep + volume / c_lung + flow * r_aw;
        } else {
            paw = params.peep;
            flow = -(volume / c_tot) / r_aw;
        }

        const double resp_phase = (t - breath_start) / period;
        const double beat_phase = std::fmod(t, heart_period) / heart_period;
        const double card = beat_template(beat_phase);
        const double pab_phase =
            std::fmod(t - params.arterial_lag_s + 10.0 * heart_period, heart_period) / heart_period;
        const double pab = params.diastolic +
                           pulse * beat_template(pab_phase) *
                               (1.0 + 0.04 * std::sin(2.0 * 3.14159265358979323846 * resp_phase));

        const double pes = volume / params.chest_wall_compliance + params.es_ripple * card +
                           sim.peristalsis[static_cast<size_t>(i)];

        const auto idx = static_cast<size_t>(i);
        sim.volume_ml[idx] = volume;
        sim.flow_lps[idx] = flow;
        sim.paw[idx] = paw;
        sim.pes[idx] = pes;
        sim.ptp[idx] = paw - pes;
        sim.pab[idx] = pab;
        sim.cardiac[idx] = card;
        sim.mode[idx] = mode == VentMode::VC ? 1 : 0;
        sim.inspiration[idx] = insp ? 1 : 0;

        volume += flow * 1000.0 * kNativeDt;
    }
    return sim;
}

std::vector<float> render_eit(const std::vector<double>& vent_rel,
                              const std::vector<double>& cardiac_sig, const Anatomy& anatomy,
                              const RenderConfig& cfg, uint64_t noise_seed) {
    const auto frames = static_cast<int64_t>(vent_rel.size());
    if (cardiac_sig.size() != vent_rel.size()) {
        throw UsageError("render_eit: ventilation and cardiac signals must have equal length");
    }
    double vmin = vent_rel.empty() ? 0.0 : vent_rel[0], vmax = vmin;
    for (double v : vent_rel) {
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
    }
    const double vent_amp = (vmax - vmin) * cfg.lung_gain;
    const double card_amp = cfg.cardiac_gain * vent_amp;
    const double sigma = cfg.noise_sigma * vent_amp;

    Rng rng(Rng::derive(noise_seed, 0xE17));
    std::vector<float> out(static_cast<size_t>(frames) * kEitPixels);
    for (int64_t t = 0; t < frames; ++t) {
        const double vent = cfg.lung_gain * vent_rel[static_cast<size_t>(t)];
        const double card = card_amp * cardiac_sig[static_cast<size_t>(t)];
        float* frame = out.data() + t * kEitPixels;
        for (int p = 0; p < kEitPixels; ++p) {
            double px = anatomy.lung_gain[static_cast<size_t>(p)] * vent +
                        anatomy.heart_gain[static_cast<size_t>(p)] * card;
            if (sigma > 0.0) px += sigma * rng.normal();
            frame[p] = static_cast<float>(px);
        }
    }
    return out;
}

Record simulate_record(const PatientParams& params, double duration_s, uint64_t seed,
                       const SimulateOptions& opts) {
    if (duration_s < 30.0) throw ConfigError("simulate_record: duration must be >= 30 s");
    if (std::abs(opts.eit_lag) > 30 || std::abs(opts.monitor_lag) > 30) {
        throw ConfigError("simulate_record: injected lags must be within +/-30 samples");
    }
    const NativeSim sim = simulate_native(params, duration_s + 2.0 * kMarginS, seed);
    const auto n_native = static_cast<int64_t>(std::llround(duration_s * kNativeRate));

    auto cut_resample = [&](const std::vector<double>& src, int64_t start,
                            ChannelId id) -> sigproc::Channel {
        sigproc::Channel c;
        c.id = id;
        c.unit = channel_unit(id);
        c.rate = kNativeRate;
        c.samples.assign(src.begin() + start, src.begin() + start + n_native);
        return sigproc::resample_10hz(c);
    };

    // Device window offsets: a device lagging by L samples at 10 Hz sees the
    // physical signal L samples earlier at any given index of its own stream.
    const int64_t spiro0 = kMarginSamples;
    const int64_t monitor0 = kMarginSamples - static_cast<int64_t>(opts.monitor_lag) * 10;
    const int64_t eit0 = kMarginSamples - static_cast<int64_t>(opts.eit_lag) * 10;

    Record rec;
    rec.meta.params = params;
    rec.meta.injected_eit_lag = opts.eit_lag;
    rec.meta.injected_monitor_lag = opts.monitor_lag;

    rec.channels[ChannelId::V] = cut_resample(sim.volume_ml, spiro0, ChannelId::V);
    rec.channels[ChannelId::F] = cut_resample(sim.flow_lps, spiro0, ChannelId::F);
    rec.channels[ChannelId::Paw] = cut_resample(sim.paw, spiro0, ChannelId::Paw);
    const sigproc::Channel pes_true = cut_resample(sim.pes, spiro0, ChannelId::Pes);

    // p_tp is formed from the spirometry-clock p_aw and p_es so the identity
    // p_tp = p_aw - p_es holds exactly, sample by sample, before lag injection.
    sigproc::Channel ptp;
    ptp.id = ChannelId::Ptp;
    ptp.unit = channel_unit(ChannelId::Ptp);
    ptp.rate = 10.0;
    ptp.samples.resize(rec.channels[ChannelId::Paw].samples.size());
    for (size_t i = 0; i < ptp.samples.size(); ++i) {
        ptp.samples[i] = rec.channels[ChannelId::Paw].samples[i] - pes_true.samples[i];
    }
    rec.channels[ChannelId::Ptp] = std::move(ptp);

    rec.channels[ChannelId::Pes] = cut_resample(sim.pes, monitor0, ChannelId::Pes);
    rec.channels[ChannelId::Pab] = cut_resample(sim.pab, monitor0, ChannelId::Pab);
    rec.monitor_paw = cut_resample(sim.paw, monitor0, ChannelId::Paw);

    // EIT rendering from the EIT-clock ventilation and cardiac signals; the
    // cardiac image component runs 30 ms behind the heartbeat.
    const auto vent10 = cut_resample(sim.volume_ml, eit0, ChannelId::V);
    const auto card10 = cut_resample(sim.cardiac, eit0 - 3, ChannelId::EitSum);
    std::vector<double> vent_rel(vent10.samples.size());
    for (size_t i = 0; i < vent_rel.size(); ++i) {
        vent_rel[i] = vent10.samples[i] / opts.render.v_ref_ml;
    }
    rec.eit = render_eit(vent_rel, card10.samples, make_anatomy(params.anatomy_seed), opts.render,
                         Rng::derive(seed, 0x0151));
    rec.frames = static_cast<int64_t>(vent_rel.size());

    sigproc::Channel eit_sum;
    eit_sum.id = ChannelId::EitSum;
    eit_sum.unit = channel_unit(ChannelId::EitSum);
    eit_sum.rate = 10.0;
    eit_sum.samples.resize(static_cast<size_t>(rec.frames));
    for (int64_t t = 0; t < rec.frames; ++t) {
        double acc = 0.0;
        const float* frame = rec.eit.data() + t * kEitPixels;
        for (int p = 0; p < kEitPixels; ++p) acc += frame[p];
        eit_sum.samples[static_cast<size_t>(t)] = acc;
    }
    rec.channels[ChannelId::EitSum] = std::move(eit_sum);
    return rec;
}

}  // namespace eitphys::phantom
