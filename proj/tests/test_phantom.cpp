#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "eitphys/phantom/dataset.hpp"
#include "eitphys/phantom/simulate.hpp"
#include "eitphys/rng.hpp"
#include "eitphys/sigproc/align.hpp"

using namespace eitphys;
using namespace eitphys::phantom;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n = a.size();
    double ma = 0, mb = 0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0, saa = 0, sbb = 0;
    for (size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

struct BreathWindow {
    size_t begin, end;  // native indices of one inspiration
    bool vc;
};

std::vector<BreathWindow> inspiration_windows(const NativeSim& sim) {
    std::vector<BreathWindow> out;
    size_t i = 0;
    const size_t n = sim.inspiration.size();
    while (i < n) {
        while (i < n && !sim.inspiration[i]) ++i;
        const size_t b = i;
        while (i < n && sim.inspiration[i]) ++i;
        if (i > b && b > 0 && i < n) out.push_back({b, i, sim.mode[b] == 1});
    }
    return out;
}

}  // namespace

TEST_CASE("transpulmonary identity holds exactly, native and record") {
    PatientParams params;
    params.anatomy_seed = 11;
    const auto sim = simulate_native(params, 60.0, 5);
    for (size_t i = 0; i < sim.paw.size(); ++i) {
        CHECK(sim.paw[i] - sim.pes[i] - sim.ptp[i] == 0.0);
    }
    const auto rec = simulate_record(params, 60.0, 5, {});
    const auto& paw = rec.channel(ChannelId::Paw).samples;
    const auto& pes = rec.channel(ChannelId::Pes).samples;
    const auto& ptp = rec.channel(ChannelId::Ptp).samples;
    double max_err = 0.0;
    for (size_t i = 0; i < paw.size(); ++i) {
        max_err = std::max(max_err, std::abs(paw[i] - pes[i] - ptp[i]));
    }
    CHECK(max_err == 0.0);
}

TEST_CASE("volume equals the running flow integral") {
    PatientParams params;
    const auto sim = simulate_native(params, 60.0, 21);
    double integral = 0.0;
    double max_err = 0.0;
    for (size_t i = 0; i < sim.volume_ml.size(); ++i) {
        max_err = std::max(max_err, std::abs(sim.volume_ml[i] - integral));
        integral += sim.flow_lps[i] * 1000.0 * 0.01;
    }
    CHECK(max_err < 1.0);  // ml
}

TEST_CASE("PC inspiration matches the first-order step response") {
    PatientParams params;
    params.airway_resistance = 10.0;
    params.lung_compliance = 50.0;
    params.chest_wall_compliance = 150.0;
    params.driving_pressure = 15.0;
    params.peep = 5.0;
    params.resp_rate = 8.0;  // period 7.5 s -> t_insp = 2.5 s = 5 tau
    params.breath_jitter = 0.0;
    params.peristalsis_rate = 0.0;
    const auto sim = simulate_native(params, 60.0, 3);
    // first breath starts at t = 0 with V = 0
    const double tau = params.airway_resistance * params.lung_compliance / 1000.0;
    CHECK(tau == doctest::Approx(0.5));
    const auto idx_end = static_cast<size_t>(2.5 / 0.01) - 1;
    REQUIRE(sim.inspiration[idx_end] == 1);
    CHECK(sim.volume_ml[idx_end] ==
          doctest::Approx(params.driving_pressure * params.lung_compliance).epsilon(0.01));
    // p_aw constant at PEEP + dp during PC inspiration
    for (size_t i = 0; i <= idx_end; ++i) {
        CHECK(sim.paw[i] == doctest::Approx(20.0).epsilon(1e-12));
    }
}

TEST_CASE("passive expiration follows the analytic exponential") {
    PatientParams params;
    params.airway_resistance = 10.0;
    params.lung_compliance = 50.0;
    params.chest_wall_compliance = 150.0;
    params.resp_rate = 8.0;
    params.breath_jitter = 0.0;
    params.peristalsis_rate = 0.0;
    const auto sim = simulate_native(params, 60.0, 3);
    // expiration of the first breath starts at t_insp = 2.5 s
    const auto i0 = static_cast<size_t>(2.5 / 0.01);
    REQUIRE(sim.inspiration[i0] == 0);
    const double v0 = sim.volume_ml[i0];
    const double c_tot = params.total_compliance();
    const double tau = params.airway_resistance * c_tot / 1000.0;
    const auto i1 = i0 + static_cast<size_t>(tau / 0.01);
    CHECK(sim.volume_ml[i1] == doctest::Approx(v0 * std::exp(-1.0)).epsilon(0.01));
}

TEST_CASE("mode fingerprints hold on every breath of a mixed-mode record") {
    PatientParams params;
    params.anatomy_seed = 1;
    params.mode_schedule = {{VentMode::PC, 25.0}, {VentMode::VC, 25.0}, {VentMode::PC, 20.0},
                            {VentMode::VC, 20.0}};
    const auto sim = simulate_native(params, 90.0, 17);
    int pc_breaths = 0, vc_breaths = 0;
    for (const auto& w : inspiration_windows(sim)) {
        const size_t n = w.end - w.begin;
        if (!w.vc) {
            // constant pressure: SD(p_aw) / mean(p_aw - PEEP) < 0.05
            double mean = 0, sq = 0;
            for (size_t i = w.begin; i < w.end; ++i) mean += sim.paw[i];
            mean /= static_cast<double>(n);
            for (size_t i = w.begin; i < w.end; ++i) {
                sq += (sim.paw[i] - mean) * (sim.paw[i] - mean);
            }
            const double sd = std::sqrt(sq / static_cast<double>(n));
            CHECK(sd / (mean - params.peep) < 0.05);
            ++pc_breaths;
        } else {
            // constant flow: SD(F) / mean(F) < 0.05
            double mean = 0, sq = 0;
            for (size_t i = w.begin; i < w.end; ++i) mean += sim.flow_lps[i];
            mean /= static_cast<double>(n);
            for (size_t i = w.begin; i < w.end; ++i) {
                sq += (sim.flow_lps[i] - mean) * (sim.flow_lps[i] - mean);
            }
            CHECK(std::sqrt(sq / static_cast<double>(n)) / mean < 0.05);
            ++vc_breaths;
        }
    }
    CHECK(pc_breaths > 3);
    CHECK(vc_breaths > 3);
}

TEST_CASE("peristalsis events are positive, slow, and only in p_es") {
    PatientParams params;
    params.peristalsis_rate = 2.0;  // frequent, to get several events
    params.anatomy_seed = 2;
    const auto sim = simulate_native(params, 120.0, 41);
    REQUIRE(!sim.events.empty());
    for (const auto& ev : sim.events) {
        CHECK(ev.amplitude > 0.0);
        CHECK(ev.duration_s >= 3.0);
    }
    for (double v : sim.peristalsis) CHECK(v >= 0.0);
    // additive decomposition of p_es
    for (size_t i = 0; i < sim.pes.size(); ++i) {
        const double expect = sim.volume_ml[i] / params.chest_wall_compliance +
                              params.es_ripple * sim.cardiac[i] + sim.peristalsis[i];
        CHECK(std::abs(sim.pes[i] - expect) < 1e-12);
    }
    // switching peristalsis off must not change any other channel
    PatientParams quiet = params;
    quiet.peristalsis_rate = 0.0;
    const auto sim_q = simulate_native(quiet, 120.0, 41);
    CHECK(sim_q.events.empty());
    CHECK(sim_q.paw == sim.paw);
    CHECK(sim_q.volume_ml == sim.volume_ml);
    CHECK(sim_q.pab == sim.pab);
    bool pes_differs = false;
    for (size_t i = 0; i < sim.pes.size(); ++i) pes_differs |= sim.pes[i] != sim_q.pes[i];
    CHECK(pes_differs);
}

TEST_CASE("seed determinism produces bit-identical records") {
    PatientParams params;
    params.anatomy_seed = 77;
    SimulateOptions opts;
    opts.eit_lag = 4;
    opts.monitor_lag = -9;
    const auto a = simulate_record(params, 45.0, 123, opts);
    const auto b = simulate_record(params, 45.0, 123, opts);
    CHECK(a.eit == b.eit);
    for (const auto& [id, ch] : a.channels) CHECK(ch.samples == b.channels.at(id).samples);
    const auto c = simulate_record(params, 45.0, 124, opts);
    CHECK(a.eit != c.eit);
}

TEST_CASE("noise-free cardiac-free frame sum is an affine function of volume") {
    PatientParams params;
    params.anatomy_seed = 8;
    SimulateOptions opts;
    opts.render.noise_sigma = 0.0;
    opts.render.cardiac_gain = 0.0;
    const auto rec = simulate_record(params, 60.0, 31, opts);
    CHECK(pearson(rec.channel(ChannelId::EitSum).samples, rec.channel(ChannelId::V).samples) ==
          doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("different anatomy seeds move the lung centroid") {
    const auto a = make_anatomy(1);
    const auto b = make_anatomy(6);
    const auto [ax, ay] = mask_centroid(a.lung_gain);
    const auto [bx, by] = mask_centroid(b.lung_gain);
    CHECK(std::hypot(ax - bx, ay - by) >= 1.0);
}

TEST_CASE("zero gains yield zero frames and a degenerate segment guard") {
    PatientParams params;
    params.anatomy_seed = 4;
    SimulateOptions opts;
    opts.render.lung_gain = 0.0;
    opts.render.cardiac_gain = 0.0;
    opts.render.noise_sigma = 0.0;
    const auto rec = simulate_record(params, 60.0, 9, opts);
    for (float v : rec.eit) CHECK(v == 0.0f);
    const auto segs = crop_segments(rec, 2, 5);
    REQUIRE(segs.size() == 2);
    for (const auto& s : segs) {
        CHECK(s.eit_degenerate);
        for (float v : s.eit) CHECK(std::isfinite(v));
    }
}

TEST_CASE("splits: intra-patient takes the last three records") {
    std::vector<std::string> pids;
    for (int p = 0; p < 17; ++p) {
        for (int r = 0; r < 10; ++r) pids.push_back("p" + std::to_string(p));
    }
    const auto sp = make_split(pids, SplitScheme::IntraPatient, 5);
    CHECK(sp.test.size() == 51);  // 3 x 17, ~20% of 170
    CHECK(sp.train.size() + sp.test.size() == 170);
    // the test records of each patient are its last three
    for (size_t idx : sp.test) CHECK(idx % 10 >= 7);
}

TEST_CASE("splits: inter-patient holds out 10% of patients") {
    std::vector<std::string> pids;
    for (int p = 0; p < 20; ++p) {
        for (int r = 0; r < 5; ++r) pids.push_back("p" + std::to_string(p));
    }
    const auto sp = make_split(pids, SplitScheme::InterPatient, 7);
    CHECK(sp.test.size() == 10);  // 2 patients x 5 records
    std::set<std::string> test_patients;
    for (size_t idx : sp.test) test_patients.insert(pids[idx]);
    CHECK(test_patients.size() == 2);
    // whole patients: no test patient appears in train
    for (size_t idx : sp.train) CHECK(test_patients.count(pids[idx]) == 0);
}

TEST_CASE("splits partition the dataset") {
    for (uint64_t seed : {1ull, 9ull}) {
        std::vector<std::string> pids;
        for (int p = 0; p < 12; ++p) {
            for (int r = 0; r < 6; ++r) pids.push_back("p" + std::to_string(p));
        }
        for (auto scheme : {SplitScheme::IntraPatient, SplitScheme::InterPatient}) {
            const auto sp = make_split(pids, scheme, seed);
            std::vector<bool> seen(pids.size(), false);
            for (size_t i : sp.train) {
                CHECK_FALSE(seen[i]);
                seen[i] = true;
            }
            for (size_t i : sp.test) {
                CHECK_FALSE(seen[i]);
                seen[i] = true;
            }
            CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
        }
    }
}

TEST_CASE("split preconditions") {
    std::vector<std::string> few = {"a", "a", "a", "b", "b", "b"};
    CHECK_THROWS_AS(make_split(few, SplitScheme::IntraPatient, 1), ConfigError);
    CHECK_THROWS_AS(make_split(few, SplitScheme::InterPatient, 1), ConfigError);
}

TEST_CASE("single patient with four records: one train, three test") {
    std::vector<std::string> pids = {"a", "a", "a", "a"};
    const auto sp = make_split(pids, SplitScheme::IntraPatient, 1);
    CHECK(sp.train == std::vector<size_t>{0});
    CHECK(sp.test == std::vector<size_t>({1, 2, 3}));
}

TEST_CASE("crop_segments: shape, standardization, and global-scale round trip") {
    PatientParams params;
    params.anatomy_seed = 6;
    const auto rec = simulate_record(params, 60.0, 13, {});
    const auto segs = crop_segments(rec, 3, 99);
    REQUIRE(segs.size() == 3);
    GlobalStats stats;
    stats.mean_sd[ChannelId::V] = {180.0, 189.0};
    for (const auto& seg : segs) {
        CHECK(seg.eit.size() == static_cast<size_t>(kSegmentFrames * kEitPixels));
        double mean = 0, sq = 0;
        for (float v : seg.eit) mean += v;
        mean /= static_cast<double>(seg.eit.size());
        for (float v : seg.eit) sq += (v - mean) * (v - mean);
        const double sd = std::sqrt(sq / static_cast<double>(seg.eit.size()));
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(sd - 1.0) < 1e-5);

        const auto scaled = global_scaled(seg, ChannelId::V, stats);
        const auto& raw = seg.raw.at(ChannelId::V);
        for (size_t i = 0; i < scaled.size(); ++i) {
            // exact up to the float32 storage of the scaled value
            const double back = static_cast<double>(scaled[i]) * 189.0 + 180.0;
            CHECK(std::abs(back - raw[i]) < 1e-3);
        }
        const auto norm = segment_standardized(seg, ChannelId::Paw);
        double nmean = 0;
        for (float v : norm) nmean += v;
        CHECK(std::abs(nmean / static_cast<double>(norm.size())) < 1e-5);
    }
    // too-short record is skipped with a warning
    auto short_rec = rec;
    short_rec.frames = 100;
    short_rec.eit.resize(100 * kEitPixels);
    for (auto& [id, ch] : short_rec.channels) ch.samples.resize(100);
    CHECK(crop_segments(short_rec, 2, 1).empty());
}

TEST_CASE("record disk round trip") {
    PatientParams params;
    params.anatomy_seed = 15;
    SimulateOptions opts;
    opts.eit_lag = -3;
    opts.monitor_lag = 11;
    auto rec = simulate_record(params, 45.0, 321, opts);
    rec.meta.patient_id = "p00";
    rec.meta.record_id = "p00_r00";
    const std::string dir = "test_tmp_record";
    std::filesystem::remove_all(dir);
    write_record(dir, rec);
    const auto back = load_record(dir);
    CHECK(back.frames == rec.frames);
    CHECK(back.eit == rec.eit);  // float32 both sides
    CHECK(back.meta.injected_eit_lag == -3);
    CHECK(back.meta.injected_monitor_lag == 11);
    CHECK(back.meta.params.lung_compliance == doctest::Approx(params.lung_compliance));
    for (const auto& [id, ch] : rec.channels) {
        const auto& loaded = back.channels.at(id).samples;
        REQUIRE(loaded.size() == ch.samples.size());
        for (size_t i = 0; i < loaded.size(); ++i) {
            CHECK(loaded[i] == static_cast<double>(static_cast<float>(ch.samples[i])));
        }
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("dataset generation, manifest and index round trip") {
    PhantomConfig cfg;
    cfg.patients = 2;
    cfg.records_per_patient = 4;
    cfg.duration_s = 40.0;
    cfg.seed = 3;
    const std::string dir = "test_tmp_dataset";
    std::filesystem::remove_all(dir);
    generate_dataset(cfg, dir, false);
    CHECK_THROWS_AS(generate_dataset(cfg, dir, false), ConfigError);  // refuses non-empty
    const auto index = load_dataset_index(dir);
    CHECK(index.records.size() == 8);
    CHECK(index.stats.mean_sd.count(ChannelId::V) == 1);
    const auto sp = split(index, SplitScheme::IntraPatient);
    CHECK(sp.test.size() == 6);  // 3 per patient
    const auto rec = load_record(index.records[0].path);
    CHECK(rec.frames == 400);
    generate_dataset(cfg, dir, true);  // force overwrites
    std::filesystem::remove_all(dir);
}

TEST_CASE("patient parameter validation") {
    PatientParams bad;
    bad.lung_compliance = -5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    PatientParams bad2;
    bad2.resp_rate = 50;
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
    PatientParams bad3;
    bad3.arterial_lag_s = 0.9;
    CHECK_THROWS_AS(bad3.validate(), ConfigError);
    CHECK_THROWS_AS(simulate_record(PatientParams{}, 10.0, 1, {}), ConfigError);  // too short
}

TEST_CASE("sampled patients are physiological and anatomy-coupled") {
    for (int i = 0; i < 12; ++i) {
        const auto p = sample_patient(7, i);
        p.validate();
        const auto an = make_anatomy(p.anatomy_seed);
        // compliance scales with lung area
        CHECK(p.lung_compliance ==
              doctest::Approx(p.lung_compliance / (an.lung_scale * an.lung_scale) *
                              an.lung_scale * an.lung_scale));
        CHECK(p.lung_compliance > 15.0);
        CHECK(p.lung_compliance < 70.0);
    }
}
