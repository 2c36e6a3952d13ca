#include "eitphys/phantom/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "eitphys/rng.hpp"
#include "eitphys/sigproc/ops.hpp"

namespace eitphys::phantom {

namespace fs = std::filesystem;
using nlohmann::json;

PatientParams sample_patient(uint64_t dataset_seed, int patient_idx) {
    Rng rng(Rng::derive(dataset_seed, 1000 + static_cast<uint64_t>(patient_idx)));
    PatientParams p;
    p.anatomy_seed = Rng::derive(dataset_seed, 5000 + static_cast<uint64_t>(patient_idx));
    const Anatomy anatomy = make_anatomy(p.anatomy_seed);
    p.airway_resistance = rng.uniform(6.0, 16.0);
    p.lung_compliance = rng.uniform(32.0, 42.0) * anatomy.lung_scale * anatomy.lung_scale;
    p.chest_wall_compliance = rng.uniform(110.0, 220.0);
    p.resp_rate = rng.uniform(10.0, 24.0);
    p.heart_rate = rng.uniform(55.0, 120.0);
    p.peep = rng.uniform(5.0, 12.0);
    p.driving_pressure = rng.uniform(11.0, 15.0);
    p.tidal_volume = p.driving_pressure * p.lung_compliance * rng.uniform(0.9, 1.05);
    p.arterial_lag_s = rng.uniform(0.05, 0.45);
    p.systolic = rng.uniform(100.0, 160.0);
    p.diastolic = p.systolic - rng.uniform(30.0, 60.0);
    p.es_ripple = rng.uniform(0.5, 1.2);
    p.peristalsis_rate = rng.uniform(0.1, 0.5);
    return p;
}

std::vector<ModePhase> sample_mode_schedule(uint64_t record_seed, double duration_s) {
    Rng rng(Rng::derive(record_seed, 0x30DE));
    std::vector<ModePhase> phases;
    double t = 0.0;
    while (t < duration_s) {
        ModePhase ph;
        ph.duration_s = rng.uniform(20.0, 45.0);
        ph.mode = rng.uniform() < 0.25 ? VentMode::VC : VentMode::PC;
        phases.push_back(ph);
        t += ph.duration_s;
    }
    return phases;
}

Record make_record(const PhantomConfig& cfg, int patient_idx, int record_idx) {
    PatientParams params = sample_patient(cfg.seed, patient_idx);
    const uint64_t record_seed =
        Rng::derive(cfg.seed, 1u << 20 | static_cast<uint64_t>(patient_idx) << 8 |
                                  static_cast<uint64_t>(record_idx));
    params.mode_schedule = sample_mode_schedule(record_seed, cfg.duration_s + 10.0);

    Rng lag_rng(Rng::derive(record_seed, 0x1A6));
    SimulateOptions opts;
    opts.render = cfg.render;
    opts.eit_lag = static_cast<int>(lag_rng.uniform_int(-cfg.max_injected_lag, cfg.max_injected_lag));
    opts.monitor_lag =
        static_cast<int>(lag_rng.uniform_int(-cfg.max_injected_lag, cfg.max_injected_lag));

    Record rec = simulate_record(params, cfg.duration_s, record_seed, opts);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "p%02d", patient_idx);
    rec.meta.patient_id = buf;
    std::snprintf(buf, sizeof(buf), "p%02d_r%02d", patient_idx, record_idx);
    rec.meta.record_id = buf;
    return rec;
}

namespace {

struct StatAcc {
    double sum = 0.0, sumsq = 0.0;
    int64_t count = 0;
    void add(const std::vector<double>& xs) {
        for (double x : xs) {
            sum += x;
            sumsq += x * x;
        }
        count += static_cast<int64_t>(xs.size());
    }
    std::pair<double, double> finish() const {
        const double mean = sum / static_cast<double>(count);
        const double var = std::max(0.0, sumsq / static_cast<double>(count) - mean * mean);
        return {mean, std::sqrt(var)};
    }
};

constexpr ChannelId kStatChannels[] = {ChannelId::V,   ChannelId::F,   ChannelId::Paw,
                                       ChannelId::Pab, ChannelId::Pes, ChannelId::Ptp};

}  // namespace

Dataset build_dataset(const PhantomConfig& cfg) {
    Dataset ds;
    ds.config = cfg;
    std::map<ChannelId, StatAcc> acc;
    for (int p = 0; p < cfg.patients; ++p) {
        for (int r = 0; r < cfg.records_per_patient; ++r) {
            Record rec = make_record(cfg, p, r);
            for (ChannelId id : kStatChannels) acc[id].add(rec.channel(id).samples);
            ds.records.push_back(std::move(rec));
        }
    }
    for (ChannelId id : kStatChannels) ds.stats.mean_sd[id] = acc[id].finish();
    return ds;
}

Split make_split(const std::vector<std::string>& patient_id_per_record, SplitScheme scheme,
                 uint64_t seed) {
    std::vector<std::string> patients;  // first-seen order
    std::map<std::string, std::vector<size_t>> by_patient;
    for (size_t i = 0; i < patient_id_per_record.size(); ++i) {
        const auto& pid = patient_id_per_record[i];
        if (by_patient.find(pid) == by_patient.end()) patients.push_back(pid);
        by_patient[pid].push_back(i);
    }

    Split out;
    if (scheme == SplitScheme::IntraPatient) {
        for (const auto& pid : patients) {
            const auto& recs = by_patient[pid];
            if (recs.size() < 4) {
                throw ConfigError("intra-patient split needs >= 4 records per patient, patient " +
                                  pid + " has " + std::to_string(recs.size()));
            }
            for (size_t i = 0; i < recs.size(); ++i) {
                (i + 3 >= recs.size() ? out.test : out.train).push_back(recs[i]);
            }
        }
    } else {
        const auto n_pat = patients.size();
        if (n_pat < 10) {
            throw ConfigError("inter-patient split needs >= 10 patients, got " +
                              std::to_string(n_pat));
        }
        const auto n_test = static_cast<size_t>(
            std::ceil(0.10 * static_cast<double>(n_pat)));
        std::vector<size_t> order(n_pat);
        for (size_t i = 0; i < n_pat; ++i) order[i] = i;
        Rng rng(Rng::derive(seed, 0x5711));
        for (size_t i = n_pat - 1; i > 0; --i) {
            const auto j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i)));
            std::swap(order[i], order[j]);
        }
        std::vector<bool> is_test_patient(n_pat, false);
        for (size_t i = 0; i < n_test; ++i) is_test_patient[order[i]] = true;
        for (size_t pi = 0; pi < n_pat; ++pi) {
            for (size_t rec : by_patient[patients[pi]]) {
                (is_test_patient[pi] ? out.test : out.train).push_back(rec);
            }
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

Split split(const Dataset& ds, SplitScheme scheme) {
    std::vector<std::string> pids;
    pids.reserve(ds.records.size());
    for (const auto& r : ds.records) pids.push_back(r.meta.patient_id);
    return make_split(pids, scheme, ds.config.seed);
}

Split split(const DatasetIndex& index, SplitScheme scheme) {
    Split out;
    for (size_t i = 0; i < index.records.size(); ++i) {
        const auto& r = index.records[i];
        const bool test = scheme == SplitScheme::IntraPatient ? r.intra_test : r.inter_test;
        (test ? out.test : out.train).push_back(i);
    }
    return out;
}

std::vector<Segment> crop_segments(const Record& rec, int n_crops, uint64_t seed) {
    std::vector<Segment> out;
    if (rec.frames < kSegmentFrames) {
        std::cerr << "warning: record " << rec.meta.record_id << " has " << rec.frames
                  << " frames (< " << kSegmentFrames << "), skipping\n";
        return out;
    }
    Rng rng(Rng::derive(seed, 0xC807));
    for (int c = 0; c < n_crops; ++c) {
        const auto start = rng.uniform_int(0, rec.frames - kSegmentFrames);
        Segment seg;
        seg.patient_id = rec.meta.patient_id;
        seg.record_id = rec.meta.record_id;
        seg.start = start;

        std::vector<double> pix(static_cast<size_t>(kSegmentFrames) * kEitPixels);
        const float* src = rec.eit.data() + start * kEitPixels;
        for (size_t i = 0; i < pix.size(); ++i) pix[i] = static_cast<double>(src[i]);
        const auto std_eit = sigproc::standardize(pix);
        seg.eit_degenerate = std_eit.degenerate;
        seg.eit.resize(pix.size());
        for (size_t i = 0; i < pix.size(); ++i) seg.eit[i] = static_cast<float>(std_eit.y[i]);

        for (ChannelId id : kStatChannels) {
            const auto& ch = rec.channel(id).samples;
            seg.raw[id] = std::vector<double>(ch.begin() + start, ch.begin() + start + kSegmentFrames);
        }
        seg.aux_paw.resize(kSegmentFrames);
        for (int i = 0; i < kSegmentFrames; ++i) {
            seg.aux_paw[static_cast<size_t>(i)] = static_cast<float>(
                seg.raw[ChannelId::Paw][static_cast<size_t>(i)] / kAuxPawScale);
        }
        out.push_back(std::move(seg));
    }
    return out;
}

std::vector<float> global_scaled(const Segment& seg, ChannelId id, const GlobalStats& stats) {
    const auto [mean, sd] = stats.get(id);
    const double inv = sd > 0 ? 1.0 / sd : 1.0;
    const auto& raw = seg.raw.at(id);
    std::vector<float> out(raw.size());
    for (size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>((raw[i] - mean) * inv);
    return out;
}

std::vector<float> segment_standardized(const Segment& seg, ChannelId id) {
    const auto st = sigproc::standardize(seg.raw.at(id));
    std::vector<float> out(st.y.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(st.y[i]);
    return out;
}

// --- disk format -------------------------------------------------------

namespace {

void to_json(json& j, const PatientParams& p) {
    j = json{{"airway_resistance", p.airway_resistance},
             {"lung_compliance", p.lung_compliance},
             {"chest_wall_compliance", p.chest_wall_compliance},
             {"resp_rate", p.resp_rate},
             {"heart_rate", p.heart_rate},
             {"peep", p.peep},
             {"driving_pressure", p.driving_pressure},
             {"tidal_volume", p.tidal_volume},
             {"arterial_lag_s", p.arterial_lag_s},
             {"systolic", p.systolic},
             {"diastolic", p.diastolic},
             {"es_ripple", p.es_ripple},
             {"anatomy_seed", p.anatomy_seed},
             {"peristalsis_rate", p.peristalsis_rate},
             {"breath_jitter", p.breath_jitter}};
    json phases = json::array();
    for (const auto& ph : p.mode_schedule) {
        phases.push_back({{"mode", ph.mode == VentMode::VC ? "VC" : "PC"},
                          {"duration_s", ph.duration_s}});
    }
    j["mode_schedule"] = phases;
}

void from_json(const json& j, PatientParams& p) {
    p.airway_resistance = j.at("airway_resistance");
    p.lung_compliance = j.at("lung_compliance");
    p.chest_wall_compliance = j.at("chest_wall_compliance");
    p.resp_rate = j.at("resp_rate");
    p.heart_rate = j.at("heart_rate");
    p.peep = j.at("peep");
    p.driving_pressure = j.at("driving_pressure");
    p.tidal_volume = j.at("tidal_volume");
    p.arterial_lag_s = j.at("arterial_lag_s");
    p.systolic = j.at("systolic");
    p.diastolic = j.at("diastolic");
    p.es_ripple = j.at("es_ripple");
    p.anatomy_seed = j.at("anatomy_seed");
    p.peristalsis_rate = j.at("peristalsis_rate");
    p.breath_jitter = j.at("breath_jitter");
    p.mode_schedule.clear();
    for (const auto& ph : j.at("mode_schedule")) {
        p.mode_schedule.push_back(
            {ph.at("mode") == "VC" ? VentMode::VC : VentMode::PC, ph.at("duration_s")});
    }
}

void write_f32(const fs::path& path, const std::vector<double>& xs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot write " + path.string());
    for (double x : xs) {
        const auto v = static_cast<float>(x);
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
}

std::vector<double> read_f32(const fs::path& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw UsageError("cannot read " + path.string());
    const auto bytes = static_cast<size_t>(f.tellg());
    f.seekg(0);
    std::vector<float> raw(bytes / sizeof(float));
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
    return {raw.begin(), raw.end()};
}

}  // namespace

void write_record(const std::string& dir, const Record& rec) {
    fs::create_directories(dir);
    json meta;
    meta["format_version"] = 1;
    meta["patient_id"] = rec.meta.patient_id;
    meta["record_id"] = rec.meta.record_id;
    meta["frames"] = rec.frames;
    meta["sample_rate"] = rec.sample_rate;
    meta["injected_eit_lag"] = rec.meta.injected_eit_lag;
    meta["injected_monitor_lag"] = rec.meta.injected_monitor_lag;
    meta["residual_eit_lag"] = rec.meta.residual_eit_lag;
    meta["residual_monitor_lag"] = rec.meta.residual_monitor_lag;
    meta["aligned"] = rec.meta.aligned;
    meta["unalignable"] = rec.meta.unalignable;
    to_json(meta["params"], rec.meta.params);
    json chs = json::array();
    for (const auto& [id, ch] : rec.channels) {
        chs.push_back({{"name", channel_name(id)}, {"unit", ch.unit}, {"rate", ch.rate}});
        write_f32(fs::path(dir) / (std::string(channel_name(id)) + ".bin"), ch.samples);
    }
    meta["channels"] = chs;
    write_f32(fs::path(dir) / "monitor_p_aw.bin", rec.monitor_paw.samples);

    {
        std::ofstream f(fs::path(dir) / "eit.bin", std::ios::binary);
        if (!f) throw UsageError("cannot write eit.bin in " + dir);
        f.write(reinterpret_cast<const char*>(rec.eit.data()),
                static_cast<std::streamsize>(rec.eit.size() * sizeof(float)));
    }
    std::ofstream mf(fs::path(dir) / "meta.json");
    if (!mf) throw UsageError("cannot write meta.json in " + dir);
    mf << meta.dump(2) << '\n';
}

Record load_record(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "meta.json");
    if (!mf) throw UsageError("cannot read meta.json in " + dir);
    json meta = json::parse(mf);
    Record rec;
    rec.meta.patient_id = meta.at("patient_id");
    rec.meta.record_id = meta.at("record_id");
    rec.frames = meta.at("frames");
    rec.sample_rate = meta.at("sample_rate");
    rec.meta.injected_eit_lag = meta.at("injected_eit_lag");
    rec.meta.injected_monitor_lag = meta.at("injected_monitor_lag");
    rec.meta.residual_eit_lag = meta.at("residual_eit_lag");
    rec.meta.residual_monitor_lag = meta.at("residual_monitor_lag");
    rec.meta.aligned = meta.at("aligned");
    rec.meta.unalignable = meta.at("unalignable");
    from_json(meta.at("params"), rec.meta.params);
    for (const auto& chj : meta.at("channels")) {
        sigproc::Channel ch;
        ch.id = channel_from_name(chj.at("name"));
        ch.unit = chj.at("unit");
        ch.rate = chj.at("rate");
        ch.samples = read_f32(fs::path(dir) / (std::string(channel_name(ch.id)) + ".bin"));
        rec.channels[ch.id] = std::move(ch);
    }
    rec.monitor_paw.id = ChannelId::Paw;
    rec.monitor_paw.unit = channel_unit(ChannelId::Paw);
    rec.monitor_paw.rate = 10.0;
    rec.monitor_paw.samples = read_f32(fs::path(dir) / "monitor_p_aw.bin");

    std::ifstream ef(fs::path(dir) / "eit.bin", std::ios::binary | std::ios::ate);
    if (!ef) throw UsageError("cannot read eit.bin in " + dir);
    const auto bytes = static_cast<size_t>(ef.tellg());
    ef.seekg(0);
    rec.eit.resize(bytes / sizeof(float));
    ef.read(reinterpret_cast<char*>(rec.eit.data()), static_cast<std::streamsize>(bytes));
    if (static_cast<int64_t>(rec.eit.size()) != rec.frames * kEitPixels) {
        throw UsageError("eit.bin size does not match frame count in " + dir);
    }
    return rec;
}

void generate_dataset(const PhantomConfig& cfg, const std::string& out_dir, bool force) {
    const fs::path root(out_dir);
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!force) {
            throw ConfigError("output directory " + out_dir +
                              " exists and is not empty (use --force to overwrite)");
        }
        fs::remove_all(root);
    }
    fs::create_directories(root / "records");

    std::map<ChannelId, StatAcc> acc;
    json records = json::array();
    std::vector<std::string> pids;
    for (int p = 0; p < cfg.patients; ++p) {
        for (int r = 0; r < cfg.records_per_patient; ++r) {
            Record rec = make_record(cfg, p, r);
            for (ChannelId id : kStatChannels) acc[id].add(rec.channel(id).samples);
            const std::string rel = "records/" + rec.meta.record_id;
            write_record((root / rel).string(), rec);
            records.push_back({{"patient_id", rec.meta.patient_id},
                               {"record_id", rec.meta.record_id},
                               {"path", rel}});
            pids.push_back(rec.meta.patient_id);
        }
    }

    const Split intra = cfg.records_per_patient >= 4
                            ? make_split(pids, SplitScheme::IntraPatient, cfg.seed)
                            : Split{};
    const Split inter =
        cfg.patients >= 10 ? make_split(pids, SplitScheme::InterPatient, cfg.seed) : Split{};
    auto mark = [&](const Split& s, const char* key) {
        for (size_t i : s.test) records[i][key] = true;
        for (size_t i : s.train) records[i][key] = false;
    };
    if (!intra.test.empty()) mark(intra, "intra_test");
    if (!inter.test.empty()) mark(inter, "inter_test");

    json manifest;
    manifest["format_version"] = 1;
    manifest["seed"] = cfg.seed;
    manifest["patients"] = cfg.patients;
    manifest["records_per_patient"] = cfg.records_per_patient;
    manifest["duration_s"] = cfg.duration_s;
    manifest["max_injected_lag"] = cfg.max_injected_lag;
    manifest["render"] = {{"v_ref_ml", cfg.render.v_ref_ml},
                          {"lung_gain", cfg.render.lung_gain},
                          {"cardiac_gain", cfg.render.cardiac_gain},
                          {"noise_sigma", cfg.render.noise_sigma}};
    json stats;
    for (ChannelId id : kStatChannels) {
        const auto [mean, sd] = acc[id].finish();
        stats[channel_name(id)] = {{"mean", mean}, {"sd", sd}};
    }
    manifest["channel_stats"] = stats;
    manifest["records"] = records;

    std::ofstream mf(root / "manifest.json");
    if (!mf) throw UsageError("cannot write manifest.json in " + out_dir);
    mf << manifest.dump(2) << '\n';
}

DatasetIndex load_dataset_index(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw ConfigError("no manifest.json in " + dir + " (not a dataset directory?)");
    json manifest = json::parse(mf);
    DatasetIndex index;
    index.config.seed = manifest.at("seed");
    index.config.patients = manifest.at("patients");
    index.config.records_per_patient = manifest.at("records_per_patient");
    index.config.duration_s = manifest.at("duration_s");
    index.config.max_injected_lag = manifest.at("max_injected_lag");
    const auto& render = manifest.at("render");
    index.config.render.v_ref_ml = render.at("v_ref_ml");
    index.config.render.lung_gain = render.at("lung_gain");
    index.config.render.cardiac_gain = render.at("cardiac_gain");
    index.config.render.noise_sigma = render.at("noise_sigma");
    for (const auto& [name, st] : manifest.at("channel_stats").items()) {
        index.stats.mean_sd[channel_from_name(name)] = {st.at("mean"), st.at("sd")};
    }
    for (const auto& rj : manifest.at("records")) {
        RecordRef ref;
        ref.patient_id = rj.at("patient_id");
        ref.record_id = rj.at("record_id");
        ref.path = (fs::path(dir) / rj.at("path").get<std::string>()).string();
        ref.intra_test = rj.value("intra_test", false);
        ref.inter_test = rj.value("inter_test", false);
        index.records.push_back(std::move(ref));
    }
    return index;
}

}  // namespace eitphys::phantom
