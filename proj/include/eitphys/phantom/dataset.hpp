#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "eitphys/phantom/record.hpp"
#include "eitphys/phantom/simulate.hpp"

namespace eitphys::phantom {

struct PhantomConfig {
    int patients = 12;
    int records_per_patient = 12;
    double duration_s = 120.0;
    uint64_t seed = 7;
    RenderConfig render;
    int max_injected_lag = 25;  // samples at 10 Hz, uniform in [-max, max]
};

// Dataset-level channel statistics used for the global affine scaling of
// absolute targets (pooled over every sample of every record).
struct GlobalStats {
    std::map<ChannelId, std::pair<double, double>> mean_sd;

    std::pair<double, double> get(ChannelId id) const {
        auto it = mean_sd.find(id);
        if (it == mean_sd.end()) {
            throw UsageError(std::string("no global stats for channel ") + channel_name(id));
        }
        return it->second;
    }
};

struct Dataset {
    std::vector<Record> records;
    GlobalStats stats;
    PhantomConfig config;
};

// Deterministic per-patient physiology; lung size (anatomy) couples into the
// compliance so absolute volume stays inferable from standardized images.
PatientParams sample_patient(uint64_t dataset_seed, int patient_idx);

// Per-record ventilation mode schedule: mostly pressure-controlled phases
// with occasional volume-controlled ones.
std::vector<ModePhase> sample_mode_schedule(uint64_t record_seed, double duration_s);

Record make_record(const PhantomConfig& cfg, int patient_idx, int record_idx);

// In-memory cohort (tests and small runs); computes global stats.
Dataset build_dataset(const PhantomConfig& cfg);

enum class SplitScheme { IntraPatient, InterPatient };

struct Split {
    std::vector<size_t> train;
    std::vector<size_t> test;
};

// IntraPatient: the last 3 records of every patient go to the test set
// (needs >= 4 records per patient). InterPatient: ceil(0.10 * patients)
// whole patients, chosen by a seeded shuffle (needs >= 10 patients).
Split make_split(const std::vector<std::string>& patient_id_per_record, SplitScheme scheme,
                 uint64_t seed);

Split split(const Dataset& ds, SplitScheme scheme);

// A 128-frame training segment. EIT is standardized per sequence; target
// channels keep their raw physical values here, with scaling applied by the
// helpers below according to the task's convention.
struct Segment {
    std::string patient_id;
    std::string record_id;
    int64_t start = 0;
    std::vector<float> eit;  // [128 * 1024], standardized
    std::map<ChannelId, std::vector<double>> raw;
    std::vector<float> aux_paw;  // absolute airway pressure / 20, network aux input
    bool eit_degenerate = false;
};

inline constexpr int kSegmentFrames = 128;
inline constexpr double kAuxPawScale = 20.0;  // cmH2O

// Random 12.8 s crops; records shorter than 128 frames are skipped with a
// warning on stderr.
std::vector<Segment> crop_segments(const Record& rec, int n_crops, uint64_t seed);

// Absolute-task scaling: (x - mean) / sd with dataset-global constants.
std::vector<float> global_scaled(const Segment& seg, ChannelId id, const GlobalStats& stats);
// Normalized-task scaling: standardized per segment.
std::vector<float> segment_standardized(const Segment& seg, ChannelId id);

// --- on-disk format ---------------------------------------------------
// record dir: meta.json + <channel>.bin (little-endian float32) + eit.bin
// dataset dir: records/<id>/ ... + manifest.json (written last)

void write_record(const std::string& dir, const Record& rec);
Record load_record(const std::string& dir);

struct RecordRef {
    std::string patient_id;
    std::string record_id;
    std::string path;
    bool intra_test = false;
    bool inter_test = false;
};

struct DatasetIndex {
    std::vector<RecordRef> records;
    GlobalStats stats;
    PhantomConfig config;
};

// Streams records to disk one at a time (the full cohort never lives in
// memory) and writes manifest.json last.
void generate_dataset(const PhantomConfig& cfg, const std::string& out_dir, bool force);

DatasetIndex load_dataset_index(const std::string& dir);

Split split(const DatasetIndex& index, SplitScheme scheme);

}  // namespace eitphys::phantom
