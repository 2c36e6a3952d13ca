#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eitphys/ad/ops.hpp"
#include "eitphys/nets/model.hpp"
#include "eitphys/phantom/dataset.hpp"
#include "eitphys/sigproc/report.hpp"
#include "eitphys/training/optimizer.hpp"

namespace eitphys::training {

// Prediction tasks, numbered as in the pipeline's task list.
enum class TaskId {
    Volume = 1,           // absolute V
    Flow = 2,             // absolute F
    AirwayPressure = 3,   // normalized p_aw
    ArterialPressure = 4, // normalized p_ab
    Transpulmonary = 5,   // absolute p_tp; three input/output variants
};

const char* task_name(TaskId task);
TaskId task_from_name(const std::string& name);

struct TrainConfig {
    double max_lr = 1e-3;
    int epochs = 10;
    int batch_size = 8;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double pct_start = 0.3;
    double grad_clip = 1.0;
    uint64_t seed = 1;
    TaskId task = TaskId::Volume;
    nets::Variant variant = nets::Variant::EitOnly;
    int crops_per_record = 1;

    void validate() const {
        if (max_lr <= 0) throw ConfigError("train config: max_lr must be positive");
        if (pct_start <= 0 || pct_start >= 1) {
            throw ConfigError("train config: pct_start must be in (0,1)");
        }
        if (epochs < 1 || batch_size < 1 || crops_per_record < 1) {
            throw ConfigError("train config: epochs, batch_size, crops_per_record must be >= 1");
        }
    }
};

// Output channels for a task/variant. The first channel is the task target;
// variant 2 adds airway pressure as an auxiliary output.
std::vector<ChannelId> output_channels_for(TaskId task, nets::Variant variant);

// True when the channel is trained/evaluated in absolute units via the
// dataset-global affine scaling (vs per-segment standardization).
bool channel_uses_global_scaling(ChannelId id);

nets::ModelConfig model_config_for(TaskId task, nets::Variant variant,
                                   nets::ModelConfig base = {});

// Mean absolute error over all B*T*K elements; unit weight per channel.
template <typename T>
ad::TensorPtr<T> l1_multitask_loss(ad::Tape<T>* tape, const ad::TensorPtr<T>& pred,
                                   const ad::TensorPtr<T>& tgt);

// Scaled per-frame targets for one segment, [T, K] row-major.
std::vector<float> segment_targets(const phantom::Segment& seg, TaskId task,
                                   nets::Variant variant, const phantom::GlobalStats& stats);

struct Batch {
    ad::TensorPtr<float> eit;      // [B,T,1,32,32]
    ad::TensorPtr<float> aux_paw;  // [B,T,1] or null
    ad::TensorPtr<float> targets;  // [B,T,K]
};

Batch assemble_batch(const std::vector<phantom::Segment>& segs, const std::vector<size_t>& idx,
                     TaskId task, nets::Variant variant, const phantom::GlobalStats& stats);

struct TrainLogRow {
    int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    std::vector<double> epoch_loss;  // mean train loss per epoch
    AdamW<float> optimizer;
    int64_t total_steps = 0;
};

// Seed-deterministic loop: fixed crop order per epoch given the seed,
// gradient-norm clipping, AdamW with the 1-cycle schedule. A non-finite loss
// aborts with a NumericError naming the first non-finite tensor on the tape.
TrainResult train(nets::Model<float>& model, const std::vector<phantom::Segment>& train_segs,
                  const TrainConfig& cfg, const phantom::GlobalStats& stats,
                  const std::function<void(const TrainLogRow&)>& on_step = {});

struct EvalOptions {
    std::string svg_dir;  // empty = no plots
    std::string split_label = "test";
    int shifted_max_lag = 10;  // 1 s at 10 Hz
};

// Per-segment RMSE (shifted RMSE for arterial pressure), DTW on the
// SD-normalized scale, visual rating; aggregated into one report row.
// Absolute tasks are mapped back to physical units for the RMSE column.
sigproc::TaskMetrics evaluate(nets::Model<float>& model,
                              const std::vector<phantom::Segment>& test_segs, TaskId task,
                              nets::Variant variant, const phantom::GlobalStats& stats,
                              const EvalOptions& opts = {});

}  // namespace eitphys::training
