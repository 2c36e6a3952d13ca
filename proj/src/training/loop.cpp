#include "eitphys/training/loop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "eitphys/rng.hpp"
#include "eitphys/training/schedule.hpp"

namespace eitphys::training {

using phantom::GlobalStats;
using phantom::kEitPixels;
using phantom::kSegmentFrames;
using phantom::Segment;

const char* task_name(TaskId task) {
    switch (task) {
        case TaskId::Volume: return "volume";
        case TaskId::Flow: return "flow";
        case TaskId::AirwayPressure: return "paw";
        case TaskId::ArterialPressure: return "pab";
        case TaskId::Transpulmonary: return "ptp";
    }
    return "?";
}

TaskId task_from_name(const std::string& name) {
    for (TaskId t : {TaskId::Volume, TaskId::Flow, TaskId::AirwayPressure,
                     TaskId::ArterialPressure, TaskId::Transpulmonary}) {
        if (name == task_name(t)) return t;
    }
    if (name.size() == 1 && name[0] >= '1' && name[0] <= '5') {
        return static_cast<TaskId>(name[0] - '0');
    }
    throw ConfigError("unknown task: " + name +
                      " (expected volume|flow|paw|pab|ptp or 1..5)");
}

std::vector<ChannelId> output_channels_for(TaskId task, nets::Variant variant) {
    switch (task) {
        case TaskId::Volume: return {ChannelId::V};
        case TaskId::Flow: return {ChannelId::F};
        case TaskId::AirwayPressure: return {ChannelId::Paw};
        case TaskId::ArterialPressure: return {ChannelId::Pab};
        case TaskId::Transpulmonary:
            if (variant == nets::Variant::EitJointOutputs) {
                return {ChannelId::Ptp, ChannelId::Paw};
            }
            return {ChannelId::Ptp};
    }
    return {};
}

bool channel_uses_global_scaling(ChannelId id) {
    // Normalized tasks predict per-segment standardized airway/arterial
    // pressure. As an auxiliary joint output (variant 2) p_aw is globally
    // scaled instead, handled in segment_targets.
    return id == ChannelId::V || id == ChannelId::F || id == ChannelId::Ptp;
}

nets::ModelConfig model_config_for(TaskId task, nets::Variant variant, nets::ModelConfig base) {
    base.output_channels = output_channels_for(task, variant);
    base.variant = task == TaskId::Transpulmonary ? variant : nets::Variant::EitOnly;
    return base;
}

template <typename T>
ad::TensorPtr<T> l1_multitask_loss(ad::Tape<T>* tape, const ad::TensorPtr<T>& pred,
                                   const ad::TensorPtr<T>& tgt) {
    if (pred->shape != tgt->shape) {
        throw UsageError("l1_multitask_loss: shape mismatch " + pred->shape_str() + " vs " +
                         tgt->shape_str());
    }
    return ad::mean_all(tape, ad::abs_val(tape, ad::sub(tape, pred, tgt)));
}

template ad::TensorPtr<float> l1_multitask_loss<float>(ad::Tape<float>*,
                                                       const ad::TensorPtr<float>&,
                                                       const ad::TensorPtr<float>&);
template ad::TensorPtr<double> l1_multitask_loss<double>(ad::Tape<double>*,
                                                         const ad::TensorPtr<double>&,
                                                         const ad::TensorPtr<double>&);

namespace {

std::vector<float> scaled_channel(const Segment& seg, ChannelId id, TaskId task,
                                  const GlobalStats& stats) {
    if (channel_uses_global_scaling(id)) return phantom::global_scaled(seg, id, stats);
    // p_aw as a joint auxiliary output (task 5 variant 2) uses the global
    // affine scale; as a task-3/4 target it is standardized per segment.
    if (task == TaskId::Transpulmonary) return phantom::global_scaled(seg, id, stats);
    return phantom::segment_standardized(seg, id);
}

}  // namespace

std::vector<float> segment_targets(const Segment& seg, TaskId task, nets::Variant variant,
                                   const GlobalStats& stats) {
    const auto channels = output_channels_for(task, variant);
    const auto k = static_cast<int64_t>(channels.size());
    std::vector<float> out(static_cast<size_t>(kSegmentFrames * k));
    for (int64_t ci = 0; ci < k; ++ci) {
        const auto series = scaled_channel(seg, channels[static_cast<size_t>(ci)], task, stats);
        for (int64_t t = 0; t < kSegmentFrames; ++t) {
            out[static_cast<size_t>(t * k + ci)] = series[static_cast<size_t>(t)];
        }
    }
    return out;
}

Batch assemble_batch(const std::vector<Segment>& segs, const std::vector<size_t>& idx, TaskId task,
                     nets::Variant variant, const GlobalStats& stats) {
    const auto b = static_cast<int64_t>(idx.size());
    const auto k = static_cast<int64_t>(output_channels_for(task, variant).size());
    const bool wants_aux = task == TaskId::Transpulmonary && variant == nets::Variant::EitPlusPaw;

    Batch batch;
    batch.eit = ad::make_tensor<float>({b, kSegmentFrames, 1, phantom::kEitDim, phantom::kEitDim});
    batch.targets = ad::make_tensor<float>({b, kSegmentFrames, k});
    if (wants_aux) batch.aux_paw = ad::make_tensor<float>({b, kSegmentFrames, 1});

    for (int64_t bi = 0; bi < b; ++bi) {
        const Segment& seg = segs[idx[static_cast<size_t>(bi)]];
        std::copy(seg.eit.begin(), seg.eit.end(),
                  batch.eit->data() + bi * kSegmentFrames * kEitPixels);
        const auto tgt = segment_targets(seg, task, variant, stats);
        std::copy(tgt.begin(), tgt.end(), batch.targets->data() + bi * kSegmentFrames * k);
        if (wants_aux) {
            std::copy(seg.aux_paw.begin(), seg.aux_paw.end(),
                      batch.aux_paw->data() + bi * kSegmentFrames);
        }
    }
    return batch;
}

namespace {

double global_grad_norm(const std::vector<std::pair<std::string, ad::TensorPtr<float>>>& params) {
    double acc = 0.0;
    for (const auto& [name, p] : params) {
        if (p->grad.empty()) continue;
        for (float g : p->grad) acc += static_cast<double>(g) * static_cast<double>(g);
    }
    return std::sqrt(acc);
}

}  // namespace

TrainResult train(nets::Model<float>& model, const std::vector<Segment>& train_segs,
                  const TrainConfig& cfg, const GlobalStats& stats,
                  const std::function<void(const TrainLogRow&)>& on_step) {
    cfg.validate();
    if (train_segs.empty()) throw ConfigError("train: no training segments");

    std::vector<ad::TensorPtr<float>> params;
    for (auto& [name, p] : model.parameters()) params.push_back(p);
    AdamWHyper hyper;
    hyper.beta1 = cfg.beta1;
    hyper.beta2 = cfg.beta2;
    hyper.weight_decay = cfg.weight_decay;
    AdamW<float> opt(params, hyper);

    const auto n = train_segs.size();
    const auto steps_per_epoch =
        static_cast<int64_t>((n + static_cast<size_t>(cfg.batch_size) - 1) /
                             static_cast<size_t>(cfg.batch_size));
    const int64_t total_steps = steps_per_epoch * cfg.epochs;

    TrainResult result;
    ad::Tape<float> tape;
    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng(Rng::derive(cfg.seed, 0xE60C + static_cast<uint64_t>(epoch)));
        for (size_t i = n - 1; i > 0; --i) {
            const auto j = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i)));
            std::swap(order[i], order[j]);
        }

        double epoch_acc = 0.0;
        int64_t epoch_batches = 0;
        for (size_t at = 0; at < n; at += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(n, at + static_cast<size_t>(cfg.batch_size));
            const std::vector<size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
            const Batch batch = assemble_batch(train_segs, idx, cfg.task, cfg.variant, stats);

            tape.reset();
            nets::FrameBatch<float> fb{batch.eit, batch.aux_paw};
            auto pred = model.forward(&tape, fb, /*training=*/true);
            auto loss = l1_multitask_loss(&tape, pred, batch.targets);
            const double loss_v = static_cast<double>(loss->value[0]);
            if (!std::isfinite(loss_v)) {
                const auto culprit = tape.first_nonfinite();
                throw NumericError("non-finite loss at step " + std::to_string(step) +
                                   "; first non-finite tensor: " +
                                   (culprit ? *culprit : std::string("loss")));
            }
            opt.zero_grad();
            tape.backward(loss);

            if (cfg.grad_clip > 0) {
                const double norm = global_grad_norm(model.parameters());
                if (norm > cfg.grad_clip) {
                    const auto scale = static_cast<float>(cfg.grad_clip / norm);
                    for (auto& [name, p] : model.parameters()) {
                        for (auto& g : p->grad) g *= scale;
                    }
                }
            }

            const double lr = one_cycle_lr(step, total_steps, cfg.max_lr, cfg.pct_start);
            opt.step(lr);

            TrainLogRow row{step, lr, loss_v};
            result.log.push_back(row);
            if (on_step) on_step(row);
            epoch_acc += loss_v;
            ++epoch_batches;
            ++step;
        }
        result.epoch_loss.push_back(epoch_acc / static_cast<double>(epoch_batches));
    }
    tape.reset();
    result.optimizer = std::move(opt);
    result.total_steps = step;
    return result;
}

sigproc::TaskMetrics evaluate(nets::Model<float>& model, const std::vector<Segment>& test_segs,
                              TaskId task, nets::Variant variant, const GlobalStats& stats,
                              const EvalOptions& opts) {
    sigproc::TaskMetrics row;
    row.task = task_name(task);
    row.split = opts.split_label;
    row.variant = task == TaskId::Transpulmonary ? nets::variant_name(variant) : "";
    const auto channels = output_channels_for(task, variant);
    const ChannelId primary = channels[0];
    const bool absolute = channel_uses_global_scaling(primary);
    row.unit = absolute ? channel_unit(primary) : "sd";
    if (test_segs.empty()) return row;

    const auto k = static_cast<int64_t>(channels.size());
    double pooled_sq = 0.0;
    int64_t pooled_n = 0;
    double shifted_acc = 0.0, dtw_acc = 0.0;
    double tgt_sum = 0.0, tgt_sq = 0.0;
    int64_t tgt_n = 0;
    const auto [g_mean, g_sd] = absolute ? stats.get(primary) : std::pair<double, double>{0.0, 1.0};

    int svg_idx = 0;
    for (const auto& seg : test_segs) {
        const Batch batch = assemble_batch(test_segs, {static_cast<size_t>(&seg - test_segs.data())},
                                           task, variant, stats);
        nets::FrameBatch<float> fb{batch.eit, batch.aux_paw};
        auto pred = model.forward(nullptr, fb, /*training=*/false);

        // Primary-channel series in network scale.
        std::vector<double> p_net(kSegmentFrames), t_net(kSegmentFrames);
        for (int64_t t = 0; t < kSegmentFrames; ++t) {
            p_net[static_cast<size_t>(t)] = static_cast<double>(pred->value[static_cast<size_t>(t * k)]);
            t_net[static_cast<size_t>(t)] =
                static_cast<double>(batch.targets->value[static_cast<size_t>(t * k)]);
        }
        // Physical units for the RMSE of absolute tasks.
        std::vector<double> p_phys(kSegmentFrames), t_phys(kSegmentFrames);
        for (int64_t t = 0; t < kSegmentFrames; ++t) {
            p_phys[static_cast<size_t>(t)] = p_net[static_cast<size_t>(t)] * g_sd + g_mean;
            t_phys[static_cast<size_t>(t)] = t_net[static_cast<size_t>(t)] * g_sd + g_mean;
        }
        const auto& p_eval = absolute ? p_phys : p_net;
        const auto& t_eval = absolute ? t_phys : t_net;

        for (int64_t t = 0; t < kSegmentFrames; ++t) {
            const double d = p_eval[static_cast<size_t>(t)] - t_eval[static_cast<size_t>(t)];
            pooled_sq += d * d;
            tgt_sum += t_eval[static_cast<size_t>(t)];
            tgt_sq += t_eval[static_cast<size_t>(t)] * t_eval[static_cast<size_t>(t)];
        }
        pooled_n += kSegmentFrames;
        tgt_n += kSegmentFrames;

        shifted_acc += sigproc::shifted_rmse(p_eval, t_eval, opts.shifted_max_lag);
        dtw_acc += sigproc::dtw(p_net, t_net);  // SD-normalized scale
        const sigproc::Rating rating = sigproc::visual_rating(p_eval, t_eval);
        switch (rating) {
            case sigproc::Rating::Plus: ++row.plus; break;
            case sigproc::Rating::Circle: ++row.circle; break;
            case sigproc::Rating::Minus: ++row.minus; break;
        }

        if (!opts.svg_dir.empty()) {
            std::filesystem::create_directories(opts.svg_dir);
            char name[128];
            std::snprintf(name, sizeof(name), "%s/%s_seg%03d_%s.svg", opts.svg_dir.c_str(),
                          row.task.c_str(), svg_idx,
                          rating == sigproc::Rating::Plus    ? "plus"
                          : rating == sigproc::Rating::Circle ? "circle"
                                                              : "minus");
            sigproc::write_svg_pair(name, p_eval, t_eval,
                                    std::string(row.task) + " " + seg.record_id + " @" +
                                        std::to_string(seg.start),
                                    rating);
        }
        ++svg_idx;
        ++row.segments;
    }

    row.rmse = std::sqrt(pooled_sq / static_cast<double>(pooled_n));
    row.shifted_rmse = shifted_acc / static_cast<double>(row.segments);
    row.dtw = dtw_acc / static_cast<double>(row.segments);
    const double tm = tgt_sum / static_cast<double>(tgt_n);
    row.target_mean = tm;
    row.target_sd = std::sqrt(std::max(0.0, tgt_sq / static_cast<double>(tgt_n) - tm * tm));
    return row;
}

}  // namespace eitphys::training
