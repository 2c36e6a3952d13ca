#pragma once

#include <string>
#include <utility>
#include <vector>

#include "eitphys/ad/ops.hpp"
#include "eitphys/nets/config.hpp"

namespace eitphys::nets {

using ad::Tape;
using ad::TensorPtr;

template <typename T>
struct FrameBatch {
    TensorPtr<T> eit;      // [B, T, 1, S, S], standardized per sequence
    TensorPtr<T> aux_paw;  // [B, T, 1] absolute airway pressure / 20; EitPlusPaw only
};

template <typename T>
struct Conv2dLayer {
    TensorPtr<T> w, b;
    int stride = 1, padding = 0;
};

template <typename T>
struct BatchNormLayer {
    TensorPtr<T> gamma, beta;
    std::vector<T> running_mean, running_var;
};

template <typename T>
struct LinearLayer {
    TensorPtr<T> w, b;
};

// Wide-resnet basic block: two convs with normalization and an additive skip.
// The first block of every group past the first downsamples with a 2x2
// stride-2 convolution so spatial sizes always divide exactly; the skip gets
// a matching projection whenever channels or stride change.
template <typename T>
struct ResBlock {
    Conv2dLayer<T> conv1;
    BatchNormLayer<T> bn1;
    Conv2dLayer<T> conv2;
    BatchNormLayer<T> bn2;
    bool has_proj = false;
    Conv2dLayer<T> proj;
    BatchNormLayer<T> bnp;
};

// Per-frame convolutional feature extractor -> bidirectional LSTM over the
// frame sequence -> linear per-frame head. Thread-confined together with its
// tape during forward/backward.
template <typename T>
class Model {
  public:
    Model(ModelConfig cfg, uint64_t seed);

    // Output: [B, T, K]. training toggles batch-norm statistics.
    TensorPtr<T> forward(Tape<T>* tape, const FrameBatch<T>& batch, bool training);

    const ModelConfig& config() const { return cfg_; }

    // Number of convolution layers actually instantiated in the feature
    // extractor, skip projections excluded.
    int conv_layer_count() const { return conv_count_; }

    std::vector<std::pair<std::string, TensorPtr<T>>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, TensorPtr<T>>>& parameters() const { return params_; }

    // Running-statistics buffers, in declaration order, for checkpoints.
    std::vector<std::pair<std::string, std::vector<T>*>> buffers();

    void set_requires_grad(bool on) {
        for (auto& [name, p] : params_) p->requires_grad = on;
    }

    // LSTM weight handles; tests tie forward/backward directions through these.
    ad::LstmWeights<T>& lstm_forward() { return lstm_fwd_; }
    ad::LstmWeights<T>& lstm_backward() { return lstm_bwd_; }
    LinearLayer<T>& head() { return head_; }

  private:
    TensorPtr<T> extract_features(Tape<T>* tape, const TensorPtr<T>& frames, bool training);

    ModelConfig cfg_;
    Conv2dLayer<T> stem_;
    BatchNormLayer<T> stem_bn_;
    std::vector<ResBlock<T>> blocks_;
    LinearLayer<T> feat_proj_;
    LinearLayer<T> aux_;
    ad::LstmWeights<T> lstm_fwd_, lstm_bwd_;
    LinearLayer<T> head_;
    int conv_count_ = 0;
    std::vector<std::pair<std::string, TensorPtr<T>>> params_;
};

}  // namespace eitphys::nets
