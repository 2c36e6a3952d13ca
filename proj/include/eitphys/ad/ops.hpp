#pragma once

#include <utility>
#include <vector>

#include "eitphys/ad/tape.hpp"
#include "eitphys/ad/tensor.hpp"

namespace eitphys::ad {

// Gate order throughout: input, forget, cell, output.
template <typename T>
struct LstmWeights {
    TensorPtr<T> wx;    // [4H, D]
    TensorPtr<T> wh;    // [4H, H]
    TensorPtr<T> bias;  // [4H]
};

// Every op takes the tape first; pass nullptr for inference. The result's
// requires_grad is set (and a backward node recorded) only when the tape is
// present and at least one input requires a gradient.

// Cross-correlation convolution (no kernel flip). x: [B,Cin,H,W],
// w: [Cout,Cin,k,k], b: [Cout]. Output size (H + 2p - k)/s + 1 must be an
// exact positive integer or a ShapeError is thrown.
template <typename T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b, int stride, int padding);

// x: [..., K] -> [..., N] with w: [N, K]; b: [N] or nullptr.
template <typename T>
TensorPtr<T> linear(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& b);

template <typename T>
TensorPtr<T> relu(Tape<T>* tape, const TensorPtr<T>& x);

template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

template <typename T>
TensorPtr<T> sub(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

template <typename T>
TensorPtr<T> abs_val(Tape<T>* tape, const TensorPtr<T>& x);

template <typename T>
TensorPtr<T> mean_all(Tape<T>* tape, const TensorPtr<T>& x);

template <typename T>
TensorPtr<T> sum_all(Tape<T>* tape, const TensorPtr<T>& x);

// [B,C,H,W] -> [B,C], mean over each spatial plane.
template <typename T>
TensorPtr<T> spatial_mean(Tape<T>* tape, const TensorPtr<T>& x);

// Concatenate along the last axis; all leading axes must match.
template <typename T>
TensorPtr<T> concat_last(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

// Copying reshape; numel must be preserved.
template <typename T>
TensorPtr<T> reshape(Tape<T>* tape, const TensorPtr<T>& x, std::vector<int64_t> shape);

// [B,T,D] -> [B,D] at time index t.
template <typename T>
TensorPtr<T> slice_time(Tape<T>* tape, const TensorPtr<T>& x, int64_t t);

// T tensors of [B,D] -> [B,T,D].
template <typename T>
TensorPtr<T> stack_time(Tape<T>* tape, const std::vector<TensorPtr<T>>& steps);

// Per-channel batch statistics normalization with learned scale/shift.
// Training mode uses batch statistics (population variance) and updates the
// running buffers in place; eval mode reads the running buffers.
template <typename T>
TensorPtr<T> batch_norm2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                          const TensorPtr<T>& beta, std::vector<T>& running_mean,
                          std::vector<T>& running_var, bool training, T momentum = T(0.1),
                          T eps = T(1e-5));

// One LSTM cell update. x: [B,D], h_prev/c_prev: [B,H].
// Returns (h, c); h is bounded to (-1,1), c is not.
template <typename T>
std::pair<TensorPtr<T>, TensorPtr<T>> lstm_step(Tape<T>* tape, const TensorPtr<T>& x,
                                                const TensorPtr<T>& h_prev,
                                                const TensorPtr<T>& c_prev,
                                                const LstmWeights<T>& w);

}  // namespace eitphys::ad
