#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "eitphys/common.hpp"

namespace eitphys::ad {

// Dense row-major n-d array with an optional gradient buffer of the same
// shape. Values are written once by the producing op; only grad accumulates
// afterwards.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until ensure_grad()
    bool requires_grad = false;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }

    int64_t dim(size_t i) const { return i < shape.size() ? shape[i] : 1; }

    size_t rank() const { return shape.size(); }

    T* data() { return value.data(); }
    const T* data() const { return value.data(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
    }

    bool all_finite() const {
        for (const T v : value) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

inline int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("tensor shape has non-positive dim " + std::to_string(d));
        n *= d;
    }
    return n;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<int64_t> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>();
    const int64_t n = shape_numel(shape);
    t->shape = std::move(shape);
    t->value.assign(static_cast<size_t>(n), T(0));
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
TensorPtr<T> full(std::vector<int64_t> shape, T v, bool requires_grad = false) {
    auto t = make_tensor<T>(std::move(shape), requires_grad);
    std::fill(t->value.begin(), t->value.end(), v);
    return t;
}

template <typename T>
TensorPtr<T> from_vector(std::vector<int64_t> shape, std::vector<T> values,
                         bool requires_grad = false) {
    const int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size())) {
        throw ShapeError("from_vector: " + std::to_string(values.size()) +
                         " values for a shape of " + std::to_string(n) + " elements");
    }
    auto t = std::make_shared<Tensor<T>>();
    t->shape = std::move(shape);
    t->value = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape;
}

}  // namespace eitphys::ad
