#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "eitphys/ad/tensor.hpp"
#include "eitphys/common.hpp"

namespace eitphys::ad {

// Linear record of the forward pass. Ops append nodes in execution order, so
// the list is already topologically sorted; backward() walks it once in
// reverse and then drops each node, releasing the captured activations.
// A tape belongs to a single thread and is rebuilt for every forward pass.
template <typename T>
class Tape {
  public:
    void record(std::string label, TensorPtr<T> output, std::function<void()> backward_fn) {
        nodes_.push_back(Node{std::move(label), std::move(output), std::move(backward_fn)});
    }

    void backward(const TensorPtr<T>& loss) {
        if (consumed_) {
            throw UsageError("backward called twice without a new forward pass");
        }
        if (loss->numel() != 1) {
            throw UsageError("backward requires a scalar loss, got shape " + loss->shape_str());
        }
        if (!loss->requires_grad) {
            throw UsageError("backward: loss is not connected to this tape");
        }
        consumed_ = true;
        loss->ensure_grad();
        loss->grad[0] += T(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            nodes_[i].backward_fn();
            nodes_[i].backward_fn = nullptr;  // free captured activations early
            nodes_[i].output.reset();
        }
    }

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

    size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

    // Forward-order scan for the first op output holding a NaN/Inf. Used to
    // build the diagnostic when a loss comes out non-finite.
    std::optional<std::string> first_nonfinite() const {
        for (const auto& node : nodes_) {
            if (node.output && !node.output->all_finite()) return node.label;
        }
        return std::nullopt;
    }

  private:
    struct Node {
        std::string label;
        TensorPtr<T> output;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace eitphys::ad
