#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eitphys/ad/tensor.hpp"

namespace eitphys::training {

struct AdamWHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

// AdamW with decoupled weight decay:
//   theta <- theta - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * theta )
// with bias-corrected first/second moments. Decay applies even when a
// parameter received no gradient this step.
template <typename T>
class AdamW {
  public:
    AdamW() = default;
    AdamW(std::vector<ad::TensorPtr<T>> params, AdamWHyper hyper)
        : params_(std::move(params)), hyper_(hyper) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->value.size(), T(0));
            v_[i].assign(params_[i]->value.size(), T(0));
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            const bool has_grad = !p.grad.empty();
            for (size_t j = 0; j < p.value.size(); ++j) {
                const double g = has_grad ? static_cast<double>(p.grad[j]) : 0.0;
                const double m = hyper_.beta1 * static_cast<double>(m_[i][j]) +
                                 (1.0 - hyper_.beta1) * g;
                const double v = hyper_.beta2 * static_cast<double>(v_[i][j]) +
                                 (1.0 - hyper_.beta2) * g * g;
                m_[i][j] = static_cast<T>(m);
                v_[i][j] = static_cast<T>(v);
                const double m_hat = m / bc1;
                const double v_hat = v / bc2;
                const double theta = static_cast<double>(p.value[j]);
                p.value[j] = static_cast<T>(
                    theta - lr * (m_hat / (std::sqrt(v_hat) + hyper_.eps) +
                                  hyper_.weight_decay * theta));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }

    size_t size() const { return params_.size(); }
    std::vector<T>& first_moment(size_t i) { return m_[i]; }
    std::vector<T>& second_moment(size_t i) { return v_[i]; }

  private:
    std::vector<ad::TensorPtr<T>> params_;
    AdamWHyper hyper_;
    std::vector<std::vector<T>> m_, v_;
    int64_t t_ = 0;
};

}  // namespace eitphys::training
