#pragma once

#include <cstdint>
#include <vector>

#include "mmrec/autodiff.hpp"

namespace mmrec {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay:
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
class AdamW {
  public:
    AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

    void step();
    void zero_grad();

    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t);

    const std::vector<Parameter*>& params() const { return params_; }
    Tensor& moment1(size_t i) { return m_[i]; }
    Tensor& moment2(size_t i) { return v_[i]; }

  private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
};

// Exponential per-epoch decay: base_lr * decay^epoch.
double lr_schedule(double base_lr, double decay, int64_t epoch);

}  // namespace mmrec
