#include "mmrec/optimizer.hpp"

#include <cmath>

#include "mmrec/error.hpp"

namespace mmrec {

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
        throw Error(ErrorKind::config, "adamw: betas must be in [0,1)");
    if (cfg_.eps <= 0.0) throw Error(ErrorKind::config, "adamw: eps must be positive");
    if (cfg_.weight_decay < 0.0) throw Error(ErrorKind::config, "adamw: weight_decay must be >= 0");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Parameter* p : params_) {
        m_.push_back(Tensor::zeros(p->value.shape));
        v_.push_back(Tensor::zeros(p->value.shape));
    }
}

void AdamW::set_step_count(int64_t t) {
    if (t < 0) throw Error(ErrorKind::contract, "adamw: step counter must be non-negative");
    t_ = t;
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        if (p.grad.data.size() != p.value.data.size())
            throw Error(ErrorKind::contract, "adamw: gradient not allocated for " + p.name);
        if (!p.grad.all_finite())
            throw Error(ErrorKind::numeric, "adamw: non-finite gradient for parameter " + p.name);
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (size_t j = 0; j < p.value.data.size(); ++j) {
            const double g = p.grad.data[j];
            m.data[j] = cfg_.beta1 * m.data[j] + (1.0 - cfg_.beta1) * g;
            v.data[j] = cfg_.beta2 * v.data[j] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m.data[j] / bc1;
            const double v_hat = v.data[j] / bc2;
            p.value.data[j] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) +
                                          cfg_.weight_decay * p.value.data[j]);
        }
    }
}

void AdamW::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

double lr_schedule(double base_lr, double decay, int64_t epoch) {
    if (epoch < 0) throw Error(ErrorKind::contract, "lr_schedule: epoch must be >= 0");
    if (base_lr <= 0.0 || decay <= 0.0)
        throw Error(ErrorKind::config, "lr_schedule: base_lr and decay must be positive");
    return base_lr * std::pow(decay, static_cast<double>(epoch));
}

}  // namespace mmrec
