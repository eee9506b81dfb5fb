#include "uvq/optim.hpp"

#include <cmath>
#include <numbers>

namespace uvq {

double scheduled_lr(double base_lr, LrSchedule sched, std::size_t t,
                    std::size_t total_steps) {
    if (sched == LrSchedule::constant || total_steps == 0) return base_lr;
    const double frac = std::min(1.0, static_cast<double>(t) /
                                          static_cast<double>(total_steps));
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * frac));
}

void Adamax::step(std::vector<double>& params, const std::vector<double>& grads,
                  double lr_scale) {
    if (params.size() != grads.size()) throw DataError("adamax size mismatch");
    if (m_.size() != params.size()) {
        m_.assign(params.size(), 0.0);
        u_.assign(params.size(), 0.0);
    }
    ++t_;
    const double bias = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double lr = lr_ * lr_scale / bias;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        u_[i] = std::max(beta2_ * u_[i], std::fabs(g));
        params[i] -= lr * m_[i] / (u_[i] + eps_);
    }
}

void Adam::step(TinyNet& net, const std::vector<ParamRef>& params,
                Gradients& grads, double lr_scale) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = Tensor::zeros(param_tensor(net, params[i]).shape);
            v_[i] = Tensor::zeros(param_tensor(net, params[i]).shape);
        }
    }
    ++t_;
    const double b1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double b2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = param_tensor(net, params[i]);
        const Tensor& g = grad_tensor(grads, params[i]);
        for (std::size_t j = 0; j < p.numel(); ++j) {
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m_[i][j] / b1;
            const double vhat = v_[i][j] / b2;
            p[j] -= lr_ * lr_scale * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace uvq
