#ifndef UVQ_OPTIM_HPP
#define UVQ_OPTIM_HPP

#include <cstdint>
#include <vector>

#include "uvq/net.hpp"

namespace uvq {

enum class LrSchedule : std::uint8_t { constant = 0, cosine = 1 };

// Learning rate at 0-based step t of total_steps.
double scheduled_lr(double base_lr, LrSchedule sched, std::size_t t,
                    std::size_t total_steps);

// Infinity-norm adaptive-moment update over a flat parameter vector.
// Drives the candidate logits (default lr 0.3).
class Adamax {
public:
    explicit Adamax(double lr = 0.3, double beta1 = 0.9, double beta2 = 0.999,
                    double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::vector<double>& params, const std::vector<double>& grads,
              double lr_scale = 1.0);

    long long steps_taken() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<double> m_, u_;
};

// Adam over a TinyNet's parameter tensors, restricted to a chosen subset
// (compression trains bias/batchnorm but not the injected weights).
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(TinyNet& net, const std::vector<ParamRef>& params,
              Gradients& grads, double lr_scale = 1.0);

private:
    double lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace uvq

#endif
