#pragma once

#include <vector>

#include "gcan/autodiff.hpp"

namespace gcan::optim {

struct AdamOptions {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled
};

// Adam with decoupled weight decay. Parameters that received no gradient
// since the last zero_grad() are left untouched by step().
class Adam {
public:
    Adam(std::vector<ad::Tensor> params, AdamOptions options);

    void step();
    void zero_grad();
    long steps_taken() const { return t_; }
    const AdamOptions& options() const { return options_; }

private:
    std::vector<ad::Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    AdamOptions options_;
    long t_ = 0;
};

}  // namespace gcan::optim
