// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "hyperalign/tensor.hpp"

namespace hyperalign {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adaptive-moment first-order optimizer over a fixed list of tensors.
class Adam {
public:
    Adam(std::vector<Tensor*> params, AdamConfig config = {});

    void step(std::span<const Tensor> grads);
    long steps_taken() const { return step_; }

private:
    std::vector<Tensor*> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig config_;
    long step_ = 0;
};

}  // namespace hyperalign
