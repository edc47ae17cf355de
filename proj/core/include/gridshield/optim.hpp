#pragma once

#include <memory>
#include <vector>

#include "gridshield/tensor.hpp"

namespace gridshield {

// Adam with bias correction. Defaults: lr 1e-3, beta (0.9, 0.999), eps 1e-8.
struct AdamState {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    long step_count = 0;
    long skipped_steps = 0;  // steps dropped because a gradient was non-finite
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
};

// One update over aligned (param, grad) pairs taken from each tensor's grad
// slot. A non-finite gradient anywhere skips the whole step untouched and
// bumps skipped_steps.
void adam_step(std::vector<std::shared_ptr<Tensor>>& params, AdamState& state, float lr);

// Same update for raw buffers (the C&W inner loop optimizes a perturbation,
// not model parameters).
void adam_step_flat(std::vector<float>& param, const std::vector<float>& grad, AdamState& state,
                    float lr);

}  // namespace gridshield
