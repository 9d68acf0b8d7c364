#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deidvc/tensor.hpp"

namespace deidvc::numcore {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    std::int64_t step_count = 0;
    Tensor first_moment;
    Tensor second_moment;

    static AdamState for_param(const Tensor& p) {
        AdamState s;
        s.first_moment = Tensor::zeros(p.dims);
        s.second_moment = Tensor::zeros(p.dims);
        return s;
    }
};

// One bias-corrected Adam update for a single parameter. Throws on a
// non-finite gradient, naming the parameter.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg,
               const std::string& param_name);

}  // namespace deidvc::numcore
