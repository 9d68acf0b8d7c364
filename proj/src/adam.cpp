#include "deidvc/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace deidvc::numcore {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& cfg,
               const std::string& param_name) {
    if (!param.same_dims(grad))
        throw ShapeError("adam_step: gradient dims " + Tensor::dims_to_string(grad.dims) +
                         " do not match parameter '" + param_name + "' dims " +
                         Tensor::dims_to_string(param.dims));
    if (state.first_moment.dims.empty()) state = AdamState::for_param(param);
    if (!state.first_moment.same_dims(param))
        throw ShapeError("adam_step: stale optimizer state for parameter '" + param_name + "'");
    if (cfg.lr <= 0.0f) throw std::invalid_argument("adam_step: lr must be positive");
    for (float g : grad.data)
        if (!std::isfinite(g))
            throw std::runtime_error("adam_step: non-finite gradient for parameter '" +
                                     param_name + "'");

    state.step_count += 1;
    bool all_zero = true;
    for (float g : grad.data)
        if (g != 0.0f) {
            all_zero = false;
            break;
        }
    if (all_zero) {
        // a zero gradient must never move the parameter, regardless of the
        // momentum history; moments still decay
        for (std::size_t i = 0; i < param.data.size(); ++i) {
            state.first_moment.data[i] *= cfg.beta1;
            state.second_moment.data[i] *= cfg.beta2;
        }
        return;
    }
    double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), state.step_count);
    double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), state.step_count);
    for (std::size_t i = 0; i < param.data.size(); ++i) {
        float g = grad.data[i];
        float& m = state.first_moment.data[i];
        float& v = state.second_moment.data[i];
        m = cfg.beta1 * m + (1.0f - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0f - cfg.beta2) * g * g;
        double mhat = m / bc1;
        double vhat = v / bc2;
        param.data[i] -= static_cast<float>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

}  // namespace deidvc::numcore
