#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "deidvc/tape.hpp"

namespace deidvc::numcore {

// A differentiable scalar-valued graph: given a tape and named input vars,
// build the computation and return the scalar output var.
using GraphFn = std::function<Var(Tape&, const std::map<std::string, Var>&)>;

struct ForwardBackwardResult {
    double value = 0.0;
    std::map<std::string, Tensor> grads;  // one entry per requires_grad input
};

// Builds the graph on a fresh tape, runs the reverse sweep, and returns
// the scalar value plus analytic gradients for every requires_grad input.
ForwardBackwardResult forward_backward(const GraphFn& graph,
                                       const std::vector<std::pair<std::string, Tensor>>& inputs);

struct GradReport {
    // per-input maximum relative error against central differences
    std::vector<std::pair<std::string, double>> max_rel_err;
    double worst = 0.0;
    bool pass = false;
};

// Central-difference check: (f(x+h) - f(x-h)) / 2h elementwise on every
// requires_grad input, relative error denominator max(|analytic|,|numeric|,1e-8).
GradReport grad_check(const GraphFn& graph,
                      const std::vector<std::pair<std::string, Tensor>>& inputs, float h,
                      double tol);

}  // namespace deidvc::numcore
