#include "deidvc/gradcheck.hpp"

#include <cmath>

namespace deidvc::numcore {

namespace {

double eval_scalar(const GraphFn& graph,
                   const std::vector<std::pair<std::string, Tensor>>& inputs) {
    Tape tape;
    std::map<std::string, Var> vars;
    for (const auto& [name, t] : inputs) vars[name] = tape.input(t, name);
    Var out = graph(tape, vars);
    return tape.scalar(out);
}

}  // namespace

ForwardBackwardResult forward_backward(
    const GraphFn& graph, const std::vector<std::pair<std::string, Tensor>>& inputs) {
    Tape tape;
    std::map<std::string, Var> vars;
    for (const auto& [name, t] : inputs) {
        if (!t.all_finite())
            throw std::invalid_argument("forward_backward: input '" + name + "' is not finite");
        vars[name] = tape.input(t, name);
    }
    Var out = graph(tape, vars);
    tape.backward(out);
    ForwardBackwardResult r;
    r.value = tape.scalar(out);
    for (const auto& [name, t] : inputs)
        if (t.requires_grad) r.grads.emplace(name, Tensor(t.dims, tape.grad(vars.at(name))));
    return r;
}

GradReport grad_check(const GraphFn& graph,
                      const std::vector<std::pair<std::string, Tensor>>& inputs, float h,
                      double tol) {
    if (h <= 0.0f) throw std::invalid_argument("grad_check: h must be positive");
    if (tol <= 0.0) throw std::invalid_argument("grad_check: tol must be positive");
    auto analytic = forward_backward(graph, inputs);

    GradReport report;
    auto perturbed = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto& [name, t] = inputs[k];
        if (!t.requires_grad) continue;
        const Tensor& ag = analytic.grads.at(name);
        double max_err = 0.0;
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            float orig = t.data[i];
            // use the step as actually realized in float32, not the nominal h
            float xp = orig + h, xm = orig - h;
            perturbed[k].second.data[i] = xp;
            double fp = eval_scalar(graph, perturbed);
            perturbed[k].second.data[i] = xm;
            double fm = eval_scalar(graph, perturbed);
            perturbed[k].second.data[i] = orig;
            double numeric = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
            double a = static_cast<double>(ag.data[i]);
            double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
            max_err = std::max(max_err, std::fabs(a - numeric) / denom);
        }
        report.max_rel_err.emplace_back(name, max_err);
        report.worst = std::max(report.worst, max_err);
    }
    report.pass = report.worst < tol;
    return report;
}

}  // namespace deidvc::numcore
