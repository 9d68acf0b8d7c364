#include "deidvc/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace deidvc::nn {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    t.requires_grad = true;
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(t));
    return params_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return params_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return params_[it->second].second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

VarMap ParamStore::bind(Tape& tape, bool trainable) const {
    VarMap vars;
    for (const auto& [name, t] : params_) {
        if (trainable)
            vars[name] = tape.input(t, name);
        else {
            Tensor c = t;
            c.requires_grad = false;
            vars[name] = tape.constant(c, name);
        }
    }
    return vars;
}

Tensor uniform_init(std::vector<int> dims, float scale, std::mt19937& rng) {
    Tensor t = Tensor::zeros(std::move(dims));
    std::uniform_real_distribution<float> dist(-scale, scale);
    for (auto& v : t.data) v = dist(rng);
    return t;
}

Tensor glorot_init(std::vector<int> dims, std::mt19937& rng) {
    // conv kernels [K, cin, cout] use K*cin as fan-in
    int fan_in, fan_out;
    if (dims.size() == 3) {
        fan_in = dims[0] * dims[1];
        fan_out = dims[0] * dims[2];
    } else if (dims.size() == 2) {
        fan_in = dims[0];
        fan_out = dims[1];
    } else {
        fan_in = fan_out = dims.empty() ? 1 : dims[0];
    }
    float scale = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
    return uniform_init(std::move(dims), scale, rng);
}

void Optimizer::step(ParamStore& params, const Tape& tape, const VarMap& vars) {
    for (auto& [name, t] : params.items()) {
        auto it = vars.find(name);
        if (it == vars.end()) continue;
        Tensor grad(t.dims, tape.grad(it->second));
        auto [sit, inserted] = states_.try_emplace(name, AdamState{});
        if (inserted) sit->second = AdamState::for_param(t);
        numcore::adam_step(t, grad, sit->second, cfg_, name);
    }
}

void add_linear(ParamStore& p, const std::string& prefix, int in, int out, std::mt19937& rng) {
    p.add(prefix + ".w", glorot_init({in, out}, rng));
    p.add(prefix + ".b", Tensor::zeros({out}));
}

Var apply_linear(Tape& t, const VarMap& v, const std::string& prefix, Var x) {
    return t.linear(x, v.at(prefix + ".w"), v.at(prefix + ".b"));
}

void add_conv1d(ParamStore& p, const std::string& prefix, int kernel, int cin, int cout,
                std::mt19937& rng) {
    p.add(prefix + ".w", glorot_init({kernel, cin, cout}, rng));
    p.add(prefix + ".b", Tensor::zeros({cout}));
}

Var apply_conv1d(Tape& t, const VarMap& v, const std::string& prefix, Var x) {
    return t.conv1d_same(x, v.at(prefix + ".w"), v.at(prefix + ".b"));
}

void add_gru(ParamStore& p, const std::string& prefix, int in, int hidden, std::mt19937& rng) {
    for (const char* gate : {"z", "r", "h"}) {
        p.add(prefix + ".w" + gate, glorot_init({in, hidden}, rng));
        p.add(prefix + ".u" + gate, glorot_init({hidden, hidden}, rng));
        p.add(prefix + ".b" + gate, Tensor::zeros({hidden}));
    }
}

Var apply_gru(Tape& t, const VarMap& v, const std::string& prefix, Var x) {
    int T = t.dims(x)[0];
    int hidden = t.dims(v.at(prefix + ".uz"))[0];
    Var h = t.constant(Tensor::zeros({1, hidden}), "gru_h0");
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(T));
    for (int step = 0; step < T; ++step) {
        Var xt = t.row(x, step);
        Var z = t.sigmoid(t.add(t.linear(xt, v.at(prefix + ".wz"), v.at(prefix + ".bz")),
                                t.matmul(h, v.at(prefix + ".uz"))));
        Var r = t.sigmoid(t.add(t.linear(xt, v.at(prefix + ".wr"), v.at(prefix + ".br")),
                                t.matmul(h, v.at(prefix + ".ur"))));
        Var c = t.tanh_(t.add(t.linear(xt, v.at(prefix + ".wh"), v.at(prefix + ".bh")),
                              t.matmul(t.mul(r, h), v.at(prefix + ".uh"))));
        // h = z*h + (1-z)*c
        h = t.add(t.mul(z, h), t.sub(c, t.mul(z, c)));
        outs.push_back(h);
    }
    return t.stack_rows(outs);
}

}  // namespace deidvc::nn
