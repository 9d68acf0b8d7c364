#pragma once

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "deidvc/adam.hpp"
#include "deidvc/tape.hpp"

namespace deidvc::nn {

using numcore::AdamConfig;
using numcore::AdamState;
using numcore::Tape;
using numcore::Tensor;
using numcore::Var;

using VarMap = std::map<std::string, Var>;

// Named trainable parameters, kept in insertion order so optimizer sweeps
// and checkpoints are deterministic.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const;
    std::vector<std::pair<std::string, Tensor>>& items() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& items() const { return params_; }
    std::size_t count() const { return params_.size(); }

    // Push every parameter onto the tape. trainable=false enters them as
    // constants (gradients flow through but are not collected).
    VarMap bind(Tape& tape, bool trainable = true) const;

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, std::size_t> index_;
};

Tensor uniform_init(std::vector<int> dims, float scale, std::mt19937& rng);
// Glorot-style uniform for a [fan_in, fan_out] weight (or conv kernel).
Tensor glorot_init(std::vector<int> dims, std::mt19937& rng);

// Adam over a whole ParamStore; keeps one AdamState per parameter.
class Optimizer {
public:
    explicit Optimizer(AdamConfig cfg) : cfg_(cfg) {}
    // Reads gradients for each bound parameter off the tape and applies Adam.
    void step(ParamStore& params, const Tape& tape, const VarMap& vars);
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::map<std::string, AdamState> states_;
};

// ---- layers: add_* registers parameters under `prefix`, apply_* builds ops ----

void add_linear(ParamStore& p, const std::string& prefix, int in, int out, std::mt19937& rng);
Var apply_linear(Tape& t, const VarMap& v, const std::string& prefix, Var x);

void add_conv1d(ParamStore& p, const std::string& prefix, int kernel, int cin, int cout,
                std::mt19937& rng);
Var apply_conv1d(Tape& t, const VarMap& v, const std::string& prefix, Var x);

void add_gru(ParamStore& p, const std::string& prefix, int in, int hidden, std::mt19937& rng);
// x is [T, in]; returns the full hidden sequence [T, hidden].
Var apply_gru(Tape& t, const VarMap& v, const std::string& prefix, Var x);

}  // namespace deidvc::nn
