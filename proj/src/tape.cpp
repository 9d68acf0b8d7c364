#include "deidvc/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace deidvc::numcore {

using MatMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

Var Tape::make(std::vector<int> dims, std::vector<float> value, std::string op,
               std::function<void(Tape&)> backward) {
    Node n;
    n.dims = std::move(dims);
    n.value = std::move(value);
    n.grad.assign(n.value.size(), 0.0f);
    n.backward = std::move(backward);
    n.op = std::move(op);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::with_dval(Var v, double d) {
    node(v).dval = d;
    node(v).has_dval = true;
    return v;
}

double Tape::dv(Var v) const {
    const Node& n = node(v);
    return n.has_dval ? n.dval : static_cast<double>(n.value[0]);
}

Var Tape::input(const Tensor& t, std::string name) {
    return make(t.dims, t.data, std::move(name), nullptr);
}

Var Tape::constant(const Tensor& t, std::string name) {
    return make(t.dims, t.data, std::move(name), nullptr);
}

const std::vector<int>& Tape::dims(Var v) const { return node(v).dims; }
const std::vector<float>& Tape::value(Var v) const { return node(v).value; }
const std::vector<float>& Tape::grad(Var v) const { return node(v).grad; }
const std::string& Tape::op_name(Var v) const { return node(v).op; }

Tensor Tape::tensor(Var v) const { return Tensor(node(v).dims, node(v).value); }

double Tape::scalar(Var v) const {
    if (node(v).value.size() != 1)
        throw ShapeError("scalar: var from op '" + node(v).op + "' has " +
                         std::to_string(node(v).value.size()) + " elements, expected 1");
    return dv(v);
}

void Tape::backward(Var out) {
    if (node(out).value.size() != 1)
        throw ShapeError("backward: output of op '" + node(out).op + "' is not a scalar");
    node(out).grad[0] = 1.0f;
    for (int i = out.id; i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (n.backward) n.backward(*this);
    }
}

void Tape::check_same_dims(Var a, Var b, const char* opname) const {
    if (node(a).dims != node(b).dims)
        throw ShapeError(std::string(opname) + ": shape mismatch between op '" + node(a).op +
                         "' " + Tensor::dims_to_string(node(a).dims) + " and op '" + node(b).op +
                         "' " + Tensor::dims_to_string(node(b).dims));
}

void Tape::check_2d(Var a, const char* opname) const {
    if (node(a).dims.size() != 2)
        throw ShapeError(std::string(opname) + ": op '" + node(a).op + "' is not 2-D, dims " +
                         Tensor::dims_to_string(node(a).dims));
}

// ---------------------------------------------------------------- elementwise

Var Tape::add(Var a, Var b) {
    check_same_dims(a, b, "add");
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = node(a).value[i] + node(b).value[i];
    Var out;
    out = make(node(a).dims, std::move(v), "add", [a, b, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            t.node(a).grad[i] += g[i];
            t.node(b).grad[i] += g[i];
        }
    });
    if (node(out).value.size() == 1) with_dval(out, dv(a) + dv(b));
    return out;
}

Var Tape::sub(Var a, Var b) {
    check_same_dims(a, b, "sub");
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = node(a).value[i] - node(b).value[i];
    Var out = make(node(a).dims, std::move(v), "sub", [a, b, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            t.node(a).grad[i] += g[i];
            t.node(b).grad[i] -= g[i];
        }
    });
    if (node(out).value.size() == 1) with_dval(out, dv(a) - dv(b));
    return out;
}

Var Tape::mul(Var a, Var b) {
    check_same_dims(a, b, "mul");
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = node(a).value[i] * node(b).value[i];
    Var out = make(node(a).dims, std::move(v), "mul", [a, b, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            t.node(a).grad[i] += g[i] * t.node(b).value[i];
            t.node(b).grad[i] += g[i] * t.node(a).value[i];
        }
    });
    if (node(out).value.size() == 1) with_dval(out, dv(a) * dv(b));
    return out;
}

Var Tape::divide(Var a, Var b) {
    check_same_dims(a, b, "divide");
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = node(a).value[i] / node(b).value[i];
    Var out = make(node(a).dims, std::move(v), "divide", [a, b, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            float bv = t.node(b).value[i];
            t.node(a).grad[i] += g[i] / bv;
            t.node(b).grad[i] -= g[i] * t.node(a).value[i] / (bv * bv);
        }
    });
    if (node(out).value.size() == 1) with_dval(out, dv(a) / dv(b));
    return out;
}

Var Tape::neg(Var a) { return scale(a, -1.0f); }

Var Tape::add_scalar(Var a, float c) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = node(a).value[i] + c;
    Var out = make(node(a).dims, std::move(v), "add_scalar", [a, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) t.node(a).grad[i] += g[i];
    });
    if (node(out).value.size() == 1) with_dval(out, dv(a) + static_cast<double>(c));
    return out;
}

Var Tape::scale(Var a, float c) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = node(a).value[i] * c;
    Var out = make(node(a).dims, std::move(v), "scale", [a, c, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) t.node(a).grad[i] += g[i] * c;
    });
    if (node(out).value.size() == 1) with_dval(out, dv(a) * static_cast<double>(c));
    return out;
}

Var Tape::sigmoid(Var a) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0f / (1.0f + std::exp(-node(a).value[i]));
    return make(node(a).dims, std::move(v), "sigmoid", [a, id = nodes_.size()](Tape& t) {
        auto& n = t.nodes_[id];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            t.node(a).grad[i] += n.grad[i] * n.value[i] * (1.0f - n.value[i]);
    });
}

Var Tape::tanh_(Var a) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(node(a).value[i]);
    return make(node(a).dims, std::move(v), "tanh", [a, id = nodes_.size()](Tape& t) {
        auto& n = t.nodes_[id];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            t.node(a).grad[i] += n.grad[i] * (1.0f - n.value[i] * n.value[i]);
    });
}

Var Tape::relu(Var a) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0f, node(a).value[i]);
    return make(node(a).dims, std::move(v), "relu", [a, id = nodes_.size()](Tape& t) {
        auto& n = t.nodes_[id];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            if (t.node(a).value[i] > 0.0f) t.node(a).grad[i] += n.grad[i];
    });
}

Var Tape::exp_(Var a) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(node(a).value[i]);
    Var out = make(node(a).dims, std::move(v), "exp", [a, id = nodes_.size()](Tape& t) {
        auto& n = t.nodes_[id];
        for (std::size_t i = 0; i < n.grad.size(); ++i) t.node(a).grad[i] += n.grad[i] * n.value[i];
    });
    if (node(out).value.size() == 1) with_dval(out, std::exp(dv(a)));
    return out;
}

Var Tape::log_(Var a) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(node(a).value[i]);
    Var out = make(node(a).dims, std::move(v), "log", [a, id = nodes_.size()](Tape& t) {
        auto& n = t.nodes_[id];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            t.node(a).grad[i] += n.grad[i] / t.node(a).value[i];
    });
    if (node(out).value.size() == 1) with_dval(out, std::log(dv(a)));
    return out;
}

Var Tape::sqrt_(Var a) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(node(a).value[i]);
    Var out = make(node(a).dims, std::move(v), "sqrt", [a, id = nodes_.size()](Tape& t) {
        auto& n = t.nodes_[id];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            t.node(a).grad[i] += n.grad[i] * 0.5f / n.value[i];
    });
    if (node(out).value.size() == 1) with_dval(out, std::sqrt(dv(a)));
    return out;
}

Var Tape::abs_(Var a) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::fabs(node(a).value[i]);
    Var out = make(node(a).dims, std::move(v), "abs", [a, id = nodes_.size()](Tape& t) {
        auto& n = t.nodes_[id];
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            float x = t.node(a).value[i];
            float s = (x > 0.0f) ? 1.0f : (x < 0.0f ? -1.0f : 0.0f);
            t.node(a).grad[i] += n.grad[i] * s;
        }
    });
    if (node(out).value.size() == 1) with_dval(out, std::fabs(dv(a)));
    return out;
}

Var Tape::square(Var a) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = node(a).value[i] * node(a).value[i];
    Var out = make(node(a).dims, std::move(v), "square", [a, id = nodes_.size()](Tape& t) {
        auto& n = t.nodes_[id];
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            t.node(a).grad[i] += n.grad[i] * 2.0f * t.node(a).value[i];
    });
    if (node(out).value.size() == 1) with_dval(out, dv(a) * dv(a));
    return out;
}

Var Tape::softplus(Var a) {
    std::vector<float> v(node(a).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        float x = node(a).value[i];
        v[i] = x > 20.0f ? x : std::log1p(std::exp(x));
    }
    return make(node(a).dims, std::move(v), "softplus", [a, id = nodes_.size()](Tape& t) {
        auto& n = t.nodes_[id];
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            float x = t.node(a).value[i];
            t.node(a).grad[i] += n.grad[i] / (1.0f + std::exp(-x));
        }
    });
}

// ------------------------------------------------------------ linear algebra

Var Tape::matmul(Var a, Var b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    int m = node(a).dims[0], k = node(a).dims[1];
    int k2 = node(b).dims[0], n = node(b).dims[1];
    if (k != k2)
        throw ShapeError("matmul: shape mismatch between op '" + node(a).op + "' " +
                         Tensor::dims_to_string(node(a).dims) + " and op '" + node(b).op + "' " +
                         Tensor::dims_to_string(node(b).dims));
    std::vector<float> v(static_cast<std::size_t>(m) * n);
    {
        ConstMatMap A(node(a).value.data(), m, k), B(node(b).value.data(), k, n);
        MatMap C(v.data(), m, n);
        C.noalias() = A * B;
    }
    return make({m, n}, std::move(v), "matmul", [a, b, m, k, n, id = nodes_.size()](Tape& t) {
        ConstMatMap A(t.node(a).value.data(), m, k), B(t.node(b).value.data(), k, n);
        ConstMatMap G(t.nodes_[id].grad.data(), m, n);
        MatMap dA(t.node(a).grad.data(), m, k), dB(t.node(b).grad.data(), k, n);
        dA.noalias() += G * B.transpose();
        dB.noalias() += A.transpose() * G;
    });
}

Var Tape::linear(Var x, Var w, Var b) {
    Var y = matmul(x, w);
    // broadcast bias over rows
    if (node(b).dims.size() != 1 || node(b).dims[0] != node(y).dims[1])
        throw ShapeError("linear: bias from op '" + node(b).op + "' " +
                         Tensor::dims_to_string(node(b).dims) + " does not match output " +
                         Tensor::dims_to_string(node(y).dims));
    int n = node(y).dims[0], c = node(y).dims[1];
    std::vector<float> v(node(y).value.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            v[static_cast<std::size_t>(i) * c + j] =
                node(y).value[static_cast<std::size_t>(i) * c + j] + node(b).value[j];
    return make({n, c}, std::move(v), "add_bias", [y, b, n, c, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                float gv = g[static_cast<std::size_t>(i) * c + j];
                t.node(y).grad[static_cast<std::size_t>(i) * c + j] += gv;
                t.node(b).grad[j] += gv;
            }
    });
}

Var Tape::conv1d_same(Var x, Var w, Var b) {
    check_2d(x, "conv1d");
    if (node(w).dims.size() != 3)
        throw ShapeError("conv1d: kernel from op '" + node(w).op + "' must be 3-D, got " +
                         Tensor::dims_to_string(node(w).dims));
    int T = node(x).dims[0], cin = node(x).dims[1];
    int K = node(w).dims[0], kcin = node(w).dims[1], cout = node(w).dims[2];
    if (cin != kcin)
        throw ShapeError("conv1d: shape mismatch between op '" + node(x).op + "' " +
                         Tensor::dims_to_string(node(x).dims) + " and kernel op '" + node(w).op +
                         "' " + Tensor::dims_to_string(node(w).dims));
    if (node(b).dims.size() != 1 || node(b).dims[0] != cout)
        throw ShapeError("conv1d: bias dims " + Tensor::dims_to_string(node(b).dims) +
                         " do not match cout " + std::to_string(cout));
    int pad = K / 2;
    std::vector<float> v(static_cast<std::size_t>(T) * cout);
    for (int i = 0; i < T; ++i)
        for (int j = 0; j < cout; ++j) v[static_cast<std::size_t>(i) * cout + j] = node(b).value[j];
    {
        MatMap Y(v.data(), T, cout);
        ConstMatMap X(node(x).value.data(), T, cin);
        for (int k = 0; k < K; ++k) {
            // y[t] += x[t + k - pad] @ w[k]
            int shift = k - pad;
            int t0 = std::max(0, -shift), t1 = std::min(T, T - shift);
            if (t0 >= t1) continue;
            ConstMatMap Wk(node(w).value.data() + static_cast<std::size_t>(k) * cin * cout, cin,
                           cout);
            Y.middleRows(t0, t1 - t0).noalias() += X.middleRows(t0 + shift, t1 - t0) * Wk;
        }
    }
    return make({T, cout}, std::move(v), "conv1d",
                [x, w, b, T, cin, K, cout, pad, id = nodes_.size()](Tape& t) {
                    ConstMatMap G(t.nodes_[id].grad.data(), T, cout);
                    ConstMatMap X(t.node(x).value.data(), T, cin);
                    MatMap dX(t.node(x).grad.data(), T, cin);
                    for (int j = 0; j < cout; ++j) {
                        double s = 0.0;
                        for (int i = 0; i < T; ++i) s += G(i, j);
                        t.node(b).grad[j] += static_cast<float>(s);
                    }
                    for (int k = 0; k < K; ++k) {
                        int shift = k - pad;
                        int t0 = std::max(0, -shift), t1 = std::min(T, T - shift);
                        if (t0 >= t1) continue;
                        ConstMatMap Wk(
                            t.node(w).value.data() + static_cast<std::size_t>(k) * cin * cout, cin,
                            cout);
                        MatMap dWk(t.node(w).grad.data() + static_cast<std::size_t>(k) * cin * cout,
                                   cin, cout);
                        dX.middleRows(t0 + shift, t1 - t0).noalias() +=
                            G.middleRows(t0, t1 - t0) * Wk.transpose();
                        dWk.noalias() += X.middleRows(t0 + shift, t1 - t0).transpose() *
                                         G.middleRows(t0, t1 - t0);
                    }
                });
}

// ------------------------------------------------------------ shape/indexing

Var Tape::row(Var x, int r) {
    check_2d(x, "row");
    int n = node(x).dims[0], c = node(x).dims[1];
    if (r < 0 || r >= n)
        throw ShapeError("row: index " + std::to_string(r) + " out of range for op '" +
                         node(x).op + "' with " + std::to_string(n) + " rows");
    std::vector<float> v(node(x).value.begin() + static_cast<std::size_t>(r) * c,
                         node(x).value.begin() + static_cast<std::size_t>(r + 1) * c);
    return make({1, c}, std::move(v), "row", [x, r, c, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        for (int j = 0; j < c; ++j) t.node(x).grad[static_cast<std::size_t>(r) * c + j] += g[j];
    });
}

Var Tape::stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: empty list");
    check_2d(rows[0], "stack_rows");
    int c = node(rows[0]).dims[1];
    int total = 0;
    for (Var r : rows) {
        check_2d(r, "stack_rows");
        if (node(r).dims[1] != c) check_same_dims(rows[0], r, "stack_rows");
        total += node(r).dims[0];
    }
    std::vector<float> v;
    v.reserve(static_cast<std::size_t>(total) * c);
    for (Var r : rows) v.insert(v.end(), node(r).value.begin(), node(r).value.end());
    return make({total, c}, std::move(v), "stack_rows",
                [rows, id = nodes_.size()](Tape& t) {
                    auto& g = t.nodes_[id].grad;
                    std::size_t off = 0;
                    for (Var r : rows) {
                        auto& rg = t.node(r).grad;
                        for (std::size_t i = 0; i < rg.size(); ++i) rg[i] += g[off + i];
                        off += rg.size();
                    }
                });
}

Var Tape::reverse_rows(Var x) {
    check_2d(x, "reverse_rows");
    int n = node(x).dims[0], c = node(x).dims[1];
    std::vector<float> v(node(x).value.size());
    for (int i = 0; i < n; ++i)
        std::copy_n(node(x).value.begin() + static_cast<std::size_t>(n - 1 - i) * c, c,
                    v.begin() + static_cast<std::size_t>(i) * c);
    return make({n, c}, std::move(v), "reverse_rows", [x, n, c, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
                t.node(x).grad[static_cast<std::size_t>(n - 1 - i) * c + j] +=
                    g[static_cast<std::size_t>(i) * c + j];
    });
}

Var Tape::repeat_rows(Var x, int factor) {
    check_2d(x, "repeat_rows");
    int n = node(x).dims[0], c = node(x).dims[1];
    std::vector<float> v(static_cast<std::size_t>(n) * factor * c);
    for (int i = 0; i < n; ++i)
        for (int f = 0; f < factor; ++f)
            std::copy_n(node(x).value.begin() + static_cast<std::size_t>(i) * c, c,
                        v.begin() + (static_cast<std::size_t>(i) * factor + f) * c);
    return make({n * factor, c}, std::move(v), "repeat_rows",
                [x, n, c, factor, id = nodes_.size()](Tape& t) {
                    auto& g = t.nodes_[id].grad;
                    for (int i = 0; i < n; ++i)
                        for (int f = 0; f < factor; ++f)
                            for (int j = 0; j < c; ++j)
                                t.node(x).grad[static_cast<std::size_t>(i) * c + j] +=
                                    g[(static_cast<std::size_t>(i) * factor + f) * c + j];
                });
}

Var Tape::avgpool_rows(Var x, int window) {
    check_2d(x, "avgpool_rows");
    int n = node(x).dims[0], c = node(x).dims[1];
    if (n % window != 0)
        throw ShapeError("avgpool_rows: rows " + std::to_string(n) + " from op '" + node(x).op +
                         "' not divisible by window " + std::to_string(window));
    int m = n / window;
    std::vector<float> v(static_cast<std::size_t>(m) * c, 0.0f);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            v[static_cast<std::size_t>(i / window) * c + j] +=
                node(x).value[static_cast<std::size_t>(i) * c + j] / static_cast<float>(window);
    return make({m, c}, std::move(v), "avgpool_rows",
                [x, n, c, window, id = nodes_.size()](Tape& t) {
                    auto& g = t.nodes_[id].grad;
                    float inv = 1.0f / static_cast<float>(window);
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < c; ++j)
                            t.node(x).grad[static_cast<std::size_t>(i) * c + j] +=
                                g[static_cast<std::size_t>(i / window) * c + j] * inv;
                });
}

Var Tape::broadcast_row(Var v, int n) {
    const auto& d = node(v).dims;
    int c;
    if (d.size() == 1)
        c = d[0];
    else if (d.size() == 2 && d[0] == 1)
        c = d[1];
    else
        throw ShapeError("broadcast_row: op '" + node(v).op + "' with dims " +
                         Tensor::dims_to_string(d) + " is not a row vector");
    std::vector<float> out(static_cast<std::size_t>(n) * c);
    for (int i = 0; i < n; ++i)
        std::copy_n(node(v).value.begin(), c, out.begin() + static_cast<std::size_t>(i) * c);
    return make({n, c}, std::move(out), "broadcast_row", [v, n, c, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        for (int j = 0; j < c; ++j) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += g[static_cast<std::size_t>(i) * c + j];
            t.node(v).grad[j] += static_cast<float>(s);
        }
    });
}

Var Tape::concat_cols(Var a, Var b) {
    check_2d(a, "concat_cols");
    check_2d(b, "concat_cols");
    if (node(a).dims[0] != node(b).dims[0])
        throw ShapeError("concat_cols: shape mismatch between op '" + node(a).op + "' " +
                         Tensor::dims_to_string(node(a).dims) + " and op '" + node(b).op + "' " +
                         Tensor::dims_to_string(node(b).dims));
    int n = node(a).dims[0], ca = node(a).dims[1], cb = node(b).dims[1];
    std::vector<float> v(static_cast<std::size_t>(n) * (ca + cb));
    for (int i = 0; i < n; ++i) {
        std::copy_n(node(a).value.begin() + static_cast<std::size_t>(i) * ca, ca,
                    v.begin() + static_cast<std::size_t>(i) * (ca + cb));
        std::copy_n(node(b).value.begin() + static_cast<std::size_t>(i) * cb, cb,
                    v.begin() + static_cast<std::size_t>(i) * (ca + cb) + ca);
    }
    return make({n, ca + cb}, std::move(v), "concat_cols",
                [a, b, n, ca, cb, id = nodes_.size()](Tape& t) {
                    auto& g = t.nodes_[id].grad;
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < ca + cb; ++j) {
                            float gv = g[static_cast<std::size_t>(i) * (ca + cb) + j];
                            if (j < ca)
                                t.node(a).grad[static_cast<std::size_t>(i) * ca + j] += gv;
                            else
                                t.node(b).grad[static_cast<std::size_t>(i) * cb + (j - ca)] += gv;
                        }
                });
}

// ----------------------------------------------------------------- reductions

Var Tape::sum(Var a) {
    double s = 0.0;
    for (float x : node(a).value) s += static_cast<double>(x);
    Var out = make({1}, {static_cast<float>(s)}, "sum", [a, id = nodes_.size()](Tape& t) {
        float g = t.nodes_[id].grad[0];
        for (auto& ag : t.node(a).grad) ag += g;
    });
    return with_dval(out, s);
}

Var Tape::mean(Var a) {
    double s = 0.0;
    for (float x : node(a).value) s += static_cast<double>(x);
    float inv = 1.0f / static_cast<float>(node(a).value.size());
    Var out = make({1}, {static_cast<float>(s / static_cast<double>(node(a).value.size()))},
                   "mean", [a, inv, id = nodes_.size()](Tape& t) {
                       float g = t.nodes_[id].grad[0] * inv;
                       for (auto& ag : t.node(a).grad) ag += g;
                   });
    return with_dval(out, s / static_cast<double>(node(a).value.size()));
}

Var Tape::mean_rows(Var x) {
    check_2d(x, "mean_rows");
    int n = node(x).dims[0], c = node(x).dims[1];
    std::vector<float> v(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += node(x).value[static_cast<std::size_t>(i) * c + j];
        v[static_cast<std::size_t>(j)] = static_cast<float>(s / n);
    }
    return make({1, c}, std::move(v), "mean_rows", [x, n, c, id = nodes_.size()](Tape& t) {
        auto& g = t.nodes_[id].grad;
        float inv = 1.0f / static_cast<float>(n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j)
                t.node(x).grad[static_cast<std::size_t>(i) * c + j] += g[j] * inv;
    });
}

Var Tape::dot(Var a, Var b) {
    check_same_dims(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < node(a).value.size(); ++i)
        s += static_cast<double>(node(a).value[i]) * static_cast<double>(node(b).value[i]);
    Var out = make({1}, {static_cast<float>(s)}, "dot", [a, b, id = nodes_.size()](Tape& t) {
        float g = t.nodes_[id].grad[0];
        for (std::size_t i = 0; i < t.node(a).grad.size(); ++i) {
            t.node(a).grad[i] += g * t.node(b).value[i];
            t.node(b).grad[i] += g * t.node(a).value[i];
        }
    });
    return with_dval(out, s);
}

Var Tape::mul_scalar_var(Var x, Var s) {
    if (node(s).value.size() != 1)
        throw ShapeError("mul_scalar_var: op '" + node(s).op + "' is not a scalar");
    float sv = node(s).value[0];
    std::vector<float> v(node(x).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = node(x).value[i] * sv;
    return make(node(x).dims, std::move(v), "mul_scalar_var",
                [x, s, id = nodes_.size()](Tape& t) {
                    auto& g = t.nodes_[id].grad;
                    float sv2 = t.node(s).value[0];
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        t.node(x).grad[i] += g[i] * sv2;
                        acc += static_cast<double>(g[i]) * t.node(x).value[i];
                    }
                    t.node(s).grad[0] += static_cast<float>(acc);
                });
}

Var Tape::div_scalar_var(Var x, Var s) {
    if (node(s).value.size() != 1)
        throw ShapeError("div_scalar_var: op '" + node(s).op + "' is not a scalar");
    float sv = node(s).value[0];
    std::vector<float> v(node(x).value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = node(x).value[i] / sv;
    return make(node(x).dims, std::move(v), "div_scalar_var",
                [x, s, id = nodes_.size()](Tape& t) {
                    auto& g = t.nodes_[id].grad;
                    float sv2 = t.node(s).value[0];
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        t.node(x).grad[i] += g[i] / sv2;
                        acc += static_cast<double>(g[i]) * t.node(x).value[i];
                    }
                    t.node(s).grad[0] -= static_cast<float>(acc / (sv2 * sv2));
                });
}

Var Tape::cosine_similarity(Var a, Var b) {
    check_same_dims(a, b, "cosine_similarity");
    Var num = dot(a, b);
    Var na = sqrt_(sum(square(a)));
    Var nb = sqrt_(sum(square(b)));
    if (std::fabs(scalar(na)) < 1e-12 || std::fabs(scalar(nb)) < 1e-12)
        throw std::domain_error("cosine_similarity: zero-norm vector");
    return divide(num, mul(na, nb));
}

Var Tape::l2_normalize(Var a) {
    Var n = sqrt_(add_scalar(sum(square(a)), 1e-12f));
    return div_scalar_var(a, n);
}

Var Tape::mse_loss(Var a, Var b) { return mean(square(sub(a, b))); }

Var Tape::l1_loss(Var a, Var b) { return mean(abs_(sub(a, b))); }

Var Tape::softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
    check_2d(logits, "softmax_cross_entropy");
    int n = node(logits).dims[0], k = node(logits).dims[1];
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows from op '" +
                         node(logits).op + "'");
    std::vector<float> probs(node(logits).value.size());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* rowv = node(logits).value.data() + static_cast<std::size_t>(i) * k;
        float mx = *std::max_element(rowv, rowv + k);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(rowv[j] - mx));
        for (int j = 0; j < k; ++j)
            probs[static_cast<std::size_t>(i) * k + j] =
                static_cast<float>(std::exp(static_cast<double>(rowv[j] - mx)) / z);
        loss -= std::log(
            std::max(1e-30, static_cast<double>(probs[static_cast<std::size_t>(i) * k +
                                                      labels[static_cast<std::size_t>(i)]])));
    }
    loss /= n;
    Var out = make({1}, {static_cast<float>(loss)}, "softmax_xent",
                [logits, labels, probs = std::move(probs), n, k, id = nodes_.size()](Tape& t) {
                    float g = t.nodes_[id].grad[0] / static_cast<float>(n);
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < k; ++j) {
                            float p = probs[static_cast<std::size_t>(i) * k + j];
                            float y = (j == labels[static_cast<std::size_t>(i)]) ? 1.0f : 0.0f;
                            t.node(logits).grad[static_cast<std::size_t>(i) * k + j] +=
                                g * (p - y);
                        }
                });
    return with_dval(out, loss);
}

}  // namespace deidvc::numcore
