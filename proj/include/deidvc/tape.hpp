#pragma once

#include <functional>
#include <string>
#include <vector>

#include "deidvc/tensor.hpp"

namespace deidvc::numcore {

class Tape;

// Handle into a Tape. Only valid for the tape that created it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff tape over float32 tensors. One tape per forward
// pass; ops append nodes, backward() runs the reverse sweep. Reductions
// accumulate in double so finite-difference checks stay meaningful at
// float32 precision.
class Tape {
public:
    // Leaf whose gradient is wanted (requires_grad taken from the tensor).
    Var input(const Tensor& t, std::string name = "input");
    // Leaf treated as a constant; gradients still flow *through* ops that
    // consume it, but its own grad is not reported.
    Var constant(const Tensor& t, std::string name = "const");

    const std::vector<int>& dims(Var v) const;
    const std::vector<float>& value(Var v) const;
    const std::vector<float>& grad(Var v) const;
    Tensor tensor(Var v) const;
    double scalar(Var v) const;  // value of a single-element var
    const std::string& op_name(Var v) const;

    // Seeds d(out)/d(out)=1 and sweeps the tape in reverse.
    void backward(Var scalar_out);

    // ---- elementwise (same dims) ----
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var divide(Var a, Var b);
    // ---- elementwise unary ----
    Var neg(Var a);
    Var add_scalar(Var a, float c);
    Var scale(Var a, float c);
    Var sigmoid(Var a);
    Var tanh_(Var a);
    Var relu(Var a);
    Var exp_(Var a);
    Var log_(Var a);
    Var sqrt_(Var a);
    Var abs_(Var a);
    Var square(Var a);
    Var softplus(Var a);
    // ---- linear algebra ----
    Var matmul(Var a, Var b);                    // [m,k]x[k,n] -> [m,n]
    Var linear(Var x, Var w, Var b);             // [n,in]x[in,out]+[out]
    Var conv1d_same(Var x, Var w, Var b);        // x[T,Cin], w[K,Cin,Cout], b[Cout]
    // ---- shape / indexing ----
    Var row(Var x, int r);                       // -> [1,C]
    Var stack_rows(const std::vector<Var>& rows);
    Var reverse_rows(Var x);
    Var repeat_rows(Var x, int factor);          // each row repeated `factor` times
    Var avgpool_rows(Var x, int window);         // non-overlapping mean pooling
    Var broadcast_row(Var v, int n);             // [1,C] or [C] -> [n,C]
    Var concat_cols(Var a, Var b);
    // ---- reductions & compositions ----
    Var sum(Var a);                              // -> [1]
    Var mean(Var a);                             // -> [1]
    Var mean_rows(Var x);                        // [n,C] -> [1,C]
    Var dot(Var a, Var b);                       // -> [1]
    Var mul_scalar_var(Var x, Var s);            // s is [1]
    Var div_scalar_var(Var x, Var s);
    Var cosine_similarity(Var a, Var b);         // -> [1]
    Var l2_normalize(Var a);                     // vector/row normalized to unit norm
    Var mse_loss(Var a, Var b);                  // mean over all elements
    Var l1_loss(Var a, Var b);                   // mean absolute error
    Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);  // -> [1]

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int> dims;
        std::vector<float> value;
        std::vector<float> grad;
        std::function<void(Tape&)> backward;
        std::string op;
        // single-element nodes carry a double shadow value so scalar loss
        // tails keep full precision for finite-difference checks
        double dval = 0.0;
        bool has_dval = false;
    };

    std::vector<Node> nodes_;

    Var make(std::vector<int> dims, std::vector<float> value, std::string op,
             std::function<void(Tape&)> backward);
    Var with_dval(Var v, double d);
    double dv(Var v) const;  // double shadow if present, else value[0]
    Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
    const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
    void check_same_dims(Var a, Var b, const char* opname) const;
    void check_2d(Var a, const char* opname) const;

    friend struct TapeAccess;
};

}  // namespace deidvc::numcore
