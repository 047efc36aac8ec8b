#pragma once

#include <functional>
#include <vector>

#include "appt/tensor.hpp"

namespace appt {

class Tape;

// Handle to a node on a tape. Cheap to copy; owns nothing.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Record of a forward pass: nodes appear in execution order, which is a
// topological order of the computation. backward() walks the record once in
// reverse, accumulating gradients additively into every node that needs one.
// Frozen leaves (requires_grad == false) never get gradient storage.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad; // undefined until first accumulation
        bool requires_grad = false;
        bool leaf = false;
        const char* op = "";
        std::function<void(Tape&)> backprop;
    };

    // Leaf holding (sharing) the given tensor; trainability is taken from
    // tensor.requires_grad().
    Var leaf(const Tensor& t);

    // Non-differentiable input.
    Var constant(Tensor t);

    const Tensor& value(Var v) const { return node_at(v).value; }
    bool has_grad(Var v) const { return node_at(v).grad.defined(); }
    const Tensor& grad(Var v) const;

    // Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be scalar.
    void backward(Var loss);

    int node_count() const { return static_cast<int>(nodes_.size()); }
    int64_t backprop_calls() const { return backprop_calls_; }

    // Builders below are used by the op constructors.
    int push(Tensor value, bool requires_grad, bool is_leaf, const char* op);
    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    bool needs_grad(Var v) const { return node_at(v).requires_grad; }
    Tensor& grad_buffer(int id);

private:
    const Node& node_at(Var v) const;
    std::vector<Node> nodes_;
    int64_t backprop_calls_ = 0;
};

// Differentiable operations. All results are finiteness-checked; a NaN or Inf
// raises NumericError instead of propagating.
Var matmul(Var a, Var b);    // [m,k] x [k,n]
Var matmul_nt(Var a, Var b); // a * b^T, for attention scores
Var add(Var a, Var b);       // same shape, or b a [1,n] row broadcast over a's rows
Var sub(Var a, Var b);       // same broadcast rule as add
Var mul(Var a, Var b);       // elementwise, same shape
Var scale(Var a, double s);
Var scale_by(Var a, Var s); // s is [1,1]
Var gelu(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps);
Var slice_rows(Var a, int start, int count);
Var slice_cols(Var a, int start, int count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var mean_rows(Var a); // [m,n] -> [1,n]
Var max_rows(Var a);  // [m,n] -> [1,n]; ties to the smallest row index
// Rows come in consecutive blocks of group_size; max within each block.
Var group_max_pool(Var a, int group_size); // [g*k,n] -> [g,n]
// Appends the per-group row to every row of its block.
Var group_concat(Var per_point, Var per_group, int group_size);
Var sum_all(Var a); // -> [1,1]
// -log softmax(logits)[label] via log-sum-exp; logits is [1,C].
Var cross_entropy_logits(Var logits, int label);

} // namespace appt
