#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "moelab/tensor.hpp"

namespace moelab {

/// Named trainable tensor. `grad` has the same 2-D layout as `value.mat()`.
struct Parameter {
    std::string name;
    Tensor value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v);
    void zero_grad() { grad.setZero(value.mat().rows(), value.mat().cols()); }
};

enum class OpKind { Add, Sub, Mul, Neg, Exp, Log, Sigmoid, Silu };

// Value-level kernels. `b` is broadcast onto `a` when its shape is a suffix of
// a's shape, or when it is a scalar.
Tensor elementwise(OpKind op, const Tensor& a, const Tensor* b = nullptr);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, Index axis = -1);

class Graph;

/// Handle to a node recorded on a Graph. Cheap to copy; valid while the graph lives.
class Var {
public:
    Var() = default;
    Var(Graph* g, int id) : graph_(g), id_(id) {}

    Graph& graph() const { return *graph_; }
    int id() const noexcept { return id_; }
    bool valid() const noexcept { return graph_ != nullptr; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    const Matrix& mat() const { return value().mat(); }
    double item() const { return value().item(); }
    Matrix grad() const;

private:
    Graph* graph_ = nullptr;
    int id_ = -1;
};

/// Tape of operations recorded in execution order, so node ids are already a
/// topological order. Backward walks the tape once in reverse.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, const Matrix& upstream)>;

    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var input(Tensor t);
    Var constant(Tensor t);
    /// Leaf bound to external storage; gradients accumulate into `p.grad`.
    Var parameter(Parameter& p);

    const Tensor& value(int id) const;
    /// Accumulated gradient, or zeros when nothing reached the node.
    Matrix grad(int id) const;
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    bool grad_enabled() const noexcept { return grad_enabled_; }
    size_t size() const noexcept { return nodes_.size(); }

    void backward(Var loss);
    void zero_grad();

    // Op authoring interface.
    Var record(Tensor value, std::vector<int> inputs, BackwardFn fn);
    void accumulate(int id, const Matrix& g);
    template <typename Derived>
    void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
        accumulate(id, Matrix(g));
    }

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Parameter* param = nullptr;
        std::vector<int> inputs;
        BackwardFn backward;
        Matrix grad;
        bool has_grad = false;
        bool needs_grad = false;
    };

    std::vector<Node> nodes_;
    bool grad_enabled_;
};

// Differentiable ops. Elementwise binaries follow the broadcasting rule of
// `elementwise`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var sigmoid(Var a);
Var silu(Var a);
Var log_sigmoid(Var a);
Var reciprocal(Var a);
Var scale(Var a, double s);
Var apply(OpKind op, Var a, Var b = {});

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

Var matmul(Var a, Var b);
Var transpose(Var a);
Var softmax(Var x, Index axis = -1);

Var sum(Var a);
Var mean(Var a);
/// [n, d] -> [n, 1]
Var row_sum(Var a);
/// [n, d] -> [d]
Var mean_rows(Var a);

Var slice_rows(Var a, Index begin, Index count);
Var slice_cols(Var a, Index begin, Index count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const Index> rows);
/// Adds row i of `a` into row rows[i] of an [n_rows, d] zero matrix.
Var scatter_add_rows(Var a, std::span<const Index> rows, Index n_rows);
/// Multiplies row i of x[n, d] by s[i] where s is [n, 1].
Var scale_rows(Var x, Var s);

Var rms_norm(Var x, Var weight, double eps = 1e-6);
/// Rotary embedding on each head_dim block of x[n, heads * head_dim];
/// row i is rotated for position positions[i].
Var rope(Var x, std::span<const Index> positions, Index head_dim, double base);
/// Sum over rows with mask[i] != 0 of log softmax(logits[i])[targets[i]].
Var token_logprob_sum(Var logits, std::span<const int> targets, std::span<const double> mask);

/// Finite-difference gradient verification.
using ScalarFn = std::function<Var(Graph&, Var)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Central differences (f(x+eps) - f(x-eps)) / 2eps per coordinate, compared to
/// the backward pass by |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check_report(const ScalarFn& f, const Tensor& x, double eps = 1e-6);
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-6);

}  // namespace moelab
