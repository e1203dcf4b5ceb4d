#include "moelab/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "moelab/rope.hpp"

namespace moelab {

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) { zero_grad(); }

namespace {

bool is_binary(OpKind op) { return op == OpKind::Add || op == OpKind::Sub || op == OpKind::Mul; }

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Neg: return "neg";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Silu: return "silu";
    }
    return "?";
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Broadcast of b onto a: b is a scalar, or b's shape is a suffix of a's shape.
enum class Broadcast { Same, Scalar, Rows };

Broadcast check_broadcast(OpKind op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    if (b.size() == 1) return Broadcast::Scalar;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) return Broadcast::Rows;
    throw DimensionError(std::string(op_name(op)) + ": shapes " + shape_string(sa) + " and " + shape_string(sb) +
                         " are not broadcast-compatible");
}

Matrix unary_forward(OpKind op, const Matrix& a) {
    switch (op) {
        case OpKind::Neg: return -a;
        case OpKind::Exp: return a.array().exp().matrix();
        case OpKind::Log: return a.array().log().matrix();
        case OpKind::Sigmoid: return a.unaryExpr(&stable_sigmoid);
        case OpKind::Silu: return a.unaryExpr([](double x) { return x * stable_sigmoid(x); });
        default: break;
    }
    throw ContractError(std::string(op_name(op)) + " is not a unary op");
}

void binary_apply(OpKind op, Eigen::Ref<Matrix> out, const Eigen::Ref<const Matrix>& b) {
    switch (op) {
        case OpKind::Add: out += b; break;
        case OpKind::Sub: out -= b; break;
        case OpKind::Mul: out.array() *= b.array(); break;
        default: throw ContractError(std::string(op_name(op)) + " is not a binary op");
    }
}

Matrix binary_forward(OpKind op, Broadcast bc, const Matrix& a, const Matrix& b) {
    Matrix out = a;
    if (bc == Broadcast::Scalar) {
        const double s = b(0, 0);
        switch (op) {
            case OpKind::Add: out.array() += s; break;
            case OpKind::Sub: out.array() -= s; break;
            case OpKind::Mul: out *= s; break;
            default: throw ContractError(std::string(op_name(op)) + " is not a binary op");
        }
        return out;
    }
    const Index block = b.rows();
    for (Index r = 0; r < a.rows(); r += block) binary_apply(op, out.middleRows(r, block), b);
    return out;
}

// Reduce a gradient shaped like `a` down to b's layout.
Matrix reduce_broadcast(Broadcast bc, const Matrix& g, const Matrix& b) {
    if (bc == Broadcast::Same) return g;
    if (bc == Broadcast::Scalar) return Matrix::Constant(b.rows(), b.cols(), g.sum());
    Matrix acc = Matrix::Zero(b.rows(), b.cols());
    for (Index r = 0; r < g.rows(); r += b.rows()) acc += g.middleRows(r, b.rows());
    return acc;
}

Matrix tile_broadcast(Broadcast bc, const Matrix& b, Index rows, Index cols) {
    if (bc == Broadcast::Same) return b;
    if (bc == Broadcast::Scalar) return Matrix::Constant(rows, cols, b(0, 0));
    Matrix t(rows, cols);
    for (Index r = 0; r < rows; r += b.rows()) t.middleRows(r, b.rows()) = b;
    return t;
}

struct AxisLayout {
    Index outer, n, inner;
};

AxisLayout axis_layout(const Shape& shape, Index axis) {
    const Index rank = static_cast<Index>(shape.size());
    if (rank == 0) return {1, 1, 1};
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw DimensionError("softmax axis out of range for shape " + shape_string(shape));
    AxisLayout l{1, shape[static_cast<size_t>(axis)], 1};
    for (Index i = 0; i < axis; ++i) l.outer *= shape[static_cast<size_t>(i)];
    for (Index i = axis + 1; i < rank; ++i) l.inner *= shape[static_cast<size_t>(i)];
    return l;
}

void softmax_inplace(double* data, const AxisLayout& l) {
    for (Index o = 0; o < l.outer; ++o) {
        for (Index i = 0; i < l.inner; ++i) {
            double* base = data + o * l.n * l.inner + i;
            double mx = base[0];
            for (Index j = 1; j < l.n; ++j) mx = std::max(mx, base[j * l.inner]);
            double total = 0.0;
            for (Index j = 0; j < l.n; ++j) {
                base[j * l.inner] = std::exp(base[j * l.inner] - mx);
                total += base[j * l.inner];
            }
            for (Index j = 0; j < l.n; ++j) base[j * l.inner] /= total;
        }
    }
}

Tensor same_shape(const Shape& shape, Matrix m) {
    Tensor t(shape);
    t.mat() = std::move(m);
    return t;
}

void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw DimensionError(std::string(what) + " needs a rank-2 tensor, got " + shape_string(t.shape()));
}

}  // namespace

Tensor elementwise(OpKind op, const Tensor& a, const Tensor* b) {
    if (is_binary(op)) {
        if (!b) throw ContractError(std::string(op_name(op)) + " needs two operands");
        Broadcast bc = check_broadcast(op, a, *b);
        return same_shape(a.shape(), binary_forward(op, bc, a.mat(), b->mat()));
    }
    if (b) throw ContractError(std::string(op_name(op)) + " takes one operand");
    return same_shape(a.shape(), unary_forward(op, a.mat()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                             " do not align");
    }
    return Tensor::from_matrix(a.mat() * b.mat());
}

Tensor softmax(const Tensor& x, Index axis) {
    Tensor out = x;
    softmax_inplace(out.mat().data(), axis_layout(x.shape(), axis));
    return out;
}

// ---------------------------------------------------------------------------
// Graph

const Tensor& Var::value() const { return graph_->value(id_); }
Matrix Var::grad() const { return graph_->grad(id_); }

Var Graph::input(Tensor t) {
    Node n;
    n.needs_grad = grad_enabled_ && t.requires_grad;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::constant(Tensor t) {
    t.requires_grad = false;
    return input(std::move(t));
}

Var Graph::parameter(Parameter& p) {
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.needs_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Tensor& Graph::value(int id) const {
    const Node& n = nodes_.at(static_cast<size_t>(id));
    return n.external ? *n.external : n.value;
}

Matrix Graph::grad(int id) const {
    const Node& n = nodes_.at(static_cast<size_t>(id));
    if (n.has_grad) return n.grad;
    const Matrix& v = value(id).mat();
    return Matrix::Zero(v.rows(), v.cols());
}

Var Graph::record(Tensor value, std::vector<int> inputs, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    if (grad_enabled_) {
        for (int i : inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<size_t>(i)].needs_grad;
    }
    if (n.needs_grad) {
        n.inputs = std::move(inputs);
        n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Graph::accumulate(int id, const Matrix& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return;
    if (!n.has_grad) {
        n.grad = g;
        n.has_grad = true;
    } else {
        n.grad += g;
    }
}

void Graph::zero_grad() {
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad.resize(0, 0);
        if (n.param) n.param->zero_grad();
        if (!n.external) n.value.grad.reset();
    }
}

void Graph::backward(Var loss) {
    if (loss.value().size() != 1) {
        throw ContractError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
    }
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad.resize(0, 0);
    }
    if (!nodes_[static_cast<size_t>(loss.id())].needs_grad) return;
    accumulate(loss.id(), Matrix::Ones(1, 1));
    for (int id = loss.id(); id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.has_grad) continue;
        if (n.backward) n.backward(*this, n.grad);
        if (n.param) {
            if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) n.param->zero_grad();
            n.param->grad += n.grad;
        } else if (n.inputs.empty() && !n.external) {
            n.value.grad = n.grad;
        }
    }
}

// ---------------------------------------------------------------------------
// Differentiable ops

Var apply(OpKind op, Var a, Var b) {
    Graph& g = a.graph();
    const int ia = a.id();
    if (is_binary(op)) {
        if (!b.valid()) throw ContractError(std::string(op_name(op)) + " needs two operands");
        const int ib = b.id();
        const Broadcast bc = check_broadcast(op, a.value(), b.value());
        Tensor out = same_shape(a.shape(), binary_forward(op, bc, a.mat(), b.mat()));
        return g.record(std::move(out), {ia, ib}, [op, bc, ia, ib](Graph& gr, const Matrix& up) {
            const Matrix& av = gr.value(ia).mat();
            const Matrix& bv = gr.value(ib).mat();
            switch (op) {
                case OpKind::Add:
                    gr.accumulate(ia, up);
                    if (gr.needs_grad(ib)) gr.accumulate(ib, reduce_broadcast(bc, up, bv));
                    break;
                case OpKind::Sub:
                    gr.accumulate(ia, up);
                    if (gr.needs_grad(ib)) gr.accumulate(ib, reduce_broadcast(bc, -up, bv));
                    break;
                case OpKind::Mul:
                    if (gr.needs_grad(ia)) {
                        gr.accumulate(ia, Matrix(up.cwiseProduct(tile_broadcast(bc, bv, up.rows(), up.cols()))));
                    }
                    if (gr.needs_grad(ib)) gr.accumulate(ib, reduce_broadcast(bc, up.cwiseProduct(av), bv));
                    break;
                default: break;
            }
        });
    }
    if (b.valid()) throw ContractError(std::string(op_name(op)) + " takes one operand");
    Tensor out = same_shape(a.shape(), unary_forward(op, a.mat()));
    const int io = static_cast<int>(g.size());
    return g.record(std::move(out), {ia}, [op, ia, io](Graph& gr, const Matrix& up) {
        const Matrix& x = gr.value(ia).mat();
        const Matrix& y = gr.value(io).mat();
        switch (op) {
            case OpKind::Neg: gr.accumulate(ia, -up); break;
            case OpKind::Exp: gr.accumulate(ia, up.cwiseProduct(y)); break;
            case OpKind::Log: gr.accumulate(ia, up.cwiseQuotient(x)); break;
            case OpKind::Sigmoid:
                gr.accumulate(ia, (up.array() * y.array() * (1.0 - y.array())).matrix());
                break;
            case OpKind::Silu: {
                Matrix s = x.unaryExpr(&stable_sigmoid);
                gr.accumulate(ia, (up.array() * s.array() * (1.0 + x.array() * (1.0 - s.array()))).matrix());
                break;
            }
            default: break;
        }
    });
}

Var add(Var a, Var b) { return apply(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return apply(OpKind::Sub, a, b); }
Var mul(Var a, Var b) { return apply(OpKind::Mul, a, b); }
Var neg(Var a) { return apply(OpKind::Neg, a); }
Var exp(Var a) { return apply(OpKind::Exp, a); }
Var log(Var a) { return apply(OpKind::Log, a); }
Var sigmoid(Var a) { return apply(OpKind::Sigmoid, a); }
Var silu(Var a) { return apply(OpKind::Silu, a); }

Var log_sigmoid(Var a) {
    const int ia = a.id();
    Matrix y = a.mat().unaryExpr([](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); });
    return a.graph().record(same_shape(a.shape(), std::move(y)), {ia}, [ia](Graph& gr, const Matrix& up) {
        const Matrix& x = gr.value(ia).mat();
        gr.accumulate(ia, up.cwiseProduct(x.unaryExpr([](double v) { return stable_sigmoid(-v); })));
    });
}

Var reciprocal(Var a) {
    const int ia = a.id();
    Matrix y = a.mat().cwiseInverse();
    return a.graph().record(same_shape(a.shape(), std::move(y)), {ia}, [ia](Graph& gr, const Matrix& up) {
        const Matrix& x = gr.value(ia).mat();
        gr.accumulate(ia, -up.cwiseQuotient(x.cwiseProduct(x)));
    });
}

Var scale(Var a, double s) {
    const int ia = a.id();
    return a.graph().record(same_shape(a.shape(), a.mat() * s), {ia},
                            [ia, s](Graph& gr, const Matrix& up) { gr.accumulate(ia, up * s); });
}

Var matmul(Var a, Var b) {
    Tensor out = matmul(a.value(), b.value());
    const int ia = a.id();
    const int ib = b.id();
    return a.graph().record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, const Matrix& up) {
        if (gr.needs_grad(ia)) gr.accumulate(ia, Matrix(up * gr.value(ib).mat().transpose()));
        if (gr.needs_grad(ib)) gr.accumulate(ib, Matrix(gr.value(ia).mat().transpose() * up));
    });
}

Var transpose(Var a) {
    require_rank2(a.value(), "transpose");
    const int ia = a.id();
    return a.graph().record(Tensor::from_matrix(a.mat().transpose()), {ia},
                            [ia](Graph& gr, const Matrix& up) { gr.accumulate(ia, Matrix(up.transpose())); });
}

Var softmax(Var x, Index axis) {
    const AxisLayout l = axis_layout(x.shape(), axis);
    Tensor out = x.value();
    softmax_inplace(out.mat().data(), l);
    const int ix = x.id();
    const int io = static_cast<int>(x.graph().size());
    return x.graph().record(std::move(out), {ix}, [ix, io, l](Graph& gr, const Matrix& up) {
        const Matrix& y = gr.value(io).mat();
        Matrix gin(y.rows(), y.cols());
        const double* yd = y.data();
        const double* gd = up.data();
        double* od = gin.data();
        for (Index o = 0; o < l.outer; ++o) {
            for (Index i = 0; i < l.inner; ++i) {
                const Index base = o * l.n * l.inner + i;
                double dot = 0.0;
                for (Index j = 0; j < l.n; ++j) dot += yd[base + j * l.inner] * gd[base + j * l.inner];
                for (Index j = 0; j < l.n; ++j) {
                    od[base + j * l.inner] = yd[base + j * l.inner] * (gd[base + j * l.inner] - dot);
                }
            }
        }
        gr.accumulate(ix, gin);
    });
}

Var sum(Var a) {
    const int ia = a.id();
    return a.graph().record(Tensor::scalar(a.mat().sum()), {ia}, [ia](Graph& gr, const Matrix& up) {
        const Matrix& x = gr.value(ia).mat();
        gr.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), up(0, 0)));
    });
}

Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
    require_rank2(a.value(), "row_sum");
    const int ia = a.id();
    return a.graph().record(Tensor::from_matrix(a.mat().rowwise().sum()), {ia}, [ia](Graph& gr, const Matrix& up) {
        const Index cols = gr.value(ia).mat().cols();
        gr.accumulate(ia, Matrix(up.col(0).replicate(1, cols)));
    });
}

Var mean_rows(Var a) {
    require_rank2(a.value(), "mean_rows");
    const int ia = a.id();
    const Index n = a.mat().rows();
    Tensor out(Shape{a.mat().cols()});
    out.mat() = a.mat().colwise().mean();
    return a.graph().record(std::move(out), {ia}, [ia, n](Graph& gr, const Matrix& up) {
        gr.accumulate(ia, Matrix(up.replicate(n, 1) / static_cast<double>(n)));
    });
}

Var slice_rows(Var a, Index begin, Index count) {
    require_rank2(a.value(), "slice_rows");
    if (begin < 0 || count <= 0 || begin + count > a.mat().rows()) throw DimensionError("slice_rows out of range");
    const int ia = a.id();
    return a.graph().record(Tensor::from_matrix(a.mat().middleRows(begin, count)), {ia},
                            [ia, begin, count](Graph& gr, const Matrix& up) {
                                const Matrix& x = gr.value(ia).mat();
                                Matrix gin = Matrix::Zero(x.rows(), x.cols());
                                gin.middleRows(begin, count) = up;
                                gr.accumulate(ia, gin);
                            });
}

Var slice_cols(Var a, Index begin, Index count) {
    require_rank2(a.value(), "slice_cols");
    if (begin < 0 || count <= 0 || begin + count > a.mat().cols()) throw DimensionError("slice_cols out of range");
    const int ia = a.id();
    return a.graph().record(Tensor::from_matrix(a.mat().middleCols(begin, count)), {ia},
                            [ia, begin, count](Graph& gr, const Matrix& up) {
                                const Matrix& x = gr.value(ia).mat();
                                Matrix gin = Matrix::Zero(x.rows(), x.cols());
                                gin.middleCols(begin, count) = up;
                                gr.accumulate(ia, gin);
                            });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_rows of nothing");
    Index rows = 0;
    const Index cols = parts.front().mat().cols();
    std::vector<int> ids;
    std::vector<Index> offsets;
    for (const Var& p : parts) {
        require_rank2(p.value(), "concat_rows");
        if (p.mat().cols() != cols) throw DimensionError("concat_rows column mismatch");
        offsets.push_back(rows);
        rows += p.mat().rows();
        ids.push_back(p.id());
    }
    Matrix out(rows, cols);
    for (size_t i = 0; i < parts.size(); ++i) out.middleRows(offsets[i], parts[i].mat().rows()) = parts[i].mat();
    return parts.front().graph().record(Tensor::from_matrix(std::move(out)), ids,
                                        [ids, offsets](Graph& gr, const Matrix& up) {
                                            for (size_t i = 0; i < ids.size(); ++i) {
                                                if (!gr.needs_grad(ids[i])) continue;
                                                const Index r = gr.value(ids[i]).mat().rows();
                                                gr.accumulate(ids[i], Matrix(up.middleRows(offsets[i], r)));
                                            }
                                        });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ContractError("concat_cols of nothing");
    Index cols = 0;
    const Index rows = parts.front().mat().rows();
    std::vector<int> ids;
    std::vector<Index> offsets;
    for (const Var& p : parts) {
        require_rank2(p.value(), "concat_cols");
        if (p.mat().rows() != rows) throw DimensionError("concat_cols row mismatch");
        offsets.push_back(cols);
        cols += p.mat().cols();
        ids.push_back(p.id());
    }
    Matrix out(rows, cols);
    for (size_t i = 0; i < parts.size(); ++i) out.middleCols(offsets[i], parts[i].mat().cols()) = parts[i].mat();
    return parts.front().graph().record(Tensor::from_matrix(std::move(out)), ids,
                                        [ids, offsets](Graph& gr, const Matrix& up) {
                                            for (size_t i = 0; i < ids.size(); ++i) {
                                                if (!gr.needs_grad(ids[i])) continue;
                                                const Index c = gr.value(ids[i]).mat().cols();
                                                gr.accumulate(ids[i], Matrix(up.middleCols(offsets[i], c)));
                                            }
                                        });
}

Var gather_rows(Var a, std::span<const Index> rows) {
    require_rank2(a.value(), "gather_rows");
    const Matrix& x = a.mat();
    if (rows.empty()) throw DimensionError("gather_rows with no rows");
    Matrix out(static_cast<Index>(rows.size()), x.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= x.rows()) throw DimensionError("gather_rows index out of range");
        out.row(static_cast<Index>(i)) = x.row(rows[i]);
    }
    auto idx = std::make_shared<std::vector<Index>>(rows.begin(), rows.end());
    const int ia = a.id();
    return a.graph().record(Tensor::from_matrix(std::move(out)), {ia}, [ia, idx](Graph& gr, const Matrix& up) {
        const Matrix& xv = gr.value(ia).mat();
        Matrix gin = Matrix::Zero(xv.rows(), xv.cols());
        for (size_t i = 0; i < idx->size(); ++i) gin.row((*idx)[i]) += up.row(static_cast<Index>(i));
        gr.accumulate(ia, gin);
    });
}

Var scatter_add_rows(Var a, std::span<const Index> rows, Index n_rows) {
    require_rank2(a.value(), "scatter_add_rows");
    const Matrix& x = a.mat();
    if (static_cast<Index>(rows.size()) != x.rows()) throw DimensionError("scatter_add_rows needs one index per row");
    Matrix out = Matrix::Zero(n_rows, x.cols());
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] < 0 || rows[i] >= n_rows) throw DimensionError("scatter_add_rows index out of range");
        out.row(rows[i]) += x.row(static_cast<Index>(i));
    }
    auto idx = std::make_shared<std::vector<Index>>(rows.begin(), rows.end());
    const int ia = a.id();
    return a.graph().record(Tensor::from_matrix(std::move(out)), {ia}, [ia, idx](Graph& gr, const Matrix& up) {
        Matrix gin(static_cast<Index>(idx->size()), up.cols());
        for (size_t i = 0; i < idx->size(); ++i) gin.row(static_cast<Index>(i)) = up.row((*idx)[i]);
        gr.accumulate(ia, gin);
    });
}

Var scale_rows(Var x, Var s) {
    require_rank2(x.value(), "scale_rows");
    if (s.mat().rows() != x.mat().rows() || s.mat().cols() != 1) {
        throw DimensionError("scale_rows: shapes " + shape_string(x.shape()) + " and " + shape_string(s.shape()));
    }
    Matrix out = x.mat().array().colwise() * s.mat().col(0).array();
    const int ix = x.id();
    const int is = s.id();
    return x.graph().record(Tensor::from_matrix(std::move(out)), {ix, is}, [ix, is](Graph& gr, const Matrix& up) {
        const Matrix& xv = gr.value(ix).mat();
        const Matrix& sv = gr.value(is).mat();
        if (gr.needs_grad(ix)) gr.accumulate(ix, Matrix(up.array().colwise() * sv.col(0).array()));
        if (gr.needs_grad(is)) gr.accumulate(is, Matrix(up.cwiseProduct(xv).rowwise().sum()));
    });
}

Var rms_norm(Var x, Var weight, double eps) {
    require_rank2(x.value(), "rms_norm");
    const Matrix& xv = x.mat();
    if (weight.value().size() != xv.cols()) {
        throw DimensionError("rms_norm: shapes " + shape_string(x.shape()) + " and " + shape_string(weight.shape()));
    }
    Vector inv = ((xv.array().square().rowwise().sum() / static_cast<double>(xv.cols())) + eps).rsqrt().matrix();
    Matrix xhat = xv.array().colwise() * inv.array();
    Matrix out = xhat.array().rowwise() * weight.mat().row(0).array();
    const int ix = x.id();
    const int iw = weight.id();
    auto cache = std::make_shared<std::pair<Vector, Matrix>>(std::move(inv), std::move(xhat));
    return x.graph().record(Tensor::from_matrix(std::move(out)), {ix, iw}, [ix, iw, cache](Graph& gr, const Matrix& up) {
        const auto& [inv_rms, xh] = *cache;
        const Matrix& w = gr.value(iw).mat();
        if (gr.needs_grad(iw)) gr.accumulate(iw, Matrix(up.cwiseProduct(xh).colwise().sum()));
        if (gr.needs_grad(ix)) {
            Matrix dxh = up.array().rowwise() * w.row(0).array();
            Vector proj = dxh.cwiseProduct(xh).rowwise().sum() / static_cast<double>(xh.cols());
            Matrix dx = (dxh - (xh.array().colwise() * proj.array()).matrix()).array().colwise() * inv_rms.array();
            gr.accumulate(ix, dx);
        }
    });
}

Var rope(Var x, std::span<const Index> positions, Index head_dim, double base) {
    require_rank2(x.value(), "rope");
    Matrix out = x.mat();
    rope_rotate<double>(out, positions, head_dim, base);
    auto pos = std::make_shared<std::vector<Index>>(positions.begin(), positions.end());
    const int ix = x.id();
    return x.graph().record(Tensor::from_matrix(std::move(out)), {ix},
                            [ix, pos, head_dim, base](Graph& gr, const Matrix& up) {
                                Matrix gin = up;
                                rope_rotate<double>(gin, *pos, head_dim, base, true);
                                gr.accumulate(ix, gin);
                            });
}

Var token_logprob_sum(Var logits, std::span<const int> targets, std::span<const double> mask) {
    require_rank2(logits.value(), "token_logprob_sum");
    const Matrix& z = logits.mat();
    if (static_cast<Index>(targets.size()) != z.rows() || static_cast<Index>(mask.size()) != z.rows()) {
        throw DimensionError("token_logprob_sum needs one target and mask entry per row");
    }
    double total = 0.0;
    for (Index r = 0; r < z.rows(); ++r) {
        const int t = targets[static_cast<size_t>(r)];
        if (t < 0 || t >= z.cols()) throw InputError("target id " + std::to_string(t) + " out of range");
        const double m = mask[static_cast<size_t>(r)];
        if (m == 0.0) continue;
        const double mx = z.row(r).maxCoeff();
        const double lse = mx + std::log((z.row(r).array() - mx).exp().sum());
        total += m * (z(r, t) - lse);
    }
    auto tg = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
    auto mk = std::make_shared<std::vector<double>>(mask.begin(), mask.end());
    const int il = logits.id();
    return logits.graph().record(Tensor::scalar(total), {il}, [il, tg, mk](Graph& gr, const Matrix& up) {
        const Matrix& zv = gr.value(il).mat();
        Matrix gin = Matrix::Zero(zv.rows(), zv.cols());
        for (Index r = 0; r < zv.rows(); ++r) {
            const double m = (*mk)[static_cast<size_t>(r)];
            if (m == 0.0) continue;
            const double mx = zv.row(r).maxCoeff();
            Eigen::RowVectorXd p = (zv.row(r).array() - mx).exp();
            p /= p.sum();
            gin.row(r) = -m * up(0, 0) * p;
            gin(r, (*tg)[static_cast<size_t>(r)]) += m * up(0, 0);
        }
        gr.accumulate(il, gin);
    });
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check_report(const ScalarFn& f, const Tensor& x, double eps) {
    Graph g;
    Tensor leaf = x;
    leaf.requires_grad = true;
    Var xv = g.input(std::move(leaf));
    Var y = f(g, xv);
    g.backward(y);
    const Matrix analytic = g.grad(xv.id());

    auto eval = [&f](const Tensor& at) {
        Graph ng(false);
        return f(ng, ng.constant(at)).item();
    };

    GradCheckReport report;
    Tensor probe = x;
    for (Index i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        probe[i] = orig + eps;
        const double fp = eval(probe);
        probe[i] = orig - eps;
        const double fm = eval(probe);
        probe[i] = orig;
        const double a = analytic.data()[i];
        const double n = (fp - fm) / (2.0 * eps);
        if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(a)) {
            throw NumericalError("grad_check: non-finite value at coordinate " + std::to_string(i));
        }
        const double err = std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n));
        if (err > report.max_rel_error || report.worst_index < 0) {
            report = {std::max(err, report.max_rel_error), i, a, n};
        }
    }
    return report;
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) { return grad_check_report(f, x, eps).max_rel_error; }

}  // namespace moelab
