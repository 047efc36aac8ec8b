#include "appt/tape.hpp"

#include <algorithm>
#include <cmath>

namespace appt {

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
    if (!a.valid() || !b.valid()) throw ContractError(std::string(op) + ": undefined operand");
    if (a.tape != b.tape) throw ContractError(std::string(op) + ": operands live on different tapes");
    return *a.tape;
}

Tape& own_tape(Var a, const char* op) {
    if (!a.valid()) throw ContractError(std::string(op) + ": undefined operand");
    return *a.tape;
}

constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / M_PI);

} // namespace

int Tape::push(Tensor value, bool requires_grad, bool is_leaf, const char* op) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.leaf = is_leaf;
    n.op = op;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node_at(Var v) const {
    if (!v.valid() || v.tape != this || v.id >= node_count()) {
        throw ContractError("variable does not belong to this tape");
    }
    return nodes_[static_cast<size_t>(v.id)];
}

Var Tape::leaf(const Tensor& t) {
    if (!t.defined()) throw ContractError("leaf: undefined tensor");
    return {this, push(t, t.requires_grad(), true, "leaf")};
}

Var Tape::constant(Tensor t) {
    if (!t.defined()) throw ContractError("constant: undefined tensor");
    t.set_requires_grad(false);
    return {this, push(std::move(t), false, true, "constant")};
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = node_at(v);
    if (!n.grad.defined()) throw ContractError("no gradient recorded for this node");
    return n.grad;
}

Tensor& Tape::grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad.defined()) n.grad = Tensor::zeros(n.value.shape());
    return n.grad;
}

void Tape::backward(Var loss) {
    const Node& ln = node_at(loss);
    if (ln.value.size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_str(ln.value.shape()));
    }
    if (!ln.requires_grad) return; // nothing trainable feeds the loss
    grad_buffer(loss.id).data()[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.grad.defined() && n.backprop) {
            n.backprop(*this);
            ++backprop_calls_;
        }
    }
}

// ---------------------------------------------------------------------------
// op helpers

namespace {

struct OpOut {
    Tape& tape;
    int id;
    Var var() const { return {&tape, id}; }
};

OpOut emit(Tape& t, Tensor value, bool requires_grad, const char* op) {
    value.check_finite(op);
    int id = t.push(std::move(value), requires_grad, false, op);
    return {t, id};
}

void add_rows_into(Tensor& dst, const Tensor& g) {
    // dst [1,n] += column sums of g [m,n]
    const int m = g.rows(), n = g.cols();
    double* d = dst.data();
    const double* p = g.data();
    for (int i = 0; i < m; ++i) {
        const double* row = p + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) d[j] += row[j];
    }
}

} // namespace

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b, "matmul");
    Tensor out = matmul_nn(t.value(a), t.value(b));
    bool rg = t.needs_grad(a) || t.needs_grad(b);
    OpOut o = emit(t, std::move(out), rg, "matmul");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, b, id](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            if (tp.needs_grad(a)) gemm_nt(tp.grad_buffer(a.id), g, tp.value(b), true);
            if (tp.needs_grad(b)) gemm_tn(tp.grad_buffer(b.id), tp.value(a), g, true);
        };
    }
    return o.var();
}

Var matmul_nt(Var a, Var b) {
    Tape& t = same_tape(a, b, "matmul_nt");
    Tensor out;
    gemm_nt(out, t.value(a), t.value(b), false);
    bool rg = t.needs_grad(a) || t.needs_grad(b);
    OpOut o = emit(t, std::move(out), rg, "matmul_nt");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, b, id](Tape& tp) {
            const Tensor& g = tp.node(id).grad; // [m,n], out = A B^T with B [n,k]
            if (tp.needs_grad(a)) gemm_nn(tp.grad_buffer(a.id), g, tp.value(b), true);
            if (tp.needs_grad(b)) gemm_tn(tp.grad_buffer(b.id), g, tp.value(a), true);
        };
    }
    return o.var();
}

namespace {

enum class AddMode { Elementwise, BroadcastRow };

AddMode add_mode(const Tensor& av, const Tensor& bv, const char* op) {
    if (av.same_shape(bv)) return AddMode::Elementwise;
    if (av.ndim() == 2 && bv.ndim() == 2 && bv.rows() == 1 && bv.cols() == av.cols()) {
        return AddMode::BroadcastRow;
    }
    throw ContractError(std::string(op) + ": incompatible shapes " + shape_str(av.shape()) +
                        " and " + shape_str(bv.shape()));
}

Var add_like(Var a, Var b, double b_sign, const char* opname) {
    Tape& t = same_tape(a, b, opname);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    AddMode mode = add_mode(av, bv, opname);
    Tensor out(av.shape());
    const double* pa = av.data();
    const double* pb = bv.data();
    double* po = out.data();
    if (mode == AddMode::Elementwise) {
        for (int64_t i = 0; i < av.size(); ++i) po[i] = pa[i] + b_sign * pb[i];
    } else {
        const int m = av.rows(), n = av.cols();
        for (int i = 0; i < m; ++i) {
            const double* arow = pa + static_cast<int64_t>(i) * n;
            double* orow = po + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) orow[j] = arow[j] + b_sign * pb[j];
        }
    }
    bool rg = t.needs_grad(a) || t.needs_grad(b);
    OpOut o = emit(t, std::move(out), rg, opname);
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, b, id, mode, b_sign](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            if (tp.needs_grad(a)) {
                Tensor& da = tp.grad_buffer(a.id);
                double* d = da.data();
                const double* p = g.data();
                for (int64_t i = 0; i < g.size(); ++i) d[i] += p[i];
            }
            if (tp.needs_grad(b)) {
                Tensor& db = tp.grad_buffer(b.id);
                if (mode == AddMode::Elementwise) {
                    double* d = db.data();
                    const double* p = g.data();
                    for (int64_t i = 0; i < g.size(); ++i) d[i] += b_sign * p[i];
                } else {
                    Tensor colsum({1, g.cols()});
                    add_rows_into(colsum, g);
                    double* d = db.data();
                    const double* p = colsum.data();
                    for (int64_t i = 0; i < colsum.size(); ++i) d[i] += b_sign * p[i];
                }
            }
        };
    }
    return o.var();
}

} // namespace

Var add(Var a, Var b) { return add_like(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_like(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
    Tape& t = same_tape(a, b, "mul");
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.same_shape(bv)) {
        throw ContractError("mul: incompatible shapes " + shape_str(av.shape()) + " and " +
                            shape_str(bv.shape()));
    }
    Tensor out(av.shape());
    const double* pa = av.data();
    const double* pb = bv.data();
    double* po = out.data();
    for (int64_t i = 0; i < av.size(); ++i) po[i] = pa[i] * pb[i];
    bool rg = t.needs_grad(a) || t.needs_grad(b);
    OpOut o = emit(t, std::move(out), rg, "mul");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, b, id](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            const double* p = g.data();
            if (tp.needs_grad(a)) {
                double* d = tp.grad_buffer(a.id).data();
                const double* other = tp.value(b).data();
                for (int64_t i = 0; i < g.size(); ++i) d[i] += p[i] * other[i];
            }
            if (tp.needs_grad(b)) {
                double* d = tp.grad_buffer(b.id).data();
                const double* other = tp.value(a).data();
                for (int64_t i = 0; i < g.size(); ++i) d[i] += p[i] * other[i];
            }
        };
    }
    return o.var();
}

Var scale(Var a, double s) {
    Tape& t = own_tape(a, "scale");
    const Tensor& av = t.value(a);
    Tensor out(av.shape());
    const double* pa = av.data();
    double* po = out.data();
    for (int64_t i = 0; i < av.size(); ++i) po[i] = s * pa[i];
    bool rg = t.needs_grad(a);
    OpOut o = emit(t, std::move(out), rg, "scale");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, id, s](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            double* d = tp.grad_buffer(a.id).data();
            const double* p = g.data();
            for (int64_t i = 0; i < g.size(); ++i) d[i] += s * p[i];
        };
    }
    return o.var();
}

Var scale_by(Var a, Var s) {
    Tape& t = same_tape(a, s, "scale_by");
    const Tensor& sv = t.value(s);
    if (sv.size() != 1) {
        throw ContractError("scale_by: scale must be a single value, got " + shape_str(sv.shape()));
    }
    const Tensor& av = t.value(a);
    const double sval = sv.data()[0];
    Tensor out(av.shape());
    const double* pa = av.data();
    double* po = out.data();
    for (int64_t i = 0; i < av.size(); ++i) po[i] = sval * pa[i];
    bool rg = t.needs_grad(a) || t.needs_grad(s);
    OpOut o = emit(t, std::move(out), rg, "scale_by");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, s, id](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            const double* p = g.data();
            if (tp.needs_grad(a)) {
                const double sval = tp.value(s).data()[0];
                double* d = tp.grad_buffer(a.id).data();
                for (int64_t i = 0; i < g.size(); ++i) d[i] += sval * p[i];
            }
            if (tp.needs_grad(s)) {
                const double* pa = tp.value(a).data();
                double acc = 0.0;
                for (int64_t i = 0; i < g.size(); ++i) acc += pa[i] * p[i];
                tp.grad_buffer(s.id).data()[0] += acc;
            }
        };
    }
    return o.var();
}

Var gelu(Var a) {
    Tape& t = own_tape(a, "gelu");
    const Tensor& av = t.value(a);
    Tensor out(av.shape());
    const double* pa = av.data();
    double* po = out.data();
    for (int64_t i = 0; i < av.size(); ++i) {
        double x = pa[i];
        double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
        po[i] = 0.5 * x * (1.0 + std::tanh(u));
    }
    bool rg = t.needs_grad(a);
    OpOut o = emit(t, std::move(out), rg, "gelu");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, id](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            const double* p = g.data();
            const double* pa = tp.value(a).data();
            double* d = tp.grad_buffer(a.id).data();
            for (int64_t i = 0; i < g.size(); ++i) {
                double x = pa[i];
                double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
                double th = std::tanh(u);
                double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
                double dydx = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
                d[i] += p[i] * dydx;
            }
        };
    }
    return o.var();
}

Var softmax_rows(Var a) {
    Tape& t = own_tape(a, "softmax");
    const Tensor& av = t.value(a);
    const int m = av.rows(), n = av.cols();
    Tensor out(av.shape());
    const double* pa = av.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i) {
        const double* row = pa + static_cast<int64_t>(i) * n;
        double* orow = po + static_cast<int64_t>(i) * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        double inv = 1.0 / sum;
        for (int j = 0; j < n; ++j) orow[j] *= inv;
    }
    bool rg = t.needs_grad(a);
    OpOut o = emit(t, std::move(out), rg, "softmax");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, id](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            const Tensor& y = tp.node(id).value;
            const int m = y.rows(), n = y.cols();
            double* d = tp.grad_buffer(a.id).data();
            const double* pg = g.data();
            const double* py = y.data();
            for (int i = 0; i < m; ++i) {
                const int64_t off = static_cast<int64_t>(i) * n;
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += pg[off + j] * py[off + j];
                for (int j = 0; j < n; ++j) d[off + j] += py[off + j] * (pg[off + j] - dot);
            }
        };
    }
    return o.var();
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    Tape& t = same_tape(x, gamma, "layer_norm");
    same_tape(gamma, beta, "layer_norm");
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gamma);
    const Tensor& bv = t.value(beta);
    const int m = xv.rows(), n = xv.cols();
    if (gv.size() != n || bv.size() != n) {
        throw ContractError("layer_norm: gamma/beta width must be " + std::to_string(n));
    }
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    Tensor inv_std({m, 1});
    const double* px = xv.data();
    const double* pgm = gv.data();
    const double* pbt = bv.data();
    double* po = out.data();
    double* ph = xhat.data();
    double* pis = inv_std.data();
    for (int i = 0; i < m; ++i) {
        const int64_t off = static_cast<int64_t>(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += px[off + j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            double c = px[off + j] - mean;
            var += c * c;
        }
        var /= n; // population variance
        double is = 1.0 / std::sqrt(var + eps);
        pis[i] = is;
        for (int j = 0; j < n; ++j) {
            double h = (px[off + j] - mean) * is;
            ph[off + j] = h;
            po[off + j] = pgm[j] * h + pbt[j];
        }
    }
    bool rg = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
    OpOut o = emit(t, std::move(out), rg, "layer_norm");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [x, gamma, beta, id, xhat, inv_std](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            const int m = g.rows(), n = g.cols();
            const double* pg = g.data();
            const double* ph = xhat.data();
            const double* pis = inv_std.data();
            if (tp.needs_grad(gamma)) {
                double* d = tp.grad_buffer(gamma.id).data();
                for (int i = 0; i < m; ++i) {
                    const int64_t off = static_cast<int64_t>(i) * n;
                    for (int j = 0; j < n; ++j) d[j] += pg[off + j] * ph[off + j];
                }
            }
            if (tp.needs_grad(beta)) {
                double* d = tp.grad_buffer(beta.id).data();
                for (int i = 0; i < m; ++i) {
                    const int64_t off = static_cast<int64_t>(i) * n;
                    for (int j = 0; j < n; ++j) d[j] += pg[off + j];
                }
            }
            if (tp.needs_grad(x)) {
                const double* pgm = tp.value(gamma).data();
                double* d = tp.grad_buffer(x.id).data();
                for (int i = 0; i < m; ++i) {
                    const int64_t off = static_cast<int64_t>(i) * n;
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (int j = 0; j < n; ++j) {
                        double dh = pg[off + j] * pgm[j];
                        mean_dh += dh;
                        mean_dh_h += dh * ph[off + j];
                    }
                    mean_dh /= n;
                    mean_dh_h /= n;
                    for (int j = 0; j < n; ++j) {
                        double dh = pg[off + j] * pgm[j];
                        d[off + j] += pis[i] * (dh - mean_dh - ph[off + j] * mean_dh_h);
                    }
                }
            }
        };
    }
    return o.var();
}

Var slice_rows(Var a, int start, int count) {
    Tape& t = own_tape(a, "slice_rows");
    const Tensor& av = t.value(a);
    const int m = av.rows(), n = av.cols();
    if (start < 0 || count < 1 || start + count > m) {
        throw ContractError("slice_rows: range [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") out of bounds for " +
                            shape_str(av.shape()));
    }
    Tensor out({count, n});
    std::copy_n(av.data() + static_cast<int64_t>(start) * n, static_cast<int64_t>(count) * n,
                out.data());
    bool rg = t.needs_grad(a);
    OpOut o = emit(t, std::move(out), rg, "slice_rows");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, id, start, count, n](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            double* d = tp.grad_buffer(a.id).data() + static_cast<int64_t>(start) * n;
            const double* p = g.data();
            for (int64_t i = 0; i < static_cast<int64_t>(count) * n; ++i) d[i] += p[i];
        };
    }
    return o.var();
}

Var slice_cols(Var a, int start, int count) {
    Tape& t = own_tape(a, "slice_cols");
    const Tensor& av = t.value(a);
    const int m = av.rows(), n = av.cols();
    if (start < 0 || count < 1 || start + count > n) {
        throw ContractError("slice_cols: range [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") out of bounds for " +
                            shape_str(av.shape()));
    }
    Tensor out({m, count});
    const double* pa = av.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i) {
        std::copy_n(pa + static_cast<int64_t>(i) * n + start, count,
                    po + static_cast<int64_t>(i) * count);
    }
    bool rg = t.needs_grad(a);
    OpOut o = emit(t, std::move(out), rg, "slice_cols");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, id, start, count, m, n](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            double* d = tp.grad_buffer(a.id).data();
            const double* p = g.data();
            for (int i = 0; i < m; ++i) {
                double* drow = d + static_cast<int64_t>(i) * n + start;
                const double* prow = p + static_cast<int64_t>(i) * count;
                for (int j = 0; j < count; ++j) drow[j] += prow[j];
            }
        };
    }
    return o.var();
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    Tape& t = own_tape(parts[0], "concat_rows");
    int n = t.value(parts[0]).cols();
    int m = 0;
    bool rg = false;
    for (Var p : parts) {
        same_tape(parts[0], p, "concat_rows");
        const Tensor& v = t.value(p);
        if (v.cols() != n) {
            throw ContractError("concat_rows: widths differ, " + std::to_string(n) + " vs " +
                                std::to_string(v.cols()));
        }
        m += v.rows();
        rg = rg || t.needs_grad(p);
    }
    Tensor out({m, n});
    double* po = out.data();
    for (Var p : parts) {
        const Tensor& v = t.value(p);
        std::copy_n(v.data(), v.size(), po);
        po += v.size();
    }
    OpOut o = emit(t, std::move(out), rg, "concat_rows");
    if (rg) {
        int id = o.id;
        std::vector<Var> ins = parts;
        t.node(id).backprop = [ins, id](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            const double* p = g.data();
            for (Var in : ins) {
                int64_t sz = tp.value(in).size();
                if (tp.needs_grad(in)) {
                    double* d = tp.grad_buffer(in.id).data();
                    for (int64_t i = 0; i < sz; ++i) d[i] += p[i];
                }
                p += sz;
            }
        };
    }
    return o.var();
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    Tape& t = own_tape(parts[0], "concat_cols");
    int m = t.value(parts[0]).rows();
    int n = 0;
    bool rg = false;
    for (Var p : parts) {
        same_tape(parts[0], p, "concat_cols");
        const Tensor& v = t.value(p);
        if (v.rows() != m) {
            throw ContractError("concat_cols: row counts differ, " + std::to_string(m) + " vs " +
                                std::to_string(v.rows()));
        }
        n += v.cols();
        rg = rg || t.needs_grad(p);
    }
    Tensor out({m, n});
    double* po = out.data();
    int col = 0;
    for (Var p : parts) {
        const Tensor& v = t.value(p);
        const int w = v.cols();
        for (int i = 0; i < m; ++i) {
            std::copy_n(v.data() + static_cast<int64_t>(i) * w, w,
                        po + static_cast<int64_t>(i) * n + col);
        }
        col += w;
    }
    OpOut o = emit(t, std::move(out), rg, "concat_cols");
    if (rg) {
        int id = o.id;
        std::vector<Var> ins = parts;
        t.node(id).backprop = [ins, id, m, n](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            const double* p = g.data();
            int col = 0;
            for (Var in : ins) {
                const int w = tp.value(in).cols();
                if (tp.needs_grad(in)) {
                    double* d = tp.grad_buffer(in.id).data();
                    for (int i = 0; i < m; ++i) {
                        const double* prow = p + static_cast<int64_t>(i) * n + col;
                        double* drow = d + static_cast<int64_t>(i) * w;
                        for (int j = 0; j < w; ++j) drow[j] += prow[j];
                    }
                }
                col += w;
            }
        };
    }
    return o.var();
}

Var mean_rows(Var a) {
    Tape& t = own_tape(a, "mean_rows");
    const Tensor& av = t.value(a);
    const int m = av.rows(), n = av.cols();
    Tensor out({1, n});
    add_rows_into(out, av);
    double* po = out.data();
    for (int j = 0; j < n; ++j) po[j] /= m;
    bool rg = t.needs_grad(a);
    OpOut o = emit(t, std::move(out), rg, "mean_rows");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, id, m, n](Tape& tp) {
            const Tensor& g = tp.node(id).grad;
            double* d = tp.grad_buffer(a.id).data();
            const double* p = g.data();
            const double inv = 1.0 / m;
            for (int i = 0; i < m; ++i) {
                double* drow = d + static_cast<int64_t>(i) * n;
                for (int j = 0; j < n; ++j) drow[j] += p[j] * inv;
            }
        };
    }
    return o.var();
}

namespace {

// Shared by max_rows (one group) and group_max_pool: per-column max over each
// consecutive block of `group` rows, ties resolved to the smallest row index.
OpOut block_max(Tape& t, Var a, int group, const char* opname) {
    const Tensor& av = t.value(a);
    const int m = av.rows(), n = av.cols();
    if (group < 1 || m % group != 0) {
        throw ContractError(std::string(opname) + ": row count " + std::to_string(m) +
                            " not divisible by group size " + std::to_string(group));
    }
    const int g = m / group;
    Tensor out({g, n});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(g) * n);
    const double* pa = av.data();
    double* po = out.data();
    int* parg = argmax->data();
    for (int b = 0; b < g; ++b) {
        const int64_t base = static_cast<int64_t>(b) * group * n;
        double* orow = po + static_cast<int64_t>(b) * n;
        int* arow = parg + static_cast<int64_t>(b) * n;
        std::copy_n(pa + base, n, orow);
        std::fill_n(arow, n, 0);
        for (int r = 1; r < group; ++r) {
            const double* row = pa + base + static_cast<int64_t>(r) * n;
            for (int j = 0; j < n; ++j) {
                if (row[j] > orow[j]) { // strict: ties keep the earlier row
                    orow[j] = row[j];
                    arow[j] = r;
                }
            }
        }
    }
    bool rg = t.needs_grad(a);
    OpOut o = emit(t, std::move(out), rg, opname);
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, id, group, g, n, argmax](Tape& tp) {
            const Tensor& grad = tp.node(id).grad;
            double* d = tp.grad_buffer(a.id).data();
            const double* p = grad.data();
            const int* parg = argmax->data();
            for (int b = 0; b < g; ++b) {
                const int64_t obase = static_cast<int64_t>(b) * n;
                const int64_t ibase = static_cast<int64_t>(b) * group * n;
                for (int j = 0; j < n; ++j) {
                    d[ibase + static_cast<int64_t>(parg[obase + j]) * n + j] += p[obase + j];
                }
            }
        };
    }
    return o;
}

} // namespace

Var max_rows(Var a) {
    Tape& t = own_tape(a, "max_rows");
    return block_max(t, a, t.value(a).rows(), "max_rows").var();
}

Var group_max_pool(Var a, int group_size) {
    Tape& t = own_tape(a, "group_max_pool");
    return block_max(t, a, group_size, "group_max_pool").var();
}

Var group_concat(Var per_point, Var per_group, int group_size) {
    Tape& t = same_tape(per_point, per_group, "group_concat");
    const Tensor& pp = t.value(per_point);
    const Tensor& pg = t.value(per_group);
    const int m = pp.rows(), w1 = pp.cols(), g = pg.rows(), w2 = pg.cols();
    if (group_size < 1 || m != g * group_size) {
        throw ContractError("group_concat: " + std::to_string(m) + " rows vs " +
                            std::to_string(g) + " groups of " + std::to_string(group_size));
    }
    Tensor out({m, w1 + w2});
    const double* a = pp.data();
    const double* b = pg.data();
    double* po = out.data();
    for (int i = 0; i < m; ++i) {
        double* orow = po + static_cast<int64_t>(i) * (w1 + w2);
        std::copy_n(a + static_cast<int64_t>(i) * w1, w1, orow);
        std::copy_n(b + static_cast<int64_t>(i / group_size) * w2, w2, orow + w1);
    }
    bool rg = t.needs_grad(per_point) || t.needs_grad(per_group);
    OpOut o = emit(t, std::move(out), rg, "group_concat");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [per_point, per_group, id, group_size, m, w1, w2](Tape& tp) {
            const Tensor& grad = tp.node(id).grad;
            const double* p = grad.data();
            const int w = w1 + w2;
            if (tp.needs_grad(per_point)) {
                double* d = tp.grad_buffer(per_point.id).data();
                for (int i = 0; i < m; ++i) {
                    const double* prow = p + static_cast<int64_t>(i) * w;
                    double* drow = d + static_cast<int64_t>(i) * w1;
                    for (int j = 0; j < w1; ++j) drow[j] += prow[j];
                }
            }
            if (tp.needs_grad(per_group)) {
                double* d = tp.grad_buffer(per_group.id).data();
                for (int i = 0; i < m; ++i) {
                    const double* prow = p + static_cast<int64_t>(i) * w + w1;
                    double* drow = d + static_cast<int64_t>(i / group_size) * w2;
                    for (int j = 0; j < w2; ++j) drow[j] += prow[j];
                }
            }
        };
    }
    return o.var();
}

Var sum_all(Var a) {
    Tape& t = own_tape(a, "sum_all");
    const Tensor& av = t.value(a);
    double acc = 0.0;
    const double* pa = av.data();
    for (int64_t i = 0; i < av.size(); ++i) acc += pa[i];
    bool rg = t.needs_grad(a);
    OpOut o = emit(t, Tensor::scalar(acc), rg, "sum_all");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [a, id](Tape& tp) {
            const double g = tp.node(id).grad.data()[0];
            Tensor& da = tp.grad_buffer(a.id);
            double* d = da.data();
            for (int64_t i = 0; i < da.size(); ++i) d[i] += g;
        };
    }
    return o.var();
}

Var cross_entropy_logits(Var logits, int label) {
    Tape& t = own_tape(logits, "cross_entropy");
    const Tensor& lv = t.value(logits);
    if (lv.rows() != 1) throw ContractError("cross_entropy: logits must be a single row");
    const int c = lv.cols();
    if (label < 0 || label >= c) {
        throw ContractError("cross_entropy: label " + std::to_string(label) +
                            " out of range for " + std::to_string(c) + " classes");
    }
    const double* p = lv.data();
    double mx = p[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, p[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(p[j] - mx);
    double loss = std::log(sum) + mx - p[label];
    bool rg = t.needs_grad(logits);
    OpOut o = emit(t, Tensor::scalar(loss), rg, "cross_entropy");
    if (rg) {
        int id = o.id;
        t.node(id).backprop = [logits, id, label](Tape& tp) {
            const double g = tp.node(id).grad.data()[0];
            const Tensor& lv = tp.value(logits);
            const int c = lv.cols();
            const double* p = lv.data();
            double mx = p[0];
            for (int j = 1; j < c; ++j) mx = std::max(mx, p[j]);
            double sum = 0.0;
            for (int j = 0; j < c; ++j) sum += std::exp(p[j] - mx);
            double* d = tp.grad_buffer(logits.id).data();
            for (int j = 0; j < c; ++j) {
                double soft = std::exp(p[j] - mx) / sum;
                d[j] += g * (soft - (j == label ? 1.0 : 0.0));
            }
        };
    }
    return o.var();
}

} // namespace appt
