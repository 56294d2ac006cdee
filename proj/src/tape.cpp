#include "sidlab/tape.hpp"

#include "sidlab/net.hpp"

#include <cmath>
#include <string>

namespace sidlab {

Var Tape::constant(Mat value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Mat value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::stop_gradient(Var x) {
    Node n;
    n.value = value(x);
    n.stopped = true;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(const NetParams& owner, int tensor, bool trainable) {
    Node n;
    n.value = owner.tensors.at(static_cast<size_t>(tensor));
    n.requires_grad = trainable && owner.trainable.at(static_cast<size_t>(tensor));
    n.owner = &owner;
    n.tensor = tensor;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Mat value, std::vector<int> parents, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    for (int p : parents) n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(p)].requires_grad;
    if (n.requires_grad) {
        n.parents = std::move(parents);
        n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

double Tape::scalar(Var v) const {
    const Mat& m = value(v);
    if (m.size() != 1) throw UsageError("tape: scalar() on a non-scalar node");
    return m(0, 0);
}

bool Tape::is_stopped(Var v) const {
    const Node& n = nodes_.at(static_cast<size_t>(v.id));
    return n.stopped || !n.requires_grad;
}

Mat& Tape::grad_ref(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(Var loss) {
    if (swept_) throw UsageError("tape: backward() called twice on the same tape");
    const Node& l = nodes_.at(static_cast<size_t>(loss.id));
    if (l.value.size() != 1) throw UsageError("tape: loss must be a scalar");
    if (!std::isfinite(l.value(0, 0))) throw NumericError("tape: non-finite loss");
    swept_ = true;
    if (!l.requires_grad) return;
    grad_ref(loss.id)(0, 0) = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
        n.backward(*this, id);
    }
}

Mat Tape::grad(Var v) const {
    const Node& n = nodes_.at(static_cast<size_t>(v.id));
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

std::vector<Mat> Tape::param_grads(const NetParams& owner) const {
    std::vector<Mat> out;
    out.reserve(owner.tensors.size());
    for (const auto& t : owner.tensors) out.push_back(Mat::Zero(t.rows(), t.cols()));
    bool bound = false;
    for (const Node& n : nodes_) {
        if (n.owner != &owner) continue;
        bound = true;
        if (n.requires_grad && n.grad.size() != 0) out[static_cast<size_t>(n.tensor)] += n.grad;
    }
    if (!bound) throw UsageError("tape: gradient requested for a parameter set that is not in the recorded graph");
    return out;
}

namespace ops {

namespace {
void check_same_shape(const Mat& a, const Mat& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw UsageError(std::string("ops::") + what + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
}
}  // namespace

Var add(Tape& t, Var a, Var b) {
    check_same_shape(t.value(a), t.value(b), "add");
    int ia = a.id, ib = b.id;
    return t.record(t.value(a) + t.value(b), {ia, ib}, [ia, ib](Tape& tp, int self) {
        const Mat& g = tp.grad_ref(self);
        if (tp.requires_grad(ia)) tp.grad_ref(ia) += g;
        if (tp.requires_grad(ib)) tp.grad_ref(ib) += g;
    });
}

Var sub(Tape& t, Var a, Var b) {
    check_same_shape(t.value(a), t.value(b), "sub");
    int ia = a.id, ib = b.id;
    return t.record(t.value(a) - t.value(b), {ia, ib}, [ia, ib](Tape& tp, int self) {
        const Mat& g = tp.grad_ref(self);
        if (tp.requires_grad(ia)) tp.grad_ref(ia) += g;
        if (tp.requires_grad(ib)) tp.grad_ref(ib) -= g;
    });
}

Var scale(Tape& t, Var a, double s) {
    int ia = a.id;
    return t.record(t.value(a) * s, {ia}, [ia, s](Tape& tp, int self) { tp.grad_ref(ia) += tp.grad_ref(self) * s; });
}

Var scale_rows(Tape& t, Var a, const Vec& s) {
    const Mat& v = t.value(a);
    if (s.size() != v.rows()) throw UsageError("ops::scale_rows: row count mismatch");
    int ia = a.id;
    Mat out = s.asDiagonal() * v;
    return t.record(std::move(out), {ia}, [ia, s](Tape& tp, int self) {
        tp.grad_ref(ia) += s.asDiagonal() * tp.grad_ref(self);
    });
}

Var linear(Tape& t, Var x, Var w, Var b) {
    const Mat& xv = t.value(x);
    const Mat& wv = t.value(w);
    if (xv.cols() != wv.cols()) throw UsageError("ops::linear: input width does not match weight");
    Mat y = xv * wv.transpose();
    std::vector<int> parents{x.id, w.id};
    if (b.valid()) {
        const Mat& bv = t.value(b);
        if (bv.rows() != 1 || bv.cols() != wv.rows()) throw UsageError("ops::linear: bias shape mismatch");
        y.rowwise() += bv.row(0);
        parents.push_back(b.id);
    }
    int ix = x.id, iw = w.id, ib = b.id;
    return t.record(std::move(y), parents, [ix, iw, ib](Tape& tp, int self) {
        const Mat& g = tp.grad_ref(self);
        if (tp.requires_grad(ix)) tp.grad_ref(ix).noalias() += g * tp.value_of(iw);
        if (tp.requires_grad(iw)) tp.grad_ref(iw).noalias() += g.transpose() * tp.value_of(ix);
        if (ib >= 0 && tp.requires_grad(ib)) tp.grad_ref(ib) += g.colwise().sum();
    });
}

Var silu(Tape& t, Var x) {
    const Mat& xv = t.value(x);
    Mat sig = (1.0 + (-xv.array()).exp()).inverse().matrix();
    Mat y = xv.cwiseProduct(sig);
    int ix = x.id;
    return t.record(std::move(y), {ix}, [ix, sig](Tape& tp, int self) {
        const Mat& xv = tp.value_of(ix);
        Mat d = (sig.array() * (1.0 + xv.array() * (1.0 - sig.array()))).matrix();
        tp.grad_ref(ix) += tp.grad_ref(self).cwiseProduct(d);
    });
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
    if (parts.empty()) throw UsageError("ops::concat_cols: nothing to concatenate");
    Eigen::Index rows = t.value(parts[0]).rows(), cols = 0;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) throw UsageError("ops::concat_cols: row count mismatch");
        cols += t.value(p).cols();
    }
    Mat out(rows, cols);
    std::vector<int> ids;
    std::vector<Eigen::Index> offs;
    Eigen::Index c = 0;
    for (Var p : parts) {
        out.middleCols(c, t.value(p).cols()) = t.value(p);
        ids.push_back(p.id);
        offs.push_back(c);
        c += t.value(p).cols();
    }
    return t.record(std::move(out), ids, [ids, offs](Tape& tp, int self) {
        const Mat& g = tp.grad_ref(self);
        for (size_t k = 0; k < ids.size(); ++k) {
            if (!tp.requires_grad(ids[k])) continue;
            Mat& gk = tp.grad_ref(ids[k]);
            gk += g.middleCols(offs[k], gk.cols());
        }
    });
}

Var segment_mean(Tape& t, Var h, const Layout& layout) {
    const Mat& hv = t.value(h);
    if (hv.rows() != layout.rows()) throw UsageError("ops::segment_mean: rows do not match layout");
    Mat out(hv.rows(), hv.cols());
    const int L = layout.max_len;
    for (int s = 0; s < layout.batch; ++s) {
        const int n = layout.lengths[static_cast<size_t>(s)];
        Eigen::RowVectorXd m = hv.middleRows(s * L, n).colwise().sum() / static_cast<double>(n);
        out.middleRows(s * L, L).rowwise() = m;
    }
    int ih = h.id;
    std::vector<int> lengths = layout.lengths;
    return t.record(std::move(out), {ih}, [ih, lengths, L](Tape& tp, int self) {
        const Mat& g = tp.grad_ref(self);
        Mat& gh = tp.grad_ref(ih);
        for (size_t s = 0; s < lengths.size(); ++s) {
            const int n = lengths[s];
            const Eigen::Index base = static_cast<Eigen::Index>(s) * L;
            Eigen::RowVectorXd gs = g.middleRows(base, n).colwise().sum() / static_cast<double>(n);
            gh.middleRows(base, n).rowwise() += gs;
        }
    });
}

Var window_features(Tape& t, Var x, const Layout& layout, int w) {
    const Mat& xv = t.value(x);
    if (xv.rows() != layout.rows()) throw UsageError("ops::window_features: rows do not match layout");
    const Eigen::Index D = xv.cols();
    const int L = layout.max_len;
    const int width = 2 * w + 1;
    Mat out = Mat::Zero(xv.rows(), width * D);
    // neighbour row for (row, slot) or -1
    std::vector<int> nb(static_cast<size_t>(xv.rows() * (width - 1)), -1);
    for (int s = 0; s < layout.batch; ++s) {
        const int n = layout.lengths[static_cast<size_t>(s)];
        for (int i = 0; i < n; ++i) {
            const int r = s * L + i;
            out.block(r, 0, 1, D) = xv.row(r);
            int slot = 0;
            for (int o = -w; o <= w; ++o) {
                if (o == 0) continue;
                const int j = i + o;
                if (j >= 0 && j < n) {
                    nb[static_cast<size_t>(r * (width - 1) + slot)] = s * L + j;
                    out.block(r, (slot + 1) * D, 1, D) = xv.row(s * L + j) - xv.row(r);
                }
                ++slot;
            }
        }
    }
    int ix = x.id;
    return t.record(std::move(out), {ix}, [ix, nb, width, D](Tape& tp, int self) {
        const Mat& g = tp.grad_ref(self);
        Mat& gx = tp.grad_ref(ix);
        gx += g.leftCols(D);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            for (int slot = 0; slot < width - 1; ++slot) {
                const int j = nb[static_cast<size_t>(r * (width - 1) + slot)];
                if (j < 0) continue;
                auto gs = g.block(r, (slot + 1) * D, 1, D);
                gx.row(j) += gs;
                gx.row(r) -= gs;
            }
        }
    });
}

Var gather_rows(Tape& t, Var table, const std::vector<int>& idx) {
    const Mat& tv = t.value(table);
    Mat out = Mat::Zero(static_cast<Eigen::Index>(idx.size()), tv.cols());
    for (size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0) continue;
        if (idx[r] >= tv.rows()) throw UsageError("ops::gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(r)) = tv.row(idx[r]);
    }
    int it = table.id;
    return t.record(std::move(out), {it}, [it, idx](Tape& tp, int self) {
        const Mat& g = tp.grad_ref(self);
        Mat& gt = tp.grad_ref(it);
        for (size_t r = 0; r < idx.size(); ++r)
            if (idx[r] >= 0) gt.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    });
}

Var weighted_sq_norm(Tape& t, Var x, const Vec& row_w) {
    const Mat& xv = t.value(x);
    if (row_w.size() != xv.rows()) throw UsageError("ops::weighted_sq_norm: weight count mismatch");
    Mat out(1, 1);
    out(0, 0) = row_w.dot(xv.rowwise().squaredNorm());
    int ix = x.id;
    return t.record(std::move(out), {ix}, [ix, row_w](Tape& tp, int self) {
        const double g = tp.grad_ref(self)(0, 0);
        tp.grad_ref(ix) += (2.0 * g) * (row_w.asDiagonal() * tp.value_of(ix));
    });
}

Var weighted_dot(Tape& t, Var a, Var b, const Vec& row_w) {
    const Mat& av = t.value(a);
    const Mat& bv = t.value(b);
    check_same_shape(av, bv, "weighted_dot");
    if (row_w.size() != av.rows()) throw UsageError("ops::weighted_dot: weight count mismatch");
    Mat out(1, 1);
    out(0, 0) = row_w.dot(av.cwiseProduct(bv).rowwise().sum());
    int ia = a.id, ib = b.id;
    return t.record(std::move(out), {ia, ib}, [ia, ib, row_w](Tape& tp, int self) {
        const double g = tp.grad_ref(self)(0, 0);
        if (tp.requires_grad(ia)) tp.grad_ref(ia) += g * (row_w.asDiagonal() * tp.value_of(ib));
        if (tp.requires_grad(ib)) tp.grad_ref(ib) += g * (row_w.asDiagonal() * tp.value_of(ia));
    });
}

Var sum(Tape& t, Var x) {
    Mat out(1, 1);
    out(0, 0) = t.value(x).sum();
    int ix = x.id;
    return t.record(std::move(out), {ix}, [ix](Tape& tp, int self) {
        tp.grad_ref(ix).array() += tp.grad_ref(self)(0, 0);
    });
}

}  // namespace ops

}  // namespace sidlab
