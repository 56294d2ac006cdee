#pragma once

#include "sidlab/batch.hpp"
#include "sidlab/common.hpp"

#include <functional>
#include <vector>

namespace sidlab {

struct NetParams;

// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode recorder. Nodes are appended in evaluation order, so a reverse
// sweep over ids is a valid topological order. A node requires a gradient iff
// one of its parents does; constants, frozen parameters and stop_gradient
// outputs never do, which is what makes stop-gradient zeros exact.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    Var constant(Mat value);
    // Differentiable leaf that is not a parameter (e.g. an input whose gradient is inspected).
    Var input(Mat value);
    Var stop_gradient(Var x);
    Var param(const NetParams& owner, int tensor, bool trainable);
    Var record(Mat value, std::vector<int> parents, BackwardFn fn);

    const Mat& value(Var v) const { return nodes_.at(static_cast<size_t>(v.id)).value; }
    double scalar(Var v) const;
    bool requires_grad(Var v) const { return nodes_.at(static_cast<size_t>(v.id)).requires_grad; }
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    // True when the value cannot carry a gradient back to its producers.
    bool is_stopped(Var v) const;

    void backward(Var loss);

    // Accumulated gradient of a node (zeros if nothing flowed into it).
    Mat grad(Var v) const;
    // Gradients for every tensor of `owner`; frozen bindings contribute exact zeros.
    // Throws UsageError if `owner` was never bound on this tape.
    std::vector<Mat> param_grads(const NetParams& owner) const;

    // For backward functions.
    Mat& grad_ref(int id);
    const Mat& value_of(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        bool stopped = false;
        std::vector<int> parents;
        BackwardFn backward;
        const NetParams* owner = nullptr;
        int tensor = -1;
    };
    std::vector<Node> nodes_;
    bool swept_ = false;
};

namespace ops {

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
// row r multiplied by s[r]
Var scale_rows(Tape& t, Var a, const Vec& s);
// Y = X W^T (+ b)
Var linear(Tape& t, Var x, Var w, Var b = {});
Var silu(Tape& t, Var x);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
// Per-structure masked mean of the rows, broadcast back to every row of the structure.
Var segment_mean(Tape& t, Var h, const Layout& layout);
// [x_i, x_{i+o} - x_i for o in -w..w, o != 0]; neighbours outside the chain read as zero.
Var window_features(Tape& t, Var x, const Layout& layout, int w);
// Row r receives table row idx[r]; idx < 0 gives a zero row.
Var gather_rows(Tape& t, Var table, const std::vector<int>& idx);
// sum_r w_r |x_r|^2  -> 1x1
Var weighted_sq_norm(Tape& t, Var x, const Vec& row_w);
// sum_r w_r <a_r, b_r>  -> 1x1
Var weighted_dot(Tape& t, Var a, Var b, const Vec& row_w);
Var sum(Tape& t, Var x);

}  // namespace ops

}  // namespace sidlab
