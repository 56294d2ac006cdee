#include "sidlab/net.hpp"

#include <cmath>
#include <numbers>

namespace sidlab {

int ArchSpec::input_width() const {
    return (2 * window + 1) * dim + (position ? 3 : 0) + (1 + 2 * fourier) + (num_labels > 0 ? label_dim : 0);
}

std::string ArchSpec::tag() const {
    return "mlp:D" + std::to_string(dim) + ":w" + std::to_string(window) + ":h" + std::to_string(hidden) + "x" +
           std::to_string(depth) + ":F" + std::to_string(fourier) + ":L" + std::to_string(num_labels) + "x" +
           std::to_string(label_dim) + ":ctx" + std::to_string(context) + ":pos" + std::to_string(position);
}

nlohmann::json ArchSpec::to_json() const {
    return {{"dim", dim},         {"window", window},         {"hidden", hidden},   {"depth", depth},
            {"fourier", fourier}, {"num_labels", num_labels}, {"label_dim", label_dim},
            {"context", context}, {"position", position}};
}

ArchSpec ArchSpec::from_json(const nlohmann::json& j) {
    ArchSpec a;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "dim") a.dim = it->get<int>();
        else if (k == "window") a.window = it->get<int>();
        else if (k == "hidden") a.hidden = it->get<int>();
        else if (k == "depth") a.depth = it->get<int>();
        else if (k == "fourier") a.fourier = it->get<int>();
        else if (k == "num_labels") a.num_labels = it->get<int>();
        else if (k == "label_dim") a.label_dim = it->get<int>();
        else if (k == "context") a.context = it->get<bool>();
        else if (k == "position") a.position = it->get<bool>();
        else throw ConfigError("arch: unknown key '" + k + "'");
    }
    if (a.dim < 1 || a.window < 0 || a.hidden < 1 || a.depth < 1 || a.fourier < 0 || a.num_labels < 0 ||
        a.label_dim < 1)
        throw ConfigError("arch: invalid descriptor " + a.tag());
    return a;
}

int NetParams::index_of(const std::string& name) const {
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

Eigen::Index NetParams::count() const {
    Eigen::Index n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

Eigen::Index NetParams::trainable_count() const {
    Eigen::Index n = 0;
    for (size_t i = 0; i < tensors.size(); ++i)
        if (trainable[i]) n += tensors[i].size();
    return n;
}

bool NetParams::finite() const {
    for (const auto& t : tensors)
        if (!t.allFinite()) return false;
    return true;
}

uint64_t NetParams::fingerprint() const {
    uint64_t h = fnv1a64(arch.tag());
    for (const auto& t : tensors) h = hash_mat(t, h);
    return h;
}

Vec NetParams::flatten() const {
    Vec v(count());
    Eigen::Index o = 0;
    for (const auto& t : tensors) {
        v.segment(o, t.size()) = Eigen::Map<const Vec>(t.data(), t.size());
        o += t.size();
    }
    return v;
}

void NetParams::unflatten(const Vec& v) {
    if (v.size() != count()) throw UsageError("net: unflatten size mismatch");
    Eigen::Index o = 0;
    for (auto& t : tensors) {
        Eigen::Map<Vec>(t.data(), t.size()) = v.segment(o, t.size());
        o += t.size();
    }
}

namespace {

int layer_input(const ArchSpec& a, int l) {
    if (l == 0) return a.input_width();
    return a.hidden + ((a.context && l <= 2) ? a.hidden : 0);
}

NetParams skeleton(const ArchSpec& a) {
    NetParams p;
    p.arch = a;
    auto add = [&](std::string n, Mat m, bool tr) {
        p.names.push_back(std::move(n));
        p.tensors.push_back(std::move(m));
        p.trainable.push_back(tr);
    };
    Mat freq(1, std::max(a.fourier, 1));
    for (int j = 0; j < a.fourier; ++j) freq(0, j) = 0.5 * std::pow(2.0, j);
    if (a.fourier == 0) freq(0, 0) = 0.0;
    add("time_freq", freq, false);
    if (a.num_labels > 0) add("label_embed", Mat::Zero(a.num_labels, a.label_dim), true);
    for (int l = 0; l < a.depth; ++l) {
        add("W" + std::to_string(l), Mat::Zero(a.hidden, layer_input(a, l)), true);
        add("b" + std::to_string(l), Mat::Zero(1, a.hidden), true);
    }
    add("W_out", Mat::Zero(a.dim, a.hidden), true);
    return p;
}

Mat time_features(const NetParams& p, const Vec& row_t) {
    const int F = p.arch.fourier;
    const Mat& freq = p.tensors[0];
    Mat f(row_t.size(), 1 + 2 * F);
    for (Eigen::Index r = 0; r < row_t.size(); ++r) {
        const double t = row_t[r];
        f(r, 0) = t;
        for (int j = 0; j < F; ++j) {
            const double a = 2.0 * std::numbers::pi * freq(0, j) * t;
            f(r, 1 + j) = std::sin(a);
            f(r, 1 + F + j) = std::cos(a);
        }
    }
    return f;
}

Mat position_features(const Layout& layout) {
    Mat f = Mat::Zero(layout.rows(), 3);
    for (int s = 0; s < layout.batch; ++s) {
        const int n = layout.lengths[static_cast<size_t>(s)];
        for (int i = 0; i < n; ++i) {
            const double u = (i + 0.5) / n;
            const int r = s * layout.max_len + i;
            f(r, 0) = 2.0 * u - 1.0;
            f(r, 1) = std::cos(std::numbers::pi * u);
            f(r, 2) = std::log(static_cast<double>(n)) / 4.0;
        }
    }
    return f;
}

}  // namespace

NetParams init_net(const ArchSpec& arch, uint64_t seed) {
    NetParams p = skeleton(arch);
    Rng rng(seed);
    for (size_t i = 0; i < p.tensors.size(); ++i) {
        const std::string& n = p.names[i];
        Mat& t = p.tensors[i];
        if (n == "label_embed") {
            for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = rng.uniform(-1.0, 1.0);
        } else if (n[0] == 'W') {
            const double bound = std::sqrt(6.0 / static_cast<double>(t.cols()));
            for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = rng.uniform(-bound, bound);
        }
    }
    return p;
}

NetParams zero_net(const ArchSpec& arch) { return skeleton(arch); }

void require_same_arch(const NetParams& a, const NetParams& b) {
    if (!(a.arch == b.arch)) throw ConfigError("net: architecture mismatch " + a.arch.tag() + " vs " + b.arch.tag());
}

Var net_velocity(Tape& tape, const NetParams& p, Var x, const Vec& row_t, const Layout& layout, bool trainable) {
    const ArchSpec& a = p.arch;
    const Mat& xv = tape.value(x);
    if (xv.cols() != a.dim)
        throw ConfigError("net: input dimension " + std::to_string(xv.cols()) + " does not match " + a.tag());
    if (xv.rows() != layout.rows() || row_t.size() != xv.rows()) throw ConfigError("net: batch shape mismatch");
    if (!xv.allFinite() || !row_t.allFinite()) throw NumericError("net: non-finite input");

    std::vector<Var> in;
    in.push_back(a.window > 0 ? ops::window_features(tape, x, layout, a.window) : x);
    if (a.position) in.push_back(tape.constant(position_features(layout)));
    in.push_back(tape.constant(time_features(p, row_t)));
    if (a.num_labels > 0) {
        std::vector<int> idx(static_cast<size_t>(layout.rows()), -1);
        if (!layout.labels.empty()) {
            for (int s = 0; s < layout.batch; ++s) {
                const int lab = layout.labels[static_cast<size_t>(s)];
                if (lab < 0 || lab >= a.num_labels)
                    throw DomainError("net: label " + std::to_string(lab) + " outside [0, " +
                                      std::to_string(a.num_labels) + ")");
                for (int i = 0; i < layout.max_len; ++i) idx[static_cast<size_t>(s * layout.max_len + i)] = lab;
            }
        }
        in.push_back(ops::gather_rows(tape, tape.param(p, p.index_of("label_embed"), trainable), idx));
    }

    Var h = ops::concat_cols(tape, in);
    int k = p.index_of("W0");
    for (int l = 0; l < a.depth; ++l) {
        if (l > 0 && a.context && l <= 2) h = ops::concat_cols(tape, {h, ops::segment_mean(tape, h, layout)});
        Var w = tape.param(p, k, trainable);
        Var b = tape.param(p, k + 1, trainable);
        h = ops::silu(tape, ops::linear(tape, h, w, b));
        k += 2;
    }
    Var out = ops::linear(tape, h, tape.param(p, k, trainable));
    return ops::scale_rows(tape, out, layout.mask);
}

Mat net_forward(const NetParams& p, const StructureBatch& x, const Vec& t) {
    if (t.size() != x.batch) throw UsageError("net_forward: one time per structure expected");
    Tape tape;
    Layout layout = Layout::of(x);
    Var v = net_velocity(tape, p, tape.constant(x.coords), x.broadcast(t), layout, false);
    return tape.value(v);
}

}  // namespace sidlab
