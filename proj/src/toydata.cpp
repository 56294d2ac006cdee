#include "sidlab/toydata.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace sidlab {

// ---------------------------------------------------------------- mixture

void MixtureSpec::validate() const {
    const int m = components();
    if (m < 1 || means.rows() != m || variances.size() != m || means.cols() < 1)
        throw ConfigError("mixture: weights/means/variances disagree in component count");
    if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-12)
        throw ConfigError("mixture: weights must be a probability vector (sum to 1 within 1e-12)");
    if (!(variances.array() > 0.0).all()) throw ConfigError("mixture: variances must be > 0");
    if (!means.allFinite()) throw ConfigError("mixture: non-finite means");
}

nlohmann::json MixtureSpec::to_json() const {
    nlohmann::json j;
    j["weights"] = std::vector<double>(weights.data(), weights.data() + weights.size());
    j["variances"] = std::vector<double>(variances.data(), variances.data() + variances.size());
    j["means"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < means.rows(); ++i) {
        std::vector<double> row(static_cast<size_t>(means.cols()));
        for (Eigen::Index d = 0; d < means.cols(); ++d) row[static_cast<size_t>(d)] = means(i, d);
        j["means"].push_back(row);
    }
    return j;
}

MixtureSpec MixtureSpec::from_json(const nlohmann::json& j) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "weights" && it.key() != "means" && it.key() != "variances")
            throw ConfigError("mixture: unknown key '" + it.key() + "'");
    MixtureSpec s;
    auto w = j.at("weights").get<std::vector<double>>();
    auto v = j.at("variances").get<std::vector<double>>();
    auto m = j.at("means").get<std::vector<std::vector<double>>>();
    s.weights = Eigen::Map<Vec>(w.data(), static_cast<Eigen::Index>(w.size()));
    s.variances = Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    const size_t D = m.empty() ? 0 : m[0].size();
    s.means = Mat(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(D));
    for (size_t i = 0; i < m.size(); ++i) {
        if (m[i].size() != D) throw ConfigError("mixture: ragged means");
        for (size_t d = 0; d < D; ++d) s.means(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = m[i][d];
    }
    s.validate();
    return s;
}

MixtureSpec MixtureSpec::standard_normal(int dim) {
    MixtureSpec s;
    s.weights = Vec::Ones(1);
    s.means = Mat::Zero(1, dim);
    s.variances = Vec::Ones(1);
    return s;
}

MixtureSpec MixtureSpec::ring(int m, double radius, double stddev) {
    MixtureSpec s;
    s.weights = Vec::Constant(m, 1.0 / m);
    s.means = Mat(m, 2);
    for (int i = 0; i < m; ++i) {
        const double a = 2.0 * std::numbers::pi * i / m;
        s.means(i, 0) = radius * std::cos(a);
        s.means(i, 1) = radius * std::sin(a);
    }
    s.variances = Vec::Constant(m, stddev * stddev);
    // weights of 1/m may miss 1 by an ulp for some m
    s.weights[m - 1] = 1.0 - s.weights.head(m - 1).sum();
    return s;
}

StructureBatch sample_mixture(const MixtureSpec& spec, int n, Rng& rng) {
    spec.validate();
    if (n < 1) throw DomainError("sample_mixture: n must be >= 1");
    StructureBatch b = StructureBatch::zeros(std::vector<int>(static_cast<size_t>(n), 1), 1, spec.dim());
    std::vector<int> labels(static_cast<size_t>(n));
    std::discrete_distribution<int> pick(spec.weights.data(), spec.weights.data() + spec.weights.size());
    std::mt19937_64 eng(rng.next_u64());
    for (int s = 0; s < n; ++s) {
        const int c = pick(eng);
        labels[static_cast<size_t>(s)] = c;
        const double sd = std::sqrt(spec.variances[c]);
        for (int d = 0; d < spec.dim(); ++d) b.coords(s, d) = spec.means(c, d) + sd * rng.normal();
    }
    b.labels = labels;
    return b;
}

namespace {

void row_posterior(const MixtureSpec& spec, const Eigen::RowVectorXd& x, double t, int label, Vec& resp,
                   Vec& s_i) {
    const int M = spec.components();
    const int D = spec.dim();
    resp.resize(M);
    s_i.resize(M);
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < M; ++i) {
        s_i[i] = t * t * spec.variances[i] + (1.0 - t) * (1.0 - t);
        if (label >= 0 && i != label) {
            resp[i] = -std::numeric_limits<double>::infinity();
            continue;
        }
        const double d2 = (x - t * spec.means.row(i)).squaredNorm();
        resp[i] = std::log(spec.weights[i]) - 0.5 * D * std::log(s_i[i]) - 0.5 * d2 / s_i[i];
        best = std::max(best, resp[i]);
    }
    double z = 0.0;
    for (int i = 0; i < M; ++i) {
        resp[i] = std::isinf(resp[i]) ? 0.0 : std::exp(resp[i] - best);
        z += resp[i];
    }
    resp /= z;
}

int label_at(const std::vector<int>& labels, Eigen::Index r, int M) {
    if (labels.empty()) return -1;
    const int l = labels[static_cast<size_t>(r)];
    if (l < 0 || l >= M) throw DomainError("mixture: label outside component range");
    return l;
}

}  // namespace

Mat mixture_posterior_mean(const MixtureSpec& spec, const Mat& x_t, const Vec& row_t, const std::vector<int>& labels) {
    const int M = spec.components();
    Mat f = Mat::Zero(x_t.rows(), x_t.cols());
    Vec resp, s_i;
    for (Eigen::Index r = 0; r < x_t.rows(); ++r) {
        const double t = row_t[r];
        row_posterior(spec, x_t.row(r), t, label_at(labels, r, M), resp, s_i);
        for (int i = 0; i < M; ++i) {
            if (resp[i] == 0.0) continue;
            const double a = t * spec.variances[i] / s_i[i];
            f.row(r) += resp[i] * (spec.means.row(i) + a * (x_t.row(r) - t * spec.means.row(i)));
        }
    }
    return f;
}

Mat mixture_posterior_mean_vjp(const MixtureSpec& spec, const Mat& x_t, const Vec& row_t, const Mat& g,
                               const std::vector<int>& labels) {
    const int M = spec.components();
    Mat out = Mat::Zero(x_t.rows(), x_t.cols());
    Vec resp, s_i;
    for (Eigen::Index r = 0; r < x_t.rows(); ++r) {
        const double t = row_t[r];
        row_posterior(spec, x_t.row(r), t, label_at(labels, r, M), resp, s_i);
        Eigen::RowVectorXd f = Eigen::RowVectorXd::Zero(x_t.cols());
        Eigen::RowVectorXd score = Eigen::RowVectorXd::Zero(x_t.cols());
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(x_t.cols());
        double diag = 0.0;
        for (int i = 0; i < M; ++i) {
            if (resp[i] == 0.0) continue;
            const double a = t * spec.variances[i] / s_i[i];
            Eigen::RowVectorXd m = spec.means.row(i) + a * (x_t.row(r) - t * spec.means.row(i));
            Eigen::RowVectorXd dl = -(x_t.row(r) - t * spec.means.row(i)) / s_i[i];
            f += resp[i] * m;
            score += resp[i] * dl;
            diag += resp[i] * a;
            acc += resp[i] * g.row(r).dot(m) * dl;
        }
        out.row(r) = diag * g.row(r) + acc - g.row(r).dot(f) * score;
    }
    return out;
}

Mat analytic_mixture_score(const MixtureSpec& spec, const Mat& x_t, const Vec& row_t, const std::vector<int>& labels) {
    const int M = spec.components();
    Mat s = Mat::Zero(x_t.rows(), x_t.cols());
    Vec resp, s_i;
    for (Eigen::Index r = 0; r < x_t.rows(); ++r) {
        const double t = row_t[r];
        row_posterior(spec, x_t.row(r), t, label_at(labels, r, M), resp, s_i);
        for (int i = 0; i < M; ++i)
            if (resp[i] != 0.0) s.row(r) -= resp[i] * (x_t.row(r) - t * spec.means.row(i)) / s_i[i];
    }
    return s;
}

Mat analytic_mixture_score(const MixtureSpec& spec, const Mat& x_t, double t) {
    if (!(t > 0.0 && t < 1.0)) throw DomainError("analytic_mixture_score: t must lie in (0, 1)");
    return analytic_mixture_score(spec, x_t, Vec::Constant(x_t.rows(), t));
}

Mat analytic_mixture_velocity(const MixtureSpec& spec, const Mat& x_t, double t) {
    if (!(t > 0.0 && t < 1.0)) throw DomainError("analytic_mixture_velocity: t must lie in (0, 1)");
    Mat f = mixture_posterior_mean(spec, x_t, Vec::Constant(x_t.rows(), t));
    return (f - x_t) / (1.0 - t);
}

double mixture_log_marginal(const MixtureSpec& spec, const Eigen::RowVectorXd& x_t, double t) {
    const int D = spec.dim();
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    for (int i = 0; i < spec.components(); ++i) {
        const double s = t * t * spec.variances[i] + (1.0 - t) * (1.0 - t);
        const double l = std::log(spec.weights[i]) - 0.5 * D * std::log(2.0 * std::numbers::pi * s) -
                         0.5 * (x_t - t * spec.means.row(i)).squaredNorm() / s;
        terms.push_back(l);
        best = std::max(best, l);
    }
    double z = 0.0;
    for (double l : terms) z += std::exp(l - best);
    return best + std::log(z);
}

// ---------------------------------------------------------------- chains

void ChainMotifSpec::validate() const {
    if (!(helix_fraction >= 0.0 && helix_fraction <= 1.0)) throw ConfigError("chain: helix_fraction outside [0,1]");
    if (!(helix_radius > 0 && rise > 0 && strand_step > 0 && strand_rise > 0 && strand_rise <= strand_step))
        throw ConfigError("chain: non-positive geometry");
    if (!(noise_sigma >= 0)) throw ConfigError("chain: noise_sigma must be >= 0");
    if (segment_min < 2 || segment_max < segment_min) throw ConfigError("chain: bad segment length range");
    const double b = helix_bond();
    if (b < 3.6 || b > 4.0) throw ConfigError("chain: implied helix bond " + std::to_string(b) + " outside [3.6, 4.0]");
    if (strand_step < 3.6 || strand_step > 4.0) throw ConfigError("chain: strand step outside [3.6, 4.0]");
}

double ChainMotifSpec::helix_bond() const {
    const double half = 0.5 * twist_deg * std::numbers::pi / 180.0;
    const double chord = 2.0 * helix_radius * std::sin(half);
    return std::sqrt(chord * chord + rise * rise);
}

nlohmann::json ChainMotifSpec::to_json() const {
    return {{"helix_fraction", helix_fraction}, {"helix_radius", helix_radius},
            {"rise", rise},                     {"twist_deg", twist_deg},
            {"strand_step", strand_step},       {"strand_rise", strand_rise},
            {"noise_sigma", noise_sigma},       {"segment_min", segment_min},
            {"segment_max", segment_max},       {"turn_max_deg", turn_max_deg},
            {"random_orientation", random_orientation}};
}

ChainMotifSpec ChainMotifSpec::from_json(const nlohmann::json& j) {
    ChainMotifSpec m;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "helix_fraction") m.helix_fraction = it->get<double>();
        else if (k == "helix_radius") m.helix_radius = it->get<double>();
        else if (k == "rise") m.rise = it->get<double>();
        else if (k == "twist_deg") m.twist_deg = it->get<double>();
        else if (k == "strand_step") m.strand_step = it->get<double>();
        else if (k == "strand_rise") m.strand_rise = it->get<double>();
        else if (k == "noise_sigma") m.noise_sigma = it->get<double>();
        else if (k == "segment_min") m.segment_min = it->get<int>();
        else if (k == "segment_max") m.segment_max = it->get<int>();
        else if (k == "turn_max_deg") m.turn_max_deg = it->get<double>();
        else if (k == "random_orientation") m.random_orientation = it->get<bool>();
        else throw ConfigError("chain: unknown key '" + k + "'");
    }
    m.validate();
    return m;
}

Mat helix_segment(int length, const ChainMotifSpec& motif, double phase, bool left_handed) {
    const double tw = (left_handed ? -1.0 : 1.0) * motif.twist_deg * std::numbers::pi / 180.0;
    Mat p(length, 3);
    for (int i = 0; i < length; ++i) {
        p(i, 0) = motif.helix_radius * std::cos(phase + i * tw);
        p(i, 1) = motif.helix_radius * std::sin(phase + i * tw);
        p(i, 2) = i * motif.rise;
    }
    return p;
}

Mat strand_segment(int length, const ChainMotifSpec& motif) {
    const double pleat = std::sqrt(motif.strand_step * motif.strand_step - motif.strand_rise * motif.strand_rise);
    Mat p(length, 3);
    for (int i = 0; i < length; ++i) {
        p(i, 0) = (i % 2) * pleat;
        p(i, 1) = 0.0;
        p(i, 2) = i * motif.strand_rise;
    }
    return p;
}

Mat center(const Mat& pts) {
    Mat c = pts;
    c.rowwise() -= pts.colwise().mean();
    return c;
}

namespace {

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& axis, double angle) {
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Eigen::Matrix3d random_rotation(Rng& rng) {
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    q.normalize();
    return q.toRotationMatrix();
}

bool clashes(const Mat& pts, int upto, double cutoff) {
    for (int i = 0; i < upto; ++i)
        for (int j = i + 2; j < upto; ++j)
            if ((pts.row(i) - pts.row(j)).squaredNorm() < cutoff * cutoff) return true;
    return false;
}

}  // namespace

Mat sample_chain(int length, const ChainMotifSpec& motif, Rng& rng) {
    motif.validate();
    if (length < 3) throw DomainError("sample_chain: length must be >= 3");
    constexpr double kClearance = 3.0;
    const double turn_max = motif.turn_max_deg * std::numbers::pi / 180.0;

    for (int attempt = 0; attempt < 1000; ++attempt) {
        Mat pts(length, 3);
        Eigen::Matrix3d frame = motif.random_orientation ? random_rotation(rng) : Eigen::Matrix3d::Identity();
        int filled = 0;
        bool ok = true;
        while (filled < length && ok) {
            const bool helix = rng.uniform() < motif.helix_fraction;
            int seg = rng.uniform_int(motif.segment_min, motif.segment_max);
            if (length - filled - seg < motif.segment_min) seg = length - filled;
            seg = std::min(seg, length - filled);
            const Mat local = helix ? helix_segment(seg, motif, rng.uniform(0.0, 2.0 * std::numbers::pi))
                                    : strand_segment(seg, motif);
            bool placed = false;
            for (int retry = 0; retry < 50 && !placed; ++retry) {
                Eigen::Matrix3d f = frame;
                Eigen::Vector3d origin = Eigen::Vector3d::Zero();
                if (filled > 0) {
                    const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
                    const double ang = rng.uniform(0.0, turn_max);
                    f = frame * axis_angle(Eigen::Vector3d(std::cos(az), std::sin(az), 0.0), ang);
                    const Eigen::Vector3d dir = f.col(2);
                    const Eigen::Vector3d first = f * local.row(0).transpose();
                    origin = pts.row(filled - 1).transpose() + motif.strand_step * dir - first;
                }
                for (int i = 0; i < seg; ++i)
                    pts.row(filled + i) = (f * local.row(i).transpose() + origin).transpose();
                if (!clashes(pts, filled + seg, kClearance)) {
                    placed = true;
                    frame = f;
                }
            }
            if (!placed) ok = false;
            filled += seg;
        }
        if (!ok) continue;
        if (motif.noise_sigma > 0.0)
            for (Eigen::Index k = 0; k < pts.size(); ++k) pts.data()[k] += motif.noise_sigma * rng.normal();
        return center(pts);
    }
    throw InvariantError("sample_chain: could not place a clash-free chain");
}

std::vector<int> sample_lengths(int lo, int hi, int count, Rng& rng) {
    if (lo < 1 || hi < lo) throw DomainError("sample_lengths: need 1 <= lo <= hi");
    std::vector<int> out(static_cast<size_t>(count));
    for (auto& l : out) l = rng.uniform_int(lo, hi);
    return out;
}

StructureBatch assemble_batch(const std::vector<Mat>& structures, int max_len,
                              const std::optional<std::vector<int>>& labels) {
    if (structures.empty()) throw DomainError("assemble_batch: no structures");
    std::vector<int> lengths;
    const int dim = static_cast<int>(structures[0].cols());
    for (const auto& s : structures) {
        if (s.rows() > max_len)
            throw DomainError("assemble_batch: structure of length " + std::to_string(s.rows()) +
                              " exceeds N_max=" + std::to_string(max_len));
        if (s.cols() != dim) throw DomainError("assemble_batch: mixed dimensionality");
        lengths.push_back(static_cast<int>(s.rows()));
    }
    StructureBatch b = StructureBatch::zeros(lengths, max_len, dim);
    for (int i = 0; i < b.batch; ++i) b.set_structure(i, structures[static_cast<size_t>(i)]);
    if (labels) {
        if (static_cast<int>(labels->size()) != b.batch) throw DomainError("assemble_batch: label count mismatch");
        b.labels = labels;
    }
    return b;
}

// ---------------------------------------------------------------- targets

void TargetSpec::validate() const {
    if (kind == "mixture") {
        mixture.validate();
    } else if (kind == "chain") {
        chain.validate();
        if (len_lo < 3 || len_hi < len_lo) throw ConfigError("target: need 3 <= len_lo <= len_hi");
        if (!(coord_scale > 0)) throw ConfigError("target: coord_scale must be > 0");
        if (conditional) throw ConfigError("target: label conditioning is only defined for mixtures");
    } else {
        throw ConfigError("target: kind must be 'mixture' or 'chain', got '" + kind + "'");
    }
}

nlohmann::json TargetSpec::to_json() const {
    nlohmann::json j = {{"kind", kind}, {"conditional", conditional}};
    if (is_chain()) {
        j["chain"] = chain.to_json();
        j["len_lo"] = len_lo;
        j["len_hi"] = len_hi;
        j["coord_scale"] = coord_scale;
    } else {
        j["mixture"] = mixture.to_json();
    }
    return j;
}

TargetSpec TargetSpec::from_json(const nlohmann::json& j) {
    TargetSpec t;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "kind") t.kind = it->get<std::string>();
        else if (k == "mixture") t.mixture = MixtureSpec::from_json(*it);
        else if (k == "ring") {
            const auto& r = *it;
            t.mixture = MixtureSpec::ring(r.at("components").get<int>(), r.at("radius").get<double>(),
                                          r.at("stddev").get<double>());
        } else if (k == "chain") t.chain = ChainMotifSpec::from_json(*it);
        else if (k == "len_lo") t.len_lo = it->get<int>();
        else if (k == "len_hi") t.len_hi = it->get<int>();
        else if (k == "coord_scale") t.coord_scale = it->get<double>();
        else if (k == "conditional") t.conditional = it->get<bool>();
        else throw ConfigError("target: unknown key '" + k + "'");
    }
    t.validate();
    return t;
}

StructureBatch TargetSpec::sample_data(int n, Rng& rng) const {
    if (!is_chain()) {
        StructureBatch b = sample_mixture(mixture, n, rng);
        if (!conditional) b.labels.reset();
        return b;
    }
    std::vector<int> lengths = sample_lengths(len_lo, len_hi, n, rng);
    std::vector<Mat> chains;
    for (int l : lengths) chains.push_back(coord_scale * sample_chain(l, chain, rng));
    return assemble_batch(chains, len_hi);
}

StructureBatch TargetSpec::sample_shape(int n, Rng& rng) const {
    if (!is_chain()) {
        StructureBatch b = StructureBatch::zeros(std::vector<int>(static_cast<size_t>(n), 1), 1, mixture.dim());
        if (conditional) {
            std::discrete_distribution<int> pick(mixture.weights.data(), mixture.weights.data() + mixture.weights.size());
            std::mt19937_64 eng(rng.next_u64());
            std::vector<int> labels(static_cast<size_t>(n));
            for (auto& l : labels) l = pick(eng);
            b.labels = labels;
        }
        return b;
    }
    return StructureBatch::zeros(sample_lengths(len_lo, len_hi, n, rng), len_hi, 3);
}

void write_xyz(const std::filesystem::path& path, const Mat& pts) {
    std::ofstream os(path);
    if (!os) throw ConfigError("xyz: cannot write " + path.string());
    char buf[128];
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        const double z = pts.cols() > 2 ? pts(i, 2) : 0.0;
        const double y = pts.cols() > 1 ? pts(i, 1) : 0.0;
        std::snprintf(buf, sizeof(buf), "CA %.10f %.10f %.10f\n", pts(i, 0), y, z);
        os << buf;
    }
}

Mat read_xyz(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("xyz: cannot read " + path.string());
    std::vector<Eigen::RowVector3d> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        Eigen::RowVector3d p;
        if (!(ls >> tag >> p[0] >> p[1] >> p[2]) || tag != "CA")
            throw ConfigError("xyz: malformed line " + std::to_string(lineno) + " in " + path.string());
        rows.push_back(p);
    }
    Mat out(static_cast<Eigen::Index>(rows.size()), 3);
    for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i];
    return out;
}

}  // namespace sidlab
