#include "sidlab/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>

namespace sidlab {

namespace {

// sum over all ordered pairs of |x_i - y_j|
double pair_sum(const Mat& X, const Mat& Y) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const auto xi = X.row(i);
        double row = 0.0;
        for (Eigen::Index j = 0; j < Y.rows(); ++j) row += (xi - Y.row(j)).norm();
        s += row;
    }
    return s;
}

}  // namespace

double energy_distance_sq(const Mat& A, const Mat& B) {
    if (A.cols() != B.cols()) throw DomainError("energy_distance: dimension mismatch");
    if (A.rows() < 2 || B.rows() < 2) throw DomainError("energy_distance: need at least two samples per set");
    const double na = static_cast<double>(A.rows()), nb = static_cast<double>(B.rows());
    const double ab = pair_sum(A, B) / (na * nb);
    const double aa = pair_sum(A, A) / (na * na);
    const double bb = pair_sum(B, B) / (nb * nb);
    return 2.0 * ab - aa - bb;
}

double energy_distance(const Mat& A, const Mat& B) { return std::sqrt(std::max(energy_distance_sq(A, B), 0.0)); }

double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw DomainError("wasserstein1_1d: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.size() == b.size()) {
        double s = 0.0;
        for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
        return s / static_cast<double>(a.size());
    }
    // integrate |F_a^-1(u) - F_b^-1(u)| over the merged breakpoints
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    size_t i = 0, j = 0;
    double u = 0.0, s = 0.0;
    while (i < a.size() && j < b.size()) {
        const double ua = (i + 1) / na, ub = (j + 1) / nb;
        const double next = std::min(ua, ub);
        s += (next - u) * std::abs(a[i] - b[j]);
        u = next;
        if (ua <= next) ++i;
        if (ub <= next) ++j;
    }
    return s;
}

double sliced_wasserstein(const Mat& A, const Mat& B, int n_proj, Rng& rng) {
    if (A.cols() != B.cols()) throw DomainError("sliced_wasserstein: dimension mismatch");
    if (A.rows() < 2 || B.rows() < 2) throw DomainError("sliced_wasserstein: need at least two samples per set");
    if (n_proj < 1) throw DomainError("sliced_wasserstein: n_proj must be >= 1");
    double total = 0.0;
    for (int p = 0; p < n_proj; ++p) {
        Vec dir(A.cols());
        if (A.cols() == 1) {
            dir[0] = 1.0;
        } else {
            for (Eigen::Index d = 0; d < A.cols(); ++d) dir[d] = rng.normal();
            dir.normalize();
        }
        Vec pa = A * dir, pb = B * dir;
        total += wasserstein1_1d(std::vector<double>(pa.data(), pa.data() + pa.size()),
                                 std::vector<double>(pb.data(), pb.data() + pb.size()));
    }
    return total / n_proj;
}

ChainProxy chain_designable_proxy(const Mat& chain) {
    if (chain.rows() < 3 || chain.cols() != 3) throw DomainError("chain_designable_proxy: need length >= 3 and D = 3");
    ChainProxy p;
    const Eigen::Index n = chain.rows();
    for (Eigen::Index i = 1; i < n; ++i) {
        const double d = (chain.row(i) - chain.row(i - 1)).norm();
        if (!(d >= 3.3 && d <= 4.3)) ++p.bond_violations;
    }
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 2; j < n; ++j)
            if ((chain.row(i) - chain.row(j)).squaredNorm() < 4.0) ++p.clash_count;
    const Eigen::RowVectorXd c = chain.colwise().mean();
    p.radius_of_gyration = std::sqrt((chain.rowwise() - c).rowwise().squaredNorm().mean());
    const double ok = static_cast<double>(n - 1 - p.bond_violations) / static_cast<double>(n - 1);
    p.pass = ok >= 0.95 && p.clash_count == 0;
    return p;
}

double kabsch_rmsd(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() < 1) throw DomainError("kabsch_rmsd: shape mismatch");
    Mat pa = a.rowwise() - a.colwise().mean();
    Mat pb = b.rowwise() - b.colwise().mean();
    Eigen::MatrixXd H = pb.transpose() * pa;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::MatrixXd V = svd.matrixV(), U = svd.matrixU();
    Eigen::VectorXd sign = Eigen::VectorXd::Ones(H.cols());
    if ((V * U.transpose()).determinant() < 0) sign[H.cols() - 1] = -1.0;
    // rotation R maps b onto a: pb R^T ~ pa
    Eigen::MatrixXd R = V * sign.asDiagonal() * U.transpose();
    Mat diff = pb * R.transpose() - pa;
    return std::sqrt(diff.squaredNorm() / static_cast<double>(a.rows()));
}

std::optional<double> diversity_rmsd(const std::vector<Mat>& structures) {
    std::map<Eigen::Index, std::vector<const Mat*>> groups;
    for (const auto& s : structures) groups[s.rows()].push_back(&s);
    double sum = 0.0;
    long pairs = 0;
    for (const auto& [len, g] : groups)
        for (size_t i = 0; i < g.size(); ++i)
            for (size_t j = i + 1; j < g.size(); ++j) {
                sum += kabsch_rmsd(*g[i], *g[j]);
                ++pairs;
            }
    if (pairs == 0) return std::nullopt;
    return sum / static_cast<double>(pairs);
}

double effective_sampling_time(double total_seconds, long n_designable) {
    if (!(total_seconds >= 0) || n_designable < 0) throw DomainError("effective_sampling_time: negative input");
    if (n_designable == 0) {
        std::cerr << "warning: effective_sampling_time: no designable samples\n";
        return std::numeric_limits<double>::infinity();
    }
    return total_seconds / static_cast<double>(n_designable);
}

std::string EvalReport::csv_header() {
    return "run_id,K,gamma,alpha,samples,energy_distance,sliced_wasserstein,designable_fraction,diversity_rmsd";
}

std::string EvalReport::timing_header() { return "run_id,K,gamma,alpha,samples,seconds,effective_time"; }

std::string EvalReport::per_length_header() { return "run_id,K,gamma,alpha,length,count,designable"; }

namespace {

std::string num(double v) {
    char buf[64];
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

std::string EvalReport::csv_row() const {
    return run_id + "," + std::to_string(K) + "," + num(gamma) + "," + num(alpha) + "," + std::to_string(samples) + "," +
           num(energy_distance) + "," + num(sliced_wasserstein) + "," + num(designable_fraction) + "," +
           num(diversity);
}

std::string EvalReport::timing_row() const {
    return run_id + "," + std::to_string(K) + "," + num(gamma) + "," + num(alpha) + "," + std::to_string(samples) + "," +
           num(seconds) + "," + num(effective_time);
}

std::vector<std::string> EvalReport::per_length_rows() const {
    std::vector<std::string> out;
    for (const auto& r : per_length)
        out.push_back(run_id + "," + std::to_string(K) + "," + num(gamma) + "," + num(alpha) + "," +
                      std::to_string(r.length) + "," + std::to_string(r.count) + "," + std::to_string(r.designable));
    return out;
}

void evaluate_chains(const StructureBatch& samples, double to_angstrom, EvalReport& rep) {
    std::vector<Mat> designable;
    std::map<int, LengthRow> by_len;
    for (int b = 0; b < samples.batch; ++b) {
        Mat c = to_angstrom * samples.structure(b);
        const bool pass = chain_designable_proxy(c).pass;
        LengthRow& row = by_len[samples.lengths[static_cast<size_t>(b)]];
        row.length = samples.lengths[static_cast<size_t>(b)];
        ++row.count;
        if (pass) {
            ++row.designable;
            designable.push_back(std::move(c));
        }
    }
    rep.samples = samples.batch;
    rep.designable_fraction = static_cast<double>(designable.size()) / samples.batch;
    auto div = diversity_rmsd(designable);
    rep.diversity = div ? *div : std::nan("");
    rep.per_length.clear();
    for (const auto& [len, row] : by_len) rep.per_length.push_back(row);
    rep.effective_time = effective_sampling_time(rep.seconds, static_cast<long>(designable.size()));
}

void evaluate_points(const StructureBatch& samples, const Mat& reference, Rng& rng, EvalReport& rep, int n_proj) {
    rep.samples = samples.batch;
    rep.energy_distance = energy_distance(samples.coords, reference);
    rep.sliced_wasserstein = sliced_wasserstein(samples.coords, reference, n_proj, rng);
}

}  // namespace sidlab
