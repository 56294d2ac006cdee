#pragma once

#include "sidlab/batch.hpp"
#include "sidlab/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace sidlab {

// Gaussian mixture with isotropic components. Under x_t = t x_d + (1-t) eps the
// marginal is sum_i w_i N(t mu_i, (t^2 var_i + (1-t)^2) I), which gives exact
// posterior means, velocities and scores.
struct MixtureSpec {
    Vec weights;
    Mat means;  // M x D
    Vec variances;

    int components() const { return static_cast<int>(weights.size()); }
    int dim() const { return static_cast<int>(means.cols()); }
    void validate() const;
    nlohmann::json to_json() const;
    static MixtureSpec from_json(const nlohmann::json& j);

    static MixtureSpec standard_normal(int dim);
    // M equally weighted components on a circle in the plane.
    static MixtureSpec ring(int m, double radius, double stddev);
};

// N = 1 point per structure, labels = component ids.
StructureBatch sample_mixture(const MixtureSpec& spec, int n, Rng& rng);

// All oracles take one time per row. When `labels` is non-empty the posterior
// is conditioned on that component (label per row).
Mat mixture_posterior_mean(const MixtureSpec& spec, const Mat& x_t, const Vec& row_t,
                           const std::vector<int>& labels = {});
// g^T d(posterior mean)/dx_t, row by row.
Mat mixture_posterior_mean_vjp(const MixtureSpec& spec, const Mat& x_t, const Vec& row_t, const Mat& g,
                               const std::vector<int>& labels = {});
Mat analytic_mixture_velocity(const MixtureSpec& spec, const Mat& x_t, double t);
Mat analytic_mixture_score(const MixtureSpec& spec, const Mat& x_t, double t);
Mat analytic_mixture_score(const MixtureSpec& spec, const Mat& x_t, const Vec& row_t,
                           const std::vector<int>& labels = {});
double mixture_log_marginal(const MixtureSpec& spec, const Eigen::RowVectorXd& x_t, double t);

// Procedural C-alpha-like chains, in Angstrom. A chain is a run of helix and
// strand segments joined by one virtual bond; each new segment turns away from
// the previous axis by at most turn_max_deg.
struct ChainMotifSpec {
    double helix_fraction = 0.5;
    double helix_radius = 2.3;
    double rise = 1.5;
    double twist_deg = 100.0;
    double strand_step = 3.8;
    double strand_rise = 3.3;  // axial advance per strand residue; the rest is pleat
    double noise_sigma = 0.0;
    int segment_min = 5;
    int segment_max = 10;
    double turn_max_deg = 60.0;
    bool random_orientation = false;

    void validate() const;
    double helix_bond() const;
    nlohmann::json to_json() const;
    static ChainMotifSpec from_json(const nlohmann::json& j);
};

// length x 3, centred at the centroid.
Mat sample_chain(int length, const ChainMotifSpec& motif, Rng& rng);
Mat helix_segment(int length, const ChainMotifSpec& motif, double phase = 0.0, bool left_handed = false);
Mat strand_segment(int length, const ChainMotifSpec& motif);

// lengths uniform on [lo, hi]
std::vector<int> sample_lengths(int lo, int hi, int count, Rng& rng);
StructureBatch assemble_batch(const std::vector<Mat>& structures, int max_len,
                              const std::optional<std::vector<int>>& labels = std::nullopt);

Mat center(const Mat& pts);

// What a run trains on: a mixture of points or a family of chains. Chains are
// handled in model units (Angstrom times coord_scale).
struct TargetSpec {
    std::string kind = "mixture";  // "mixture" | "chain"
    MixtureSpec mixture = MixtureSpec::standard_normal(2);
    ChainMotifSpec chain;
    int len_lo = 8;
    int len_hi = 24;
    double coord_scale = 0.1;
    bool conditional = false;

    bool is_chain() const { return kind == "chain"; }
    int dim() const { return is_chain() ? 3 : mixture.dim(); }
    int max_len() const { return is_chain() ? len_hi : 1; }
    int num_labels() const { return conditional ? mixture.components() : 0; }
    void validate() const;
    nlohmann::json to_json() const;
    static TargetSpec from_json(const nlohmann::json& j);

    // Fresh data, in model units.
    StructureBatch sample_data(int n, Rng& rng) const;
    // Zero coordinates with sampled lengths (and labels when conditional).
    StructureBatch sample_shape(int n, Rng& rng) const;
};

// One "CA x y z" line per residue.
void write_xyz(const std::filesystem::path& path, const Mat& pts);
Mat read_xyz(const std::filesystem::path& path);

}  // namespace sidlab
