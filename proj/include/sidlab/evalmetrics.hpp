#pragma once

#include "sidlab/batch.hpp"
#include "sidlab/common.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace sidlab {

// Sample sets are (n x D) matrices, one sample per row.

// Squared energy distance as a V-statistic:
// 2 mean|a - b| - mean|a - a'| - mean|b - b'| (all pairs, self-pairs included).
double energy_distance_sq(const Mat& A, const Mat& B);
// sqrt(max(energy_distance_sq, 0))
double energy_distance(const Mat& A, const Mat& B);

// Mean over n_proj random unit directions of the 1D Wasserstein-1 distance.
// Unequal sizes are compared through their empirical quantile functions.
double sliced_wasserstein(const Mat& A, const Mat& B, int n_proj, Rng& rng);
double wasserstein1_1d(std::vector<double> a, std::vector<double> b);

// Pass iff >= 95% of consecutive distances lie in [3.3, 4.3] and no pair with
// |i - j| >= 2 is closer than 2.0 (coordinates in Angstrom).
struct ChainProxy {
    bool pass = false;
    int bond_violations = 0;
    int clash_count = 0;
    double radius_of_gyration = 0.0;
};
ChainProxy chain_designable_proxy(const Mat& chain);

// RMSD after centring and optimal proper rotation of b onto a.
double kabsch_rmsd(const Mat& a, const Mat& b);
// Mean pairwise RMSD within each equal-length group, averaged over all pairs;
// nullopt when no group holds two structures.
std::optional<double> diversity_rmsd(const std::vector<Mat>& structures);

// total / n; +inf (with a warning) when n == 0; DomainError on negative inputs.
double effective_sampling_time(double total_seconds, long n_designable);

struct LengthRow {
    int length = 0;
    int count = 0;
    int designable = 0;
};

struct EvalReport {
    std::string run_id;
    int K = 0;
    double gamma = 0.0;
    double alpha = 0.0;
    int samples = 0;
    double energy_distance = std::nan("");
    double sliced_wasserstein = std::nan("");
    double designable_fraction = std::nan("");
    double diversity = std::nan("");
    double seconds = 0.0;
    double effective_time = std::nan("");
    std::vector<LengthRow> per_length;

    // Deterministic columns only; wall-clock figures go to the timing rows.
    static std::string csv_header();
    std::string csv_row() const;
    static std::string timing_header();
    std::string timing_row() const;
    static std::string per_length_header();
    std::vector<std::string> per_length_rows() const;
};

// Chain metrics on a batch given in model units; `to_angstrom` rescales.
void evaluate_chains(const StructureBatch& samples, double to_angstrom, EvalReport& rep);
// Point metrics against a reference set.
void evaluate_points(const StructureBatch& samples, const Mat& reference, Rng& rng, EvalReport& rep, int n_proj = 64);

}  // namespace sidlab
