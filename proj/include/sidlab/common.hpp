#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sidlab {

// Row-major so that one row is one point (residue or 2D sample).
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Error families. The CLI maps them onto exit codes
// (config/domain -> 2, numeric -> 3, usage/invariant -> 4).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};
struct InvariantError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

bool all_finite(const Mat& m);

// Explicit random stream. Samplers never touch global state; every stream is
// owned by exactly one caller and can be serialized for resume.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    // inclusive bounds
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    double normal() { return normal_(engine_); }
    Mat normal(Eigen::Index rows, Eigen::Index cols);
    uint64_t next_u64() { return engine_(); }

    // Derive an independent child stream; used to give sweep workers their own seeds.
    Rng split();

    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

// FNV-1a, used for config hashes and parameter fingerprints.
uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 1469598103934665603ULL);
uint64_t fnv1a64(const std::string& s);
uint64_t hash_mat(const Mat& m, uint64_t h = 1469598103934665603ULL);
std::string hex64(uint64_t v);

}  // namespace sidlab
