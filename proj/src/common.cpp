#include "sidlab/common.hpp"

#include <cstdio>
#include <malloc.h>
#include <sstream>

namespace sidlab {

namespace {

// Tape buffers are allocated and freed at every op. Above glibc's default mmap
// threshold each of those is an mmap/munmap pair, which costs more than the math.
const bool allocator_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
}();

}  // namespace

bool all_finite(const Mat& m) { return m.allFinite(); }

Mat Rng::normal(Eigen::Index rows, Eigen::Index cols) {
    Mat out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = normal_(engine_);
    return out;
}

Rng Rng::split() {
    uint64_t a = engine_();
    uint64_t b = engine_();
    return Rng(a ^ (b << 1));
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_ >> normal_;
    if (!is) throw ConfigError("rng: malformed serialized state");
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t h) {
    auto p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

uint64_t hash_mat(const Mat& m, uint64_t h) {
    int64_t dims[2] = {m.rows(), m.cols()};
    h = fnv1a64(dims, sizeof(dims), h);
    return fnv1a64(m.data(), sizeof(double) * static_cast<size_t>(m.size()), h);
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace sidlab
