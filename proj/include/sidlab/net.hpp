#pragma once

#include "sidlab/batch.hpp"
#include "sidlab/common.hpp"
#include "sidlab/tape.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace sidlab {

// Architecture descriptor of the time/label-conditioned per-point velocity MLP.
//
// Every point sees its own coordinates, the offsets to `window` neighbours on
// either side, Fourier time features, optional position-in-chain features and
// an optional learned label embedding. Weights are shared across points. When
// `context` is on, the masked structure means of the first two hidden layers
// are appended to the inputs of the following layers.
struct ArchSpec {
    int dim = 2;
    int window = 0;
    int hidden = 64;
    int depth = 3;
    int fourier = 4;
    int num_labels = 0;
    int label_dim = 8;
    bool context = false;
    bool position = false;

    int input_width() const;
    std::string tag() const;
    nlohmann::json to_json() const;
    static ArchSpec from_json(const nlohmann::json& j);
    bool operator==(const ArchSpec&) const = default;
};

struct NetParams {
    ArchSpec arch;
    std::vector<std::string> names;
    std::vector<Mat> tensors;
    std::vector<bool> trainable;

    int index_of(const std::string& name) const;
    Eigen::Index count() const;
    Eigen::Index trainable_count() const;
    bool finite() const;
    // Stable content hash of every tensor, for alternation checks.
    uint64_t fingerprint() const;

    Vec flatten() const;
    void unflatten(const Vec& v);
};

// Uniform He-style fan-in initialisation, fully determined by `seed`.
NetParams init_net(const ArchSpec& arch, uint64_t seed);
// All trainable tensors set to zero (time table kept).
NetParams zero_net(const ArchSpec& arch);

// Records the velocity field v(x, t) on the tape. `row_t` holds one time per
// row. Output rows at padded positions are exactly zero.
Var net_velocity(Tape& tape, const NetParams& p, Var x, const Vec& row_t, const Layout& layout, bool trainable);

// Plain evaluation. `t` holds one time per structure.
Mat net_forward(const NetParams& p, const StructureBatch& x, const Vec& t);

// Throws ConfigError if two parameter sets do not share an architecture.
void require_same_arch(const NetParams& a, const NetParams& b);

}  // namespace sidlab
