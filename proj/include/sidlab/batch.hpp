#pragma once

#include "sidlab/common.hpp"

#include <optional>
#include <vector>

namespace sidlab {

// A batch of variable-length point sets. Structure b occupies rows
// [b*max_len, (b+1)*max_len) of `coords`; only the first lengths[b] of those
// rows are real, the rest are padding and must hold zeros.
struct StructureBatch {
    int batch = 0;
    int max_len = 0;
    int dim = 0;
    Mat coords;
    std::vector<uint8_t> mask;
    std::vector<int> lengths;
    std::optional<std::vector<int>> labels;

    static StructureBatch zeros(const std::vector<int>& lengths, int max_len, int dim);

    int rows() const { return batch * max_len; }
    int row(int b, int i) const { return b * max_len + i; }

    // mask as a 0/1 column, one entry per row
    Vec mask_column() const;
    // per-row copy of a per-structure value
    Vec broadcast(const Vec& per_structure) const;

    // Extract structure b as a dense (length x dim) matrix.
    Mat structure(int b) const;
    void set_structure(int b, const Mat& pts);

    // Throws InvariantError when padding is non-zero or lengths disagree with the mask.
    void validate() const;
    void zero_padding();
};

// Everything about a batch's shape the network needs, computed once per batch.
struct Layout {
    int batch = 0;
    int max_len = 0;
    std::vector<int> lengths;
    Vec mask;                // rows
    std::vector<int> labels; // empty when unconditional

    static Layout of(const StructureBatch& b);
    int rows() const { return batch * max_len; }
};

}  // namespace sidlab
