#include "sidlab/batch.hpp"

#include <string>

namespace sidlab {

StructureBatch StructureBatch::zeros(const std::vector<int>& lengths, int max_len, int dim) {
    StructureBatch b;
    b.batch = static_cast<int>(lengths.size());
    b.max_len = max_len;
    b.dim = dim;
    b.lengths = lengths;
    b.coords = Mat::Zero(b.rows(), dim);
    b.mask.assign(static_cast<size_t>(b.rows()), 0);
    for (int s = 0; s < b.batch; ++s) {
        if (lengths[s] < 1 || lengths[s] > max_len)
            throw DomainError("batch: length " + std::to_string(lengths[s]) + " outside [1, " +
                              std::to_string(max_len) + "]");
        for (int i = 0; i < lengths[s]; ++i) b.mask[static_cast<size_t>(b.row(s, i))] = 1;
    }
    return b;
}

Vec StructureBatch::mask_column() const {
    Vec m(rows());
    for (int r = 0; r < rows(); ++r) m[r] = mask[static_cast<size_t>(r)] ? 1.0 : 0.0;
    return m;
}

Vec StructureBatch::broadcast(const Vec& per_structure) const {
    Vec out(rows());
    for (int s = 0; s < batch; ++s) out.segment(s * max_len, max_len).setConstant(per_structure[s]);
    return out;
}

Mat StructureBatch::structure(int b) const { return coords.middleRows(b * max_len, lengths[b]); }

void StructureBatch::set_structure(int b, const Mat& pts) {
    if (pts.rows() != lengths[b] || pts.cols() != dim) throw UsageError("batch: set_structure shape mismatch");
    coords.middleRows(b * max_len, lengths[b]) = pts;
}

void StructureBatch::validate() const {
    if (coords.rows() != rows() || coords.cols() != dim)
        throw InvariantError("batch: coords shape does not match batch x max_len x dim");
    if (static_cast<int>(mask.size()) != rows() || static_cast<int>(lengths.size()) != batch)
        throw InvariantError("batch: mask/lengths size mismatch");
    for (int s = 0; s < batch; ++s) {
        int count = 0;
        for (int i = 0; i < max_len; ++i) {
            int r = row(s, i);
            if (mask[static_cast<size_t>(r)]) {
                ++count;
            } else if (coords.row(r).cwiseAbs().maxCoeff() != 0.0) {
                throw InvariantError("batch: non-zero coordinates at a padded position");
            }
        }
        if (count != lengths[s]) throw InvariantError("batch: lengths disagree with mask");
    }
    if (labels && static_cast<int>(labels->size()) != batch) throw InvariantError("batch: labels size mismatch");
}

void StructureBatch::zero_padding() {
    for (int r = 0; r < rows(); ++r)
        if (!mask[static_cast<size_t>(r)]) coords.row(r).setZero();
}

Layout Layout::of(const StructureBatch& b) {
    Layout l;
    l.batch = b.batch;
    l.max_len = b.max_len;
    l.lengths = b.lengths;
    l.mask = b.mask_column();
    if (b.labels) l.labels = *b.labels;
    return l;
}

}  // namespace sidlab
