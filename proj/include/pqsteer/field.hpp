// Discretized multi-channel spherical-tensor fields over a p-grid and a
// q-sampling scheme. Data layout: component-major, then z, y, x, with the
// q index fastest.
#pragma once

#include "qscheme.hpp"
#include "so3.hpp"

namespace pqsteer {

struct MultiChannelTensorField {
    TensorType type;
    std::array<int, 3> p_dims{0, 0, 0};  // (Px, Py, Pz)
    QScheme q_scheme;                    // raw scans may carry repeated b0 samples
    std::vector<double> data;

    MultiChannelTensorField() = default;
    MultiChannelTensorField(TensorType t, std::array<int, 3> dims, QScheme q)
        : type(std::move(t)), p_dims(dims), q_scheme(std::move(q)) {
        require(p_dims[0] > 0 && p_dims[1] > 0 && p_dims[2] > 0, "field: empty grid");
        data.assign(static_cast<size_t>(type.dim()) * p_dims[0] * p_dims[1] * p_dims[2] *
                        q_scheme.size(),
                    0.0);
    }

    int qsize() const { return q_scheme.size(); }
    size_t voxels() const {
        return static_cast<size_t>(p_dims[0]) * p_dims[1] * p_dims[2];
    }

    size_t index(int comp, int z, int y, int x, int n) const {
        return (((static_cast<size_t>(comp) * p_dims[2] + z) * p_dims[1] + y) * p_dims[0] + x) *
                   q_scheme.size() +
               n;
    }

    double& at(int comp, int z, int y, int x, int n) { return data[index(comp, z, y, x, n)]; }
    double at(int comp, int z, int y, int x, int n) const { return data[index(comp, z, y, x, n)]; }

    bool same_shape(const MultiChannelTensorField& o) const {
        return type == o.type && p_dims == o.p_dims && q_scheme.size() == o.q_scheme.size();
    }
};

// Permutes the q samples so the scheme matches the target ordering. The
// schemes must contain the same vectors (sets match to the tolerance).
inline MultiChannelTensorField reorder_q(const MultiChannelTensorField& f, const QScheme& target,
                                         double tol = 1e-9) {
    require(target.size() == f.qsize(), "reorder_q: sample count mismatch");
    std::vector<int> src(static_cast<size_t>(target.size()));
    for (int n = 0; n < target.size(); ++n) {
        int idx = f.q_scheme.find(target.vectors[static_cast<size_t>(n)], tol);
        require(idx >= 0, "reorder_q: target scheme is not a permutation of the field's");
        src[static_cast<size_t>(n)] = idx;
    }
    MultiChannelTensorField out(f.type, f.p_dims, target);
    for (int comp = 0; comp < f.type.dim(); ++comp)
        for (int z = 0; z < f.p_dims[2]; ++z)
            for (int y = 0; y < f.p_dims[1]; ++y)
                for (int x = 0; x < f.p_dims[0]; ++x)
                    for (int n = 0; n < target.size(); ++n)
                        out.at(comp, z, y, x, n) = f.at(comp, z, y, x, src[static_cast<size_t>(n)]);
    return out;
}

inline double field_norm(const MultiChannelTensorField& f) {
    double s = 0;
    for (double v : f.data) s += v * v;
    return std::sqrt(s);
}

// Relative L2 difference over an interior crop (border voxels excluded on
// every p-axis); the full q and component extents are always included.
inline double interior_rel_diff(const MultiChannelTensorField& a,
                                const MultiChannelTensorField& b, int border) {
    require(a.same_shape(b), "interior_rel_diff: shape mismatch");
    double num = 0, den = 0;
    int x0 = border, x1 = a.p_dims[0] - border;
    int y0 = border, y1 = a.p_dims[1] - border;
    int z0 = border, z1 = a.p_dims[2] - border;
    require(x0 < x1 && y0 < y1 && z0 < z1, "interior_rel_diff: border swallows the grid");
    for (int comp = 0; comp < a.type.dim(); ++comp)
        for (int z = z0; z < z1; ++z)
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x)
                    for (int n = 0; n < a.qsize(); ++n) {
                        double va = a.at(comp, z, y, x, n);
                        double vb = b.at(comp, z, y, x, n);
                        num += (va - vb) * (va - vb);
                        den += vb * vb;
                    }
    require(den > 0, "interior_rel_diff: zero reference field");
    return std::sqrt(num / den);
}

}  // namespace pqsteer
