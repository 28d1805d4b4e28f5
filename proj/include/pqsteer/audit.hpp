// Executable equivariance verification: the roto-translation action on
// discretized fields (grid-exact and trilinear variants), two-sided
// equivariance error measurement, and the 24-element cube-group audit.
#pragma once

#include <functional>

#include "model.hpp"

namespace pqsteer {

struct RigidMotion {
    Rotation g;
    Vec3 t{0, 0, 0};  // voxels, applied in p-space only

    static RigidMotion rotation_only(const Rotation& g) { return RigidMotion{g, {0, 0, 0}}; }
};

enum class Interp { exact_grid, trilinear };

namespace detail {

inline Vec3 grid_center(const std::array<int, 3>& dims) {
    return {0.5 * (dims[0] - 1), 0.5 * (dims[1] - 1), 0.5 * (dims[2] - 1)};
}

inline bool is_near_integer(double v, double tol) { return std::abs(v - std::round(v)) <= tol; }

}  // namespace detail

// field'(p, q) = D_g^tau * field(R_g^-1 (p - t - c) + c, R_g^-1 q), rotation
// about the geometric grid center. Exact mode requires the rotation to map
// the voxel grid onto itself and the q-scheme to be closed under it; p-space
// reads outside the grid are zero (padding semantics). Trilinear mode
// interpolates p-space and returns the field on the rotated q-scheme.
inline MultiChannelTensorField act_on_field(const MultiChannelTensorField& f,
                                            const RigidMotion& motion, Interp interp) {
    const Mat3 rinv = motion.g.R.transposed();
    Vec3 c = detail::grid_center(f.p_dims);
    Matrix d = block_diag_wigner(f.type, motion.g);
    int dim = f.type.dim();
    int q = f.qsize();

    std::vector<int> qmap(static_cast<size_t>(q), -1);
    QScheme out_scheme = f.q_scheme;
    if (interp == Interp::exact_grid) {
        require(detail::is_near_integer(motion.t.x, 1e-9) &&
                    detail::is_near_integer(motion.t.y, 1e-9) &&
                    detail::is_near_integer(motion.t.z, 1e-9),
                "act_on_field: exact mode requires integer translations");
        for (int n = 0; n < q; ++n) {
            Vec3 src = rinv * f.q_scheme.vectors[static_cast<size_t>(n)];
            int idx = f.q_scheme.find(src, 1e-9);
            require(idx >= 0, "act_on_field: q-scheme is not closed under the rotation");
            qmap[static_cast<size_t>(n)] = idx;
        }
    } else {
        out_scheme = f.q_scheme.rotated(motion.g);
        for (int n = 0; n < q; ++n) qmap[static_cast<size_t>(n)] = n;
    }

    MultiChannelTensorField out(f.type, f.p_dims, out_scheme);
    std::vector<double> val(static_cast<size_t>(dim)), rot(static_cast<size_t>(dim));
    for (int z = 0; z < f.p_dims[2]; ++z)
        for (int y = 0; y < f.p_dims[1]; ++y)
            for (int x = 0; x < f.p_dims[0]; ++x) {
                Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
                Vec3 src = rinv * (p - motion.t - c) + c;
                for (int n = 0; n < q; ++n) {
                    int ns = qmap[static_cast<size_t>(n)];
                    if (interp == Interp::exact_grid) {
                        require(detail::is_near_integer(src.x, 1e-9) &&
                                    detail::is_near_integer(src.y, 1e-9) &&
                                    detail::is_near_integer(src.z, 1e-9),
                                "act_on_field: rotation does not map the grid onto itself "
                                "(odd cubic grids required)");
                        int sx = static_cast<int>(std::lround(src.x));
                        int sy = static_cast<int>(std::lround(src.y));
                        int sz = static_cast<int>(std::lround(src.z));
                        bool inside = sx >= 0 && sx < f.p_dims[0] && sy >= 0 &&
                                      sy < f.p_dims[1] && sz >= 0 && sz < f.p_dims[2];
                        for (int comp = 0; comp < dim; ++comp)
                            val[static_cast<size_t>(comp)] =
                                inside ? f.at(comp, sz, sy, sx, ns) : 0.0;
                    } else {
                        // trilinear with zero outside the grid
                        int x0 = static_cast<int>(std::floor(src.x));
                        int y0 = static_cast<int>(std::floor(src.y));
                        int z0 = static_cast<int>(std::floor(src.z));
                        double fx = src.x - x0, fy = src.y - y0, fz = src.z - z0;
                        for (int comp = 0; comp < dim; ++comp) val[static_cast<size_t>(comp)] = 0.0;
                        for (int dz = 0; dz <= 1; ++dz)
                            for (int dy = 0; dy <= 1; ++dy)
                                for (int dx = 0; dx <= 1; ++dx) {
                                    int sx = x0 + dx, sy = y0 + dy, sz = z0 + dz;
                                    if (sx < 0 || sx >= f.p_dims[0] || sy < 0 ||
                                        sy >= f.p_dims[1] || sz < 0 || sz >= f.p_dims[2])
                                        continue;
                                    double wgt = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) *
                                                 (dz ? fz : 1 - fz);
                                    if (wgt == 0.0) continue;
                                    for (int comp = 0; comp < dim; ++comp)
                                        val[static_cast<size_t>(comp)] +=
                                            wgt * f.at(comp, sz, sy, sx, ns);
                                }
                    }
                    for (int r = 0; r < dim; ++r) {
                        double s = 0;
                        for (int cc = 0; cc < dim; ++cc)
                            s += d(r, cc) * val[static_cast<size_t>(cc)];
                        rot[static_cast<size_t>(r)] = s;
                    }
                    for (int comp = 0; comp < dim; ++comp)
                        out.at(comp, z, y, x, n) = rot[static_cast<size_t>(comp)];
                }
            }
    return out;
}

using FieldMap = std::function<MultiChannelTensorField(const MultiChannelTensorField&)>;

// Two-sided relative equivariance error over an interior crop:
//   |apply_rotated(act(f)) - act(apply(f))| / |act(apply(f))|
// `apply_rotated` handles inputs on the rotated q-scheme; in exact mode it
// may be the original map (closed schemes).
inline double equivariance_error(const FieldMap& apply, const FieldMap& apply_rotated,
                                 const MultiChannelTensorField& field, const RigidMotion& motion,
                                 Interp interp, int border) {
    MultiChannelTensorField lhs = apply_rotated(act_on_field(field, motion, interp));
    MultiChannelTensorField rhs = act_on_field(apply(field), motion, interp);
    return interior_rel_diff(lhs, rhs, border);
}

inline double equivariance_error(const FieldMap& apply, const MultiChannelTensorField& field,
                                 const RigidMotion& motion, Interp interp, int border) {
    return equivariance_error(apply, apply, field, motion, interp, border);
}

// All 24 cube rotations in exact-grid mode; returns one relative error per
// group element (identity first).
inline std::vector<double> cube_group_audit(const FieldMap& apply,
                                            const MultiChannelTensorField& field, int border) {
    std::vector<double> errors;
    errors.reserve(24);
    for (const Rotation& g : cube_rotations())
        errors.push_back(equivariance_error(apply, field, RigidMotion::rotation_only(g),
                                            Interp::exact_grid, border));
    return errors;
}

// ------------------------------------------------- model-level conveniences

// The same architecture bound to rotated q-schemes (kernels are rebuilt on
// the rotated scheme; basis filters are continuous in q, so this is exact).
inline ModelConfig rotated_config(const ModelConfig& cfg, const Rotation& g) {
    ModelConfig out = cfg;
    out.q_in = cfg.q_in.rotated(g);
    for (PqLayerCfg& l : out.pq_layers) l.q_out = l.q_out.rotated(g);
    return out;
}

// Reuses parameter values with a model built from a structurally identical
// config (e.g. rotated q-schemes).
inline ModelParams retarget_params(const ModelParams& params, const Model& target) {
    require(params.stages.size() == target.stages.size(), "retarget_params: stage mismatch");
    ModelParams out = params;
    out.hash = config_hash(target.cfg);
    return out;
}

// Border width that removes padding effects: filter radius times the number
// of convolution stages.
inline int audit_border(const Model& m) {
    int convs = 0;
    for (const Stage& st : m.stages)
        if (st.kind == StageKind::conv) ++convs;
    return m.cfg.p_filter * convs;
}

inline FieldMap model_map(const Model& m, const ModelParams& params) {
    return [&m, &params](const MultiChannelTensorField& f) {
        return forward(m, params, f).prob;
    };
}

// Pre-sigmoid output. Interpolated-mode audits use this: the sigmoid is
// pointwise and equivariant, but its plateaus distort relative error norms.
inline FieldMap logit_map(const Model& m, const ModelParams& params) {
    return [&m, &params](const MultiChannelTensorField& f) {
        ForwardCache cache;
        forward(m, params, f, &cache);
        return cache.logits;
    };
}

}  // namespace pqsteer
