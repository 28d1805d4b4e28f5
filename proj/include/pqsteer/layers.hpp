// Forward passes over discretized fields: the conv3d-lowered pq-convolution
// and its brute-force reference, the q-reduction strategies, b0 merging, and
// the equivariant gated nonlinearity. Backward companions live next to each
// op; they are plain vector-Jacobian products.
#pragma once

#include "kernel.hpp"

namespace pqsteer {

namespace detail {

// voxel-major packing [z][y][x][col], col = n * dim + comp
inline std::vector<double> pack_field(const MultiChannelTensorField& f) {
    int dim = f.type.dim(), q = f.qsize();
    std::vector<double> out(f.voxels() * dim * q);
    size_t vox = 0;
    for (int z = 0; z < f.p_dims[2]; ++z)
        for (int y = 0; y < f.p_dims[1]; ++y)
            for (int x = 0; x < f.p_dims[0]; ++x, ++vox)
                for (int n = 0; n < q; ++n)
                    for (int comp = 0; comp < dim; ++comp)
                        out[vox * dim * q + n * dim + comp] = f.at(comp, z, y, x, n);
    return out;
}

inline void unpack_field(const std::vector<double>& packed, MultiChannelTensorField& f) {
    int dim = f.type.dim(), q = f.qsize();
    size_t vox = 0;
    for (int z = 0; z < f.p_dims[2]; ++z)
        for (int y = 0; y < f.p_dims[1]; ++y)
            for (int x = 0; x < f.p_dims[0]; ++x, ++vox)
                for (int n = 0; n < q; ++n)
                    for (int comp = 0; comp < dim; ++comp)
                        f.at(comp, z, y, x, n) = packed[vox * dim * q + n * dim + comp];
}

}  // namespace detail

// Cross-correlation with same-size zero padding:
//   out(p) = sum_pf K(pf) in(p + pf)
inline MultiChannelTensorField pq_conv(const Kernel& k, const MultiChannelTensorField& in) {
    require(in.type == k.tau_in, "pq_conv: input type mismatch");
    require(in.qsize() == k.q_in.size(), "pq_conv: input q count mismatch");
    for (int n = 0; n < in.qsize(); ++n)
        require((in.q_scheme.vectors[n] - k.q_in.vectors[n]).norm() <= 1e-9,
                "pq_conv: input q-scheme differs from the kernel's");

    MultiChannelTensorField out(k.tau_out, in.p_dims, k.q_out);
    std::vector<double> xin = detail::pack_field(in);
    std::vector<double> xout(out.voxels() * static_cast<size_t>(k.rows), 0.0);

    const int px = in.p_dims[0], py = in.p_dims[1], pz = in.p_dims[2];
    const int npf = k.grid.num_offsets();
    size_t vox = 0;
    for (int z = 0; z < pz; ++z)
        for (int y = 0; y < py; ++y)
            for (int x = 0; x < px; ++x, ++vox) {
                double* yv = &xout[vox * static_cast<size_t>(k.rows)];
                for (int pf = 0; pf < npf; ++pf) {
                    auto o = k.grid.offset(pf);
                    int sx = x + o[0], sy = y + o[1], sz = z + o[2];
                    if (sx < 0 || sx >= px || sy < 0 || sy >= py || sz < 0 || sz >= pz) continue;
                    const double* xv =
                        &xin[((static_cast<size_t>(sz) * py + sy) * px + sx) *
                             static_cast<size_t>(k.cols)];
                    const double* kmat = &k.k[static_cast<size_t>(pf) * k.rows * k.cols];
                    for (int r = 0; r < k.rows; ++r) {
                        const double* krow = kmat + static_cast<size_t>(r) * k.cols;
                        double acc = 0;
                        for (int c = 0; c < k.cols; ++c) acc += krow[c] * xv[c];
                        yv[r] += acc;
                    }
                }
            }
    detail::unpack_field(xout, out);
    return out;
}

// dL/d(input) of pq_conv
inline MultiChannelTensorField pq_conv_backward_input(const Kernel& k,
                                                      const MultiChannelTensorField& grad_out) {
    MultiChannelTensorField gin(k.tau_in, grad_out.p_dims, k.q_in);
    std::vector<double> gout = detail::pack_field(grad_out);
    std::vector<double> gx(gin.voxels() * static_cast<size_t>(k.cols), 0.0);
    const int px = grad_out.p_dims[0], py = grad_out.p_dims[1], pz = grad_out.p_dims[2];
    const int npf = k.grid.num_offsets();
    size_t vox = 0;
    for (int z = 0; z < pz; ++z)
        for (int y = 0; y < py; ++y)
            for (int x = 0; x < px; ++x, ++vox) {
                const double* gv = &gout[vox * static_cast<size_t>(k.rows)];
                for (int pf = 0; pf < npf; ++pf) {
                    auto o = k.grid.offset(pf);
                    int sx = x + o[0], sy = y + o[1], sz = z + o[2];
                    if (sx < 0 || sx >= px || sy < 0 || sy >= py || sz < 0 || sz >= pz) continue;
                    double* xv = &gx[((static_cast<size_t>(sz) * py + sy) * px + sx) *
                                     static_cast<size_t>(k.cols)];
                    const double* kmat = &k.k[static_cast<size_t>(pf) * k.rows * k.cols];
                    for (int r = 0; r < k.rows; ++r) {
                        double g = gv[r];
                        if (g == 0.0) continue;
                        const double* krow = kmat + static_cast<size_t>(r) * k.cols;
                        for (int c = 0; c < k.cols; ++c) xv[c] += krow[c] * g;
                    }
                }
            }
    detail::unpack_field(gx, gin);
    return gin;
}

// dL/d(kernel entries), same layout as Kernel::k
inline std::vector<double> pq_conv_backward_kernel(const Kernel& k,
                                                   const MultiChannelTensorField& in,
                                                   const MultiChannelTensorField& grad_out) {
    std::vector<double> gk(k.k.size(), 0.0);
    std::vector<double> xin = detail::pack_field(in);
    std::vector<double> gout = detail::pack_field(grad_out);
    const int px = in.p_dims[0], py = in.p_dims[1], pz = in.p_dims[2];
    const int npf = k.grid.num_offsets();
    size_t vox = 0;
    for (int z = 0; z < pz; ++z)
        for (int y = 0; y < py; ++y)
            for (int x = 0; x < px; ++x, ++vox) {
                const double* gv = &gout[vox * static_cast<size_t>(k.rows)];
                for (int pf = 0; pf < npf; ++pf) {
                    auto o = k.grid.offset(pf);
                    int sx = x + o[0], sy = y + o[1], sz = z + o[2];
                    if (sx < 0 || sx >= px || sy < 0 || sy >= py || sz < 0 || sz >= pz) continue;
                    const double* xv =
                        &xin[((static_cast<size_t>(sz) * py + sy) * px + sx) *
                             static_cast<size_t>(k.cols)];
                    double* gmat = &gk[static_cast<size_t>(pf) * k.rows * k.cols];
                    for (int r = 0; r < k.rows; ++r) {
                        double g = gv[r];
                        if (g == 0.0) continue;
                        double* grow = gmat + static_cast<size_t>(r) * k.cols;
                        for (int c = 0; c < k.cols; ++c) grow[c] += g * xv[c];
                    }
                }
            }
    return gk;
}

// Direct evaluation of the discretized layer sum, used as the correctness
// oracle for pq_conv. Evaluates basis filters pointwise; O(P^3 * npf * Q^2)
// per output channel, small instances only.
inline MultiChannelTensorField pq_conv_reference(const KernelBasis& basis, const Weights& w,
                                                 const MultiChannelTensorField& in,
                                                 const RadialBasisSpec* radial_p_override =
                                                     nullptr) {
    require(in.type == basis.tau_in, "pq_conv_reference: input type mismatch");
    FilterBasisSpec spec = basis.spec;
    if (radial_p_override) spec.radial_p = *radial_p_override;
    MultiChannelTensorField out(basis.tau_out, in.p_dims, basis.q_out);
    const int px = in.p_dims[0], py = in.p_dims[1], pz = in.p_dims[2];
    const int r = basis.grid.radius;
    for (int z = 0; z < pz; ++z)
        for (int y = 0; y < py; ++y)
            for (int x = 0; x < px; ++x)
                for (int no = 0; no < basis.q_out.size(); ++no) {
                    Vec3 qo = basis.q_out.vectors[static_cast<size_t>(no)];
                    for (int co = 0; co < basis.tau_out.num_channels(); ++co) {
                        int lo = basis.tau_out.channel_order(co);
                        int off_out = basis.tau_out.channel_offset(co);
                        for (int ci = 0; ci < basis.tau_in.num_channels(); ++ci) {
                            int li = basis.tau_in.channel_order(ci);
                            int off_in = basis.tau_in.channel_offset(ci);
                            const PairBasis& pb = basis.pair(lo, li);
                            for (size_t chi = 0; chi < pb.channels.size(); ++chi) {
                                const AngularChannel& ch = pb.channels[chi].ch;
                                const CgBlock& cg = clebsch_gordan(ch.l_filter, li, lo);
                                const std::vector<double>& wk = w.w[co][ci][chi];
                                for (int k = 0; k < radial_size(spec, ch); ++k) {
                                    double wv = wk[static_cast<size_t>(k)];
                                    if (wv == 0.0) continue;
                                    // window: the filter vanishes outside |dp|_inf <= r
                                    for (int dz = -r; dz <= r; ++dz)
                                        for (int dy = -r; dy <= r; ++dy)
                                            for (int dx = -r; dx <= r; ++dx) {
                                                int sx = x + dx, sy = y + dy, sz = z + dz;
                                                if (sx < 0 || sx >= px || sy < 0 || sy >= py ||
                                                    sz < 0 || sz >= pz)
                                                    continue;
                                                // dp = p_out - p_in
                                                Vec3 dp{static_cast<double>(-dx),
                                                        static_cast<double>(-dy),
                                                        static_cast<double>(-dz)};
                                                for (int ni = 0; ni < basis.q_in.size(); ++ni) {
                                                    SphericalTensor f = filter_eval(
                                                        spec, ch, k, dp, qo,
                                                        basis.q_in.vectors[static_cast<size_t>(ni)]);
                                                    for (int mo = -lo; mo <= lo; ++mo) {
                                                        double acc = 0;
                                                        for (int mf = -ch.l_filter;
                                                             mf <= ch.l_filter; ++mf) {
                                                            if (f[mf + ch.l_filter] == 0.0)
                                                                continue;
                                                            for (int mi = -li; mi <= li; ++mi)
                                                                acc += cg.at(mo, mf, mi) *
                                                                       f[mf + ch.l_filter] *
                                                                       in.at(off_in + mi + li, sz,
                                                                             sy, sx, ni);
                                                        }
                                                        out.at(off_out + mo + lo, z, y, x, no) +=
                                                            wv * acc;
                                                    }
                                                }
                                            }
                                }
                            }
                        }
                    }
                }
    return out;
}

// p-space-only special case: a single q sample on both sides
inline MultiChannelTensorField p_conv(const Kernel& k, const MultiChannelTensorField& in) {
    require(k.q_in.size() == 1 && k.q_out.size() == 1, "p_conv: q counts must be 1");
    return pq_conv(k, in);
}

// ------------------------------------------------------------- q reductions

// out(p, c) = sum_n sum_k w[c][k] phi_k(|q_n|) in(p, q_n, c) / Q
// Channel-wise with rotation-invariant coefficients, so equivariant.
inline MultiChannelTensorField q_reduce_weighted_average(const MultiChannelTensorField& in,
                                                         const RadialBasisSpec& radial,
                                                         const Matrix& w) {
    require(w.rows == in.type.num_channels() && w.cols == radial.size,
            "q_reduce_weighted_average: weight shape mismatch");
    MultiChannelTensorField out(in.type, in.p_dims, QScheme::origin());
    int q = in.qsize();
    std::vector<double> coeff(static_cast<size_t>(in.type.num_channels()) * q, 0.0);
    for (int n = 0; n < q; ++n) {
        std::vector<double> phi = eval_radial(radial, in.q_scheme.vectors[n].norm());
        for (int c = 0; c < in.type.num_channels(); ++c) {
            double s = 0;
            for (int k = 0; k < radial.size; ++k) s += w(c, k) * phi[static_cast<size_t>(k)];
            coeff[static_cast<size_t>(c) * q + n] = s / q;
        }
    }
    for (int c = 0; c < in.type.num_channels(); ++c) {
        int l = in.type.channel_order(c);
        int off = in.type.channel_offset(c);
        for (int m = 0; m <= 2 * l; ++m)
            for (int z = 0; z < in.p_dims[2]; ++z)
                for (int y = 0; y < in.p_dims[1]; ++y)
                    for (int x = 0; x < in.p_dims[0]; ++x) {
                        double s = 0;
                        for (int n = 0; n < q; ++n)
                            s += coeff[static_cast<size_t>(c) * q + n] * in.at(off + m, z, y, x, n);
                        out.at(off + m, z, y, x, 0) = s;
                    }
    }
    return out;
}

// VJP of q_reduce_weighted_average wrt input and weights
inline MultiChannelTensorField q_reduce_weighted_average_backward(
    const MultiChannelTensorField& in, const RadialBasisSpec& radial, const Matrix& w,
    const MultiChannelTensorField& grad_out, Matrix& grad_w) {
    MultiChannelTensorField gin(in.type, in.p_dims, in.q_scheme);
    if (grad_w.rows == 0) grad_w = Matrix(w.rows, w.cols);
    int q = in.qsize();
    std::vector<std::vector<double>> phi(static_cast<size_t>(q));
    for (int n = 0; n < q; ++n) phi[n] = eval_radial(radial, in.q_scheme.vectors[n].norm());
    for (int c = 0; c < in.type.num_channels(); ++c) {
        int l = in.type.channel_order(c);
        int off = in.type.channel_offset(c);
        for (int m = 0; m <= 2 * l; ++m)
            for (int z = 0; z < in.p_dims[2]; ++z)
                for (int y = 0; y < in.p_dims[1]; ++y)
                    for (int x = 0; x < in.p_dims[0]; ++x) {
                        double g = grad_out.at(off + m, z, y, x, 0);
                        if (g == 0.0) continue;
                        for (int n = 0; n < q; ++n) {
                            double coeff = 0;
                            for (int k = 0; k < radial.size; ++k)
                                coeff += w(c, k) * phi[n][static_cast<size_t>(k)];
                            gin.at(off + m, z, y, x, n) += g * coeff / q;
                            double xv = in.at(off + m, z, y, x, n);
                            for (int k = 0; k < radial.size; ++k)
                                grad_w(c, k) += g * phi[n][static_cast<size_t>(k)] * xv / q;
                        }
                    }
    }
    return gin;
}

// Gradual reduction: a pq-convolution whose output scheme is the origin.
inline MultiChannelTensorField q_reduce_gradual(const Kernel& k,
                                                const MultiChannelTensorField& in) {
    require(k.q_out.size() == 1 && k.q_out.vectors[0].norm() <= 1e-12,
            "q_reduce_gradual: kernel output scheme must be {(0,0,0)}");
    return pq_conv(k, in);
}

// ----------------------------------------------------------------- b0 merge

// Replaces the listed q=0 samples by their single mean sample (kept at the
// first listed position); all other q samples are unchanged.
inline MultiChannelTensorField b0_mean(const MultiChannelTensorField& in,
                                       const std::vector<int>& b0_indices) {
    require(!b0_indices.empty(), "b0_mean: no indices given");
    std::vector<bool> is_b0(static_cast<size_t>(in.qsize()), false);
    for (int idx : b0_indices) {
        require(idx >= 0 && idx < in.qsize(), "b0_mean: index out of range");
        require(in.q_scheme.vectors[static_cast<size_t>(idx)].norm() <= 1e-9,
                "b0_mean: index does not refer to a zero q-vector");
        require(!is_b0[static_cast<size_t>(idx)], "b0_mean: duplicate index");
        is_b0[static_cast<size_t>(idx)] = true;
    }
    int keep = b0_indices.front();
    QScheme scheme;
    std::vector<int> src;  // output n -> input n (-1 marks the merged slot)
    for (int n = 0; n < in.qsize(); ++n) {
        if (is_b0[static_cast<size_t>(n)] && n != keep) continue;
        scheme.vectors.push_back(in.q_scheme.vectors[static_cast<size_t>(n)]);
        src.push_back(n == keep ? -1 : n);
    }
    MultiChannelTensorField out(in.type, in.p_dims, scheme);
    double inv = 1.0 / static_cast<double>(b0_indices.size());
    for (int comp = 0; comp < in.type.dim(); ++comp)
        for (int z = 0; z < in.p_dims[2]; ++z)
            for (int y = 0; y < in.p_dims[1]; ++y)
                for (int x = 0; x < in.p_dims[0]; ++x)
                    for (size_t n = 0; n < src.size(); ++n) {
                        if (src[n] >= 0) {
                            out.at(comp, z, y, x, static_cast<int>(n)) =
                                in.at(comp, z, y, x, src[n]);
                        } else {
                            double s = 0;
                            for (int idx : b0_indices) s += in.at(comp, z, y, x, idx);
                            out.at(comp, z, y, x, static_cast<int>(n)) = s * inv;
                        }
                    }
    return out;
}

// -------------------------------------------------------------------- gates

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double swish(double x) { return x * sigmoid(x); }

// Pairing between each non-scalar channel of the declared output type and
// its co-produced scalar gate channel. The linear layer emits the augmented
// type; the nonlinearity consumes the gates.
struct GateSpec {
    TensorType declared;
    std::vector<int> nonscalar;     // channel indices (in augmented type) of gated channels
    std::vector<int> gate_channel;  // parallel: their gate channels

    static GateSpec for_type(const TensorType& declared) {
        GateSpec gs;
        gs.declared = declared;
        int n_scalar = declared.counts.empty() ? 0 : declared.counts[0];
        TensorType aug = gs.augmented();
        int gate = n_scalar;  // gates sit right after the declared scalars
        for (int c = 0; c < aug.num_channels(); ++c) {
            if (aug.channel_order(c) == 0) continue;
            gs.nonscalar.push_back(c);
            gs.gate_channel.push_back(gate++);
        }
        return gs;
    }

    int num_gates() const {
        int n = 0;
        for (size_t l = 1; l < declared.counts.size(); ++l) n += declared.counts[l];
        return n;
    }

    TensorType augmented() const {
        TensorType aug = declared;
        if (aug.counts.empty()) aug.counts.push_back(0);
        aug.counts[0] += num_gates();
        return aug;
    }
};

// Swish on scalar channels, sigmoid-gated scaling on l > 0 channels; gate
// channels are dropped from the output type.
inline MultiChannelTensorField gated_nonlinearity(const MultiChannelTensorField& in,
                                                  const GateSpec& gates) {
    TensorType aug = gates.augmented();
    require(in.type == aug, "gated_nonlinearity: input type must carry the gate channels");
    MultiChannelTensorField out(gates.declared, in.p_dims, in.q_scheme);
    size_t plane = in.voxels() * static_cast<size_t>(in.qsize());

    int n_scalar = gates.declared.counts.empty() ? 0 : gates.declared.counts[0];
    for (int c = 0; c < n_scalar; ++c) {
        size_t src = static_cast<size_t>(aug.channel_offset(c)) * plane;
        size_t dst = static_cast<size_t>(gates.declared.channel_offset(c)) * plane;
        for (size_t i = 0; i < plane; ++i) out.data[dst + i] = swish(in.data[src + i]);
    }
    for (size_t j = 0; j < gates.nonscalar.size(); ++j) {
        int c = gates.nonscalar[j];
        int l = aug.channel_order(c);
        size_t src = static_cast<size_t>(aug.channel_offset(c)) * plane;
        size_t gsrc = static_cast<size_t>(aug.channel_offset(gates.gate_channel[j])) * plane;
        // declared channel index: scalars line up, non-scalars shift by the gate count
        int c_decl = c - gates.num_gates();
        require(gates.declared.channel_order(c_decl) == l, "gated_nonlinearity: pairing broken");
        size_t dst = static_cast<size_t>(gates.declared.channel_offset(c_decl)) * plane;
        for (size_t i = 0; i < plane; ++i) {
            double s = sigmoid(in.data[gsrc + i]);
            for (int m = 0; m <= 2 * l; ++m)
                out.data[dst + static_cast<size_t>(m) * plane + i] =
                    s * in.data[src + static_cast<size_t>(m) * plane + i];
        }
    }
    return out;
}

inline MultiChannelTensorField gated_nonlinearity_backward(const MultiChannelTensorField& in,
                                                           const GateSpec& gates,
                                                           const MultiChannelTensorField& gout) {
    TensorType aug = gates.augmented();
    MultiChannelTensorField gin(aug, in.p_dims, in.q_scheme);
    size_t plane = in.voxels() * static_cast<size_t>(in.qsize());
    int n_scalar = gates.declared.counts.empty() ? 0 : gates.declared.counts[0];
    for (int c = 0; c < n_scalar; ++c) {
        size_t src = static_cast<size_t>(aug.channel_offset(c)) * plane;
        size_t dst = static_cast<size_t>(gates.declared.channel_offset(c)) * plane;
        for (size_t i = 0; i < plane; ++i) {
            double x = in.data[src + i];
            double s = sigmoid(x);
            gin.data[src + i] = gout.data[dst + i] * (s + x * s * (1 - s));
        }
    }
    for (size_t j = 0; j < gates.nonscalar.size(); ++j) {
        int c = gates.nonscalar[j];
        int l = aug.channel_order(c);
        size_t src = static_cast<size_t>(aug.channel_offset(c)) * plane;
        size_t gsrc = static_cast<size_t>(aug.channel_offset(gates.gate_channel[j])) * plane;
        int c_decl = c - gates.num_gates();
        size_t dst = static_cast<size_t>(gates.declared.channel_offset(c_decl)) * plane;
        for (size_t i = 0; i < plane; ++i) {
            double g = in.data[gsrc + i];
            double s = sigmoid(g);
            double acc = 0;
            for (int m = 0; m <= 2 * l; ++m) {
                double go = gout.data[dst + static_cast<size_t>(m) * plane + i];
                gin.data[src + static_cast<size_t>(m) * plane + i] = go * s;
                acc += go * in.data[src + static_cast<size_t>(m) * plane + i];
            }
            gin.data[gsrc + i] = acc * s * (1 - s);
        }
    }
    return gin;
}

}  // namespace pqsteer
