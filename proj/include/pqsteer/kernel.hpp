// Kernel engine: precomputation of the CG-contracted angular basis responses
// over the discretized (p_filter, q_out, q_in) domain, weight-linear kernel
// assembly in the conv3d layout, gradients of the assembly, and the
// continuous-coordinate steerability check.
#pragma once

#include <map>

#include "field.hpp"
#include "filter_basis.hpp"

namespace pqsteer {

// CG-contracted angular response of one channel:
//   M(m_out, m_in) = sum_mf C(l_out,m_out; l_f,mf; l_in,m_in) * A_mf(-p_f, q_out, q_in)
// stored flat over ((n_out * Q_in + n_in) * npf + pf) blocks of (2lo+1)(2li+1).
struct ChannelBlock {
    AngularChannel ch;
    std::vector<double> ang;
};

struct PairBasis {
    int l_out = 0, l_in = 0;
    std::vector<ChannelBlock> channels;
};

struct PrecomputeOptions {
    size_t byte_budget = size_t(2) << 30;  // 2 GiB
    bool budget_override = false;
    bool euclidean_ball_mask = false;  // optional L2 mask inside the cube support
};

struct KernelBasis {
    FilterBasisSpec spec;
    TensorType tau_in, tau_out;
    QScheme q_in, q_out;
    PFilterGrid grid;
    PrecomputeOptions opts;

    std::vector<PairBasis> pairs;
    std::map<std::pair<int, int>, int> pair_index;  // (l_out, l_in) -> pairs slot

    // radial component values on the grid: rows k, cols sample index
    Matrix rqo, rqi;            // fixed Gaussian families
    Matrix rp;                  // empty when the p radial basis is learned
    std::vector<double> p_radii;  // |p_f| per offset (precomputed radial inputs)
    bool radial_p_learned = false;

    int npf() const { return grid.num_offsets(); }

    const PairBasis& pair(int l_out, int l_in) const {
        auto it = pair_index.find({l_out, l_in});
        require(it != pair_index.end(), "KernelBasis: unknown order pair");
        return pairs[static_cast<size_t>(it->second)];
    }

    size_t ang_block(int n_out, int n_in, int pf) const {
        return (static_cast<size_t>(n_out) * q_in.size() + n_in) * npf() + pf;
    }
};

// Learned weights W indexed (c_out, c_in, channel, flat radial k). The
// channel slot refers to the enumeration for that (l_out, l_in) pair.
struct Weights {
    std::vector<std::vector<std::vector<std::vector<double>>>> w;

    static Weights zeros_like(const KernelBasis& basis) {
        Weights out;
        int n_out = basis.tau_out.num_channels();
        int n_in = basis.tau_in.num_channels();
        out.w.resize(static_cast<size_t>(n_out));
        for (int co = 0; co < n_out; ++co) {
            out.w[co].resize(static_cast<size_t>(n_in));
            int lo = basis.tau_out.channel_order(co);
            for (int ci = 0; ci < n_in; ++ci) {
                int li = basis.tau_in.channel_order(ci);
                const PairBasis& pb = basis.pair(lo, li);
                out.w[co][ci].resize(pb.channels.size());
                for (size_t chi = 0; chi < pb.channels.size(); ++chi)
                    out.w[co][ci][chi].assign(
                        static_cast<size_t>(radial_size(basis.spec, pb.channels[chi].ch)), 0.0);
            }
        }
        return out;
    }

    size_t param_count() const {
        size_t n = 0;
        for (const auto& a : w)
            for (const auto& b : a)
                for (const auto& c : b) n += c.size();
        return n;
    }

    void for_each(const std::function<void(double&)>& f) {
        for (auto& a : w)
            for (auto& b : a)
                for (auto& c : b)
                    for (double& v : c) f(v);
    }
};

// Dense conv3d kernel. Row index is (n_out, component) with n_out major,
// column index is (n_in, component); storage is [pf][row][col] row-major.
struct Kernel {
    TensorType tau_in, tau_out;
    QScheme q_in, q_out;
    PFilterGrid grid;
    int rows = 0, cols = 0;
    std::vector<double> k;

    double& at(int pf, int row, int col) {
        return k[(static_cast<size_t>(pf) * rows + row) * cols + col];
    }
    double at(int pf, int row, int col) const {
        return k[(static_cast<size_t>(pf) * rows + row) * cols + col];
    }
};

namespace detail {

inline Matrix radial_values(const RadialBasisSpec& spec, const std::vector<double>& xs) {
    Matrix m(spec.size, static_cast<int>(xs.size()));
    for (size_t j = 0; j < xs.size(); ++j) {
        std::vector<double> v = eval_radial(spec, xs[j]);
        for (int k = 0; k < spec.size; ++k) m(k, static_cast<int>(j)) = v[static_cast<size_t>(k)];
    }
    return m;
}

inline std::vector<double> scheme_lengths(const QScheme& q) {
    std::vector<double> xs;
    xs.reserve(q.vectors.size());
    for (const Vec3& v : q.vectors) xs.push_back(v.norm());
    return xs;
}

}  // namespace detail

inline size_t estimate_basis_bytes(const FilterBasisSpec& spec, const TensorType& tau_in,
                                   const TensorType& tau_out, const QScheme& q_in,
                                   const QScheme& q_out, const PFilterGrid& grid) {
    size_t bytes = 0;
    std::map<std::pair<int, int>, bool> seen;
    for (int co = 0; co < tau_out.num_channels(); ++co)
        for (int ci = 0; ci < tau_in.num_channels(); ++ci) {
            int lo = tau_out.channel_order(co), li = tau_in.channel_order(ci);
            if (seen[{lo, li}]) continue;
            seen[{lo, li}] = true;
            size_t per_entry = static_cast<size_t>(2 * lo + 1) * (2 * li + 1) * sizeof(double);
            bytes += enumerate_channels(spec, li, lo).size() * static_cast<size_t>(q_out.size()) *
                     q_in.size() * grid.num_offsets() * per_entry;
        }
    return bytes;
}

inline KernelBasis precompute_basis(const FilterBasisSpec& spec, const TensorType& tau_in,
                                    const TensorType& tau_out, const QScheme& q_in,
                                    const QScheme& q_out, const PFilterGrid& grid,
                                    const PrecomputeOptions& opts = {}) {
    q_in.validate();
    q_out.validate();
    size_t est = estimate_basis_bytes(spec, tau_in, tau_out, q_in, q_out, grid);
    if (est > opts.byte_budget && !opts.budget_override)
        throw Error("precompute_basis: estimated basis size " + std::to_string(est) +
                    " bytes exceeds the budget of " + std::to_string(opts.byte_budget) +
                    " bytes; shrink the configuration or pass the budget override");

    KernelBasis basis;
    basis.spec = spec;
    basis.tau_in = tau_in;
    basis.tau_out = tau_out;
    basis.q_in = q_in;
    basis.q_out = q_out;
    basis.grid = grid;
    basis.opts = opts;
    basis.radial_p_learned = (spec.radial_p.kind == RadialKind::mlp);

    int npf = grid.num_offsets();
    basis.p_radii.resize(static_cast<size_t>(npf));
    for (int pf = 0; pf < npf; ++pf) basis.p_radii[static_cast<size_t>(pf)] = grid.offset_vec(pf).norm();
    if (!basis.radial_p_learned) basis.rp = detail::radial_values(spec.radial_p, basis.p_radii);
    basis.rqo = detail::radial_values(spec.radial_q_out, detail::scheme_lengths(q_out));
    basis.rqi = detail::radial_values(spec.radial_q_in, detail::scheme_lengths(q_in));

    if (opts.euclidean_ball_mask && !basis.radial_p_learned) {
        for (int pf = 0; pf < npf; ++pf)
            if (basis.p_radii[static_cast<size_t>(pf)] > grid.radius)
                for (int k = 0; k < basis.rp.rows; ++k) basis.rp(k, pf) = 0.0;
    }

    for (int co = 0; co < tau_out.num_channels(); ++co) {
        int lo = tau_out.channel_order(co);
        for (int ci = 0; ci < tau_in.num_channels(); ++ci) {
            int li = tau_in.channel_order(ci);
            if (basis.pair_index.count({lo, li})) continue;
            basis.pair_index[{lo, li}] = static_cast<int>(basis.pairs.size());
            PairBasis pb;
            pb.l_out = lo;
            pb.l_in = li;
            for (const AngularChannel& ch : enumerate_channels(spec, li, lo)) {
                ChannelBlock blk;
                blk.ch = ch;
                const CgBlock& cg = clebsch_gordan(ch.l_filter, li, lo);
                int mo_n = 2 * lo + 1, mi_n = 2 * li + 1, mf_n = 2 * ch.l_filter + 1;
                blk.ang.assign(static_cast<size_t>(q_out.size()) * q_in.size() * npf * mo_n * mi_n,
                               0.0);
                for (int no = 0; no < q_out.size(); ++no)
                    for (int ni = 0; ni < q_in.size(); ++ni)
                        for (int pf = 0; pf < npf; ++pf) {
                            // Kernel entries take the filter at the negated offset.
                            SphericalTensor a =
                                angular_eval(ch, -grid.offset_vec(pf), q_out.vectors[no],
                                             q_in.vectors[ni]);
                            size_t base = basis.ang_block(no, ni, pf) *
                                          static_cast<size_t>(mo_n) * mi_n;
                            for (int mo = 0; mo < mo_n; ++mo)
                                for (int mi = 0; mi < mi_n; ++mi) {
                                    double s = 0;
                                    for (int mf = 0; mf < mf_n; ++mf)
                                        s += cg.at(mo - lo, mf - ch.l_filter, mi - li) * a[mf];
                                    blk.ang[base + static_cast<size_t>(mo) * mi_n + mi] = s;
                                }
                        }
                pb.channels.push_back(std::move(blk));
            }
            basis.pairs.push_back(std::move(pb));
        }
    }
    return basis;
}

// Current p-radial values: precomputed for fixed families, recomputed from
// the (possibly trained) spec for the learned family.
inline Matrix current_rp(const KernelBasis& basis, const RadialBasisSpec* radial_p_override) {
    const RadialBasisSpec& rspec = radial_p_override ? *radial_p_override : basis.spec.radial_p;
    if (!basis.radial_p_learned && !radial_p_override) return basis.rp;
    Matrix rp = detail::radial_values(rspec, basis.p_radii);
    if (basis.opts.euclidean_ball_mask)
        for (int pf = 0; pf < basis.npf(); ++pf)
            if (basis.p_radii[static_cast<size_t>(pf)] > basis.grid.radius)
                for (int k = 0; k < rp.rows; ++k) rp(k, pf) = 0.0;
    return rp;
}

inline Kernel assemble_kernel(const KernelBasis& basis, const Weights& w,
                              const RadialBasisSpec* radial_p_override = nullptr) {
    Kernel out;
    out.tau_in = basis.tau_in;
    out.tau_out = basis.tau_out;
    out.q_in = basis.q_in;
    out.q_out = basis.q_out;
    out.grid = basis.grid;
    int dim_out = basis.tau_out.dim(), dim_in = basis.tau_in.dim();
    out.rows = basis.q_out.size() * dim_out;
    out.cols = basis.q_in.size() * dim_in;
    int npf = basis.npf();
    out.k.assign(static_cast<size_t>(npf) * out.rows * out.cols, 0.0);

    Matrix rp = current_rp(basis, radial_p_override);

    int n_cout = basis.tau_out.num_channels(), n_cin = basis.tau_in.num_channels();
    require(static_cast<int>(w.w.size()) == n_cout, "assemble_kernel: weight shape mismatch");
    std::vector<double> s_pf(static_cast<size_t>(npf));
    for (int co = 0; co < n_cout; ++co) {
        int lo = basis.tau_out.channel_order(co);
        int off_out = basis.tau_out.channel_offset(co);
        int mo_n = 2 * lo + 1;
        for (int ci = 0; ci < n_cin; ++ci) {
            int li = basis.tau_in.channel_order(ci);
            int off_in = basis.tau_in.channel_offset(ci);
            int mi_n = 2 * li + 1;
            const PairBasis& pb = basis.pair(lo, li);
            require(w.w[co][ci].size() == pb.channels.size(),
                    "assemble_kernel: channel count mismatch");
            for (size_t chi = 0; chi < pb.channels.size(); ++chi) {
                const ChannelBlock& blk = pb.channels[chi];
                const std::vector<double>& wk = w.w[co][ci][chi];
                bool has_p = uses_radial_p(blk.ch.kind);
                bool has_q = uses_radial_q(blk.ch.kind);
                int kp_n = has_p ? basis.spec.radial_p.size : 1;
                int kqo_n = has_q ? basis.spec.radial_q_out.size : 1;
                int kqi_n = has_q ? basis.spec.radial_q_in.size : 1;
                for (int no = 0; no < basis.q_out.size(); ++no) {
                    for (int ni = 0; ni < basis.q_in.size(); ++ni) {
                        // collapse the q radial components, then the p component
                        for (int pf = 0; pf < npf; ++pf) s_pf[static_cast<size_t>(pf)] = 0.0;
                        for (int kp = 0; kp < kp_n; ++kp) {
                            double wq = 0;
                            for (int kqo = 0; kqo < kqo_n; ++kqo)
                                for (int kqi = 0; kqi < kqi_n; ++kqi) {
                                    double c = wk[static_cast<size_t>((kp * kqo_n + kqo) * kqi_n +
                                                                      kqi)];
                                    if (has_q) c *= basis.rqo(kqo, no) * basis.rqi(kqi, ni);
                                    wq += c;
                                }
                            if (has_p) {
                                for (int pf = 0; pf < npf; ++pf)
                                    s_pf[static_cast<size_t>(pf)] += wq * rp(kp, pf);
                            } else {
                                for (int pf = 0; pf < npf; ++pf)
                                    s_pf[static_cast<size_t>(pf)] += wq;
                            }
                        }
                        for (int pf = 0; pf < npf; ++pf) {
                            double s = s_pf[static_cast<size_t>(pf)];
                            if (s == 0.0) continue;
                            const double* mblk =
                                &blk.ang[basis.ang_block(no, ni, pf) *
                                         static_cast<size_t>(mo_n) * mi_n];
                            for (int mo = 0; mo < mo_n; ++mo) {
                                int row = no * dim_out + off_out + mo;
                                double* krow = &out.k[(static_cast<size_t>(pf) * out.rows + row) *
                                                      out.cols];
                                for (int mi = 0; mi < mi_n; ++mi)
                                    krow[ni * dim_in + off_in + mi] +=
                                        s * mblk[static_cast<size_t>(mo) * mi_n + mi];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

// Accumulates dL/dW (and dL/d(mlp) when the p radial basis is learned) from
// the gradient wrt the assembled kernel entries. Exploits the linearity of
// the assembly in W.
inline void accumulate_weight_grad(const KernelBasis& basis, const std::vector<double>& grad_k,
                                   Weights& gw, const Weights* w_for_radial = nullptr,
                                   const RadialBasisSpec* radial_p_override = nullptr,
                                   MlpWeights* grad_mlp = nullptr) {
    int dim_out = basis.tau_out.dim(), dim_in = basis.tau_in.dim();
    int rows = basis.q_out.size() * dim_out;
    int cols = basis.q_in.size() * dim_in;
    int npf = basis.npf();
    require(grad_k.size() == static_cast<size_t>(npf) * rows * cols,
            "accumulate_weight_grad: grad size mismatch");
    Matrix rp = current_rp(basis, radial_p_override);
    Matrix grad_rp(rp.rows, rp.cols);  // filled only when grad_mlp is wanted

    int n_cout = basis.tau_out.num_channels(), n_cin = basis.tau_in.num_channels();
    std::vector<double> t_pf(static_cast<size_t>(npf));
    for (int co = 0; co < n_cout; ++co) {
        int lo = basis.tau_out.channel_order(co);
        int off_out = basis.tau_out.channel_offset(co);
        int mo_n = 2 * lo + 1;
        for (int ci = 0; ci < n_cin; ++ci) {
            int li = basis.tau_in.channel_order(ci);
            int off_in = basis.tau_in.channel_offset(ci);
            int mi_n = 2 * li + 1;
            const PairBasis& pb = basis.pair(lo, li);
            for (size_t chi = 0; chi < pb.channels.size(); ++chi) {
                const ChannelBlock& blk = pb.channels[chi];
                std::vector<double>& gwk = gw.w[co][ci][chi];
                bool has_p = uses_radial_p(blk.ch.kind);
                bool has_q = uses_radial_q(blk.ch.kind);
                int kp_n = has_p ? basis.spec.radial_p.size : 1;
                int kqo_n = has_q ? basis.spec.radial_q_out.size : 1;
                int kqi_n = has_q ? basis.spec.radial_q_in.size : 1;
                for (int no = 0; no < basis.q_out.size(); ++no) {
                    for (int ni = 0; ni < basis.q_in.size(); ++ni) {
                        // t(pf) = <grad_K block, angular block>_F
                        for (int pf = 0; pf < npf; ++pf) {
                            const double* mblk =
                                &blk.ang[basis.ang_block(no, ni, pf) *
                                         static_cast<size_t>(mo_n) * mi_n];
                            double t = 0;
                            for (int mo = 0; mo < mo_n; ++mo) {
                                int row = no * dim_out + off_out + mo;
                                const double* krow =
                                    &grad_k[(static_cast<size_t>(pf) * rows + row) * cols];
                                for (int mi = 0; mi < mi_n; ++mi)
                                    t += krow[ni * dim_in + off_in + mi] *
                                         mblk[static_cast<size_t>(mo) * mi_n + mi];
                            }
                            t_pf[static_cast<size_t>(pf)] = t;
                        }
                        for (int kp = 0; kp < kp_n; ++kp) {
                            double sp = 0;
                            if (has_p) {
                                for (int pf = 0; pf < npf; ++pf)
                                    sp += rp(kp, pf) * t_pf[static_cast<size_t>(pf)];
                            } else {
                                for (int pf = 0; pf < npf; ++pf) sp += t_pf[static_cast<size_t>(pf)];
                            }
                            for (int kqo = 0; kqo < kqo_n; ++kqo)
                                for (int kqi = 0; kqi < kqi_n; ++kqi) {
                                    double r = has_q ? basis.rqo(kqo, no) * basis.rqi(kqi, ni) : 1.0;
                                    gwk[static_cast<size_t>((kp * kqo_n + kqo) * kqi_n + kqi)] +=
                                        sp * r;
                                }
                        }
                        if (grad_mlp && has_p && w_for_radial) {
                            const std::vector<double>& wk = w_for_radial->w[co][ci][chi];
                            for (int kp = 0; kp < kp_n; ++kp) {
                                double wq = 0;
                                for (int kqo = 0; kqo < kqo_n; ++kqo)
                                    for (int kqi = 0; kqi < kqi_n; ++kqi) {
                                        double c = wk[static_cast<size_t>(
                                            (kp * kqo_n + kqo) * kqi_n + kqi)];
                                        if (has_q) c *= basis.rqo(kqo, no) * basis.rqi(kqi, ni);
                                        wq += c;
                                    }
                                for (int pf = 0; pf < npf; ++pf)
                                    grad_rp(kp, pf) += wq * t_pf[static_cast<size_t>(pf)];
                            }
                        }
                    }
                }
            }
        }
    }
    if (grad_mlp) {
        const RadialBasisSpec& rspec =
            radial_p_override ? *radial_p_override : basis.spec.radial_p;
        require(rspec.kind == RadialKind::mlp, "accumulate_weight_grad: radial basis not learned");
        std::vector<double> col(static_cast<size_t>(grad_rp.rows));
        for (int pf = 0; pf < npf; ++pf) {
            bool any = false;
            for (int k = 0; k < grad_rp.rows; ++k) {
                col[static_cast<size_t>(k)] = grad_rp(k, pf);
                any = any || grad_rp(k, pf) != 0.0;
            }
            if (any) mlp_backward(rspec, basis.p_radii[static_cast<size_t>(pf)], col, *grad_mlp);
        }
    }
}

// --------------------------------------------------- continuous steerability

// Continuous-coordinate kernel evaluator: re-evaluates the basis filters at
// real-valued (dp, q_out, q_in) rather than grid samples.
inline Matrix continuous_kernel(const KernelBasis& basis, const Weights& w, const Vec3& dp,
                                const Vec3& q_out, const Vec3& q_in,
                                const RadialBasisSpec* radial_p_override = nullptr) {
    FilterBasisSpec spec = basis.spec;
    if (radial_p_override) spec.radial_p = *radial_p_override;
    int dim_out = basis.tau_out.dim(), dim_in = basis.tau_in.dim();
    Matrix out(dim_out, dim_in);
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
                    if (wk[static_cast<size_t>(k)] == 0.0) continue;
                    SphericalTensor f = filter_eval(spec, ch, k, dp, q_out, q_in);
                    for (int mo = -lo; mo <= lo; ++mo)
                        for (int mi = -li; mi <= li; ++mi) {
                            double s = 0;
                            for (int mf = -ch.l_filter; mf <= ch.l_filter; ++mf)
                                s += cg.at(mo, mf, mi) * f[mf + ch.l_filter];
                            out(off_out + mo + lo, off_in + mi + li) +=
                                wk[static_cast<size_t>(k)] * s;
                        }
                }
            }
        }
    }
    return out;
}

inline Matrix block_diag_wigner(const TensorType& tau, const Rotation& g) {
    Matrix out(tau.dim(), tau.dim());
    for (int c = 0; c < tau.num_channels(); ++c) {
        int l = tau.channel_order(c);
        int off = tau.channel_offset(c);
        Matrix d = wigner_d(l, g);
        for (int i = 0; i <= 2 * l; ++i)
            for (int j = 0; j <= 2 * l; ++j) out(off + i, off + j) = d(i, j);
    }
    return out;
}

// Max relative error of the joint-rotation steerability of the assembled
// continuous kernel over random coordinate draws. Coordinates are drawn from
// rotation-closed balls so the support cutoff is transparent.
inline double steerability_check(const KernelBasis& basis, const Weights& w, const Rotation& g,
                                 int samples, Rng& rng,
                                 const RadialBasisSpec* radial_p_override = nullptr) {
    double q_radius = std::max(basis.q_in.max_length(), basis.q_out.max_length()) * 1.2 + 0.1;
    double p_radius = std::max(1.0, static_cast<double>(basis.grid.radius));
    Matrix d_out = block_diag_wigner(basis.tau_out, g);
    Matrix d_in_t = block_diag_wigner(basis.tau_in, g).transposed();
    double worst = 0;
    for (int s = 0; s < samples; ++s) {
        Vec3 dp = rng.in_ball(p_radius);
        Vec3 qo = rng.in_ball(q_radius);
        Vec3 qi = rng.in_ball(q_radius);
        Matrix lhs = continuous_kernel(basis, w, g * dp, g * qo, g * qi, radial_p_override);
        Matrix base = continuous_kernel(basis, w, dp, qo, qi, radial_p_override);
        Matrix rhs = d_out * base * d_in_t;
        double scale = std::max(rhs.max_abs(), 1e-30);
        worst = std::max(worst, max_abs_diff(lhs, rhs) / scale);
    }
    return worst;
}

// Variance-scaled deterministic initialization of the weight tensors.
inline Weights init_weights(const KernelBasis& basis, Rng& rng) {
    Weights w = Weights::zeros_like(basis);
    double fan_in = static_cast<double>(basis.tau_in.dim()) * basis.q_in.size() * basis.npf();
    for (size_t co = 0; co < w.w.size(); ++co)
        for (size_t ci = 0; ci < w.w[co].size(); ++ci) {
            size_t basis_size = 0;
            for (const auto& chan : w.w[co][ci]) basis_size += chan.size();
            double bound = 1.0 / std::sqrt(fan_in * std::max<size_t>(basis_size, 1));
            for (auto& chan : w.w[co][ci])
                for (double& v : chan) v = rng.uniform(-bound, bound);
        }
    return w;
}

}  // namespace pqsteer
