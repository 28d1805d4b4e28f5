// Angular bases over (dp, q_out, q_in), filter-channel enumeration under the
// Clebsch-Gordan constraints, and basis-filter evaluation F = R * A.
#pragma once

#include <limits>

#include "qscheme.hpp"
#include "radial.hpp"
#include "so3.hpp"

namespace pqsteer {

enum class AngularKind { p_diff, q_diff, pq_diff, tp };

struct AngularChannel {
    int l_filter = 0;
    AngularKind kind = AngularKind::p_diff;
    int l_p = -1, l_q = -1;  // tp only

    bool operator==(const AngularChannel& o) const {
        return l_filter == o.l_filter && kind == o.kind && l_p == o.l_p && l_q == o.l_q;
    }
};

enum class FilterFamily { p_space, q_space, pq_diff, pq_diff_p, pq_diff_q, tp_vec, tp_d };

inline const char* family_name(FilterFamily f) {
    switch (f) {
        case FilterFamily::p_space: return "p-space";
        case FilterFamily::q_space: return "q-space";
        case FilterFamily::pq_diff: return "pq-diff";
        case FilterFamily::pq_diff_p: return "pq-diff+p";
        case FilterFamily::pq_diff_q: return "pq-diff+q";
        case FilterFamily::tp_vec: return "tp-vec";
        case FilterFamily::tp_d: return "tp±d";
    }
    return "?";
}

inline FilterFamily family_from_name(const std::string& s) {
    for (FilterFamily f :
         {FilterFamily::p_space, FilterFamily::q_space, FilterFamily::pq_diff,
          FilterFamily::pq_diff_p, FilterFamily::pq_diff_q, FilterFamily::tp_vec,
          FilterFamily::tp_d})
        if (s == family_name(f)) return f;
    throw Error("unknown filter family: " + s);
}

struct FilterBasisSpec {
    FilterFamily family = FilterFamily::p_space;
    int d = 1;  // tp±d only
    RadialBasisSpec radial_p, radial_q_out, radial_q_in;
    // Basis filters are defined to vanish outside the filter support; the
    // cutoff is an inf-norm bound on dp matching the discretization grid.
    double p_cutoff = std::numeric_limits<double>::infinity();
};

// Which radial components multiply a channel of the given kind.
inline bool uses_radial_p(AngularKind k) { return k != AngularKind::q_diff; }
inline bool uses_radial_q(AngularKind k) { return k != AngularKind::p_diff; }

// Flat radial index count for one channel: the product of the active
// component sizes (row-major p, q_out, q_in).
inline int radial_size(const FilterBasisSpec& spec, const AngularChannel& ch) {
    int n = 1;
    if (uses_radial_p(ch.kind)) n *= spec.radial_p.size;
    if (uses_radial_q(ch.kind)) n *= spec.radial_q_out.size * spec.radial_q_in.size;
    return n;
}

inline SphericalTensor angular_eval(const AngularChannel& ch, const Vec3& dp, const Vec3& q_out,
                                    const Vec3& q_in) {
    switch (ch.kind) {
        case AngularKind::p_diff:
            return sph_harm(ch.l_filter, dp);
        case AngularKind::q_diff:
            return sph_harm(ch.l_filter, q_out - q_in);
        case AngularKind::pq_diff:
            return sph_harm(ch.l_filter, dp - (q_out - q_in));
        case AngularKind::tp:
            return tensor_product(sph_harm(ch.l_p, dp), sph_harm(ch.l_q, q_out - q_in),
                                  ch.l_filter);
    }
    throw Error("angular_eval: bad kind");
}

namespace detail {

// tuples fixed for the tp-vec strategy
inline const std::vector<std::array<int, 3>>& tp_vec_tuples() {
    static const std::vector<std::array<int, 3>> t = {
        {0, 0, 0}, {1, 0, 1}, {1, 1, 0}, {1, 1, 1}, {2, 2, 2}};
    return t;
}

inline void push_sorted(std::vector<AngularChannel>& out) {
    std::sort(out.begin(), out.end(), [](const AngularChannel& a, const AngularChannel& b) {
        if (a.l_filter != b.l_filter) return a.l_filter < b.l_filter;
        if (a.l_p != b.l_p) return a.l_p < b.l_p;
        if (a.l_q != b.l_q) return a.l_q < b.l_q;
        return static_cast<int>(a.kind) < static_cast<int>(b.kind);
    });
}

}  // namespace detail

// Every admissible channel for the path l_in -> l_out, deterministic
// lexicographic (l_filter, l_p, l_q, kind) order.
inline std::vector<AngularChannel> enumerate_channels(const FilterBasisSpec& spec, int l_in,
                                                      int l_out) {
    int lo = std::abs(l_out - l_in), hi = l_out + l_in;
    std::vector<AngularChannel> out;
    auto add_single = [&](AngularKind kind) {
        for (int lf = lo; lf <= hi; ++lf) out.push_back({lf, kind, -1, -1});
    };
    switch (spec.family) {
        case FilterFamily::p_space: add_single(AngularKind::p_diff); break;
        case FilterFamily::q_space: add_single(AngularKind::q_diff); break;
        case FilterFamily::pq_diff: add_single(AngularKind::pq_diff); break;
        case FilterFamily::pq_diff_p:
            add_single(AngularKind::pq_diff);
            add_single(AngularKind::p_diff);
            break;
        case FilterFamily::pq_diff_q:
            add_single(AngularKind::pq_diff);
            add_single(AngularKind::q_diff);
            break;
        case FilterFamily::tp_vec:
            for (const auto& t : detail::tp_vec_tuples())
                if (t[0] >= lo && t[0] <= hi)
                    out.push_back({t[0], AngularKind::tp, t[1], t[2]});
            break;
        case FilterFamily::tp_d:
            for (int lf = lo; lf <= hi; ++lf)
                for (int lp = std::max(0, lf - spec.d); lp <= lf + spec.d; ++lp)
                    for (int lq = std::max(0, lf - spec.d); lq <= lf + spec.d; ++lq)
                        if (std::abs(lp - lq) <= lf && lf <= lp + lq)
                            out.push_back({lf, AngularKind::tp, lp, lq});
            break;
    }
    detail::push_sorted(out);
    return out;
}

// F = R * A for one channel and flat radial index k. Zero outside the
// p-support cutoff.
inline SphericalTensor filter_eval(const FilterBasisSpec& spec, const AngularChannel& ch, int k,
                                   const Vec3& dp, const Vec3& q_out, const Vec3& q_in) {
    require(k >= 0 && k < radial_size(spec, ch), "filter_eval: radial index out of range");
    if (uses_radial_p(ch.kind)) {
        double inf_norm = std::max({std::abs(dp.x), std::abs(dp.y), std::abs(dp.z)});
        if (inf_norm > spec.p_cutoff) return SphericalTensor(ch.l_filter);
    }
    double r = 1.0;
    int rest = k;
    if (uses_radial_q(ch.kind)) {
        int kqi = rest % spec.radial_q_in.size;
        rest /= spec.radial_q_in.size;
        int kqo = rest % spec.radial_q_out.size;
        rest /= spec.radial_q_out.size;
        r *= eval_radial(spec.radial_q_out, q_out.norm())[static_cast<size_t>(kqo)];
        r *= eval_radial(spec.radial_q_in, q_in.norm())[static_cast<size_t>(kqi)];
    }
    if (uses_radial_p(ch.kind)) {
        r *= eval_radial(spec.radial_p, dp.norm())[static_cast<size_t>(rest)];
    }
    SphericalTensor a = angular_eval(ch, dp, q_out, q_in);
    for (double& v : a.v) v *= r;
    return a;
}

// Builds a spec following the discretization defaults: the p radial count
// equals the filter radius (at least 1), the q radial counts equal the number
// of distinct q lengths in the respective scheme, and centers cover
// [0, x_max]. The q radial family is Gaussian; the p radial family is
// configurable and may be wrapped in a fully connected network.
inline FilterBasisSpec make_filter_spec(FilterFamily family, int d, const PFilterGrid& grid,
                                        const QScheme& q_in, const QScheme& q_out,
                                        RadialKind p_kind = RadialKind::gaussian,
                                        bool p_fc = false, uint64_t seed = 0,
                                        const std::vector<int>& fc_hidden = {50, 50, 50}) {
    FilterBasisSpec spec;
    spec.family = family;
    spec.d = d;
    int kp = std::max(1, grid.radius);
    spec.radial_p = (p_kind == RadialKind::cosine) ? make_cosine(kp, grid.radius)
                                                   : make_gaussian(kp, grid.radius);
    if (p_fc) spec.radial_p = make_mlp(spec.radial_p, fc_hidden, kp, seed ^ 0x9e3779b97f4a7c15ull);
    spec.radial_q_in =
        make_gaussian(static_cast<int>(q_in.distinct_lengths().size()), q_in.max_length());
    spec.radial_q_out =
        make_gaussian(static_cast<int>(q_out.distinct_lengths().size()), q_out.max_length());
    spec.p_cutoff = grid.radius;
    return spec;
}

}  // namespace pqsteer
