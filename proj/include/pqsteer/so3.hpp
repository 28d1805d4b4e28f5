// Real spherical-tensor algebra: spherical harmonics, Wigner D-matrices,
// Clebsch-Gordan coefficients, tensor products, multi-channel types, and the
// order-2 Cartesian <-> spherical conversion.
//
// Conventions used throughout the library:
//   * real orthonormal spherical harmonics, no Condon-Shortley phase,
//     components indexed m = -l..l (array index m + l);
//   * l = 1 component order is (m=-1,0,+1) <-> (y,z,x), so Y1(n) is the
//     coordinate permutation of n times sqrt(3/4pi);
//   * D(l, g) satisfies Y(R_g n) = D(l, g) Y(n), is orthogonal, and is a
//     group homomorphism in g;
//   * Clebsch-Gordan arrays cg(l1, l2, l) are real, have orthonormal rows
//     across (m1, m2), vanish unless |l1-l2| <= l <= l1+l2, and make the
//     tensor product rotation-equivariant. The overall sign of each (l1,l2,l)
//     block is fixed so the first nonzero entry in lexicographic (m,m1,m2)
//     order is positive.
#pragma once

#include <complex>
#include <map>
#include <mutex>
#include <tuple>

#include "common.hpp"

namespace pqsteer {

constexpr int kMaxOrder = 12;  // factorial table and recursions sized for this

// ---------------------------------------------------------------- Rotation

struct Rotation {
    Mat3 R;

    static Rotation identity() { return Rotation{Mat3::identity()}; }

    // Throws if M is not a rotation matrix (orthogonality and det checked
    // at the given tolerance).
    static Rotation from_matrix(const Mat3& M, double tol = 1e-9) {
        Mat3 should_be_id = M.transposed() * M;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double want = (i == j) ? 1.0 : 0.0;
                require(std::abs(should_be_id(i, j) - want) <= tol,
                        "Rotation: matrix is not orthogonal");
            }
        require(std::abs(M.det() - 1.0) <= tol, "Rotation: determinant is not +1");
        return Rotation{M};
    }

    static Rotation axis_angle(Vec3 axis, double angle) {
        double n = axis.norm();
        require(n > 0, "Rotation: zero axis");
        axis = axis * (1.0 / n);
        double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
        Mat3 R;
        R.m = {{{c + t * axis.x * axis.x, t * axis.x * axis.y - s * axis.z,
                 t * axis.x * axis.z + s * axis.y},
                {t * axis.y * axis.x + s * axis.z, c + t * axis.y * axis.y,
                 t * axis.y * axis.z - s * axis.x},
                {t * axis.z * axis.x - s * axis.y, t * axis.z * axis.y + s * axis.x,
                 c + t * axis.z * axis.z}}};
        return Rotation{R};
    }

    static Rotation random(Rng& rng) {
        // uniform quaternion -> matrix
        double q[4];
        double n2 = 0;
        do {
            n2 = 0;
            for (double& qi : q) {
                qi = rng.normal();
                n2 += qi * qi;
            }
        } while (n2 < 1e-12);
        double inv = 1.0 / std::sqrt(n2);
        double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
        Mat3 R;
        R.m = {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
        return Rotation{R};
    }

    Rotation inverse() const { return Rotation{R.transposed()}; }
    Rotation operator*(const Rotation& o) const { return Rotation{R * o.R}; }
    Vec3 operator*(const Vec3& v) const { return R * v; }
};

// -------------------------------------------------------- spherical tensor

struct SphericalTensor {
    int l = 0;
    std::vector<double> v;  // size 2l+1, index m + l

    SphericalTensor() : v(1, 0.0) {}
    explicit SphericalTensor(int order) : l(order), v(2 * order + 1, 0.0) {}
    SphericalTensor(int order, std::vector<double> comps) : l(order), v(std::move(comps)) {
        require(static_cast<int>(v.size()) == 2 * l + 1, "SphericalTensor: wrong size");
    }

    double& operator[](int i) { return v[i]; }
    double operator[](int i) const { return v[i]; }
    int size() const { return 2 * l + 1; }
};

// l=1 spherical tensor is the (y,z,x) reordering of the Cartesian vector
inline SphericalTensor vec_to_sph(const Vec3& u) {
    return SphericalTensor(1, {u.y, u.z, u.x});
}

inline Vec3 sph_to_vec(const SphericalTensor& t) {
    require(t.l == 1, "sph_to_vec: order-1 tensor expected");
    return Vec3{t[2], t[0], t[1]};
}

// ------------------------------------------------------ spherical harmonics

namespace detail {

inline double factorial(int n) {
    static const std::vector<double> table = [] {
        std::vector<double> f(4 * kMaxOrder + 2, 1.0);
        for (size_t i = 1; i < f.size(); ++i) f[i] = f[i - 1] * static_cast<double>(i);
        return f;
    }();
    return table[static_cast<size_t>(n)];
}

}  // namespace detail

// Y(l, n). The direction is normalized internally; n = 0 yields the constant
// for l = 0 and the zero tensor for l >= 1 (the zero tensor is fixed by every
// D, so the convention preserves equivariance at the singular point).
inline SphericalTensor sph_harm(int l, const Vec3& n) {
    require(l >= 0 && l <= kMaxOrder, "sph_harm: order out of range");
    SphericalTensor out(l);
    if (l == 0) {
        out[0] = 0.5 / std::sqrt(M_PI);
        return out;
    }
    double norm = n.norm();
    if (norm < 1e-30) return out;  // zero-vector convention
    double x = n.x / norm, y = n.y / norm, z = n.z / norm;

    // cs[m] = Re[(x+iy)^m], sn[m] = Im[(x+iy)^m]  (carries the sin^m(theta) factor)
    std::vector<double> cs(l + 1), sn(l + 1);
    cs[0] = 1.0;
    sn[0] = 0.0;
    for (int m = 1; m <= l; ++m) {
        cs[m] = x * cs[m - 1] - y * sn[m - 1];
        sn[m] = x * sn[m - 1] + y * cs[m - 1];
    }

    // ptil[m] = P_l^m(z) / sin^m(theta), no Condon-Shortley phase
    std::vector<double> ptil(l + 1);
    for (int m = 0; m <= l; ++m) {
        double pmm = 1.0;
        for (int i = 1; i <= m; ++i) pmm *= static_cast<double>(2 * i - 1);
        if (m == l) {
            ptil[m] = pmm;
            continue;
        }
        double pm1 = z * (2 * m + 1) * pmm;  // P_{m+1}^m / sin^m
        if (m + 1 == l) {
            ptil[m] = pm1;
            continue;
        }
        double pa = pmm, pb = pm1;
        for (int ll = m + 2; ll <= l; ++ll) {
            double pc = ((2 * ll - 1) * z * pb - (ll + m - 1) * pa) / (ll - m);
            pa = pb;
            pb = pc;
        }
        ptil[m] = pb;
    }

    for (int m = 0; m <= l; ++m) {
        double k = std::sqrt((2 * l + 1) / (4.0 * M_PI) * detail::factorial(l - m) /
                             detail::factorial(l + m));
        if (m == 0) {
            out[l] = k * ptil[0];
        } else {
            double base = std::sqrt(2.0) * k * ptil[m];
            out[l + m] = base * cs[m];
            out[l - m] = base * sn[m];
        }
    }
    return out;
}

// ----------------------------------------------------------- Clebsch-Gordan

namespace detail {

// Condon-Shortley complex CG <l1 m1 l2 m2 | l m> via the Racah closed form.
inline double complex_basis_cg(int l1, int m1, int l2, int m2, int l, int m) {
    if (m1 + m2 != m) return 0.0;
    if (l < std::abs(l1 - l2) || l > l1 + l2) return 0.0;
    if (std::abs(m1) > l1 || std::abs(m2) > l2 || std::abs(m) > l) return 0.0;
    double pref = (2.0 * l + 1.0) * factorial(l1 + l2 - l) * factorial(l1 - l2 + l) *
                  factorial(-l1 + l2 + l) / factorial(l1 + l2 + l + 1);
    pref *= factorial(l + m) * factorial(l - m) * factorial(l1 + m1) * factorial(l1 - m1) *
            factorial(l2 + m2) * factorial(l2 - m2);
    pref = std::sqrt(pref);
    int kmin = std::max({0, l2 - l - m1, l1 - l + m2});
    int kmax = std::min({l1 + l2 - l, l1 - m1, l2 + m2});
    double sum = 0.0;
    for (int k = kmin; k <= kmax; ++k) {
        double term = 1.0 / (factorial(k) * factorial(l1 + l2 - l - k) * factorial(l1 - m1 - k) *
                             factorial(l2 + m2 - k) * factorial(l - l2 + m1 + k) *
                             factorial(l - l1 - m2 + k));
        sum += (k % 2 == 0) ? term : -term;
    }
    return pref * sum;
}

// Row m_real of the complex->real change of basis for order l: the complex
// coefficient vector (index mu+l) maps to real components via this matrix.
inline std::vector<std::complex<double>> real_basis_row(int l, int m) {
    std::vector<std::complex<double>> row(2 * l + 1, 0.0);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    if (m == 0) {
        row[l] = 1.0;
    } else if (m > 0) {
        row[l - m] = inv_sqrt2;
        row[l + m] = ((m % 2 == 0) ? 1.0 : -1.0) * inv_sqrt2;
    } else {
        int mm = -m;
        row[l - mm] = std::complex<double>(0.0, inv_sqrt2);
        row[l + mm] = std::complex<double>(0.0, ((mm % 2 == 0) ? -1.0 : 1.0) * inv_sqrt2);
    }
    return row;
}

}  // namespace detail

// Real CG array indexed [m+l][m1+l1][m2+l2], flattened with m outermost.
struct CgBlock {
    int l1 = 0, l2 = 0, l = 0;
    std::vector<double> c;

    double at(int m, int m1, int m2) const {
        return c[(static_cast<size_t>(m + l) * (2 * l1 + 1) + (m1 + l1)) * (2 * l2 + 1) +
                 (m2 + l2)];
    }

    // (2l+1) x (2l1+1)(2l2+1) matrix, column index (m1 outer, m2 inner)
    Matrix as_matrix() const {
        Matrix out(2 * l + 1, (2 * l1 + 1) * (2 * l2 + 1));
        out.a = c;
        return out;
    }
};

inline const CgBlock& clebsch_gordan(int l1, int l2, int l) {
    require(l1 >= 0 && l2 >= 0 && l >= 0, "clebsch_gordan: negative order");
    require(l1 <= kMaxOrder && l2 <= kMaxOrder && l <= kMaxOrder,
            "clebsch_gordan: order out of range");
    static std::map<std::tuple<int, int, int>, CgBlock> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto key = std::make_tuple(l1, l2, l);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    CgBlock blk;
    blk.l1 = l1;
    blk.l2 = l2;
    blk.l = l;
    size_t n = static_cast<size_t>(2 * l + 1) * (2 * l1 + 1) * (2 * l2 + 1);
    blk.c.assign(n, 0.0);
    if (l < std::abs(l1 - l2) || l > l1 + l2) return cache.emplace(key, std::move(blk)).first->second;

    // Conjugate the complex CG by the complex->real changes of basis. The
    // result is purely real for even l1+l2-l and purely imaginary otherwise;
    // a global phase per block folds it onto the real axis.
    std::vector<std::complex<double>> z(n, 0.0);
    for (int m = -l; m <= l; ++m) {
        auto row = detail::real_basis_row(l, m);
        for (int m1 = -l1; m1 <= l1; ++m1) {
            auto row1 = detail::real_basis_row(l1, m1);
            for (int m2 = -l2; m2 <= l2; ++m2) {
                auto row2 = detail::real_basis_row(l2, m2);
                std::complex<double> acc = 0.0;
                for (int mu1 = -l1; mu1 <= l1; ++mu1) {
                    if (row1[mu1 + l1] == std::complex<double>(0.0)) continue;
                    for (int mu2 = -l2; mu2 <= l2; ++mu2) {
                        if (row2[mu2 + l2] == std::complex<double>(0.0)) continue;
                        int mu = mu1 + mu2;
                        if (mu < -l || mu > l) continue;
                        if (row[mu + l] == std::complex<double>(0.0)) continue;
                        acc += row[mu + l] * std::conj(row1[mu1 + l1]) * std::conj(row2[mu2 + l2]) *
                               detail::complex_basis_cg(l1, mu1, l2, mu2, l, mu);
                    }
                }
                z[(static_cast<size_t>(m + l) * (2 * l1 + 1) + (m1 + l1)) * (2 * l2 + 1) +
                  (m2 + l2)] = acc;
            }
        }
    }
    double max_re = 0, max_im = 0;
    for (const auto& v : z) {
        max_re = std::max(max_re, std::abs(v.real()));
        max_im = std::max(max_im, std::abs(v.imag()));
    }
    bool take_real = max_re >= max_im;
    require(std::min(max_re, max_im) < 1e-12 * std::max(max_re, max_im) + 1e-300,
            "clebsch_gordan: mixed real/imaginary block");
    for (size_t i = 0; i < n; ++i) blk.c[i] = take_real ? z[i].real() : z[i].imag();
    for (size_t i = 0; i < n; ++i) {
        if (std::abs(blk.c[i]) > 1e-13) {
            if (blk.c[i] < 0)
                for (double& v : blk.c) v = -v;
            break;
        }
    }
    return cache.emplace(key, std::move(blk)).first->second;
}

// ----------------------------------------------------------------- Wigner D

inline Matrix wigner_d(int l, const Rotation& g) {
    require(l >= 0 && l <= kMaxOrder, "wigner_d: order out of range");
    if (l == 0) return Matrix::identity(1);
    // (y,z,x) permutation of the Cartesian axes
    static constexpr int axis[3] = {1, 2, 0};
    Matrix d1(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) d1(i, j) = g.R(axis[i], axis[j]);
    if (l == 1) return d1;
    // D_l = C (D_{l-1} (x) D_1) C^T, exact because CG rows are orthonormal
    Matrix dprev = wigner_d(l - 1, g);
    Matrix kron(dprev.rows * 3, dprev.cols * 3);
    for (int i = 0; i < dprev.rows; ++i)
        for (int j = 0; j < dprev.cols; ++j) {
            double v = dprev(i, j);
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) kron(i * 3 + a, j * 3 + b) = v * d1(a, b);
        }
    Matrix c = clebsch_gordan(l - 1, 1, l).as_matrix();
    return c * kron * c.transposed();
}

// ------------------------------------------------------------ tensor product

inline SphericalTensor tensor_product(const SphericalTensor& a, const SphericalTensor& b, int l) {
    SphericalTensor out(l);
    if (l < std::abs(a.l - b.l) || l > a.l + b.l) return out;
    const CgBlock& cg = clebsch_gordan(a.l, b.l, l);
    for (int m = -l; m <= l; ++m) {
        double s = 0.0;
        for (int m1 = -a.l; m1 <= a.l; ++m1)
            for (int m2 = -b.l; m2 <= b.l; ++m2)
                s += cg.at(m, m1, m2) * a[m1 + a.l] * b[m2 + b.l];
        out[m + l] = s;
    }
    return out;
}

// -------------------------------------------------------- multi-channel type

// Channel-count-per-order signature. Channels are enumerated order-major:
// all l=0 channels first, then l=1, and so on.
struct TensorType {
    std::vector<int> counts;

    TensorType() = default;
    TensorType(std::initializer_list<int> c) : counts(c) {}
    explicit TensorType(std::vector<int> c) : counts(std::move(c)) {}

    int max_order() const {
        for (int l = static_cast<int>(counts.size()) - 1; l >= 0; --l)
            if (counts[l] > 0) return l;
        return -1;  // empty type
    }

    int num_channels() const {
        int n = 0;
        for (int c : counts) n += c;
        return n;
    }

    int dim() const {
        int d = 0;
        for (size_t l = 0; l < counts.size(); ++l) d += counts[l] * (2 * static_cast<int>(l) + 1);
        return d;
    }

    int channel_order(int c) const {
        for (size_t l = 0; l < counts.size(); ++l) {
            if (c < counts[l]) return static_cast<int>(l);
            c -= counts[l];
        }
        throw Error("TensorType: channel index out of range");
    }

    int channel_offset(int c) const {
        int off = 0;
        for (size_t l = 0; l < counts.size(); ++l) {
            if (c < counts[l]) return off + c * (2 * static_cast<int>(l) + 1);
            off += counts[l] * (2 * static_cast<int>(l) + 1);
            c -= counts[l];
        }
        throw Error("TensorType: channel index out of range");
    }

    bool operator==(const TensorType& o) const {
        size_t n = std::max(counts.size(), o.counts.size());
        for (size_t i = 0; i < n; ++i) {
            int a = i < counts.size() ? counts[i] : 0;
            int b = i < o.counts.size() ? o.counts[i] : 0;
            if (a != b) return false;
        }
        return true;
    }
    bool operator!=(const TensorType& o) const { return !(*this == o); }
};

struct MultiChannelTensor {
    TensorType type;
    std::vector<double> data;  // channel-major, m ascending inside each channel

    MultiChannelTensor() = default;
    explicit MultiChannelTensor(TensorType t)
        : type(std::move(t)), data(static_cast<size_t>(type.dim()), 0.0) {}

    SphericalTensor channel(int c) const {
        int l = type.channel_order(c);
        int off = type.channel_offset(c);
        SphericalTensor t(l);
        for (int i = 0; i < 2 * l + 1; ++i) t[i] = data[off + i];
        return t;
    }

    void set_channel(int c, const SphericalTensor& t) {
        require(t.l == type.channel_order(c), "set_channel: order mismatch");
        int off = type.channel_offset(c);
        for (int i = 0; i < t.size(); ++i) data[off + i] = t[i];
    }
};

inline MultiChannelTensor rotate_multichannel(const MultiChannelTensor& x, const Rotation& g) {
    MultiChannelTensor out(x.type);
    int max_l = x.type.max_order();
    std::vector<Matrix> d(static_cast<size_t>(std::max(max_l + 1, 1)));
    for (int l = 0; l <= max_l; ++l) d[l] = wigner_d(l, g);
    for (int c = 0; c < x.type.num_channels(); ++c) {
        int l = x.type.channel_order(c);
        int off = x.type.channel_offset(c);
        const Matrix& dl = d[l];
        for (int i = 0; i <= 2 * l; ++i) {
            double s = 0.0;
            for (int j = 0; j <= 2 * l; ++j) s += dl(i, j) * x.data[off + j];
            out.data[off + i] = s;
        }
    }
    return out;
}

// ----------------------------------------------- order-2 Cartesian tensors

namespace detail {

// Orthogonal 9x9 map: vec(M) row-major -> [l=0 (1) | l=1 (3) | l=2 (5)].
// Built from the tensor product on rank-one matrices, so the conversion
// commutes with rotations by construction.
inline const Matrix& cart2_map() {
    static const Matrix map = [] {
        Matrix t(9, 9);
        const Vec3 e[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                SphericalTensor a = vec_to_sph(e[i]);
                SphericalTensor b = vec_to_sph(e[j]);
                int col = i * 3 + j;
                int row = 0;
                for (int l = 0; l <= 2; ++l) {
                    SphericalTensor tl = tensor_product(a, b, l);
                    for (int m = 0; m < tl.size(); ++m) t(row++, col) = tl[m];
                }
            }
        return t;
    }();
    return map;
}

}  // namespace detail

inline MultiChannelTensor cart2_to_spherical(const Mat3& M) {
    std::vector<double> v(9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) v[i * 3 + j] = M(i, j);
    MultiChannelTensor out(TensorType{1, 1, 1});
    out.data = detail::cart2_map().apply(v);
    return out;
}

inline Mat3 spherical_to_cart2(const MultiChannelTensor& x) {
    require(x.type == TensorType({1, 1, 1}), "spherical_to_cart2: type must be (1,1,1)");
    // the map is orthogonal, so the inverse is the transpose
    std::vector<double> v = detail::cart2_map().transposed().apply(x.data);
    Mat3 M;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) M(i, j) = v[i * 3 + j];
    return M;
}

}  // namespace pqsteer
