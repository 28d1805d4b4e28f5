// Discrete q-space sampling schemes, the cubic filter grid, octahedrally
// symmetric scheme generators, and the 24-element cube rotation group.
#pragma once

#include <algorithm>

#include "so3.hpp"

namespace pqsteer {

struct QScheme {
    std::vector<Vec3> vectors;

    QScheme() = default;
    explicit QScheme(std::vector<Vec3> v) : vectors(std::move(v)) {}

    static QScheme origin() { return QScheme({Vec3{0, 0, 0}}); }

    int size() const { return static_cast<int>(vectors.size()); }

    void validate(double tol = 1e-9) const {
        require(!vectors.empty(), "QScheme: empty scheme");
        for (size_t i = 0; i < vectors.size(); ++i)
            for (size_t j = i + 1; j < vectors.size(); ++j)
                require((vectors[i] - vectors[j]).norm() > tol, "QScheme: duplicate q-vectors");
    }

    int find(const Vec3& v, double tol = 1e-9) const {
        for (size_t i = 0; i < vectors.size(); ++i)
            if ((vectors[i] - v).norm() <= tol) return static_cast<int>(i);
        return -1;
    }

    std::vector<double> distinct_lengths(double tol = 1e-9) const {
        std::vector<double> lens;
        for (const Vec3& v : vectors) {
            double n = v.norm();
            bool seen = false;
            for (double l : lens)
                if (std::abs(l - n) <= tol) {
                    seen = true;
                    break;
                }
            if (!seen) lens.push_back(n);
        }
        std::sort(lens.begin(), lens.end());
        return lens;
    }

    double max_length() const {
        double m = 0;
        for (const Vec3& v : vectors) m = std::max(m, v.norm());
        return m;
    }

    QScheme rotated(const Rotation& g) const {
        QScheme out;
        out.vectors.reserve(vectors.size());
        for (const Vec3& v : vectors) out.vectors.push_back(g * v);
        return out;
    }

    // true when the rotated scheme is a permutation of this one
    bool closed_under(const Rotation& g, double tol = 1e-9) const {
        for (const Vec3& v : vectors)
            if (find(g * v, tol) < 0) return false;
        return true;
    }
};

// Cubic filter offsets p in {-radius..radius}^3. Linear enumeration is
// z-major (z, then y, then x fastest) to match the field layout.
struct PFilterGrid {
    int radius = 0;

    int side() const { return 2 * radius + 1; }
    int num_offsets() const { return side() * side() * side(); }

    // linear index -> integer offset (dx, dy, dz)
    std::array<int, 3> offset(int i) const {
        int s = side();
        int dx = i % s;
        int dy = (i / s) % s;
        int dz = i / (s * s);
        return {dx - radius, dy - radius, dz - radius};
    }

    Vec3 offset_vec(int i) const {
        auto o = offset(i);
        return {static_cast<double>(o[0]), static_cast<double>(o[1]), static_cast<double>(o[2])};
    }
};

// The 24 rotations mapping the cubic grid onto itself, identity first,
// deterministic order. Entries are exact integers.
inline const std::vector<Rotation>& cube_rotations() {
    static const std::vector<Rotation> group = [] {
        auto make = [](std::array<std::array<double, 3>, 3> m) {
            Mat3 r;
            r.m = m;
            return r;
        };
        Mat3 rz = make({{{0, -1, 0}, {1, 0, 0}, {0, 0, 1}}});
        Mat3 rx = make({{{1, 0, 0}, {0, 0, -1}, {0, 1, 0}}});
        std::vector<Mat3> elems{Mat3::identity()};
        auto contains = [&](const Mat3& m) {
            for (const Mat3& e : elems) {
                bool same = true;
                for (int i = 0; i < 3 && same; ++i)
                    for (int j = 0; j < 3 && same; ++j)
                        if (std::abs(e(i, j) - m(i, j)) > 0.5) same = false;
                if (same) return true;
            }
            return false;
        };
        for (size_t head = 0; head < elems.size(); ++head) {
            for (const Mat3* gen : {&rz, &rx}) {
                Mat3 next = *gen * elems[head];
                if (!contains(next)) elems.push_back(next);
            }
        }
        require(elems.size() == 24, "cube_rotations: closure failed");
        // canonical order: identity first, then lexicographic on entries
        std::sort(elems.begin() + 1, elems.end(), [](const Mat3& a, const Mat3& b) {
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    if (a(i, j) != b(i, j)) return a(i, j) < b(i, j);
            return false;
        });
        std::vector<Rotation> out;
        out.reserve(24);
        for (const Mat3& m : elems) out.push_back(Rotation{m});
        return out;
    }();
    return group;
}

// Octahedrally symmetric point sets: 6 (axes), 14 (axes + cube corners),
// or 26 (axes + corners + edge midpoints), normalized to the shell radius.
inline std::vector<Vec3> octahedral_points(int count) {
    std::vector<Vec3> pts = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    if (count >= 14) {
        double c = 1.0 / std::sqrt(3.0);
        for (int sx : {1, -1})
            for (int sy : {1, -1})
                for (int sz : {1, -1}) pts.push_back({sx * c, sy * c, sz * c});
    }
    if (count >= 26) {
        double e = 1.0 / std::sqrt(2.0);
        const int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
        for (const auto& ax : axes)
            for (int s0 : {1, -1})
                for (int s1 : {1, -1}) {
                    Vec3 v{0, 0, 0};
                    v[ax[0]] = s0 * e;
                    v[ax[1]] = s1 * e;
                    pts.push_back(v);
                }
    }
    require(count == 6 || count == 14 || count == 26,
            "octahedral_points: count must be 6, 14, or 26");
    return pts;
}

inline QScheme make_octahedral_scheme(int n_shells, const std::vector<double>& radii,
                                      int points_per_shell = 6) {
    require(n_shells >= 1 && static_cast<int>(radii.size()) >= n_shells,
            "make_octahedral_scheme: need one radius per shell");
    QScheme out;
    for (int s = 0; s < n_shells; ++s) {
        require(radii[static_cast<size_t>(s)] > 0, "make_octahedral_scheme: radius must be > 0");
        for (const Vec3& p : octahedral_points(points_per_shell))
            out.vectors.push_back(p * radii[static_cast<size_t>(s)]);
    }
    out.validate();
    return out;
}

}  // namespace pqsteer
