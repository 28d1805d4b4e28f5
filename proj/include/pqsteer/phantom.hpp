// Synthetic diffusion phantoms: a smooth seeded fiber orientation field,
// isotropic-diffusion lesion spheres, and the Gaussian diffusion-tensor
// signal exp(-b q^T D(p) q). The construction is closed under the joint
// rotation of fibers, lesion centers, and q-scheme, which makes grid-exact
// equivariance audits possible without interpolation.
#pragma once

#include "audit.hpp"

namespace pqsteer {

struct PhantomSpec {
    std::array<int, 3> dims{9, 9, 9};
    uint64_t seed = 1;
    int n_lesions = 2;
    double lesion_radius_min = 1.2;
    double lesion_radius_max = 2.2;
    double b_scale = 1.0;
    QScheme q_scheme;          // may contain a repeated q=0 group
    double noise_sigma = 0.0;  // nonzero noise breaks exact rotational closure
    Mat3 orientation = Mat3::identity();  // rotates fibers and lesion layout
    int mask_border = 0;
    double lambda_parallel = 1.7;
    double lambda_perp = 0.3;
    // physical units per voxel: < 1 samples the same continuous phantom on a
    // finer grid (fibers, lesions, and extent all live in physical units)
    double coord_scale = 1.0;
    // match the lesion diffusivity so the mean signal over an axis-aligned
    // octahedral shell equals the healthy-tissue mean (removes the
    // orientation-free shortcut from the segmentation task)
    bool match_mean_signal = false;

    void validate() const {
        require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, "PhantomSpec: empty grid");
        require(noise_sigma >= 0, "PhantomSpec: negative noise");
        require(n_lesions >= 0, "PhantomSpec: negative lesion count");
        require(q_scheme.size() >= 1, "PhantomSpec: q-scheme required");
        require(lesion_radius_min <= lesion_radius_max, "PhantomSpec: bad radius range");
    }
};

struct Phantom {
    MultiChannelTensorField field, labels, mask;
};

namespace detail {

// smooth low-frequency direction field with a dominant x-axis bias,
// coefficients drawn from the seed only
struct FiberField {
    Vec3 bias{1, 0, 0};
    std::array<Vec3, 3> wavevec, dir;
    std::array<double, 3> amp, phase;

    explicit FiberField(uint64_t seed) {
        Rng rng(seed ^ 0xf1be5u);
        for (int j = 0; j < 3; ++j) {
            wavevec[j] = rng.unit_vector() * rng.uniform(0.25, 0.8);
            dir[j] = rng.unit_vector();
            amp[j] = rng.uniform(0.2, 0.5);
            phase[j] = rng.uniform(0, 2 * M_PI);
        }
    }

    // x in voxel units relative to the grid center
    Vec3 at(const Vec3& x) const {
        Vec3 v = bias;
        for (int j = 0; j < 3; ++j)
            v = v + dir[j] * (amp[j] * std::sin(wavevec[j].dot(x) + phase[j]));
        double n = v.norm();
        return n > 1e-12 ? v * (1.0 / n) : Vec3{1, 0, 0};
    }
};

}  // namespace detail

inline Phantom generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    detail::FiberField fibers(spec.seed);
    Rng lesion_rng(spec.seed ^ 0x1e510u);
    Rng noise_rng(spec.seed ^ 0x2015eu);

    // lesion spheres in physical coordinates relative to the grid center
    double extent =
        0.5 * (std::min({spec.dims[0], spec.dims[1], spec.dims[2]}) - 1) * spec.coord_scale;
    std::vector<Vec3> centers;
    std::vector<double> radii;
    for (int i = 0; i < spec.n_lesions; ++i) {
        double r = lesion_rng.uniform(spec.lesion_radius_min, spec.lesion_radius_max);
        centers.push_back(lesion_rng.in_ball(std::max(extent - r, 0.5)));
        radii.push_back(r);
    }

    const Mat3& R = spec.orientation;
    const Mat3 Rt = R.transposed();
    Vec3 c = detail::grid_center(spec.dims);
    double d_iso = (spec.lambda_parallel + 2.0 * spec.lambda_perp) / 3.0;
    if (spec.match_mean_signal) {
        // axis-aligned shell mean: two samples along the fiber, four across
        double r2 = spec.q_scheme.max_length() * spec.q_scheme.max_length();
        if (spec.b_scale * r2 > 0) {
            double mean = (2.0 * std::exp(-spec.b_scale * spec.lambda_parallel * r2) +
                           4.0 * std::exp(-spec.b_scale * spec.lambda_perp * r2)) /
                          6.0;
            d_iso = -std::log(mean) / (spec.b_scale * r2);
        }
    }

    Phantom out;
    out.field = MultiChannelTensorField(TensorType{1}, spec.dims, spec.q_scheme);
    out.labels = MultiChannelTensorField(TensorType{1}, spec.dims, QScheme::origin());
    out.mask = MultiChannelTensorField(TensorType{1}, spec.dims, QScheme::origin());

    for (int z = 0; z < spec.dims[2]; ++z)
        for (int y = 0; y < spec.dims[1]; ++y)
            for (int x = 0; x < spec.dims[0]; ++x) {
                Vec3 p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
                Vec3 rel = (p - c) * spec.coord_scale;
                Vec3 base = Rt * rel;  // physical coordinates in the unrotated frame

                bool lesion = false;
                for (size_t i = 0; i < centers.size(); ++i)
                    if ((base - centers[i]).norm() <= radii[i]) {
                        lesion = true;
                        break;
                    }
                out.labels.at(0, z, y, x, 0) = lesion ? 1.0 : 0.0;

                bool in_mask = x >= spec.mask_border && x < spec.dims[0] - spec.mask_border &&
                               y >= spec.mask_border && y < spec.dims[1] - spec.mask_border &&
                               z >= spec.mask_border && z < spec.dims[2] - spec.mask_border;
                out.mask.at(0, z, y, x, 0) = in_mask ? 1.0 : 0.0;

                Vec3 fiber = R * fibers.at(base);
                for (int n = 0; n < spec.q_scheme.size(); ++n) {
                    const Vec3& q = spec.q_scheme.vectors[static_cast<size_t>(n)];
                    double quad;
                    if (lesion) {
                        quad = d_iso * q.dot(q);
                    } else {
                        double along = fiber.dot(q);
                        quad = spec.lambda_perp * q.dot(q) +
                               (spec.lambda_parallel - spec.lambda_perp) * along * along;
                    }
                    double s = std::exp(-spec.b_scale * quad);
                    if (spec.noise_sigma > 0) s += spec.noise_sigma * noise_rng.normal();
                    out.field.at(0, z, y, x, n) = s;
                }
            }
    return out;
}

// A spec whose phantom equals act_on_field(original phantom, g) exactly on
// closed schemes: fibers, lesion layout, and q-scheme rotate together.
inline PhantomSpec rotated_spec(const PhantomSpec& spec, const Rotation& g) {
    PhantomSpec out = spec;
    out.orientation = g.R * spec.orientation;
    out.q_scheme = spec.q_scheme.rotated(g);
    return out;
}

// --------------------------------------------------------------- scaling

struct ScaleRecord {
    std::vector<double> channel_divisors;  // one per q sample
    std::vector<double> scan_divisors;     // one per scan
};

inline void feature_unscale(std::vector<MultiChannelTensorField>& scans,
                            const ScaleRecord& rec) {
    require(scans.size() == rec.scan_divisors.size(), "feature_unscale: scan count mismatch");
    for (size_t s = 0; s < scans.size(); ++s) {
        MultiChannelTensorField& f = scans[s];
        require(static_cast<size_t>(f.qsize()) == rec.channel_divisors.size(),
                "feature_unscale: channel count mismatch");
        for (int comp = 0; comp < f.type.dim(); ++comp)
            for (int z = 0; z < f.p_dims[2]; ++z)
                for (int y = 0; y < f.p_dims[1]; ++y)
                    for (int x = 0; x < f.p_dims[0]; ++x)
                        for (int n = 0; n < f.qsize(); ++n)
                            f.at(comp, z, y, x, n) *= rec.scan_divisors[s] *
                                                      rec.channel_divisors[static_cast<size_t>(n)];
    }
}

// Two-stage feature scaling: divide each q-channel by its mean over all
// scans, then each scan by its own mean intensity. Inverted exactly by
// feature_unscale with the returned record.
inline ScaleRecord feature_scale(std::vector<MultiChannelTensorField>& scans) {
    require(!scans.empty(), "feature_scale: no scans");
    int q = scans.front().qsize();
    for (const auto& s : scans)
        require(s.qsize() == q && s.type == scans.front().type,
                "feature_scale: inconsistent scans");
    ScaleRecord rec;
    rec.channel_divisors.assign(static_cast<size_t>(q), 0.0);
    size_t per_channel = 0;
    for (const auto& s : scans) {
        per_channel += s.voxels() * static_cast<size_t>(s.type.dim());
        for (int comp = 0; comp < s.type.dim(); ++comp)
            for (int z = 0; z < s.p_dims[2]; ++z)
                for (int y = 0; y < s.p_dims[1]; ++y)
                    for (int x = 0; x < s.p_dims[0]; ++x)
                        for (int n = 0; n < q; ++n)
                            rec.channel_divisors[static_cast<size_t>(n)] += s.at(comp, z, y, x, n);
    }
    for (double& v : rec.channel_divisors) {
        v /= static_cast<double>(per_channel);
        require(std::abs(v) > 1e-300, "feature_scale: zero-mean channel");
    }
    for (auto& s : scans)
        for (int comp = 0; comp < s.type.dim(); ++comp)
            for (int z = 0; z < s.p_dims[2]; ++z)
                for (int y = 0; y < s.p_dims[1]; ++y)
                    for (int x = 0; x < s.p_dims[0]; ++x)
                        for (int n = 0; n < q; ++n)
                            s.at(comp, z, y, x, n) /= rec.channel_divisors[static_cast<size_t>(n)];
    for (auto& s : scans) {
        double mean = 0;
        for (double v : s.data) mean += v;
        mean /= static_cast<double>(s.data.size());
        require(std::abs(mean) > 1e-300, "feature_scale: zero-mean scan");
        for (double& v : s.data) v /= mean;
        rec.scan_divisors.push_back(mean);
    }
    return rec;
}

}  // namespace pqsteer
