/*
 * lvatlas : left ventricular shape atlas toolkit
 *
 * Copyright 2026 the lvatlas authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "lvatlas/bspline.hpp"
#include "lvatlas/case_assembly.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace lvatlas {

/// Anatomically anchored cylindrical frame for one cine frame: the long
/// axis runs base (z=0) to apex (z=1); theta is measured from the septal
/// reference direction.
struct LVFrameAxes {
    Vec3 base_center = Vec3::Zero();
    Vec3 apex = Vec3::UnitZ();
    Vec3 long_axis = Vec3::UnitZ();   // unit, base -> apex
    Vec3 septal_ref = Vec3::UnitX();  // unit, perpendicular to long_axis

    double length_mm() const { return (apex - base_center).norm(); }
    Vec3 circumferential_dir() const { return long_axis.cross(septal_ref); }

    Vec3 to_patient(double theta, double z, double r) const {
        const Vec3 radial = std::cos(theta) * septal_ref + std::sin(theta) * circumferential_dir();
        return base_center + z * length_mm() * long_axis + r * radial;
    }

    void validate() const {
        constexpr double tol = 1e-9;
        if (std::abs(long_axis.norm() - 1.0) > tol)
            throw DataError("LVFrameAxes: long_axis must be unit length");
        if (std::abs(septal_ref.norm() - 1.0) > tol)
            throw DataError("LVFrameAxes: septal_ref must be unit length");
        if (std::abs(septal_ref.dot(long_axis)) > tol)
            throw DataError("LVFrameAxes: septal_ref must be orthogonal to long_axis");
        if (!(length_mm() > 0.0)) throw DataError("LVFrameAxes: base and apex coincide");
    }
};

/// Build the anatomical frame from landmarks and one frame's contours.
/// The base center is the mitral valve point centroid; the apex sits half
/// a slice spacing beyond the most apical epicardial contour centroid.
inline LVFrameAxes build_axes(const LandmarkSet& landmarks,
                              const std::vector<SliceAnnotation>& slices) {
    if (slices.size() < 3) throw DataError("build_axes: need at least 3 slices");
    if (landmarks.rv_inserts.empty()) throw DataError("build_axes: need an RV insert pair");

    const auto mv = landmarks.mv_points();
    Vec3 base = Vec3::Zero();
    for (const auto& p : mv) base += p;
    base /= static_cast<double>(mv.size());

    {  // the valve points must span a plane, not a line
        Eigen::MatrixXd centered(static_cast<Eigen::Index>(mv.size()), 3);
        for (std::size_t i = 0; i < mv.size(); ++i)
            centered.row(static_cast<Eigen::Index>(i)) = (mv[i] - base).transpose();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
        if (svd.singularValues()[1] < 1e-6)
            throw DataError("build_axes: mitral valve points are collinear");
    }

    const Contour3D& apical_epi = slices.front().epi;
    const Vec3 apical_centroid = polygon_vertex_centroid(apical_epi.points);
    Vec3 prelim = apical_centroid - base;
    if (prelim.norm() < 1e-9) throw DataError("build_axes: apex coincides with base");
    prelim.normalize();

    LVFrameAxes axes;
    axes.base_center = base;
    axes.apex = apical_centroid + 0.5 * slices.front().plane.slice_spacing_mm() * prelim;
    Vec3 la = axes.apex - base;
    if (la.norm() < 1e-9) throw DataError("build_axes: apex coincides with base");
    axes.long_axis = la.normalized();

    // septal reference from the RV insert pair on the mid-most slice that
    // carries one (matched to slices by out-of-plane distance)
    const auto& ins = landmarks.rv_inserts;
    std::size_t best_pair = 0;
    std::size_t best_slice = 0;
    double best_mid = std::numeric_limits<double>::max();
    for (std::size_t p = 0; p < ins.size(); ++p) {
        const Vec3 mid = 0.5 * (ins[p].anterior + ins[p].inferior);
        double nearest = std::numeric_limits<double>::max();
        std::size_t nearest_slice = 0;
        for (std::size_t s = 0; s < slices.size(); ++s) {
            const double d =
                std::abs((mid - slices[s].plane.origin).dot(slices[s].plane.normal()));
            if (d < nearest) {
                nearest = d;
                nearest_slice = s;
            }
        }
        const double mid_rank =
            std::abs(static_cast<double>(nearest_slice) - 0.5 * (slices.size() - 1));
        if (mid_rank < best_mid) {
            best_mid = mid_rank;
            best_pair = p;
            best_slice = nearest_slice;
        }
    }
    const Vec3 slice_centroid = polygon_vertex_centroid(slices[best_slice].epi.points);
    Vec3 d1 = ins[best_pair].anterior - slice_centroid;
    Vec3 d2 = ins[best_pair].inferior - slice_centroid;
    if (d1.norm() < 1e-9 || d2.norm() < 1e-9)
        throw DataError("build_axes: RV insert coincides with slice centroid");
    Vec3 bisector = d1.normalized() + d2.normalized();
    if (bisector.norm() < 1e-9)
        throw DataError("build_axes: RV inserts are antipodal, septal direction undefined");
    Vec3 sep = bisector - bisector.dot(axes.long_axis) * axes.long_axis;
    if (sep.norm() < 1e-9)
        throw DataError("build_axes: septal direction parallel to the long axis");
    axes.septal_ref = sep.normalized();
    axes.validate();
    return axes;
}

// --- cylindrical samples ---------------------------------------------------

struct SurfaceSample {
    double theta = 0.0;  // [0, 2*pi) about the long axis from septal_ref
    double z = 0.0;      // 0 at base, 1 at apex (raw, may fall outside)
    double r = 0.0;      // mm from the long axis
};

struct ModelCoords {
    std::vector<SurfaceSample> samples;
    int dropped_on_axis = 0;  // r == 0, theta undefined
    int below_base = 0;       // z < 0
    int beyond_apex = 0;      // z > 1
};

/// Express contour points in the anatomical cylindrical frame.
inline ModelCoords contour_to_model_coords(const Contour3D& c, const LVFrameAxes& axes) {
    axes.validate();
    const double length = axes.length_mm();
    const Vec3 e2 = axes.circumferential_dir();
    ModelCoords out;
    out.samples.reserve(c.points.size());
    for (const auto& p : c.points) {
        const Vec3 v = p - axes.base_center;
        const double z = v.dot(axes.long_axis) / length;
        const Vec3 radial = v - v.dot(axes.long_axis) * axes.long_axis;
        const double r = radial.norm();
        if (r < 1e-9) {
            ++out.dropped_on_axis;
            continue;
        }
        if (z < 0.0) ++out.below_base;
        if (z > 1.0) ++out.beyond_apex;
        double theta = std::atan2(radial.dot(e2), radial.dot(axes.septal_ref));
        if (theta < 0.0) theta += 2.0 * M_PI;
        out.samples.push_back({theta, z, r});
    }
    return out;
}

// --- surface model ----------------------------------------------------------

enum class Surface { endo, epi };

/// Two-surface LV model: each surface is a radius function r(theta, z),
/// a tensor product of a periodic cubic B-spline in theta and a clamped
/// cubic B-spline in z, with the z=1 control row tied to one apex value.
struct LVModel {
    LVFrameAxes axes;
    int k_theta = 8;
    int k_z = 6;
    double lambda = 1e-3;
    Eigen::MatrixXd endo_ctrl;  // k_theta x k_z control radii (mm)
    Eigen::MatrixXd epi_ctrl;

    const Eigen::MatrixXd& controls(Surface s) const {
        return s == Surface::endo ? endo_ctrl : epi_ctrl;
    }

    double surface_radius(Surface s, double theta, double z) const {
        const PeriodicCubicBasis tb(k_theta);
        const ClampedCubicBasis zb(k_z);
        const auto tw = tb.at(theta);
        const auto zw = zb.at(z);
        const Eigen::MatrixXd& ctrl = controls(s);
        double r = 0.0;
        for (const auto& [j, w] : tw)
            for (int k = 0; k < k_z; ++k)
                if (zw[static_cast<std::size_t>(k)] != 0.0)
                    r += w * zw[static_cast<std::size_t>(k)] * ctrl(j, k);
        return r;
    }

    Vec3 surface_point(Surface s, double theta, double z) const {
        return axes.to_patient(theta, z, surface_radius(s, theta, z));
    }

    /// Model validity findings on a 48x24 parameter grid (empty when clean).
    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        if ((endo_ctrl.array() <= 0.0).any() || (epi_ctrl.array() <= 0.0).any())
            out.push_back("non-positive control radius");
        bool crossing = false;
        for (int j = 0; j < 48 && !crossing; ++j)
            for (int k = 0; k < 24; ++k) {
                const double theta = 2.0 * M_PI * j / 48.0;
                const double z = static_cast<double>(k) / 23.0;
                if (surface_radius(Surface::epi, theta, z) <
                    surface_radius(Surface::endo, theta, z)) {
                    crossing = true;
                    break;
                }
            }
        if (crossing) out.push_back("epicardial surface inside endocardial surface");
        return out;
    }
};

/// Points on one surface at a regular parameter grid, z-major then theta.
inline std::vector<Vec3> sample_surface(const LVModel& model, Surface s, int n_theta = 24,
                                        int n_z = 12) {
    if (n_theta < 1 || n_z < 2) throw std::invalid_argument("sample_surface: bad grid");
    std::vector<Vec3> out;
    out.reserve(static_cast<std::size_t>(n_theta) * n_z);
    for (int k = 0; k < n_z; ++k) {
        const double z = static_cast<double>(k) / (n_z - 1);
        for (int j = 0; j < n_theta; ++j) {
            const double theta = 2.0 * M_PI * j / n_theta;
            out.push_back(model.surface_point(s, theta, z));
        }
    }
    return out;
}

// --- least squares surface fit ------------------------------------------------

namespace detail {

struct SurfaceFitResult {
    Eigen::MatrixXd controls;  // k_theta x k_z
    double rms = 0.0;
    double data_sse = 0.0;
    double penalty = 0.0;  // unweighted second-difference sum
};

/// Penalized linear least squares for one surface. The apex (z=1) control
/// row collapses to a single unknown, eliminated by substitution in the
/// column mapping.
inline SurfaceFitResult fit_surface(const std::vector<SurfaceSample>& samples, double lambda,
                                    int k_theta, int k_z) {
    if (k_theta < 4 || k_z < 4)
        throw std::invalid_argument("fit_surface: need at least 4 controls per direction");
    if (lambda < 0.0) throw std::invalid_argument("fit_surface: negative lambda");
    const int reduced = k_theta * (k_z - 1) + 1;
    const int apex_col = k_theta * (k_z - 1);
    if (static_cast<int>(samples.size()) < k_theta * k_z)
        throw NumericError("fit_surface: fewer samples than control values");

    {  // coverage prechecks, named by direction
        std::vector<double> zs, ts;
        for (const auto& s : samples) {
            zs.push_back(std::min(std::max(s.z, 0.0), 1.0));
            ts.push_back(s.theta);
        }
        std::sort(zs.begin(), zs.end());
        std::sort(ts.begin(), ts.end());
        auto distinct = [](std::vector<double>& v) {
            std::size_t n = v.empty() ? 0 : 1;
            for (std::size_t i = 1; i < v.size(); ++i)
                if (v[i] - v[i - 1] > 1e-9) ++n;
            return n;
        };
        if (distinct(zs) < 3)
            throw NumericError(
                "fit_surface: rank-deficient system, insufficient coverage in the z direction "
                "(need samples at 3 or more z levels)");
        if (distinct(ts) < 4)
            throw NumericError(
                "fit_surface: rank-deficient system, insufficient coverage in the theta "
                "direction");
    }

    const PeriodicCubicBasis tb(k_theta);
    const ClampedCubicBasis zb(k_z);
    auto col_of = [&](int j, int k) {
        return k == k_z - 1 ? apex_col : j * (k_z - 1) + k;
    };

    Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(reduced, reduced);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(reduced);

    std::vector<std::pair<int, double>> row;
    auto accumulate_row = [&](double target, double weight) {
        for (std::size_t a = 0; a < row.size(); ++a) {
            rhs[row[a].first] += weight * row[a].second * target;
            for (std::size_t b = 0; b < row.size(); ++b)
                normal(row[a].first, row[b].first) += weight * row[a].second * row[b].second;
        }
    };

    for (const auto& s : samples) {
        const double z = std::min(std::max(s.z, 0.0), 1.0);
        const auto tw = tb.at(s.theta);
        const auto zw = zb.at(z);
        row.clear();
        for (const auto& [j, w] : tw) {
            for (int k = 0; k < k_z; ++k) {
                const double v = w * zw[static_cast<std::size_t>(k)];
                if (v == 0.0) continue;
                const int col = col_of(j, k);
                bool merged = false;
                for (auto& e : row)
                    if (e.first == col) {
                        e.second += v;
                        merged = true;
                        break;
                    }
                if (!merged) row.emplace_back(col, v);
            }
        }
        accumulate_row(s.r, 1.0);
    }

    if (lambda > 0.0) {
        // theta-direction second differences at every non-apex z row
        for (int k = 0; k + 1 < k_z; ++k)
            for (int j = 0; j < k_theta; ++j) {
                row = {{col_of((j + k_theta - 1) % k_theta, k), 1.0},
                       {col_of(j, k), -2.0},
                       {col_of((j + 1) % k_theta, k), 1.0}};
                accumulate_row(0.0, lambda);
            }
        // z-direction second differences, apex column included
        for (int j = 0; j < k_theta; ++j)
            for (int k = 1; k + 1 <= k_z - 1; ++k) {
                row = {{col_of(j, k - 1), 1.0}, {col_of(j, k), -2.0}, {col_of(j, k + 1), 1.0}};
                accumulate_row(0.0, lambda);
            }
    }

    Eigen::LDLT<Eigen::MatrixXd> solver(normal);
    if (solver.info() != Eigen::Success)
        throw NumericError("fit_surface: normal equations not positive definite");
    const Eigen::VectorXd x = solver.solve(rhs);
    if (!x.allFinite())
        throw NumericError("fit_surface: singular system (non-finite solution)");

    SurfaceFitResult result;
    result.controls.resize(k_theta, k_z);
    for (int j = 0; j < k_theta; ++j)
        for (int k = 0; k < k_z; ++k) result.controls(j, k) = x[col_of(j, k)];

    double sse = 0.0;
    for (const auto& s : samples) {
        const double z = std::min(std::max(s.z, 0.0), 1.0);
        const auto tw = tb.at(s.theta);
        const auto zw = zb.at(z);
        double pred = 0.0;
        for (const auto& [j, w] : tw)
            for (int k = 0; k < k_z; ++k)
                pred += w * zw[static_cast<std::size_t>(k)] * result.controls(j, k);
        sse += (s.r - pred) * (s.r - pred);
    }
    result.data_sse = sse;
    result.rms = std::sqrt(sse / static_cast<double>(samples.size()));

    double pen = 0.0;
    for (int k = 0; k + 1 < k_z; ++k)
        for (int j = 0; j < k_theta; ++j) {
            const double d = result.controls((j + k_theta - 1) % k_theta, k) -
                             2.0 * result.controls(j, k) +
                             result.controls((j + 1) % k_theta, k);
            pen += d * d;
        }
    for (int j = 0; j < k_theta; ++j)
        for (int k = 1; k + 1 <= k_z - 1; ++k) {
            const double d = result.controls(j, k - 1) - 2.0 * result.controls(j, k) +
                             result.controls(j, k + 1);
            pen += d * d;
        }
    result.penalty = pen;
    return result;
}

/// Cylindrical fit samples for one frame, split per surface. Points below
/// the valve plane (z < 0) are discarded; z > 1 is clamped by the basis.
inline std::pair<std::vector<SurfaceSample>, std::vector<SurfaceSample>> collect_samples(
    const std::vector<SliceAnnotation>& slices, const LVFrameAxes& axes) {
    std::vector<SurfaceSample> endo, epi;
    for (const auto& s : slices) {
        if (s.endo) {
            const auto mc = contour_to_model_coords(*s.endo, axes);
            for (const auto& sample : mc.samples)
                if (sample.z >= 0.0) endo.push_back(sample);
        }
        const auto mc = contour_to_model_coords(s.epi, axes);
        for (const auto& sample : mc.samples)
            if (sample.z >= 0.0) epi.push_back(sample);
    }
    return {std::move(endo), std::move(epi)};
}

}  // namespace detail

/// Fit both surfaces of one frame with a fixed anatomical frame.
inline LVModel fit_surfaces(const LVFrameAxes& axes,
                            const std::vector<SurfaceSample>& endo_samples,
                            const std::vector<SurfaceSample>& epi_samples, double lambda,
                            int k_theta = 8, int k_z = 6, double* rms_endo = nullptr,
                            double* rms_epi = nullptr) {
    LVModel model;
    model.axes = axes;
    model.k_theta = k_theta;
    model.k_z = k_z;
    model.lambda = lambda;
    const auto fe = detail::fit_surface(endo_samples, lambda, k_theta, k_z);
    const auto fp = detail::fit_surface(epi_samples, lambda, k_theta, k_z);
    model.endo_ctrl = fe.controls;
    model.epi_ctrl = fp.controls;
    if (rms_endo) *rms_endo = fe.rms;
    if (rms_epi) *rms_epi = fp.rms;
    return model;
}

// --- misregistration correction -------------------------------------------------

struct FitConfig {
    double lambda_stiff = 1e2;
    double lambda_final = 1e-3;
    int max_iters = 5;
    double tol_mm = 0.1;
    int k_theta = 8;
    int k_z = 6;
    bool shift_correction = true;
};

/// Per-slice in-plane translation (mm along row_dir, col_dir).
using ShiftSet = std::vector<Vec2>;

struct FrameFit {
    LVModel model;
    ShiftSet shifts;  // cumulative correction applied to each slice
    std::vector<SliceAnnotation> corrected;  // contours after correction
    double rms_endo = 0.0;
    double rms_epi = 0.0;
    bool converged = true;
    int iterations = 0;
    std::vector<double> objective_per_cycle;  // data SSE + lambda * penalty
    std::vector<std::string> warnings;
};

namespace detail {

/// Closed-form slice alignment: mean in-plane offset from each contour
/// point to its model surface point at the same (theta, z).
inline Vec2 slice_shift(const SliceAnnotation& slice, const LVModel& model) {
    Vec2 acc = Vec2::Zero();
    int count = 0;
    auto add = [&](const Contour3D& c, Surface s) {
        const auto mc = contour_to_model_coords(c, model.axes);
        std::size_t idx = 0;
        for (const auto& p : c.points) {
            const Vec3 v = p - model.axes.base_center;
            const Vec3 radial = v - v.dot(model.axes.long_axis) * model.axes.long_axis;
            if (radial.norm() < 1e-9) continue;
            const SurfaceSample& sample = mc.samples[idx++];
            if (sample.z < 0.0) continue;
            const double z = std::min(sample.z, 1.0);
            const Vec3 q = model.surface_point(s, sample.theta, z);
            const Vec3 offset = q - p;
            acc.x() += offset.dot(slice.plane.row_dir);
            acc.y() += offset.dot(slice.plane.col_dir);
            ++count;
        }
    };
    if (slice.endo) add(*slice.endo, Surface::endo);
    add(slice.epi, Surface::epi);
    if (count == 0) return Vec2::Zero();
    return acc / static_cast<double>(count);
}

inline void shift_slice(SliceAnnotation& slice, const Vec2& d) {
    const Vec3 t = d.x() * slice.plane.row_dir + d.y() * slice.plane.col_dir;
    if (slice.endo)
        for (auto& p : slice.endo->points) p += t;
    for (auto& p : slice.epi.points) p += t;
}

}  // namespace detail

/// Fit one frame with breath-hold misregistration correction: alternate a
/// surface fit (stiff on the first pass) with closed-form per-slice
/// in-plane alignment until the shifts settle. Never throws on
/// non-convergence; the result carries a warning instead.
inline FrameFit correct_misregistration(const std::vector<SliceAnnotation>& slices,
                                        const LandmarkSet& landmarks,
                                        const FitConfig& config = {}) {
    if (slices.size() < 3)
        throw DataError("correct_misregistration: need at least 3 slices");

    FrameFit fit;
    fit.corrected = slices;
    fit.shifts.assign(slices.size(), Vec2::Zero());

    const LVFrameAxes axes0 = build_axes(landmarks, slices);

    if (config.shift_correction) {
        for (int iter = 1; iter <= config.max_iters; ++iter) {
            const double lambda = iter == 1 ? config.lambda_stiff : config.lambda_final;
            const auto [endo, epi] = detail::collect_samples(fit.corrected, axes0);
            const auto fe = detail::fit_surface(endo, lambda, config.k_theta, config.k_z);
            const auto fp = detail::fit_surface(epi, lambda, config.k_theta, config.k_z);
            LVModel current;
            current.axes = axes0;
            current.k_theta = config.k_theta;
            current.k_z = config.k_z;
            current.lambda = lambda;
            current.endo_ctrl = fe.controls;
            current.epi_ctrl = fp.controls;
            fit.objective_per_cycle.push_back(fe.data_sse + fp.data_sse +
                                              lambda * (fe.penalty + fp.penalty));

            double max_step = 0.0;
            for (std::size_t s = 0; s < fit.corrected.size(); ++s) {
                const Vec2 d = detail::slice_shift(fit.corrected[s], current);
                detail::shift_slice(fit.corrected[s], d);
                fit.shifts[s] += d;
                max_step = std::max(max_step, d.norm());
            }
            fit.iterations = iter;
            if (max_step < config.tol_mm) {
                fit.converged = true;
                break;
            }
            fit.converged = false;
        }
        if (!fit.converged)
            fit.warnings.push_back("shift correction did not converge within max_iters");
    }

    // final refit: re-derive the frame from the corrected contours
    const LVFrameAxes axes_final = build_axes(landmarks, fit.corrected);
    const auto [endo, epi] = detail::collect_samples(fit.corrected, axes_final);
    fit.model = fit_surfaces(axes_final, endo, epi, config.lambda_final, config.k_theta,
                             config.k_z, &fit.rms_endo, &fit.rms_epi);
    for (const auto& v : fit.model.violations()) fit.warnings.push_back(v);
    return fit;
}

}  // namespace lvatlas
