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

#include "lvatlas/geometry.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace lvatlas {

// --- label masks ---------------------------------------------------------

enum class Label : std::uint8_t { background = 0, myocardium = 1, cavity = 2 };

/// 3-class segmentation mask posed in patient space.
struct LabelMask {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> labels;  // row-major, values 0/1/2
    ImagePlane plane;

    std::uint8_t at(int r, int c) const { return labels[static_cast<std::size_t>(r) * cols + c]; }

    void validate() const {
        plane.validate();
        if (rows <= 0 || cols <= 0) throw DataError("LabelMask: empty grid");
        if (labels.size() != static_cast<std::size_t>(rows) * cols)
            throw DataError("LabelMask: grid size mismatch");
        for (std::uint8_t v : labels)
            if (v > 2) throw DataError("LabelMask: label outside {background, myocardium, cavity}");
    }

    /// Binary region of one label class.
    std::vector<std::uint8_t> region(Label which) const {
        std::vector<std::uint8_t> out(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i)
            out[i] = labels[i] == static_cast<std::uint8_t>(which) ? 1 : 0;
        return out;
    }
};

/// Rasterize a closed (row, col) polygon onto a grid: pixels whose centers
/// fall inside or on the polygon boundary are set.
inline std::vector<std::uint8_t> rasterize_polygon(const std::vector<Vec2>& poly, int rows,
                                                   int cols) {
    std::vector<std::uint8_t> grid(static_cast<std::size_t>(rows) * cols, 0);
    if (poly.size() < 3) return grid;
    double rmin = poly[0].x(), rmax = rmin, cmin = poly[0].y(), cmax = cmin;
    for (const auto& p : poly) {
        rmin = std::min(rmin, p.x());
        rmax = std::max(rmax, p.x());
        cmin = std::min(cmin, p.y());
        cmax = std::max(cmax, p.y());
    }
    const int r0 = std::max(0, static_cast<int>(std::floor(rmin)));
    const int r1 = std::min(rows - 1, static_cast<int>(std::ceil(rmax)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cmin)));
    const int c1 = std::min(cols - 1, static_cast<int>(std::ceil(cmax)));
    for (int r = r0; r <= r1; ++r)
        for (int c = c0; c <= c1; ++c)
            if (point_in_polygon(Vec2(r, c), poly))
                grid[static_cast<std::size_t>(r) * cols + c] = 1;
    return grid;
}

namespace detail {

/// 4-connected component labelling of a binary grid; returns component
/// count and per-pixel component index (-1 for background).
inline int connected_components(const std::vector<std::uint8_t>& grid, int rows, int cols,
                                std::vector<int>& comp) {
    comp.assign(grid.size(), -1);
    int count = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < grid.size(); ++start) {
        if (!grid[start] || comp[start] >= 0) continue;
        stack.push_back(start);
        comp[start] = count;
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            const int r = static_cast<int>(i) / cols;
            const int c = static_cast<int>(i) % cols;
            const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& q : nb) {
                if (q[0] < 0 || q[0] >= rows || q[1] < 0 || q[1] >= cols) continue;
                const std::size_t j = static_cast<std::size_t>(q[0]) * cols + q[1];
                if (grid[j] && comp[j] < 0) {
                    comp[j] = count;
                    stack.push_back(j);
                }
            }
        }
        ++count;
    }
    return count;
}

/// Moore-neighbor boundary following with Jacob's stopping criterion.
/// Returns the outer boundary as pixel centers, clockwise in (row, col)
/// raster order; the caller normalizes orientation.
inline std::vector<Vec2> trace_boundary(const std::vector<std::uint8_t>& grid, int rows,
                                        int cols) {
    auto filled = [&](int r, int c) {
        return r >= 0 && r < rows && c >= 0 && c < cols &&
               grid[static_cast<std::size_t>(r) * cols + c] != 0;
    };
    // 8-neighborhood in clockwise order starting from west
    static const int dr[8] = {0, -1, -1, -1, 0, 1, 1, 1};
    static const int dc[8] = {-1, -1, 0, 1, 1, 1, 0, -1};

    int sr = -1, sc = -1;
    for (int r = 0; r < rows && sr < 0; ++r)
        for (int c = 0; c < cols; ++c)
            if (filled(r, c)) {
                sr = r;
                sc = c;
                break;
            }
    if (sr < 0) return {};

    std::vector<Vec2> boundary;
    int r = sr, c = sc;
    int backtrack = 0;  // entered start scanning from the west
    const int start_backtrack = backtrack;
    boundary.emplace_back(r, c);
    for (std::size_t guard = 0; guard < grid.size() * 8 + 8; ++guard) {
        int dir = (backtrack + 1) % 8;
        int found = -1;
        for (int k = 0; k < 8; ++k) {
            const int d = (dir + k) % 8;
            if (filled(r + dr[d], c + dc[d])) {
                found = d;
                break;
            }
        }
        if (found < 0) return boundary;  // isolated pixel
        r += dr[found];
        c += dc[found];
        backtrack = (found + 4) % 8;
        if (r == sr && c == sc && backtrack == start_backtrack) break;
        boundary.emplace_back(r, c);
    }
    // collapse duplicate consecutive points (single-pixel necks revisit)
    std::vector<Vec2> out;
    for (const auto& p : boundary)
        if (out.empty() || (p - out.back()).norm() > 0.0) out.push_back(p);
    while (out.size() > 1 && (out.front() - out.back()).norm() == 0.0) out.pop_back();
    return out;
}

}  // namespace detail

/// Trace endocardial and epicardial boundaries from a 3-class mask and lift
/// them to patient space. The endocardium is the outer boundary of the
/// cavity; the epicardium the outer boundary of myocardium plus cavity.
inline std::pair<Contour3D, Contour3D> extract_contours(const LabelMask& mask) {
    mask.validate();
    const auto cavity = mask.region(Label::cavity);
    std::vector<int> comp;
    const int n_cavity = detail::connected_components(cavity, mask.rows, mask.cols, comp);
    if (n_cavity == 0) throw DataError("extract_contours: no cavity");
    if (n_cavity > 1) throw DataError("extract_contours: ambiguous cavity");

    std::vector<std::uint8_t> shell(mask.labels.size());
    for (std::size_t i = 0; i < mask.labels.size(); ++i)
        shell[i] = mask.labels[i] != static_cast<std::uint8_t>(Label::background) ? 1 : 0;
    const int n_shell = detail::connected_components(shell, mask.rows, mask.cols, comp);
    if (n_shell > 1) throw DataError("extract_contours: fragmented myocardial shell");

    const auto endo_px = detail::trace_boundary(cavity, mask.rows, mask.cols);
    const auto epi_px = detail::trace_boundary(shell, mask.rows, mask.cols);
    if (endo_px.size() < 3 || epi_px.size() < 3)
        throw DataError("extract_contours: degenerate boundary");

    auto lift = [&](const std::vector<Vec2>& px, ContourKind kind) {
        Contour2D c2;
        c2.points = px;
        c2.kind = kind;
        Contour3D c3 = contour_to_patient(c2, mask.plane);
        normalize_orientation(c3);
        return c3;
    };
    return {lift(endo_px, ContourKind::endocardial), lift(epi_px, ContourKind::epicardial)};
}

// --- slice ordering -------------------------------------------------------

namespace detail {

/// Shared unit normal of a parallel plane set; throws past `max_angle_deg`.
inline Vec3 shared_normal(const std::vector<ImagePlane>& planes, double max_angle_deg = 2.0) {
    if (planes.size() < 2) throw std::invalid_argument("order_slices: need at least 2 planes");
    const Vec3 n0 = planes[0].normal().normalized();
    const double cos_tol = std::cos(max_angle_deg * M_PI / 180.0);
    Vec3 acc = Vec3::Zero();
    for (const auto& p : planes) {
        Vec3 n = p.normal().normalized();
        if (n.dot(n0) < 0.0) n = -n;
        if (n.dot(n0) < cos_tol)
            throw DataError("order_slices: slice planes not parallel within 2 degrees");
        acc += n;
    }
    return acc.normalized();
}

inline std::vector<std::size_t> sort_by_position(const std::vector<ImagePlane>& planes,
                                                 const Vec3& n, bool ascending) {
    std::vector<std::size_t> perm(planes.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
        const double pa = planes[a].origin.dot(n);
        const double pb = planes[b].origin.dot(n);
        return ascending ? pa < pb : pa > pb;
    });
    return perm;
}

}  // namespace detail

/// Permutation sorting the planes apex to base, where the apex end is the
/// end of the stack farther from the mitral valve centroid.
inline std::vector<std::size_t> order_slices(const std::vector<ImagePlane>& planes,
                                             const Vec3& mv_centroid) {
    const Vec3 n = detail::shared_normal(planes);
    double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
    for (const auto& p : planes) {
        const double s = p.origin.dot(n);
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    const double s_mv = mv_centroid.dot(n);
    // apex end = stack end farther from the valve plane
    const bool ascending = std::abs(lo - s_mv) > std::abs(hi - s_mv);
    return detail::sort_by_position(planes, n, ascending);
}

/// Variant for callers that know the base-to-apex direction directly.
inline std::vector<std::size_t> order_slices_along(const std::vector<ImagePlane>& planes,
                                                   const Vec3& base_to_apex) {
    const Vec3 n = detail::shared_normal(planes);
    const double d = base_to_apex.normalized().dot(n);
    if (std::abs(d) < 1e-6)
        throw DataError("order_slices: direction is parallel to the slice planes");
    // apex first: descending projection onto the base-to-apex direction
    return detail::sort_by_position(planes, n, d < 0.0);
}

// --- case ---------------------------------------------------------------------

enum class Frame { ED = 0, ES = 1 };

inline const char* to_string(Frame f) { return f == Frame::ED ? "ED" : "ES"; }

/// One annotated slice: pose, epicardial contour, and the endocardial
/// contour when the cavity is visible on this slice.
struct SliceAnnotation {
    ImagePlane plane;
    std::optional<Contour3D> endo;
    Contour3D epi;
};

struct FrameAnnotation {
    std::vector<SliceAnnotation> slices;  // ordered apex to base
};

/// All annotations for one exam.
struct Case {
    std::string case_id;
    FrameAnnotation ed;
    FrameAnnotation es;
    LandmarkSet landmarks;
    double height_cm = 0.0;
    double weight_kg = 0.0;

    const FrameAnnotation& frame(Frame f) const { return f == Frame::ED ? ed : es; }
    FrameAnnotation& frame(Frame f) { return f == Frame::ED ? ed : es; }

    void validate() const;
};

namespace detail {

inline bool endo_inside_epi(const SliceAnnotation& s) {
    if (!s.endo) return true;
    // test in-plane pixel coordinates
    std::vector<Vec2> epi_px;
    epi_px.reserve(s.epi.points.size());
    for (const auto& p : s.epi.points) {
        const auto pc = patient_to_image(p, s.plane);
        epi_px.emplace_back(pc.row, pc.col);
    }
    for (const auto& p : s.endo->points) {
        const auto pc = patient_to_image(p, s.plane);
        if (!point_in_polygon(Vec2(pc.row, pc.col), epi_px)) return false;
    }
    return true;
}

}  // namespace detail

inline void Case::validate() const {
    if (case_id.empty()) throw DataError("Case: empty case_id");
    if (!(height_cm > 0.0) || !(weight_kg > 0.0))
        throw DataError("Case: height and weight must be positive");
    landmarks.validate();
    for (Frame f : {Frame::ED, Frame::ES}) {
        const auto& slices = frame(f).slices;
        if (slices.empty()) throw DataError(std::string("Case: frame ") + to_string(f) +
                                            " has no slices");
        std::vector<ImagePlane> planes;
        for (const auto& s : slices) {
            s.plane.validate();
            planes.push_back(s.plane);
            s.epi.validate();
            if (s.endo) s.endo->validate();
            if (!detail::endo_inside_epi(s))
                throw DataError("Case: endocardial contour outside epicardial contour");
        }
        if (slices.size() >= 2) {
            const auto perm = order_slices(planes, landmarks.mv_centroid());
            for (std::size_t i = 0; i < perm.size(); ++i)
                if (perm[i] != i)
                    throw DataError(std::string("Case: frame ") + to_string(f) +
                                    " slices not ordered apex to base");
        }
    }
}

// --- contour-to-slice matching ----------------------------------------------

/// Unposed annotation for one unknown slice.
struct ContourGroup {
    Contour2D endo;
    std::optional<Contour2D> epi;
};

struct MatchReport {
    /// assignment[i] = slice index (into the input plane list) for contour
    /// group i, or -1 when unmatched. Injective when accepted.
    std::vector<int> assignment;
    bool rejected = false;
    std::string reason;
};

/// Match unposed contour groups to slice planes by ordering both apex to
/// base (contours by the cavity-area trend, planes by position) and
/// anchoring the contour run at the basal end of the stack. A suspected
/// gap in the interior of the contour run rejects the case.
inline MatchReport match_contours_to_slices(const std::vector<ContourGroup>& groups,
                                            const std::vector<ImagePlane>& planes,
                                            const Vec3& mv_centroid,
                                            double gap_step_ratio = 1.25) {
    MatchReport report;
    report.assignment.assign(groups.size(), -1);
    if (groups.empty()) {
        report.rejected = true;
        report.reason = "empty contour list";
        return report;
    }
    if (groups.size() > planes.size()) {
        report.rejected = true;
        report.reason = "more contour groups than slices";
        return report;
    }
    const auto plane_order = order_slices(planes, mv_centroid);

    // contour areas in mm^2 (uniform-protocol spacing from the first plane)
    const double row_mm = planes[0].row_spacing_mm;
    const double col_mm = planes[0].col_spacing_mm;
    std::vector<double> area(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i)
        area[i] = std::abs(signed_area(groups[i].endo.points, row_mm, col_mm));

    // apex-to-base contour order: ascending cavity area, ties keep input order
    std::vector<std::size_t> contour_order(groups.size());
    std::iota(contour_order.begin(), contour_order.end(), 0);
    std::stable_sort(contour_order.begin(), contour_order.end(),
                     [&](std::size_t a, std::size_t b) { return area[a] < area[b]; });

    // Interior-gap check: a missing middle contour merges two adjacent area
    // steps into one that stands out against its neighbors. Steps shrink
    // toward the base, so a step clearly above both neighbors is anomalous.
    const std::size_t nc = groups.size();
    if (nc >= 4) {
        const double max_area = area[contour_order[nc - 1]];
        std::vector<double> step(nc - 1);
        for (std::size_t i = 0; i + 1 < nc; ++i)
            step[i] = area[contour_order[i + 1]] - area[contour_order[i]];
        for (std::size_t i = 1; i + 1 < step.size(); ++i) {
            const double neighbor = std::max(step[i - 1], step[i + 1]);
            if (step[i] > gap_step_ratio * neighbor && step[i] > 0.05 * max_area) {
                report.rejected = true;
                report.reason = "suspected interior gap in contour stack";
            }
        }
    }

    // basal-anchored contiguous placement: unannotated slices sit at the apex
    const std::size_t offset = planes.size() - nc;
    for (std::size_t i = 0; i < nc; ++i)
        report.assignment[contour_order[i]] =
            static_cast<int>(plane_order[i + offset]);
    return report;
}

/// Pose matched contour groups onto their assigned planes, apex to base.
inline std::vector<SliceAnnotation> apply_match(const std::vector<ContourGroup>& groups,
                                                const std::vector<ImagePlane>& planes,
                                                const MatchReport& report,
                                                const Vec3& mv_centroid) {
    if (report.rejected) throw DataError("apply_match: rejected match report");
    std::vector<SliceAnnotation> matched;
    std::vector<ImagePlane> matched_planes;
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const int slice = report.assignment[i];
        if (slice < 0) continue;
        SliceAnnotation ann;
        ann.plane = planes[static_cast<std::size_t>(slice)];
        Contour3D endo = contour_to_patient(groups[i].endo, ann.plane);
        endo.kind = ContourKind::endocardial;
        normalize_orientation(endo);
        if (groups[i].epi) {
            Contour3D epi = contour_to_patient(*groups[i].epi, ann.plane);
            epi.kind = ContourKind::epicardial;
            normalize_orientation(epi);
            ann.epi = std::move(epi);
        } else {
            ann.epi = endo;  // degenerate shell: epi follows the only boundary
            ann.epi.kind = ContourKind::epicardial;
        }
        ann.endo = std::move(endo);
        matched_planes.push_back(ann.plane);
        matched.push_back(std::move(ann));
    }
    if (matched.size() >= 2) {
        const auto perm = order_slices(matched_planes, mv_centroid);
        std::vector<SliceAnnotation> ordered;
        ordered.reserve(matched.size());
        for (std::size_t idx : perm) ordered.push_back(std::move(matched[idx]));
        return ordered;
    }
    return matched;
}

}  // namespace lvatlas
