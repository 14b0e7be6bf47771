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

#include "lvatlas/common.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <optional>
#include <vector>

namespace lvatlas {

/// Pose of one 2D image slice in 3D patient space (mm).
///
/// Pixel convention: continuous (row, col) indices address pixel centers;
/// the center of pixel (0, 0) maps to `origin`. row_dir / col_dir are the
/// patient-space directions of increasing row / column index.
struct ImagePlane {
    Vec3 origin = Vec3::Zero();
    Vec3 row_dir = Vec3::UnitX();
    Vec3 col_dir = Vec3::UnitY();
    double row_spacing_mm = 1.0;
    double col_spacing_mm = 1.0;
    double slice_thickness_mm = 6.0;
    double slice_gap_mm = 4.0;
    int rows = 0;
    int cols = 0;

    Vec3 normal() const { return row_dir.cross(col_dir); }
    double slice_spacing_mm() const { return slice_thickness_mm + slice_gap_mm; }

    void validate() const {
        constexpr double tol = 1e-9;
        if (!finite(origin) || !finite(row_dir) || !finite(col_dir))
            throw DataError("ImagePlane: non-finite pose");
        if (std::abs(row_dir.norm() - 1.0) > tol || std::abs(col_dir.norm() - 1.0) > tol)
            throw DataError("ImagePlane: direction cosines must be unit length");
        if (std::abs(row_dir.dot(col_dir)) > tol)
            throw DataError("ImagePlane: row_dir and col_dir must be orthogonal");
        if (!(row_spacing_mm > 0.0) || !(col_spacing_mm > 0.0))
            throw DataError("ImagePlane: pixel spacing must be positive");
        if (!(slice_thickness_mm > 0.0))
            throw DataError("ImagePlane: slice thickness must be positive");
        if (slice_gap_mm < 0.0)
            throw DataError("ImagePlane: slice gap must be non-negative");
        if (rows < 0 || cols < 0)
            throw DataError("ImagePlane: negative pixel counts");
    }
};

enum class ContourKind { endocardial, epicardial };

inline const char* to_string(ContourKind k) {
    return k == ContourKind::endocardial ? "endocardial" : "epicardial";
}

/// Closed or open polyline in continuous (row, col) pixel coordinates.
struct Contour2D {
    std::vector<Vec2> points;  // (row, col)
    bool closed = true;
    ContourKind kind = ContourKind::endocardial;

    void validate() const {
        if (closed && points.size() < 3)
            throw DataError("Contour2D: closed contour needs at least 3 points");
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (!finite(points[i])) throw DataError("Contour2D: non-finite point");
            if (i > 0 && (points[i] - points[i - 1]).norm() == 0.0)
                throw DataError("Contour2D: duplicate consecutive points");
        }
    }
};

/// Closed planar polygon in patient space, tied to the slice it came from.
struct Contour3D {
    std::vector<Vec3> points;  // mm, patient space
    ContourKind kind = ContourKind::endocardial;
    ImagePlane source_plane;

    void validate(double coplanar_tol_mm = 1e-6) const {
        if (points.size() < 3) throw DataError("Contour3D: needs at least 3 points");
        const Vec3 n = source_plane.normal();
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (!finite(points[i])) throw DataError("Contour3D: non-finite point");
            if (std::abs((points[i] - source_plane.origin).dot(n)) > coplanar_tol_mm)
                throw DataError("Contour3D: point off its source plane");
            if (i > 0 && (points[i] - points[i - 1]).norm() == 0.0)
                throw DataError("Contour3D: duplicate consecutive points");
        }
    }
};

/// Anatomical landmark points: mitral valve hinge pairs on the two
/// long-axis views, and per-SAX-slice RV insertion pairs.
struct LandmarkSet {
    std::array<Vec3, 2> mv_2ch{Vec3::Zero(), Vec3::Zero()};
    std::array<Vec3, 2> mv_4ch{Vec3::Zero(), Vec3::Zero()};
    ImagePlane plane_2ch;
    ImagePlane plane_4ch;

    struct RvInsertPair {
        int slice_index = 0;  // index into the frame's apex-to-base slice list
        Vec3 anterior = Vec3::Zero();
        Vec3 inferior = Vec3::Zero();
    };
    std::vector<RvInsertPair> rv_inserts;

    std::vector<Vec3> mv_points() const {
        return {mv_2ch[0], mv_2ch[1], mv_4ch[0], mv_4ch[1]};
    }
    Vec3 mv_centroid() const {
        return (mv_2ch[0] + mv_2ch[1] + mv_4ch[0] + mv_4ch[1]) / 4.0;
    }

    void validate(double coplanar_tol_mm = 1e-6) const {
        plane_2ch.validate();
        plane_4ch.validate();
        auto on_plane = [&](const Vec3& p, const ImagePlane& pl) {
            return std::abs((p - pl.origin).dot(pl.normal())) <= coplanar_tol_mm;
        };
        for (const auto& p : mv_2ch)
            if (!finite(p) || !on_plane(p, plane_2ch))
                throw DataError("LandmarkSet: 2CH mitral valve point off its plane");
        for (const auto& p : mv_4ch)
            if (!finite(p) || !on_plane(p, plane_4ch))
                throw DataError("LandmarkSet: 4CH mitral valve point off its plane");
        for (const auto& ins : rv_inserts)
            if (!finite(ins.anterior) || !finite(ins.inferior))
                throw DataError("LandmarkSet: non-finite RV insert");
    }
};

// --- coordinate transforms ---------------------------------------------

/// Continuous pixel index -> patient-space mm.
inline Vec3 image_to_patient(const Vec2& row_col, const ImagePlane& plane) {
    if (!finite(row_col)) throw std::invalid_argument("image_to_patient: non-finite input");
    return plane.origin + row_col.x() * plane.row_spacing_mm * plane.row_dir +
           row_col.y() * plane.col_spacing_mm * plane.col_dir;
}

struct PlaneCoords {
    double row = 0.0;
    double col = 0.0;
    double out_of_plane_mm = 0.0;  // signed distance along row_dir x col_dir
};

/// Orthogonal projection of a patient-space point onto a slice plane.
inline PlaneCoords patient_to_image(const Vec3& q, const ImagePlane& plane) {
    const Vec3 d = q - plane.origin;
    PlaneCoords out;
    out.row = d.dot(plane.row_dir) / plane.row_spacing_mm;
    out.col = d.dot(plane.col_dir) / plane.col_spacing_mm;
    out.out_of_plane_mm = d.dot(plane.normal());
    return out;
}

// --- polygon utilities ---------------------------------------------------

namespace detail {

template <class V>
double polyline_length(const std::vector<V>& pts, bool closed) {
    double len = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) len += (pts[i] - pts[i - 1]).norm();
    if (closed && pts.size() > 1) len += (pts.front() - pts.back()).norm();
    return len;
}

}  // namespace detail

template <class V>
V polygon_vertex_centroid(const std::vector<V>& pts) {
    V c = V::Zero();
    for (const auto& p : pts) c += p;
    return c / static_cast<double>(pts.size());
}

inline double polygon_perimeter(const Contour2D& c) {
    return detail::polyline_length(c.points, c.closed);
}
inline double polygon_perimeter(const Contour3D& c) {
    return detail::polyline_length(c.points, true);
}

/// Signed shoelace area of a closed (row, col) polygon, in mm^2 when pixel
/// spacings are given. Positive means counter-clockwise when viewed along
/// the plane normal row_dir x col_dir.
inline double signed_area(const std::vector<Vec2>& pts, double row_mm = 1.0,
                          double col_mm = 1.0) {
    double a = 0.0;
    const std::size_t n = pts.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& p = pts[i];
        const Vec2& q = pts[(i + 1) % n];
        a += (p.x() * row_mm) * (q.y() * col_mm) - (q.x() * row_mm) * (p.y() * col_mm);
    }
    return 0.5 * a;
}

/// Signed area of a planar 3D polygon about the given unit normal (mm^2).
inline double signed_area(const std::vector<Vec3>& pts, const Vec3& unit_normal) {
    Vec3 acc = Vec3::Zero();
    const std::size_t n = pts.size();
    const Vec3 c = polygon_vertex_centroid(pts);
    for (std::size_t i = 0; i < n; ++i)
        acc += (pts[i] - c).cross(pts[(i + 1) % n] - c);
    return 0.5 * acc.dot(unit_normal);
}

/// Point-in-polygon in (row, col) coordinates, even-odd rule. Points on an
/// edge or vertex count as inside when `inclusive` is set.
inline bool point_in_polygon(const Vec2& p, const std::vector<Vec2>& poly,
                             bool inclusive = true, double edge_tol = 1e-9) {
    const std::size_t n = poly.size();
    if (n < 3) return false;
    if (inclusive) {
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2& a = poly[i];
            const Vec2& b = poly[(i + 1) % n];
            const Vec2 ab = b - a;
            const Vec2 ap = p - a;
            const double len2 = ab.squaredNorm();
            double cross = ab.x() * ap.y() - ab.y() * ap.x();
            if (len2 == 0.0) {
                if (ap.norm() <= edge_tol) return true;
                continue;
            }
            if (std::abs(cross) / std::sqrt(len2) <= edge_tol) {
                double t = ap.dot(ab) / len2;
                if (t >= -edge_tol && t <= 1.0 + edge_tol) return true;
            }
        }
    }
    // even-odd crossing count on the col axis
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[j];
        if ((a.y() > p.y()) != (b.y() > p.y())) {
            double x = a.x() + (p.y() - a.y()) / (b.y() - a.y()) * (b.x() - a.x());
            if (p.x() < x) inside = !inside;
        }
    }
    return inside;
}

namespace detail {

inline bool segments_properly_intersect(const Vec2& a, const Vec2& b, const Vec2& c,
                                        const Vec2& d) {
    auto orient = [](const Vec2& p, const Vec2& q, const Vec2& r) {
        double v = (q.x() - p.x()) * (r.y() - p.y()) - (q.y() - p.y()) * (r.x() - p.x());
        return (v > 0) - (v < 0);
    };
    int o1 = orient(a, b, c), o2 = orient(a, b, d);
    int o3 = orient(c, d, a), o4 = orient(c, d, b);
    return o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0;
}

}  // namespace detail

/// True when any two non-adjacent edges of the closed polygon cross.
inline bool polygon_self_intersects(const std::vector<Vec2>& pts) {
    const std::size_t n = pts.size();
    if (n < 4) return false;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            // skip adjacent edges (shared vertex)
            if (j == i + 1 || (i == 0 && j == n - 1)) continue;
            if (detail::segments_properly_intersect(pts[i], pts[(i + 1) % n], pts[j],
                                                    pts[(j + 1) % n]))
                return true;
        }
    }
    return false;
}

// --- contour resampling ---------------------------------------------------

namespace detail {

/// Resample a closed polygon to n points equally spaced by arc length,
/// starting at the original first vertex.
template <class V>
std::vector<V> resample_closed(const std::vector<V>& pts, int n) {
    if (n < 3) throw std::invalid_argument("resample: need n >= 3");
    const std::size_t m = pts.size();
    if (m < 2) throw DataError("resample: degenerate contour");
    std::vector<double> cum(m + 1, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        cum[i + 1] = cum[i] + (pts[(i + 1) % m] - pts[i]).norm();
    const double perimeter = cum[m];
    if (!(perimeter > 0.0)) throw DataError("resample: zero-perimeter contour");
    std::vector<V> out;
    out.reserve(static_cast<std::size_t>(n));
    const double step = perimeter / n;
    std::size_t seg = 0;
    for (int k = 0; k < n; ++k) {
        const double target = k * step;
        while (seg + 1 < m && cum[seg + 1] < target) ++seg;
        const double seg_len = cum[seg + 1] - cum[seg];
        const double t = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
        out.push_back(pts[seg] + t * (pts[(seg + 1) % m] - pts[seg]));
    }
    return out;
}

}  // namespace detail

inline Contour2D resample_contour(const Contour2D& c, int n) {
    if (!c.closed) throw std::invalid_argument("resample_contour: contour must be closed");
    Contour2D out;
    out.points = detail::resample_closed(c.points, n);
    out.closed = true;
    out.kind = c.kind;
    return out;
}

inline Contour3D resample_contour(const Contour3D& c, int n) {
    Contour3D out;
    out.points = detail::resample_closed(c.points, n);
    out.kind = c.kind;
    out.source_plane = c.source_plane;
    return out;
}

/// Reverse point order if needed so the signed area about the source
/// plane's normal is positive (counter-clockwise storage convention).
inline void normalize_orientation(Contour3D& c) {
    if (c.points.size() >= 3 && signed_area(c.points, c.source_plane.normal()) < 0.0)
        std::reverse(c.points.begin(), c.points.end());
}

inline void normalize_orientation(Contour2D& c) {
    if (c.points.size() >= 3 && signed_area(c.points) < 0.0)
        std::reverse(c.points.begin(), c.points.end());
}

/// Lift a 2D pixel-space contour onto its slice plane.
inline Contour3D contour_to_patient(const Contour2D& c, const ImagePlane& plane) {
    Contour3D out;
    out.kind = c.kind;
    out.source_plane = plane;
    out.points.reserve(c.points.size());
    for (const auto& p : c.points) out.points.push_back(image_to_patient(p, plane));
    return out;
}

}  // namespace lvatlas
