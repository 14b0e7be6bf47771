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

#include <array>
#include <vector>

namespace lvatlas {

/// Uniform cubic B-spline blending weights for the four controls
/// (i-1, i, i+1, i+2) at local parameter u in [0, 1).
inline std::array<double, 4> cubic_bspline_weights(double u) {
    const double u2 = u * u;
    const double u3 = u2 * u;
    return {(1.0 - 3.0 * u + 3.0 * u2 - u3) / 6.0,
            (4.0 - 6.0 * u2 + 3.0 * u3) / 6.0,
            (1.0 + 3.0 * u + 3.0 * u2 - 3.0 * u3) / 6.0,
            u3 / 6.0};
}

/// Periodic uniform cubic B-spline basis over [0, 2*pi) with k controls.
/// Returns the four (control index, weight) pairs active at theta.
struct PeriodicCubicBasis {
    int k;

    explicit PeriodicCubicBasis(int controls) : k(controls) {
        if (k < 4) throw std::invalid_argument("PeriodicCubicBasis: need at least 4 controls");
    }

    std::array<std::pair<int, double>, 4> at(double theta) const {
        const double two_pi = 2.0 * M_PI;
        double t = theta / two_pi;
        t -= std::floor(t);
        const double x = t * k;
        int cell = static_cast<int>(std::floor(x));
        if (cell >= k) cell = k - 1;
        const double u = x - cell;
        const auto w = cubic_bspline_weights(u);
        std::array<std::pair<int, double>, 4> out;
        for (int j = 0; j < 4; ++j)
            out[static_cast<std::size_t>(j)] = {((cell - 1 + j) % k + k) % k, w[static_cast<std::size_t>(j)]};
        return out;
    }
};

/// Clamped cubic B-spline basis on [0, 1] with k controls (k >= 4),
/// open-uniform knot vector. Basis values via Cox-de Boor recursion.
struct ClampedCubicBasis {
    int k;
    std::vector<double> knots;  // k + 4 entries

    explicit ClampedCubicBasis(int controls) : k(controls) {
        if (k < 4) throw std::invalid_argument("ClampedCubicBasis: need at least 4 controls");
        knots.assign(static_cast<std::size_t>(k) + 4, 0.0);
        const int interior = k - 3;  // spans
        for (int i = 0; i < k + 4; ++i) {
            if (i <= 3)
                knots[static_cast<std::size_t>(i)] = 0.0;
            else if (i >= k)
                knots[static_cast<std::size_t>(i)] = 1.0;
            else
                knots[static_cast<std::size_t>(i)] = static_cast<double>(i - 3) / interior;
        }
    }

    /// All k basis values at z in [0, 1] (values are clamped to the domain).
    std::vector<double> at(double z) const {
        double t = std::min(std::max(z, 0.0), 1.0);
        std::vector<double> n(static_cast<std::size_t>(k) + 3, 0.0);
        // find the knot span [knots[s], knots[s+1}) containing t
        int span = 3;
        while (span < k - 1 && t >= knots[static_cast<std::size_t>(span) + 1]) ++span;
        n[static_cast<std::size_t>(span)] = 1.0;
        for (int degree = 1; degree <= 3; ++degree) {
            for (int i = span - degree; i <= span; ++i) {
                if (i < 0) continue;
                const double den1 =
                    knots[static_cast<std::size_t>(i + degree)] - knots[static_cast<std::size_t>(i)];
                const double den2 = knots[static_cast<std::size_t>(i + degree + 1)] -
                                    knots[static_cast<std::size_t>(i + 1)];
                double v = 0.0;
                if (den1 > 0.0) v += (t - knots[static_cast<std::size_t>(i)]) / den1 * n[static_cast<std::size_t>(i)];
                if (den2 > 0.0)
                    v += (knots[static_cast<std::size_t>(i + degree + 1)] - t) / den2 *
                         n[static_cast<std::size_t>(i) + 1];
                n[static_cast<std::size_t>(i)] = v;
            }
        }
        std::vector<double> out(static_cast<std::size_t>(k), 0.0);
        for (int i = std::max(0, span - 3); i <= span && i < k; ++i)
            out[static_cast<std::size_t>(i)] = n[static_cast<std::size_t>(i)];
        return out;
    }
};

}  // namespace lvatlas
