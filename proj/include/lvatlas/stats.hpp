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
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace lvatlas {

// --- overlap and distance -------------------------------------------------

/// Dice overlap 2|A∩B| / (|A|+|B|) of two same-sized binary regions.
/// Two empty regions count as perfect agreement (1.0).
inline double dice(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dice: region shapes differ");
    std::size_t na = 0, nb = 0, ni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool ia = a[i] != 0, ib = b[i] != 0;
        na += ia;
        nb += ib;
        ni += ia && ib;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(na + nb);
}

/// Euclidean distance in mm between two pixel positions with anisotropic
/// spacing (row_mm, col_mm).
inline double landmark_distance(const Vec2& p, const Vec2& q, double row_mm,
                                double col_mm) {
    const double dr = (p.x() - q.x()) * row_mm;
    const double dc = (p.y() - q.y()) * col_mm;
    return std::sqrt(dr * dr + dc * dc);
}

// --- agreement --------------------------------------------------------------

/// Complete n-targets x k-raters measurement table.
struct AgreementTable {
    std::size_t n = 0;  // targets (rows)
    std::size_t k = 0;  // raters (columns)
    std::vector<double> values;  // row-major, n*k

    double at(std::size_t i, std::size_t j) const { return values[i * k + j]; }

    void validate() const {
        if (n < 2 || k < 2) throw std::invalid_argument("AgreementTable: need n >= 2, k >= 2");
        if (values.size() != n * k)
            throw std::invalid_argument("AgreementTable: incomplete table");
        for (double v : values)
            if (!std::isfinite(v)) throw std::invalid_argument("AgreementTable: non-finite cell");
    }
};

struct IccResult {
    double value = 1.0;
    bool degenerate = false;  // zero total variance
};

/// ICC(2,1): two-way random effects, absolute agreement, single measurement.
inline IccResult icc2_1(const AgreementTable& t) {
    t.validate();
    const double n = static_cast<double>(t.n);
    const double k = static_cast<double>(t.k);
    double grand = 0.0;
    for (double v : t.values) grand += v;
    grand /= (n * k);

    double ss_total = 0.0;
    for (double v : t.values) ss_total += (v - grand) * (v - grand);
    if (ss_total == 0.0) return {1.0, true};

    double ss_rows = 0.0;
    for (std::size_t i = 0; i < t.n; ++i) {
        double m = 0.0;
        for (std::size_t j = 0; j < t.k; ++j) m += t.at(i, j);
        m /= k;
        ss_rows += (m - grand) * (m - grand);
    }
    ss_rows *= k;

    double ss_cols = 0.0;
    for (std::size_t j = 0; j < t.k; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < t.n; ++i) m += t.at(i, j);
        m /= n;
        ss_cols += (m - grand) * (m - grand);
    }
    ss_cols *= n;

    const double ss_err = ss_total - ss_rows - ss_cols;
    const double msr = ss_rows / (n - 1.0);
    const double msc = ss_cols / (k - 1.0);
    const double mse = ss_err / ((n - 1.0) * (k - 1.0));

    const double denom = msr + (k - 1.0) * mse + (k / n) * (msc - mse);
    if (denom == 0.0) return {1.0, true};
    return {(msr - mse) / denom, false};
}

struct BlandAltmanResult {
    double bias = 0.0;      // mean(x - y)
    double sd = 0.0;        // sample standard deviation of differences
    double loa_low = 0.0;   // bias - 1.96 * sd
    double loa_high = 0.0;  // bias + 1.96 * sd
    std::vector<std::pair<double, double>> pairs;  // (mean(x_i, y_i), x_i - y_i)
};

inline BlandAltmanResult bland_altman(const std::vector<double>& x,
                                      const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("bland_altman: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw std::invalid_argument("bland_altman: need at least 2 pairs");
    BlandAltmanResult r;
    r.pairs.reserve(n);
    double mean_d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - y[i];
        r.pairs.emplace_back(0.5 * (x[i] + y[i]), d);
        mean_d += d;
    }
    mean_d /= static_cast<double>(n);
    double ss = 0.0;
    for (const auto& p : r.pairs) ss += (p.second - mean_d) * (p.second - mean_d);
    r.bias = mean_d;
    r.sd = std::sqrt(ss / static_cast<double>(n - 1));
    r.loa_low = r.bias - 1.96 * r.sd;
    r.loa_high = r.bias + 1.96 * r.sd;
    return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    const std::size_t n = x.size();
    if (n < 3) throw std::invalid_argument("pearson: need at least 3 pairs");
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson: zero variance");
    return sxy / std::sqrt(sxx * syy);
}

// --- logistic regression ----------------------------------------------------

struct LogisticFit {
    Eigen::VectorXd coefficients;  // [intercept, slope_1 .. slope_m]
    bool converged = false;
    int iterations = 0;
    bool separation_flag = false;  // some |coef| > 50
};

/// Ridge-penalized logistic regression by iteratively reweighted least
/// squares. The intercept is unpenalized; convergence when the largest
/// coefficient update falls below 1e-8 (at most 100 iterations).
inline LogisticFit logistic_fit(const Eigen::MatrixXd& X, const std::vector<int>& y,
                                double ridge = 1e-6) {
    const Eigen::Index n = X.rows();
    const Eigen::Index m = X.cols();
    if (static_cast<Eigen::Index>(y.size()) != n)
        throw std::invalid_argument("logistic_fit: label count mismatch");
    if (n <= m) throw std::invalid_argument("logistic_fit: need more samples than features");
    bool has0 = false, has1 = false;
    for (int v : y) {
        if (v == 0) has0 = true;
        else if (v == 1) has1 = true;
        else throw std::invalid_argument("logistic_fit: labels must be 0/1");
    }
    if (!has0 || !has1) throw std::invalid_argument("logistic_fit: need both classes");

    Eigen::MatrixXd D(n, m + 1);
    D.col(0).setOnes();
    D.rightCols(m) = X;
    Eigen::VectorXd yv(n);
    for (Eigen::Index i = 0; i < n; ++i) yv[i] = y[i];

    Eigen::VectorXd beta = Eigen::VectorXd::Zero(m + 1);
    Eigen::VectorXd penalty = Eigen::VectorXd::Constant(m + 1, ridge);
    penalty[0] = 0.0;

    LogisticFit fit;
    for (int iter = 0; iter < 100; ++iter) {
        const Eigen::VectorXd eta = D * beta;
        Eigen::VectorXd p(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double pi = 1.0 / (1.0 + std::exp(-eta[i]));
            p[i] = pi;
            w[i] = std::max(pi * (1.0 - pi), 1e-10);
        }
        Eigen::MatrixXd H = D.transpose() * w.asDiagonal() * D;
        H.diagonal() += penalty;
        const Eigen::VectorXd grad =
            D.transpose() * (yv - p) - penalty.asDiagonal() * beta;
        const Eigen::VectorXd step = H.ldlt().solve(grad);
        beta += step;
        fit.iterations = iter + 1;
        if (step.cwiseAbs().maxCoeff() < 1e-8) {
            fit.converged = true;
            break;
        }
    }
    fit.coefficients = beta;
    fit.separation_flag = beta.cwiseAbs().maxCoeff() > 50.0;
    return fit;
}

inline double logistic_predict(const Eigen::VectorXd& coefficients,
                               const Eigen::VectorXd& features) {
    double eta = coefficients[0];
    for (Eigen::Index j = 0; j < features.size(); ++j) eta += coefficients[j + 1] * features[j];
    return 1.0 / (1.0 + std::exp(-eta));
}

// --- ROC / AUC ----------------------------------------------------------------

/// Mann-Whitney AUC via placement counts over the sorted score list.
/// Ties contribute 1/2.
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("roc_auc: length mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0, n_neg = 0;
    for (int v : labels) {
        if (v == 1) ++n_pos;
        else if (v == 0) ++n_neg;
        else throw std::invalid_argument("roc_auc: labels must be 0/1");
    }
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("roc_auc: need both classes");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // sum of midranks over positives
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] == 1) rank_sum += midrank;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// ROC curve points (fpr, tpr) sweeping thresholds over distinct scores.
inline std::vector<std::pair<double, double>> roc_points(const std::vector<double>& scores,
                                                         const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double n_pos = 0, n_neg = 0;
    for (int v : labels) (v == 1 ? n_pos : n_neg) += 1;
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
    double tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        for (std::size_t t = i; t <= j; ++t)
            (labels[order[t]] == 1 ? tp : fp) += 1;
        pts.emplace_back(fp / n_neg, tp / n_pos);
        i = j + 1;
    }
    return pts;
}

// --- DeLong test -----------------------------------------------------------------

struct DeLongResult {
    double auc_a = 0.0;
    double auc_b = 0.0;
    double z = 0.0;
    double p_two_sided = 1.0;
};

namespace detail {

/// Placement values: per-positive V10 and per-negative V01 components.
inline void placements(const std::vector<double>& s, const std::vector<int>& labels,
                       std::vector<double>& v10, std::vector<double>& v01) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < s.size(); ++i)
        (labels[i] == 1 ? pos : neg).push_back(s[i]);
    v10.assign(pos.size(), 0.0);
    v01.assign(neg.size(), 0.0);
    for (std::size_t i = 0; i < pos.size(); ++i) {
        double acc = 0.0;
        for (double t : neg) acc += pos[i] > t ? 1.0 : (pos[i] == t ? 0.5 : 0.0);
        v10[i] = acc / static_cast<double>(neg.size());
    }
    for (std::size_t j = 0; j < neg.size(); ++j) {
        double acc = 0.0;
        for (double t : pos) acc += t > neg[j] ? 1.0 : (t == neg[j] ? 0.5 : 0.0);
        v01[j] = acc / static_cast<double>(pos.size());
    }
}

inline double sample_cov(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += (a[i] - ma) * (b[i] - mb);
    return acc / static_cast<double>(n - 1);
}

}  // namespace detail

/// DeLong comparison of two correlated AUCs measured on the same cases.
inline DeLongResult delong_test(const std::vector<double>& scores_a,
                                const std::vector<double>& scores_b,
                                const std::vector<int>& labels) {
    if (scores_a.size() != labels.size() || scores_b.size() != labels.size())
        throw std::invalid_argument("delong_test: length mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (int v : labels) (v == 1 ? n_pos : n_neg) += 1;
    if (n_pos < 2 || n_neg < 2)
        throw std::invalid_argument("delong_test: need at least 2 cases per class");

    std::vector<double> v10a, v01a, v10b, v01b;
    detail::placements(scores_a, labels, v10a, v01a);
    detail::placements(scores_b, labels, v10b, v01b);

    DeLongResult r;
    r.auc_a = std::accumulate(v10a.begin(), v10a.end(), 0.0) / n_pos;
    r.auc_b = std::accumulate(v10b.begin(), v10b.end(), 0.0) / n_pos;

    const double s10_aa = detail::sample_cov(v10a, v10a);
    const double s10_bb = detail::sample_cov(v10b, v10b);
    const double s10_ab = detail::sample_cov(v10a, v10b);
    const double s01_aa = detail::sample_cov(v01a, v01a);
    const double s01_bb = detail::sample_cov(v01b, v01b);
    const double s01_ab = detail::sample_cov(v01a, v01b);

    const double var = (s10_aa - 2.0 * s10_ab + s10_bb) / static_cast<double>(n_pos) +
                       (s01_aa - 2.0 * s01_ab + s01_bb) / static_cast<double>(n_neg);
    const double diff = r.auc_a - r.auc_b;
    if (var <= 0.0) {
        if (diff == 0.0) {
            r.z = 0.0;
            r.p_two_sided = 1.0;
            return r;
        }
        throw NumericError("delong_test: degenerate variance with differing AUCs");
    }
    r.z = diff / std::sqrt(var);
    r.p_two_sided = std::erfc(std::abs(r.z) / std::sqrt(2.0));
    return r;
}

// --- cross-validated association ---------------------------------------------------

struct AssociationResult {
    std::string factor;
    double auc = 0.0;
    std::vector<Eigen::VectorXd> fold_coefficients;
    std::vector<double> pooled_scores;   // out-of-fold predicted probabilities
    std::vector<int> pooled_labels;      // aligned with input case order
};

/// Deterministic stratified k-fold split: within each class, indices are
/// shuffled by the seeded engine and dealt round-robin into folds.
inline std::vector<int> stratified_folds(const std::vector<int>& labels, int k,
                                         std::uint64_t seed) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i)
        (labels[i] == 1 ? pos : neg).push_back(i);
    if (static_cast<int>(pos.size()) < k || static_cast<int>(neg.size()) < k)
        throw std::invalid_argument(
            "stratified_folds: a class has fewer cases than folds; use a smaller k");
    auto eng = seeded_engine(seed);
    std::shuffle(pos.begin(), pos.end(), eng);
    std::shuffle(neg.begin(), neg.end(), eng);
    std::vector<int> fold(labels.size(), -1);
    for (std::size_t i = 0; i < pos.size(); ++i) fold[pos[i]] = static_cast<int>(i % k);
    for (std::size_t i = 0; i < neg.size(); ++i) fold[neg[i]] = static_cast<int>(i % k);
    return fold;
}

/// k-fold cross-validated logistic association between feature scores and a
/// binary factor; the AUC is computed on pooled out-of-fold predictions.
inline AssociationResult cv_associate(const Eigen::MatrixXd& scores,
                                      const std::vector<int>& labels, int k = 10,
                                      std::uint64_t seed = 0, double ridge = 1e-6) {
    const Eigen::Index n = scores.rows();
    if (static_cast<Eigen::Index>(labels.size()) != n)
        throw std::invalid_argument("cv_associate: label count mismatch");
    if (n < 50) throw std::invalid_argument("cv_associate: need at least 50 cases");
    const std::vector<int> fold = stratified_folds(labels, k, seed);

    AssociationResult result;
    result.pooled_scores.assign(static_cast<std::size_t>(n), 0.0);
    result.pooled_labels = labels;
    result.fold_coefficients.resize(k);

    std::vector<std::vector<Eigen::Index>> train_idx(k), test_idx(k);
    for (Eigen::Index i = 0; i < n; ++i)
        for (int f = 0; f < k; ++f)
            (fold[static_cast<std::size_t>(i)] == f ? test_idx : train_idx)[f].push_back(i);

    parallel_for(static_cast<std::size_t>(k), [&](std::size_t f) {
        const auto& tr = train_idx[f];
        Eigen::MatrixXd Xtr(tr.size(), scores.cols());
        std::vector<int> ytr(tr.size());
        for (std::size_t i = 0; i < tr.size(); ++i) {
            Xtr.row(static_cast<Eigen::Index>(i)) = scores.row(tr[i]);
            ytr[i] = labels[static_cast<std::size_t>(tr[i])];
        }
        const LogisticFit fit = logistic_fit(Xtr, ytr, ridge);
        result.fold_coefficients[f] = fit.coefficients;
        for (Eigen::Index i : test_idx[f])
            result.pooled_scores[static_cast<std::size_t>(i)] =
                logistic_predict(fit.coefficients, scores.row(i).transpose());
    });

    result.auc = roc_auc(result.pooled_scores, labels);
    return result;
}

}  // namespace lvatlas
