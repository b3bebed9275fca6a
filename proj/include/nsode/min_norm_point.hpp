// Minimum-norm point of the convex hull of finitely many points (Wolfe, 1976).
#pragma once

#include "nsode/core.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace nsode {

struct MinNormPoint {
    Vector point;     // element of conv{columns} closest to the origin
    Vector weights;   // convex weights over the input columns
    double distance = 0.0;
    std::size_t iterations = 0;
};

/// Exact active-set solution of  min ||P w||  s.t.  w >= 0, sum w = 1,
/// where the columns of P are the points.
inline MinNormPoint min_norm_point(const Matrix& points, double tol = 1e-12, std::size_t max_iterations = 1000) {
    require(points.cols() > 0, "min_norm_point needs at least one point");
    const Eigen::Index n = points.cols();
    const double scale = std::max(1.0, points.colwise().squaredNorm().maxCoeff());

    Eigen::Index start = 0;
    points.colwise().squaredNorm().minCoeff(&start);
    std::vector<Eigen::Index> active{start};
    Vector lambda = Vector::Ones(1);
    Vector x = points.col(start);

    MinNormPoint result;
    auto affine_minimizer = [&](const std::vector<Eigen::Index>& s) {
        const auto k = static_cast<Eigen::Index>(s.size());
        Matrix kkt = Matrix::Zero(k + 1, k + 1);
        for (Eigen::Index a = 0; a < k; ++a)
            for (Eigen::Index b = 0; b < k; ++b) kkt(a, b) = points.col(s[a]).dot(points.col(s[b]));
        kkt.block(0, k, k, 1).setOnes();
        kkt.block(k, 0, 1, k).setOnes();
        Vector rhs = Vector::Zero(k + 1);
        rhs(k) = 1.0;
        return Vector(kkt.completeOrthogonalDecomposition().solve(rhs).head(k));
    };

    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
        result.iterations = iter + 1;
        Eigen::Index j = 0;
        (points.transpose() * x).minCoeff(&j);
        if (x.squaredNorm() - x.dot(points.col(j)) <= tol * scale) break;
        if (std::find(active.begin(), active.end(), j) != active.end()) break;
        active.push_back(j);
        lambda.conservativeResize(lambda.size() + 1);
        lambda(lambda.size() - 1) = 0.0;

        for (std::size_t minor = 0; minor < max_iterations; ++minor) {
            const Vector alpha = affine_minimizer(active);
            if ((alpha.array() > tol).all()) {
                lambda = alpha;
                break;
            }
            double theta = 1.0;
            for (Eigen::Index i = 0; i < alpha.size(); ++i)
                if (alpha(i) <= tol) theta = std::min(theta, lambda(i) / (lambda(i) - alpha(i)));
            lambda = (1.0 - theta) * lambda + theta * alpha;
            std::vector<Eigen::Index> kept;
            std::vector<double> kept_w;
            for (Eigen::Index i = 0; i < lambda.size(); ++i)
                if (lambda(i) > tol) {
                    kept.push_back(active[static_cast<std::size_t>(i)]);
                    kept_w.push_back(lambda(i));
                }
            active = kept;
            lambda = Eigen::Map<Vector>(kept_w.data(), static_cast<Eigen::Index>(kept_w.size()));
            lambda /= lambda.sum();
        }
        x.setZero(points.rows());
        for (std::size_t i = 0; i < active.size(); ++i) x += lambda(static_cast<Eigen::Index>(i)) * points.col(active[i]);
    }

    result.weights = Vector::Zero(n);
    for (std::size_t i = 0; i < active.size(); ++i) result.weights(active[i]) = lambda(static_cast<Eigen::Index>(i));
    result.point = x;
    result.distance = x.norm();
    return result;
}

} // namespace nsode
