#pragma once

#include "nsode/nsode.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

namespace nsode::testing {

inline Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

inline Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
    const auto r = static_cast<Eigen::Index>(rows.size());
    const auto c = static_cast<Eigen::Index>(rows.begin()->size());
    Matrix m(r, c);
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        Eigen::Index j = 0;
        for (double x : row) m(i, j++) = x;
        ++i;
    }
    return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    EXPECT_EQ(a.rows(), b.rows());
    EXPECT_EQ(a.cols(), b.cols());
    return (a - b).cwiseAbs().maxCoeff();
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double box = 1.0) {
    std::uniform_real_distribution<double> u(-box, box);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
    return v;
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double box = 1.0) {
    std::uniform_real_distribution<double> u(-box, box);
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
    return m;
}

// F(x) = A2 act(A1 x + b1) + c with act mixing abs, relu and tanh.
inline Field random_network(std::mt19937_64& rng, std::size_t n, std::size_t hidden, std::size_t out, bool smooth) {
    FieldBuilder b(n);
    const auto h = static_cast<Eigen::Index>(hidden);
    const NodeId pre = b.affine(b.input(), random_matrix(rng, h, static_cast<Eigen::Index>(n)), random_vector(rng, h, 0.5));
    std::vector<NodeId> units;
    for (std::size_t j = 0; j < hidden; ++j) {
        const AtomKind kind = smooth ? (j % 2 == 0 ? AtomKind::tanh : AtomKind::sin)
                                     : (j % 3 == 0 ? AtomKind::abs : j % 3 == 1 ? AtomKind::relu : AtomKind::tanh);
        units.push_back(b.atom(kind, b.component(pre, j)));
    }
    const NodeId hid = b.concat(units);
    return b.build(b.affine(hid, random_matrix(rng, static_cast<Eigen::Index>(out), h), random_vector(rng, static_cast<Eigen::Index>(out))));
}

inline Matrix central_difference(const Field& f, const Vector& x, double step = 1e-6) {
    Matrix j(static_cast<Eigen::Index>(f.output_dim()), x.size());
    for (Eigen::Index c = 0; c < x.size(); ++c) {
        Vector xp = x, xm = x;
        xp(c) += step;
        xm(c) -= step;
        j.col(c) = (f.eval(xp) - f.eval(xm)) / (2.0 * step);
    }
    return j;
}

} // namespace nsode::testing
