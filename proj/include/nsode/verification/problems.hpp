// Test problems: the counterexample field and random parametrized
// problems mixing linear maps with abs/relu atoms.
#pragma once

#include "nsode/core.hpp"
#include "nsode/field.hpp"
#include "nsode/loss.hpp"
#include "nsode/optimizer.hpp"
#include "nsode/selection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace nsode::verification {

/// Bound on ||J|| over the region described for counterexample_field:
/// |d f1/d x1| <= 1 + R and |d f1/d x2| = |x1| <= R max(e^{2R}, e^{(1+R)^2/2}).
inline double counterexample_bound(double radius) {
    const double x1_max = radius * std::max(std::exp(2.0 * radius), std::exp(0.5 * (1.0 + radius) * (1.0 + radius)));
    return std::hypot(1.0 + radius, x1_max);
}

/// F(x1, x2) = ((1 - x2)|x1|, 1). Along x1 = 0 every element of the Jacobian
/// set of |x1| is admissible, so the sensitivity at the origin is not unique.
/// The declared bound is valid on the box |x1| <= R, x2 in [-R, 2 + R] reached
/// from initial points in [-R, R]^2 over t in [0, 2]; R = 0 gives K = 1, the
/// bound along the trajectory of the origin.
inline Field counterexample_field(double radius = 0.0) {
    require(radius >= 0.0, "domain radius must be nonnegative");
    FieldBuilder b(2);
    const NodeId x1 = b.component(b.input(), 0);
    Matrix row(1, 2);
    row << 0.0, -1.0;
    const NodeId one_minus_x2 = b.affine(b.input(), row, Vector::Ones(1));
    const NodeId f1 = b.mul(one_minus_x2, b.atom(AtomKind::abs, x1));
    const NodeId f2 = b.constant(Vector::Ones(1));
    return b.build(b.concat({f1, f2}), counterexample_bound(radius));
}

/// Closed-form flow of the counterexample field at (a, c), time t.
inline Vector counterexample_flow(const Vector& x, double t) {
    const double a = x(0), c = x(1);
    const double integral = (1.0 - c) * t - 0.5 * t * t;   // int_0^t (1 - x2(s)) ds
    Vector out(2);
    out << (a >= 0.0 ? a * std::exp(integral) : a * std::exp(-integral)), c + t;
    return out;
}

struct RandomProblem {
    OptimizationProblem problem;
    Vector theta;
    std::uint64_t seed = 0;
    bool smooth = false;
};

namespace detail {

class Draw {
public:
    explicit Draw(std::uint64_t seed) : state_(nsode::detail::mix64(seed ^ 0xabcdefULL)) {}
    double uniform(double lo, double hi) {
        state_ = nsode::detail::mix64(state_);
        return lo + (hi - lo) * nsode::detail::unit_interval(state_);
    }
    std::size_t integer(std::size_t lo, std::size_t hi) {
        return std::min(hi, lo + static_cast<std::size_t>(uniform(0.0, 1.0) * static_cast<double>(hi - lo + 1)));
    }
    Matrix matrix(Eigen::Index r, Eigen::Index c, double scale) {
        Matrix m(r, c);
        for (Eigen::Index j = 0; j < c; ++j)
            for (Eigen::Index i = 0; i < r; ++i) m(i, j) = uniform(-scale, scale);
        return m;
    }
    Vector vector(Eigen::Index n, double scale) { return matrix(n, 1, scale); }

private:
    std::uint64_t state_;
};

/// 0.5 ||z - c||^2 built from an affine node, a square and a row sum.
inline NodeId half_squared_distance(FieldBuilder& b, NodeId z, const Vector& c) {
    const auto p = c.size();
    const NodeId shifted = b.affine(z, Matrix::Identity(p, p), -c);
    const NodeId sq = b.atom(AtomKind::polynomial, shifted, {0.0, 0.0, 0.5});
    return b.affine(sq, Matrix::Ones(1, p));
}

} // namespace detail

/// dZ/dt = A z + B theta + C act(D z + E theta + b) with p, m in [1, 4];
/// act alternates abs and relu per hidden unit (tanh when smooth).
/// Running cost 0.5||z - c||^2 (+ |g.z|), terminal 0.5||z - d||^2 (+ relu(e.z)).
inline RandomProblem random_problem(std::uint64_t seed, bool smooth, std::size_t steps, Scheme scheme,
                                    double horizon = 1.0) {
    detail::Draw draw(seed);
    const auto p = static_cast<Eigen::Index>(draw.integer(1, 4));
    const auto m = static_cast<Eigen::Index>(draw.integer(1, 4));
    const Eigen::Index q = p + 1;

    FieldBuilder hb(static_cast<std::size_t>(p + m));
    const NodeId lin = hb.affine(hb.input(), draw.matrix(p, p + m, 0.6));
    const NodeId pre = hb.affine(hb.input(), draw.matrix(q, p + m, 0.8), draw.vector(q, 0.3));
    NodeId hidden;
    if (smooth) {
        hidden = hb.atom(AtomKind::tanh, pre);
    } else {
        std::vector<NodeId> units;
        for (Eigen::Index j = 0; j < q; ++j)
            units.push_back(hb.atom(j % 2 == 0 ? AtomKind::abs : AtomKind::relu, hb.component(pre, static_cast<std::size_t>(j))));
        hidden = hb.concat(units);
    }
    const NodeId out = hb.sum({lin, hb.affine(hidden, draw.matrix(p, q, 0.6))});
    ParametrizedField h(hb.build(out), static_cast<std::size_t>(p));

    FieldBuilder rb(static_cast<std::size_t>(p));
    NodeId running = detail::half_squared_distance(rb, rb.input(), draw.vector(p, 1.0));
    FieldBuilder tb(static_cast<std::size_t>(p));
    NodeId terminal = detail::half_squared_distance(tb, tb.input(), draw.vector(p, 1.0));
    if (!smooth) {
        const NodeId g = rb.affine(rb.input(), draw.matrix(1, p, 1.0));
        running = rb.sum({running, rb.atom(AtomKind::abs, g)});
        const NodeId e = tb.affine(tb.input(), draw.matrix(1, p, 1.0));
        terminal = tb.sum({terminal, tb.atom(AtomKind::relu, e)});
    }
    CostSpec cost(rb.build(running), tb.build(terminal), TimeGrid(horizon, steps));

    RandomProblem out_problem{OptimizationProblem{h, cost, draw.vector(p, 1.0), scheme}, draw.vector(m, 1.0), seed, smooth};
    return out_problem;
}

} // namespace nsode::verification
