// Independent oracles: finite differences, matrix exponentials, path
// integrals and Gronwall bounds. Only Field::eval-level code is shared with
// the sensitivity and adjoint solvers.
#pragma once

#include "nsode/adjoint.hpp"
#include "nsode/core.hpp"
#include "nsode/flow.hpp"
#include "nsode/selection.hpp"
#include "nsode/sensitivity.hpp"

#include <nlohmann/json.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nsode::verification {

using PointMap = std::function<Vector(const Vector&)>;
using JacobianOracle = std::function<Matrix(const Vector&)>;

/// Outcome of one check. Passes iff discrepancy <= tolerance.
struct OracleReport {
    std::string id;
    double discrepancy = 0.0;
    double tolerance = 0.0;
    bool passed = false;
    std::string source;   // reference-value, analytic, oracle or trivial
    nlohmann::json parameters = nlohmann::json::object();

    static OracleReport make(std::string id, double discrepancy, double tolerance, std::string source,
                             nlohmann::json parameters = nlohmann::json::object()) {
        OracleReport r{std::move(id), discrepancy, tolerance, false, std::move(source), std::move(parameters)};
        r.passed = discrepancy <= tolerance;   // false for NaN
        return r;
    }
};

inline nlohmann::json to_json(const OracleReport& r) {
    nlohmann::json disc = std::isfinite(r.discrepancy) ? nlohmann::json(r.discrepancy) : nlohmann::json("non-finite");
    return {{"id", r.id},           {"discrepancy", disc},   {"tolerance", r.tolerance},
            {"passed", r.passed},   {"source", r.source},    {"parameters", r.parameters}};
}

/// Central differences, one coordinate at a time, with step*max(1,|x_j|).
inline Matrix fd_jacobian(const PointMap& map, const Vector& x, double step = 1e-6) {
    require(step > 0.0, "finite-difference step must be positive");
    const Vector f0 = map(x);
    if (!f0.allFinite()) throw DivergenceError("finite-difference map", 0);
    Matrix jac(f0.size(), x.size());
    Vector xp = x;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double hj = step * std::max(1.0, std::abs(x(j)));
        xp(j) = x(j) + hj;
        const Vector fp = map(xp);
        xp(j) = x(j) - hj;
        const Vector fm = map(xp);
        xp(j) = x(j);
        if (!fp.allFinite() || !fm.allFinite()) throw DivergenceError("finite-difference map", static_cast<std::size_t>(j) + 1);
        jac.col(j) = (fp - fm) / (2.0 * hj);
    }
    return jac;
}

/// exp(A), Padé scaling and squaring from Eigen.
inline Matrix matrix_exponential(const Matrix& a) {
    require(a.rows() == a.cols(), "matrix exponential needs a square matrix");
    return a.exp();
}

/// Piecewise-cubic C1 path through control nodes (Catmull-Rom tangents,
/// one-sided at the ends), uniformly parametrized over [0, 1].
class PathSpec {
public:
    explicit PathSpec(std::vector<Vector> controls, std::uint64_t seed = 0) : controls_(std::move(controls)), seed_(seed) {
        require(controls_.size() >= 2, "a path needs at least two control nodes");
        for (const auto& c : controls_) require(c.size() == controls_[0].size(), "control nodes disagree on dimension");
    }

    /// Control nodes uniform in [-box, box]^dim. With `pin`, one interior node
    /// is replaced by that point so the path passes through it.
    static PathSpec random(std::size_t dim, std::size_t controls, std::uint64_t seed, double box = 1.0,
                           const std::optional<Vector>& pin = std::nullopt) {
        require(controls >= 2, "a path needs at least two control nodes");
        require(!pin || controls >= 3, "a pinned path needs an interior control node");
        std::uint64_t state = nsode::detail::mix64(seed ^ 0x5eedULL);
        auto next = [&] {
            state = nsode::detail::mix64(state);
            return nsode::detail::unit_interval(state);
        };
        std::vector<Vector> nodes(controls, Vector(static_cast<Eigen::Index>(dim)));
        for (auto& n : nodes)
            for (Eigen::Index j = 0; j < n.size(); ++j) n(j) = box * (2.0 * next() - 1.0);
        if (pin) {
            require(static_cast<std::size_t>(pin->size()) == dim, "pinned point has the wrong dimension");
            const auto k = 1 + static_cast<std::size_t>(next() * static_cast<double>(controls - 2));
            nodes[std::min(k, controls - 2)] = *pin;
        }
        return PathSpec(std::move(nodes), seed);
    }

    std::size_t dim() const noexcept { return static_cast<std::size_t>(controls_[0].size()); }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<Vector>& controls() const noexcept { return controls_; }
    std::size_t segments() const noexcept { return controls_.size() - 1; }
    /// Parameter value at which control node k is reached.
    double node_parameter(std::size_t k) const { return static_cast<double>(k) / static_cast<double>(segments()); }

    Vector point(double r) const {
        const auto [k, u] = locate(r);
        const double u2 = u * u, u3 = u2 * u;
        return (2 * u3 - 3 * u2 + 1) * controls_[k] + (u3 - 2 * u2 + u) * tangent(k) + (-2 * u3 + 3 * u2) * controls_[k + 1] +
               (u3 - u2) * tangent(k + 1);
    }

    Vector velocity(double r) const {
        const auto [k, u] = locate(r);
        const double u2 = u * u;
        const Vector du = (6 * u2 - 6 * u) * controls_[k] + (3 * u2 - 4 * u + 1) * tangent(k) +
                          (-6 * u2 + 6 * u) * controls_[k + 1] + (3 * u2 - 2 * u) * tangent(k + 1);
        return static_cast<double>(segments()) * du;
    }

    /// Arc length by composite Simpson on each segment.
    double length(std::size_t per_segment = 64) const {
        double total = 0.0;
        const double n = static_cast<double>(segments() * per_segment);
        for (std::size_t i = 0; i < segments() * per_segment; ++i) {
            const double a = static_cast<double>(i) / n, b = static_cast<double>(i + 1) / n;
            total += (b - a) / 6.0 * (velocity(a).norm() + 4.0 * velocity(0.5 * (a + b)).norm() + velocity(b).norm());
        }
        return total;
    }

private:
    std::pair<std::size_t, double> locate(double r) const {
        const double s = std::clamp(r, 0.0, 1.0) * static_cast<double>(segments());
        const auto k = std::min(static_cast<std::size_t>(s), segments() - 1);
        return {k, s - static_cast<double>(k)};
    }

    Vector tangent(std::size_t k) const {
        if (k == 0) return controls_[1] - controls_[0];
        if (k == segments()) return controls_[k] - controls_[k - 1];
        return 0.5 * (controls_[k + 1] - controls_[k - 1]);
    }

    std::vector<Vector> controls_;
    std::uint64_t seed_;
};

namespace detail {

using Integrand = std::function<Vector(double)>;

/// Adaptive Simpson on [a, b] with a fixed per-piece tolerance, so a jump
/// or kink inside is isolated in a piece of width ~tol/|jump|.
inline Vector adaptive_simpson(const Integrand& f, double a, double b, const Vector& fa, const Vector& fm,
                               const Vector& fb, const Vector& whole, double tol, std::size_t& evals) {
    const double m = 0.5 * (a + b);
    const Vector fl = f(0.5 * (a + m)), fr = f(0.5 * (m + b));
    evals += 2;
    const Vector left = (m - a) / 6.0 * (fa + 4.0 * fl + fm);
    const Vector right = (b - m) / 6.0 * (fm + 4.0 * fr + fb);
    const Vector both = left + right;
    if ((both - whole).norm() <= 15.0 * tol || b - a < 1e-10) return both + (both - whole) / 15.0;
    return adaptive_simpson(f, a, m, fa, fl, fm, left, tol, evals) + adaptive_simpson(f, m, b, fm, fr, fb, right, tol, evals);
}

/// Integral over one stretch [a, b] from equispaced samples. Smooth cells
/// use the trapezoid rule with a correction for -h^3 f''/12 (fourth order).
/// A jump or kink of V inside cell j perturbs only the third differences
/// centred at j-1, j, j+1; an isolated peak there flags those cells, which
/// are integrated adaptively.
inline Vector integrate_samples(const Integrand& f, double a, double b, const std::vector<Vector>& vals,
                                std::size_t& evals) {
    const std::size_t cells = vals.size() - 1;
    const double h = (b - a) / static_cast<double>(cells);
    auto at = [&](std::size_t j) { return j == cells ? b : a + static_cast<double>(j) * h; };
    double scale = 0.0;
    for (const auto& v : vals) scale = std::max(scale, v.norm());
    std::vector<Vector> diff(cells);
    std::vector<double> inc(cells);
    for (std::size_t j = 0; j < cells; ++j) {
        diff[j] = vals[j + 1] - vals[j];
        inc[j] = diff[j].norm();
    }
    const auto n = static_cast<std::ptrdiff_t>(cells);
    std::vector<double> third(cells, 0.0);
    for (std::ptrdiff_t j = 1; j + 1 < n; ++j)
        third[static_cast<std::size_t>(j)] = (diff[j + 1] - 2.0 * diff[j] + diff[j - 1]).norm();
    auto third_at = [&](std::ptrdiff_t k) { return k < 1 || k + 1 >= n ? 0.0 : third[static_cast<std::size_t>(k)]; };
    const double floor = 1e-9 * (1.0 + scale);
    std::vector<bool> jump(cells, false);
    auto flag = [&](std::ptrdiff_t k) {
        if (k >= 0 && k < n) jump[static_cast<std::size_t>(k)] = true;
    };
    for (std::ptrdiff_t k = 0; k < n; ++k) {
        const double here = third_at(k);
        const double far = std::max({third_at(k - 3), third_at(k + 3), third_at(k - 4), third_at(k + 4)});
        if (k >= 1 && k + 1 < n && here >= third_at(k - 1) && here >= third_at(k + 1) && here > 4.0 * far + floor) {
            flag(k - 1);
            flag(k);
            flag(k + 1);
        }
        double neighbour = 0.0;
        if (k > 0) neighbour = std::max(neighbour, inc[static_cast<std::size_t>(k - 1)]);
        if (k + 1 < n) neighbour = std::max(neighbour, inc[static_cast<std::size_t>(k + 1)]);
        if (inc[static_cast<std::size_t>(k)] > 4.0 * neighbour + floor) flag(k);
    }
    const double tol = 1e-12 * (1.0 + scale);

    Vector total = Vector::Zero(vals[0].size());
    for (std::size_t j = 0; j < cells; ++j) {
        if (jump[j]) {
            const double lo = at(j), hi = at(j + 1);
            const Vector mid = f(0.5 * (lo + hi));
            ++evals;
            const Vector whole = (hi - lo) / 6.0 * (vals[j] + 4.0 * mid + vals[j + 1]);
            total += adaptive_simpson(f, lo, hi, vals[j], mid, vals[j + 1], whole, tol, evals);
            continue;
        }
        total += 0.5 * h * (vals[j] + vals[j + 1]);
        // h^2 f'' at the cell midpoint from differences on a jump-free side.
        const bool left_ok = j > 0 && !jump[j - 1];
        const bool right_ok = j + 1 < cells && !jump[j + 1];
        if (left_ok && right_ok)
            total -= h / 24.0 * (diff[j + 1] - diff[j - 1]);
        else if (left_ok && j > 1 && !jump[j - 2])
            total -= h / 12.0 * (1.5 * (diff[j] - diff[j - 1]) - 0.5 * (diff[j - 1] - diff[j - 2]));
        else if (right_ok && j + 2 < cells && !jump[j + 2])
            total -= h / 12.0 * (1.5 * (diff[j + 1] - diff[j]) - 0.5 * (diff[j + 2] - diff[j + 1]));
    }
    return total;
}

} // namespace detail

/// int_0^1 V(gamma(r)) gamma'(r) dr on `nodes` points. The cells are shared
/// out over the spline segments, which are integrated separately since the
/// path is only C1 at control nodes; each segment is sampled up to, but not
/// at, its end points so a jump sitting on a control node is seen from both sides.
inline Vector path_integral(const JacobianOracle& oracle, const PathSpec& path, std::size_t nodes,
                            std::size_t* evaluations = nullptr) {
    const std::size_t segments = path.segments();
    require(nodes >= 3 * segments + 1, "path quadrature needs at least three cells per segment");
    detail::Integrand f = [&](double r) -> Vector { return oracle(path.point(r)) * path.velocity(r); };
    constexpr double inset = 1e-9;
    const std::size_t cells = nodes - 1;
    std::size_t evals = 0;
    Vector total;
    for (std::size_t s = 0; s < segments; ++s) {
        const std::size_t n = cells / segments + (s < cells % segments ? 1 : 0);
        const double a = path.node_parameter(s), b = path.node_parameter(s + 1);
        std::vector<Vector> vals(n + 1);
        for (std::size_t j = 0; j <= n; ++j) {
            double r = j == n ? b : a + static_cast<double>(j) * (b - a) / static_cast<double>(n);
            if (j == 0 && s > 0) r += inset;
            if (j == n && s + 1 < segments) r -= inset;
            vals[j] = f(r);
        }
        evals += n + 1;
        const Vector part = detail::integrate_samples(f, a, b, vals, evals);
        total = s == 0 ? part : Vector(total + part);
    }
    if (evaluations) *evaluations = evals;
    return total;
}

/// || map(gamma(1)) - map(gamma(0)) - int V gamma' || / length(gamma).
inline OracleReport conservativity_check(const PointMap& map, const JacobianOracle& oracle, const PathSpec& path,
                                         std::size_t nodes, double tolerance, std::string id,
                                         std::string source = "oracle") {
    std::size_t evals = 0;
    const Vector integral = path_integral(oracle, path, nodes, &evals);
    const Vector delta = map(path.point(1.0)) - map(path.point(0.0));
    const double len = path.length();
    const double disc = len > 0.0 ? (delta - integral).norm() / len : (delta - integral).norm();
    return OracleReport::make(std::move(id), disc, tolerance, std::move(source),
                              {{"nodes", nodes},
                               {"oracle_evaluations", evals},
                               {"path_seed", path.seed()},
                               {"path_length", len},
                               {"increment_norm", delta.norm()},
                               {"integral_norm", integral.norm()}});
}

/// Frobenius bound for a sensitivity: sqrt(p) e^{Kt} for V, and
/// sqrt((p+m) e^{2Kt} - m) for the parameter block M.
inline double sensitivity_bound(const SensitivityTrajectory& s, double lipschitz, double t) {
    const double p = static_cast<double>(s.rows);
    if (!s.parametrized) return std::sqrt(p) * std::exp(lipschitz * t);
    const double m = static_cast<double>(s.cols);
    return std::sqrt(std::max(0.0, (p + m) * std::exp(2.0 * lipschitz * t) - m));
}

/// max_i ||S(t_i)||_F / bound(t_i); passes when <= slack.
inline OracleReport gronwall_check(const SensitivityTrajectory& s, double lipschitz, std::string id, double slack = 1.05) {
    double worst = 0.0;
    for (std::size_t i = 0; i < s.grid.nodes(); ++i) {
        const double bound = sensitivity_bound(s, lipschitz, s.grid.time(i));
        const double norm = s.matrix(i).norm();
        const double ratio = bound > 0.0 ? norm / bound : (norm > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        worst = std::max(worst, std::isfinite(norm) ? ratio : std::numeric_limits<double>::infinity());
    }
    return OracleReport::make(std::move(id), worst, slack, "analytic",
                              {{"K", lipschitz}, {"steps", s.grid.steps()}, {"horizon", s.grid.horizon()},
                               {"parametrized", s.parametrized}});
}

/// ||(x_i, a) - (y_i, b)|| <= e^{K t_i} ||(x_0, a) - (y_0, b)|| for two
/// trajectories with parameters a, b; passes when the worst ratio <= slack.
inline OracleReport flow_lipschitz_check(const Trajectory& x, const Trajectory& y, double lipschitz, std::string id,
                                         double slack = 1.05) {
    require(x.grid == y.grid && x.state_dim() == y.state_dim(), "trajectories must share grid and dimension");
    require(x.parameters.size() == y.parameters.size(), "trajectories must share the parameter dimension");
    const double dparam = (x.parameters - y.parameters).squaredNorm();
    const double d0 = std::sqrt((x.states.col(0) - y.states.col(0)).squaredNorm() + dparam);
    double worst = 0.0;
    if (d0 > 0.0)
        for (std::size_t i = 0; i < x.grid.nodes(); ++i) {
            const auto c = static_cast<Eigen::Index>(i);
            const double d = std::sqrt((x.states.col(c) - y.states.col(c)).squaredNorm() + dparam);
            worst = std::max(worst, d / (d0 * std::exp(lipschitz * x.grid.time(i))));
        }
    return OracleReport::make(std::move(id), worst, slack, "analytic",
                              {{"K", lipschitz}, {"steps", x.grid.steps()}, {"initial_distance", d0}});
}

/// ||lambda(t)|| <= (||u|| + T max||w||) e^{K (T - t)}; passes when the worst ratio <= slack.
inline OracleReport costate_bound_check(const AdjointTrajectory& adj, double lipschitz, std::string id,
                                        double slack = 1.05) {
    const double horizon = adj.grid.horizon();
    const double wmax = adj.running.cols() ? adj.running.colwise().norm().maxCoeff() : 0.0;
    const double base = adj.terminal.norm() + horizon * wmax;
    double worst = 0.0;
    for (std::size_t i = 0; i < adj.grid.nodes(); ++i) {
        const double bound = base * std::exp(lipschitz * (horizon - adj.grid.time(i)));
        const double norm = adj.costate(i).norm();
        worst = std::max(worst, bound > 0.0 ? norm / bound : (norm > 0.0 ? std::numeric_limits<double>::infinity() : 0.0));
    }
    return OracleReport::make(std::move(id), worst, slack, "analytic", {{"K", lipschitz}, {"steps", adj.grid.steps()}});
}

} // namespace nsode::verification
