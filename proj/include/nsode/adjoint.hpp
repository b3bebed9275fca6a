// Nonsmooth adjoint: integrate
//   d lambda/dt = -w(t) - J_z(t)^T lambda(t),   lambda(T) = u
// backward along a stored forward trajectory. lambda(0) is a conservative
// gradient element with respect to the initial state, and
// int_0^T J_theta(t)^T lambda(t) dt one with respect to the parameters.
#pragma once

#include "nsode/core.hpp"
#include "nsode/field.hpp"
#include "nsode/flow.hpp"
#include "nsode/loss.hpp"
#include "nsode/sensitivity.hpp"

#include <ostream>
#include <vector>

namespace nsode {

struct AdjointTrajectory {
    TimeGrid grid;
    Scheme scheme = Scheme::euler;
    std::size_t state_dim = 0;
    std::size_t param_dim = 0;
    Matrix costates;                 // column i = lambda(t_i)
    Vector terminal;                 // u
    Matrix running;                  // column i = w(t_i)
    std::vector<Matrix> jacobians;   // [J_z(t_i) J_theta(t_i)] at nodes

    Vector costate(std::size_t i) const { return costates.col(static_cast<Eigen::Index>(i)); }
};

namespace detail {

inline AdjointTrajectory solve_adjoint(const Trajectory& traj, const ParametrizedField& h, const CostSpec& cost,
                                       JacobianSource& jacs, CostGradients& grads, Scheme scheme) {
    check_cost(traj, cost);
    const TimeGrid& grid = traj.grid;
    require(static_cast<std::size_t>(traj.states.cols()) == grid.nodes(), "adjoint needs a dense forward trajectory");
    require(traj.state_dim() == h.state_dim(), "trajectory does not match the field");

    const std::size_t n = grid.steps();
    const auto p = static_cast<Eigen::Index>(h.state_dim());
    AdjointTrajectory adj{grid, scheme, h.state_dim(), h.param_dim(), Matrix(p, static_cast<Eigen::Index>(n + 1)),
                          Vector(), Matrix(p, static_cast<Eigen::Index>(n + 1)), std::vector<Matrix>(n + 1)};

    for (std::size_t i = 0; i <= n; ++i) {
        jacs.block(2 * i, adj.jacobians[i]);
        Vector w;
        grads.running(2 * i, w);
        adj.running.col(static_cast<Eigen::Index>(i)) = w;
    }
    grads.terminal(adj.terminal);

    const double dt = grid.step();
    Vector lambda = adj.terminal;
    adj.costates.col(static_cast<Eigen::Index>(n)) = lambda;
    Vector k1(p), k2(p), k3(p), k4(p), w_mid;
    Matrix j_mid;
    for (std::size_t i = n; i > 0; --i) {
        const Matrix& j_i = adj.jacobians[i];
        const auto w_i = adj.running.col(static_cast<Eigen::Index>(i));
        k1.noalias() = w_i + j_i.leftCols(p).transpose() * lambda;
        if (scheme == Scheme::euler) {
            lambda += dt * k1;
        } else {
            const Matrix& j_prev = adj.jacobians[i - 1];
            const auto w_prev = adj.running.col(static_cast<Eigen::Index>(i - 1));
            jacs.block(2 * i - 1, j_mid);
            grads.running(2 * i - 1, w_mid);
            k2.noalias() = w_mid + j_mid.leftCols(p).transpose() * (lambda + 0.5 * dt * k1);
            k3.noalias() = w_mid + j_mid.leftCols(p).transpose() * (lambda + 0.5 * dt * k2);
            k4.noalias() = w_prev + j_prev.leftCols(p).transpose() * (lambda + dt * k3);
            lambda += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if (!lambda.allFinite()) throw DivergenceError("adjoint integration", n - i + 1);
        adj.costates.col(static_cast<Eigen::Index>(i - 1)) = lambda;
    }
    return adj;
}

} // namespace detail

/// Backward solve with selections re-derived from the stored forward states.
inline AdjointTrajectory solve_adjoint(const Trajectory& traj, const ParametrizedField& h, const CostSpec& cost,
                                       const GradientPolicies& policies = {}, Scheme scheme = Scheme::euler) {
    detail::PolicyJacobians jacs(traj, h, policies.field);
    detail::PolicyCostGradients grads(traj, cost, policies);
    return detail::solve_adjoint(traj, h, cost, jacs, grads, scheme);
}

inline AdjointTrajectory solve_adjoint(const Trajectory& traj, const Field& f, const CostSpec& cost,
                                       const GradientPolicies& policies = {}, Scheme scheme = Scheme::euler) {
    return solve_adjoint(traj, ParametrizedField(f), cost, policies, scheme);
}

/// Backward solve replaying the selections recorded on a tape.
inline AdjointTrajectory solve_adjoint(const Trajectory& traj, const ParametrizedField& h, const CostSpec& cost,
                                       const SelectionTape& tape) {
    detail::TapeJacobians jacs(tape);
    detail::TapeCostGradients grads(tape, traj.state_dim());
    return detail::solve_adjoint(traj, h, cost, jacs, grads, tape.scheme);
}

/// lambda(0), an element of D_Delta(x) + D_T(x).
inline Vector gradient_from_adjoint_initial(const AdjointTrajectory& adj) { return adj.costate(0); }

/// Trapezoidal quadrature of J_theta(t)^T lambda(t), an element of D_L(theta).
inline Vector gradient_from_adjoint_param(const AdjointTrajectory& adj) {
    const auto m = static_cast<Eigen::Index>(adj.param_dim);
    Vector g = Vector::Zero(m);
    if (m == 0) return g;
    for (std::size_t i = 0; i < adj.grid.nodes(); ++i)
        g.noalias() += adj.grid.trapezoid_weight(i) *
                       (adj.jacobians[i].rightCols(m).transpose() * adj.costates.col(static_cast<Eigen::Index>(i)));
    return g;
}

/// CSV with columns t, lambda_1..lambda_p.
inline void write_csv(std::ostream& os, const AdjointTrajectory& adj) {
    os << "t";
    for (std::size_t j = 0; j < adj.state_dim; ++j) os << ",lambda_" << (j + 1);
    os << '\n';
    os.precision(17);
    for (std::size_t i = 0; i < adj.grid.nodes(); ++i) {
        os << adj.grid.time(i);
        for (std::size_t j = 0; j < adj.state_dim; ++j)
            os << ',' << adj.costates(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
        os << '\n';
    }
}

} // namespace nsode
