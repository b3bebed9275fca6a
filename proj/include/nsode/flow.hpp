// Fixed-step explicit integration of dX/dt = F(X) and dZ/dt = H(Z, theta).
#pragma once

#include "nsode/core.hpp"
#include "nsode/field.hpp"

#include <ostream>
#include <span>

namespace nsode {

/// States on a time grid; column i holds the state at t_i.
struct Trajectory {
    TimeGrid grid;
    Matrix states;
    Vector parameters;          // empty for unparametrized flows
    bool step_size_warning = false;   // h*K >= 1

    std::size_t state_dim() const noexcept { return static_cast<std::size_t>(states.rows()); }
    Vector state(std::size_t i) const { return states.col(static_cast<Eigen::Index>(i)); }
    Vector final_state() const { return states.col(states.cols() - 1); }

    /// Linear interpolation between nodes i and i+1 at fraction `frac`.
    Vector interpolate(std::size_t i, double frac) const {
        return (1.0 - frac) * states.col(static_cast<Eigen::Index>(i)) + frac * states.col(static_cast<Eigen::Index>(i + 1));
    }
};

namespace detail {

/// x -> H(x, theta) with a reused workspace.
class StateVelocity {
public:
    StateVelocity(const ParametrizedField& h, const Vector& theta)
        : eval_(h.field()), p_(h.state_dim()), joint_(static_cast<Eigen::Index>(h.field().input_dim())) {
        joint_.tail(theta.size()) = theta;
    }

    void operator()(const Eigen::Ref<const Vector>& z, Eigen::Ref<Vector> out) {
        joint_.head(static_cast<Eigen::Index>(p_)) = z;
        eval_.value(std::span<const double>(joint_.data(), static_cast<std::size_t>(joint_.size())),
                    std::span<double>(out.data(), p_));
    }

private:
    FieldEvaluator eval_;
    std::size_t p_;
    Vector joint_;
};

} // namespace detail

/// psi(z0, theta, t_i) for all grid nodes; theta is held constant.
inline Trajectory integrate_parametrized_flow(const ParametrizedField& h, const Vector& z0, const Vector& theta,
                                              const TimeGrid& grid, Scheme scheme = Scheme::euler) {
    const std::size_t p = h.state_dim();
    require(static_cast<std::size_t>(z0.size()) == p,
            "initial state has dimension " + std::to_string(z0.size()) + ", field state dimension is " + std::to_string(p));
    require(static_cast<std::size_t>(theta.size()) == h.param_dim(),
            "parameter vector has dimension " + std::to_string(theta.size()) + ", field expects " +
                std::to_string(h.param_dim()));
    require(z0.allFinite() && theta.allFinite(), "initial condition must be finite");

    Trajectory traj{grid, Matrix(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(grid.nodes())), theta, false};
    traj.step_size_warning = grid.step() * h.field().lipschitz_bound() >= 1.0;
    traj.states.col(0) = z0;

    detail::StateVelocity velocity(h, theta);
    const double dt = grid.step();
    const auto pi = static_cast<Eigen::Index>(p);
    Vector k1(pi), k2(pi), k3(pi), k4(pi), tmp(pi);
    for (std::size_t i = 0; i < grid.steps(); ++i) {
        auto x = traj.states.col(static_cast<Eigen::Index>(i));
        auto next = traj.states.col(static_cast<Eigen::Index>(i + 1));
        velocity(x, k1);
        if (scheme == Scheme::euler) {
            next = x + dt * k1;
        } else {
            tmp = x + 0.5 * dt * k1;
            velocity(tmp, k2);
            tmp = x + 0.5 * dt * k2;
            velocity(tmp, k3);
            tmp = x + dt * k3;
            velocity(tmp, k4);
            next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if (!next.allFinite()) throw DivergenceError("flow integration", i + 1);
    }
    return traj;
}

/// phi(x0, t_i) for all grid nodes.
inline Trajectory integrate_flow(const Field& f, const Vector& x0, const TimeGrid& grid, Scheme scheme = Scheme::euler) {
    require(f.input_dim() == f.output_dim(), "flow needs a square vector field");
    return integrate_parametrized_flow(ParametrizedField(f), x0, Vector(), grid, scheme);
}

/// CSV with columns t, x_1..x_p.
inline void write_csv(std::ostream& os, const Trajectory& traj) {
    os << "t";
    for (std::size_t j = 0; j < traj.state_dim(); ++j) os << ",x_" << (j + 1);
    os << '\n';
    os.precision(17);
    for (std::size_t i = 0; i < traj.grid.nodes(); ++i) {
        os << traj.grid.time(i);
        for (std::size_t j = 0; j < traj.state_dim(); ++j)
            os << ',' << traj.states(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
        os << '\n';
    }
}

} // namespace nsode
