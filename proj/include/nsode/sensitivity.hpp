// Forward propagation of the sensitivity differential inclusion
//   dV/dt in J_F(phi(x,t)) V,             V(0) = I
//   dM/dt = J_z(t) M + J_theta(t),        M(0) = 0
// one selection at a time. The Jacobian element is frozen per evaluation
// point: grid nodes carry key 2i, rk4 midpoints key 2i+1, and the state at a
// midpoint is the linear interpolation of the two neighbouring nodes.
#pragma once

#include "nsode/core.hpp"
#include "nsode/field.hpp"
#include "nsode/flow.hpp"
#include "nsode/selection.hpp"

#include <memory>
#include <optional>
#include <ostream>
#include <vector>

namespace nsode {

/// Recorded selections, keyed like the evaluation points (2i nodes, 2i+1 midpoints).
/// Entries not needed by the scheme are left empty.
struct SelectionTape {
    Scheme scheme = Scheme::euler;
    std::vector<Matrix> jacobians;   // full block [J_z J_theta]
    std::vector<Vector> running;     // elements of D_l, empty when there is no running cost
    Vector terminal;                 // element of D_{l_T}, empty when there is no terminal cost
};

namespace detail {

inline bool key_needed(std::size_t key, Scheme scheme) { return scheme == Scheme::rk4 || key % 2 == 0; }

/// State at an evaluation key.
inline void state_at_key(const Trajectory& traj, std::size_t key, Eigen::Ref<Vector> out) {
    const auto i = static_cast<Eigen::Index>(key / 2);
    if (key % 2 == 0)
        out = traj.states.col(i);
    else
        out = 0.5 * (traj.states.col(i) + traj.states.col(i + 1));
}

/// Source of block Jacobians [J_z J_theta] at evaluation keys.
class JacobianSource {
public:
    virtual ~JacobianSource() = default;
    virtual void block(std::size_t key, Matrix& out) = 0;
};

class PolicyJacobians final : public JacobianSource {
public:
    PolicyJacobians(const Trajectory& traj, const ParametrizedField& h, const SelectionPolicy& policy)
        : traj_(traj), eval_(h.field()), policy_(policy), p_(h.state_dim()),
          joint_(static_cast<Eigen::Index>(h.field().input_dim())) {
        require(traj.state_dim() == h.state_dim(), "trajectory state dimension does not match the field");
        require(static_cast<std::size_t>(traj.parameters.size()) == h.param_dim(),
                "trajectory parameters do not match the field");
        joint_.tail(traj.parameters.size()) = traj.parameters;
    }

    void block(std::size_t key, Matrix& out) override {
        state_at_key(traj_, key, joint_.head(static_cast<Eigen::Index>(p_)));
        out.resize(static_cast<Eigen::Index>(p_), joint_.size());
        eval_.jacobian(std::span<const double>(joint_.data(), static_cast<std::size_t>(joint_.size())), policy_,
                       static_cast<std::int64_t>(key), out);
    }

private:
    const Trajectory& traj_;
    FieldEvaluator eval_;
    SelectionPolicy policy_;
    std::size_t p_;
    Vector joint_;
};

class TapeJacobians final : public JacobianSource {
public:
    explicit TapeJacobians(const SelectionTape& tape) : tape_(tape) {}
    void block(std::size_t key, Matrix& out) override {
        require(key < tape_.jacobians.size() && tape_.jacobians[key].size() > 0,
                "selection tape has no Jacobian for evaluation key " + std::to_string(key));
        out = tape_.jacobians[key];
    }

private:
    const SelectionTape& tape_;
};

/// Integrates dY/dt = J_z Y + (forcing ? J_theta : 0) along the grid; returns
/// the stacked column-major vec(Y_i) as columns.
inline Matrix integrate_affine_matrix_ode(const TimeGrid& grid, JacobianSource& source, std::size_t p, std::size_t m,
                                          const Matrix& y0, bool forcing, Scheme scheme) {
    const auto pi = static_cast<Eigen::Index>(p);
    const Eigen::Index cols = y0.cols();
    Matrix out(y0.size(), static_cast<Eigen::Index>(grid.nodes()));
    Matrix y = y0;
    out.col(0) = Eigen::Map<const Vector>(y.data(), y.size());

    Matrix j_now, j_mid, j_next;
    Matrix k1(pi, cols), k2(pi, cols), k3(pi, cols), k4(pi, cols), tmp(pi, cols);
    const double h = grid.step();
    auto rhs = [&](const Matrix& j, const Matrix& state, Matrix& result) {
        result.noalias() = j.leftCols(pi) * state;
        if (forcing) result += j.rightCols(static_cast<Eigen::Index>(m));
    };

    source.block(0, j_now);
    for (std::size_t i = 0; i < grid.steps(); ++i) {
        if (scheme == Scheme::euler) {
            rhs(j_now, y, k1);
            y += h * k1;
            if (i + 1 < grid.steps()) source.block(2 * (i + 1), j_now);
        } else {
            source.block(2 * i + 1, j_mid);
            source.block(2 * i + 2, j_next);
            rhs(j_now, y, k1);
            tmp = y + 0.5 * h * k1;
            rhs(j_mid, tmp, k2);
            tmp = y + 0.5 * h * k2;
            rhs(j_mid, tmp, k3);
            tmp = y + h * k3;
            rhs(j_next, tmp, k4);
            y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            std::swap(j_now, j_next);
        }
        if (!y.allFinite()) throw DivergenceError("sensitivity propagation", i + 1);
        out.col(static_cast<Eigen::Index>(i + 1)) = Eigen::Map<const Vector>(y.data(), y.size());
    }
    return out;
}

} // namespace detail

/// Matrices V(t_i) (p x p) or M(t_i) (p x m) along the grid.
struct SensitivityTrajectory {
    TimeGrid grid;
    std::size_t rows = 0;
    std::size_t cols = 0;
    Matrix data;   // column i = vec(matrix_i), column-major
    std::optional<SelectionPolicy> policy;   // empty when replayed from a tape
    Scheme scheme = Scheme::euler;
    bool parametrized = false;
    std::shared_ptr<const Trajectory> base;

    Eigen::Map<const Matrix> matrix(std::size_t i) const {
        return Eigen::Map<const Matrix>(data.col(static_cast<Eigen::Index>(i)).data(), static_cast<Eigen::Index>(rows),
                                        static_cast<Eigen::Index>(cols));
    }
    Matrix final_matrix() const { return matrix(grid.steps()); }
};

namespace detail {

inline SensitivityTrajectory make_sensitivity(const Trajectory& traj, const ParametrizedField& h, JacobianSource& src,
                                              Scheme scheme, bool parametrized) {
    const std::size_t p = h.state_dim();
    const std::size_t m = h.param_dim();
    const std::size_t cols = parametrized ? m : p;
    SensitivityTrajectory s{traj.grid, p, cols, Matrix(), std::nullopt, scheme, parametrized,
                            std::make_shared<const Trajectory>(traj)};
    if (cols == 0) {
        s.data = Matrix(0, static_cast<Eigen::Index>(traj.grid.nodes()));
        return s;
    }
    const auto pi = static_cast<Eigen::Index>(p);
    Matrix y0 = parametrized ? Matrix(Matrix::Zero(pi, static_cast<Eigen::Index>(m))) : Matrix(Matrix::Identity(pi, pi));
    s.data = integrate_affine_matrix_ode(traj.grid, src, p, m, y0, parametrized, scheme);
    return s;
}

} // namespace detail

/// One element V(t) of U(x, t) for dX/dt = F(X) (or of the state Jacobian for
/// a parametrized field), chosen by `policy`.
inline SensitivityTrajectory propagate_sensitivity(const Trajectory& traj, const ParametrizedField& h,
                                                   const SelectionPolicy& policy, Scheme scheme = Scheme::euler) {
    detail::PolicyJacobians src(traj, h, policy);
    auto s = detail::make_sensitivity(traj, h, src, scheme, false);
    s.policy = policy;
    return s;
}

inline SensitivityTrajectory propagate_sensitivity(const Trajectory& traj, const Field& f, const SelectionPolicy& policy,
                                                   Scheme scheme = Scheme::euler) {
    return propagate_sensitivity(traj, ParametrizedField(f), policy, scheme);
}

/// M(t) with M(T) an element of the conservative Jacobian of theta -> psi(z, theta, T).
inline SensitivityTrajectory propagate_parametrized_sensitivity(const Trajectory& traj, const ParametrizedField& h,
                                                                const SelectionPolicy& policy,
                                                                Scheme scheme = Scheme::euler) {
    detail::PolicyJacobians src(traj, h, policy);
    auto s = detail::make_sensitivity(traj, h, src, scheme, true);
    s.policy = policy;
    return s;
}

/// Replays recorded selections instead of re-deriving them.
inline SensitivityTrajectory propagate_parametrized_sensitivity(const Trajectory& traj, const ParametrizedField& h,
                                                                const SelectionTape& tape) {
    detail::TapeJacobians src(tape);
    return detail::make_sensitivity(traj, h, src, tape.scheme, true);
}

inline SensitivityTrajectory propagate_sensitivity(const Trajectory& traj, const ParametrizedField& h,
                                                   const SelectionTape& tape) {
    detail::TapeJacobians src(tape);
    return detail::make_sensitivity(traj, h, src, tape.scheme, false);
}

/// Field Jacobians chosen by `policy` at every evaluation key the scheme uses.
inline SelectionTape record_jacobians(const Trajectory& traj, const ParametrizedField& h, const SelectionPolicy& policy,
                                      Scheme scheme) {
    detail::PolicyJacobians src(traj, h, policy);
    SelectionTape tape;
    tape.scheme = scheme;
    tape.jacobians.resize(2 * traj.grid.steps() + 1);
    for (std::size_t key = 0; key < tape.jacobians.size(); ++key)
        if (detail::key_needed(key, scheme)) src.block(key, tape.jacobians[key]);
    return tape;
}

/// Joint conservative Jacobian of (x, t) -> phi(x, t) at the final time:
/// [V(T) | F(phi(x, T))].
inline Matrix joint_jacobian(const SensitivityTrajectory& s, const Field& f) {
    require(s.base != nullptr, "sensitivity has no base trajectory");
    require(!s.parametrized, "joint Jacobian is defined for initial-condition sensitivities");
    Matrix out(static_cast<Eigen::Index>(s.rows), static_cast<Eigen::Index>(s.cols + 1));
    out.leftCols(static_cast<Eigen::Index>(s.cols)) = s.final_matrix();
    out.rightCols(1) = f.eval(s.base->final_state());
    return out;
}

/// Componentwise interval hull of V(T) over several policies.
struct SensitivityEnvelope {
    Matrix lower;
    Matrix upper;
    std::size_t policies = 0;
};

inline SensitivityEnvelope sensitivity_envelope(const Vector& x0, const Field& f, const TimeGrid& grid,
                                                const std::vector<SelectionPolicy>& policies,
                                                Scheme scheme = Scheme::euler) {
    require(!policies.empty(), "sensitivity envelope needs at least one policy");
    const Trajectory traj = integrate_flow(f, x0, grid, scheme);
    SensitivityEnvelope env;
    env.policies = policies.size();
    for (std::size_t k = 0; k < policies.size(); ++k) {
        const Matrix v = propagate_sensitivity(traj, f, policies[k], scheme).final_matrix();
        if (k == 0) {
            env.lower = v;
            env.upper = v;
        } else {
            env.lower = env.lower.cwiseMin(v);
            env.upper = env.upper.cwiseMax(v);
        }
    }
    return env;
}

/// CSV with columns t, m_11, m_12, ... (row-major entries).
inline void write_csv(std::ostream& os, const SensitivityTrajectory& s) {
    os << "t";
    for (std::size_t r = 0; r < s.rows; ++r)
        for (std::size_t c = 0; c < s.cols; ++c) os << ",m_" << (r + 1) << '_' << (c + 1);
    os << '\n';
    os.precision(17);
    for (std::size_t i = 0; i < s.grid.nodes(); ++i) {
        os << s.grid.time(i);
        const auto m = s.matrix(i);
        for (std::size_t r = 0; r < s.rows; ++r)
            for (std::size_t c = 0; c < s.cols; ++c) os << ',' << m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        os << '\n';
    }
}

} // namespace nsode
