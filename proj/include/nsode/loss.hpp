// Integral-plus-terminal costs  L = int_0^T l(Z(t)) dt + l_T(Z(T))  and
// forward-mode conservative gradient elements.
#pragma once

#include "nsode/core.hpp"
#include "nsode/field.hpp"
#include "nsode/flow.hpp"
#include "nsode/sensitivity.hpp"

#include <optional>
#include <ostream>
#include <vector>

namespace nsode {

class CostSpec {
public:
    CostSpec(std::optional<ScalarCost> running, std::optional<ScalarCost> terminal, TimeGrid grid)
        : running_(std::move(running)), terminal_(std::move(terminal)), grid_(grid) {
        require(running_ || terminal_, "cost needs a running or a terminal part");
        if (running_) require(running_->output_dim() == 1, "running cost must be scalar");
        if (terminal_) require(terminal_->output_dim() == 1, "terminal cost must be scalar");
        if (running_ && terminal_)
            require(running_->input_dim() == terminal_->input_dim(), "running and terminal costs disagree on dimension");
    }

    const std::optional<ScalarCost>& running() const noexcept { return running_; }
    const std::optional<ScalarCost>& terminal() const noexcept { return terminal_; }
    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t state_dim() const noexcept { return running_ ? running_->input_dim() : terminal_->input_dim(); }

private:
    std::optional<ScalarCost> running_;
    std::optional<ScalarCost> terminal_;
    TimeGrid grid_;
};

/// Selection policies for the field, the running cost and the terminal cost.
struct GradientPolicies {
    SelectionPolicy field = SelectionPolicy::midpoint();
    SelectionPolicy running = SelectionPolicy::midpoint();
    SelectionPolicy terminal = SelectionPolicy::midpoint();

    static GradientPolicies uniform(const SelectionPolicy& p) { return {p, p, p}; }
};

namespace detail {

inline void check_cost(const Trajectory& traj, const CostSpec& cost) {
    if (!(traj.grid == cost.grid())) throw UsageError("trajectory grid does not match the cost grid");
    require(traj.state_dim() == cost.state_dim(), "cost input dimension does not match the state dimension");
}

/// Elements of D_l at evaluation keys and of D_{l_T} at the final state.
class CostGradients {
public:
    virtual ~CostGradients() = default;
    virtual void running(std::size_t key, Vector& out) = 0;
    virtual void terminal(Vector& out) = 0;
};

class PolicyCostGradients final : public CostGradients {
public:
    PolicyCostGradients(const Trajectory& traj, const CostSpec& cost, const GradientPolicies& policies)
        : traj_(traj), cost_(cost), policies_(policies), state_(static_cast<Eigen::Index>(traj.state_dim())) {
        if (cost.running()) running_eval_.emplace(*cost.running());
        if (cost.terminal()) terminal_eval_.emplace(*cost.terminal());
    }

    void running(std::size_t key, Vector& out) override {
        const auto p = static_cast<Eigen::Index>(traj_.state_dim());
        if (!running_eval_) {
            out = Vector::Zero(p);
            return;
        }
        state_at_key(traj_, key, state_);
        Matrix row(1, p);
        running_eval_->jacobian(std::span<const double>(state_.data(), static_cast<std::size_t>(p)), policies_.running,
                                static_cast<std::int64_t>(key), row);
        out = row.transpose();
    }

    void terminal(Vector& out) override {
        const auto p = static_cast<Eigen::Index>(traj_.state_dim());
        if (!terminal_eval_) {
            out = Vector::Zero(p);
            return;
        }
        state_ = traj_.final_state();
        Matrix row(1, p);
        terminal_eval_->jacobian(std::span<const double>(state_.data(), static_cast<std::size_t>(p)), policies_.terminal,
                                 static_cast<std::int64_t>(2 * traj_.grid.steps()), row);
        out = row.transpose();
    }

private:
    const Trajectory& traj_;
    const CostSpec& cost_;
    GradientPolicies policies_;
    std::optional<FieldEvaluator> running_eval_;
    std::optional<FieldEvaluator> terminal_eval_;
    Vector state_;
};

class TapeCostGradients final : public CostGradients {
public:
    TapeCostGradients(const SelectionTape& tape, std::size_t p) : tape_(tape), p_(static_cast<Eigen::Index>(p)) {}

    void running(std::size_t key, Vector& out) override {
        if (tape_.running.empty()) {
            out = Vector::Zero(p_);
            return;
        }
        require(key < tape_.running.size() && tape_.running[key].size() == p_,
                "selection tape has no running-cost gradient for key " + std::to_string(key));
        out = tape_.running[key];
    }

    void terminal(Vector& out) override { out = tape_.terminal.size() ? tape_.terminal : Vector::Zero(p_); }

private:
    const SelectionTape& tape_;
    Eigen::Index p_;
};

} // namespace detail

/// l(state_i) at every node (zero without a running cost).
inline std::vector<double> running_integrand(const Trajectory& traj, const CostSpec& cost) {
    detail::check_cost(traj, cost);
    std::vector<double> values(traj.grid.nodes(), 0.0);
    if (!cost.running()) return values;
    FieldEvaluator ev(*cost.running());
    double out = 0.0;
    for (std::size_t i = 0; i < traj.grid.nodes(); ++i) {
        const auto col = traj.states.col(static_cast<Eigen::Index>(i));
        ev.value(std::span<const double>(col.data(), traj.state_dim()), std::span<double>(&out, 1));
        values[i] = out;
    }
    return values;
}

/// Trapezoidal quadrature of l along the states plus l_T at the final state.
inline double evaluate_loss(const Trajectory& traj, const CostSpec& cost) {
    const std::vector<double> integrand = running_integrand(traj, cost);
    double total = 0.0;
    for (std::size_t i = 0; i < integrand.size(); ++i) total += traj.grid.trapezoid_weight(i) * integrand[i];
    if (cost.terminal()) total += cost.terminal()->eval(traj.final_state())(0);
    return total;
}

/// CSV with columns t, l(x(t)).
inline void write_integrand_csv(std::ostream& os, const Trajectory& traj, const CostSpec& cost) {
    const std::vector<double> integrand = running_integrand(traj, cost);
    os << "t,integrand\n";
    os.precision(17);
    for (std::size_t i = 0; i < integrand.size(); ++i) os << traj.grid.time(i) << ',' << integrand[i] << '\n';
}

/// Field and cost selections at every evaluation key the scheme uses.
inline SelectionTape record_selections(const Trajectory& traj, const ParametrizedField& h, const CostSpec& cost,
                                       const GradientPolicies& policies, Scheme scheme) {
    detail::check_cost(traj, cost);
    SelectionTape tape = record_jacobians(traj, h, policies.field, scheme);
    detail::PolicyCostGradients grads(traj, cost, policies);
    if (cost.running()) {
        tape.running.resize(tape.jacobians.size());
        for (std::size_t key = 0; key < tape.running.size(); ++key)
            if (detail::key_needed(key, scheme)) grads.running(key, tape.running[key]);
    }
    if (cost.terminal()) grads.terminal(tape.terminal);
    return tape;
}

namespace detail {

/// sum_i c_i S_i^T w_i + S_N^T u for a stored sensitivity S.
inline Vector assemble_forward_gradient(const SensitivityTrajectory& s, CostGradients& grads) {
    const TimeGrid& grid = s.grid;
    Vector g = Vector::Zero(static_cast<Eigen::Index>(s.cols));
    if (s.cols == 0) return g;
    Vector w;
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
        grads.running(2 * i, w);
        g.noalias() += grid.trapezoid_weight(i) * (s.matrix(i).transpose() * w);
    }
    Vector u;
    grads.terminal(u);
    g.noalias() += s.final_matrix().transpose() * u;
    return g;
}

} // namespace detail

/// Element of D_Delta(x) + D_T(x) for x -> int l(phi(x,t)) dt + l_T(phi(x,T)),
/// computed from a given initial-condition sensitivity.
inline Vector forward_gradient_element(const SensitivityTrajectory& s, const Trajectory& traj, const CostSpec& cost,
                                       const GradientPolicies& policies) {
    detail::check_cost(traj, cost);
    require(s.grid == traj.grid, "sensitivity grid does not match the trajectory grid");
    detail::PolicyCostGradients grads(traj, cost, policies);
    return detail::assemble_forward_gradient(s, grads);
}

inline Vector forward_gradient_initial(const Field& f, const Vector& x0, const CostSpec& cost,
                                       const GradientPolicies& policies = {}, Scheme scheme = Scheme::euler) {
    const Trajectory traj = integrate_flow(f, x0, cost.grid(), scheme);
    const auto s = propagate_sensitivity(traj, f, policies.field, scheme);
    return forward_gradient_element(s, traj, cost, policies);
}

/// Element of D_I(z, theta) + D_T(z, theta) via M(t).
inline Vector forward_gradient_param(const ParametrizedField& h, const Vector& z0, const Vector& theta,
                                     const CostSpec& cost, const GradientPolicies& policies = {},
                                     Scheme scheme = Scheme::euler) {
    const Trajectory traj = integrate_parametrized_flow(h, z0, theta, cost.grid(), scheme);
    const auto s = propagate_parametrized_sensitivity(traj, h, policies.field, scheme);
    return forward_gradient_element(s, traj, cost, policies);
}

/// Forward gradient with selections replayed from a tape.
inline Vector forward_gradient_param(const Trajectory& traj, const ParametrizedField& h, const CostSpec& cost,
                                     const SelectionTape& tape) {
    detail::check_cost(traj, cost);
    const auto s = propagate_parametrized_sensitivity(traj, h, tape);
    detail::TapeCostGradients grads(tape, traj.state_dim());
    return detail::assemble_forward_gradient(s, grads);
}

inline Vector forward_gradient_initial(const Trajectory& traj, const ParametrizedField& h, const CostSpec& cost,
                                       const SelectionTape& tape) {
    detail::check_cost(traj, cost);
    const auto s = propagate_sensitivity(traj, h, tape);
    detail::TapeCostGradients grads(tape, traj.state_dim());
    return detail::assemble_forward_gradient(s, grads);
}

} // namespace nsode
