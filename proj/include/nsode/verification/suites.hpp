// Verification suites. Each returns a SuiteReport whose JSON form depends
// only on the options (no timings), so reruns are byte-identical.
#pragma once

#include "nsode/adjoint.hpp"
#include "nsode/core.hpp"
#include "nsode/field.hpp"
#include "nsode/flow.hpp"
#include "nsode/loss.hpp"
#include "nsode/optimizer.hpp"
#include "nsode/sensitivity.hpp"
#include "nsode/verification/oracles.hpp"
#include "nsode/verification/problems.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace nsode::verification {

struct SuiteReport {
    std::string name;
    std::vector<OracleReport> checks;

    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const OracleReport& r) { return r.passed; });
    }
    std::size_t failures() const {
        return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](const auto& r) { return !r.passed; }));
    }
    void append(const SuiteReport& other) { checks.insert(checks.end(), other.checks.begin(), other.checks.end()); }
};

inline nlohmann::json to_json(const SuiteReport& s) {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& c : s.checks) checks.push_back(to_json(c));
    return {{"suite", s.name}, {"passed", s.passed()}, {"failures", s.failures()}, {"checks", checks}};
}

inline void write_table(std::ostream& os, const SuiteReport& s) {
    std::size_t width = 2;
    for (const auto& c : s.checks) width = std::max(width, c.id.size());
    char buf[160];
    for (const auto& c : s.checks) {
        std::snprintf(buf, sizeof buf, "  %-4s  %-*s  %12.4e  <= %10.3e  [%s]\n", c.passed ? "ok" : "FAIL",
                      static_cast<int>(width), c.id.c_str(), c.discrepancy, c.tolerance, c.source.c_str());
        os << buf;
    }
    os << s.name << ": " << (s.checks.size() - s.failures()) << '/' << s.checks.size() << " checks passed\n";
}

namespace detail {

/// Worst Gronwall ratio over many sensitivities.
struct GronwallTracker {
    double worst = 0.0;
    std::size_t count = 0;
    void add(const SensitivityTrajectory& s, double k) {
        worst = std::max(worst, gronwall_check(s, k, "").discrepancy);
        ++count;
    }
    OracleReport report(std::string id, double k) const {
        return OracleReport::make(std::move(id), worst, 1.05, "analytic", {{"K", k}, {"sensitivities", count}});
    }
};

inline Vector vec2(double a, double b) {
    Vector v(2);
    v << a, b;
    return v;
}

inline double path_radius(const PathSpec& path) {
    double r = 0.0;
    for (int i = 0; i <= 2000; ++i) r = std::max(r, path.point(i / 2000.0).cwiseAbs().maxCoeff());
    return r;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

/// Flow-endpoint conservativity along `path` for one policy, with Gronwall
/// tracking of every sensitivity the oracle produces.
inline void flow_conservativity(SuiteReport& out, const std::string& id, const PathSpec& path, const SelectionPolicy& policy,
                                std::size_t steps, std::size_t nodes, double tolerance, std::string source) {
    const double radius = path_radius(path);
    const Field f = counterexample_field(radius);
    const TimeGrid grid(2.0, steps);
    GronwallTracker gronwall;
    auto map = [&](const Vector& x) { return integrate_flow(f, x, grid).final_state(); };
    auto oracle = [&](const Vector& x) {
        const Trajectory traj = integrate_flow(f, x, grid);
        const auto s = propagate_sensitivity(traj, f, policy);
        gronwall.add(s, f.lipschitz_bound());
        return s.final_matrix();
    };
    OracleReport r = conservativity_check(map, oracle, path, nodes, tolerance, id, std::move(source));
    r.parameters["policy"] = std::string(to_string(policy.mode()));
    r.parameters["steps"] = steps;
    out.checks.push_back(std::move(r));
    out.checks.push_back(gronwall.report("gronwall/" + id, f.lipschitz_bound()));
    const Trajectory a = integrate_flow(f, path.point(0.0), grid);
    const Trajectory b = integrate_flow(f, path.point(1.0), grid);
    out.checks.push_back(flow_lipschitz_check(a, b, f.lipschitz_bound(), "lipschitz/" + id));
}

} // namespace detail

// ---------------------------------------------------------------------------

struct CounterexampleOptions {
    std::vector<double> step_sizes{1e-4};
    double flow_tolerance = 1e-4;
    double extreme_tolerance = 0.01;   // relative, on m(2)
    double jacobian_tolerance = 1e-4;
    double conservativity_tolerance = 1e-3;
    std::size_t quadrature_nodes = 200;
};

/// F(x) = ((1 - x2)|x1|, 1) on [0, 2] with Euler steps of size h:
/// flow invariance of x1, extreme sensitivities at the origin, the
/// finite-difference Jacobian and the path-integral identity through 0.
inline SuiteReport counterexample_suite(const CounterexampleOptions& opt = {}) {
    SuiteReport out{"counterexample", {}};
    for (double h : opt.step_sizes) {
        require(h > 0.0 && h <= 1.0, "step size must lie in (0, 1]");
        const auto steps = static_cast<std::size_t>(std::llround(2.0 / h));
        const TimeGrid grid(2.0, steps);
        const std::string tag = "h=" + detail::fmt(h);
        const nlohmann::json params{{"h", h}, {"steps", steps}, {"scheme", "euler"}};
        const Field origin_field = counterexample_field(0.0);
        const Field box_field = counterexample_field(1.0);

        for (double a : {-1.0, 0.0, 0.3, 1.0}) {
            const Trajectory t = integrate_flow(box_field, detail::vec2(a, 0.0), grid);
            const Vector end = t.final_state();
            out.checks.push_back(OracleReport::make("flow/x1(2)=x1(0)/x1=" + detail::fmt(a) + "/" + tag,
                                                    std::abs(end(0) - a), opt.flow_tolerance, "reference-value", params));
            out.checks.push_back(OracleReport::make("flow/x2(2)=2/x1=" + detail::fmt(a) + "/" + tag, std::abs(end(1) - 2.0),
                                                    opt.flow_tolerance, "reference-value", params));
            if (a != 0.0) {
                // Off the breakpoint the Jacobian is unique: [[1, -2|a|], [0, 1]].
                const auto s = propagate_sensitivity(t, box_field, SelectionPolicy::midpoint());
                Matrix expected(2, 2);
                expected << 1.0, -2.0 * std::abs(a), 0.0, 1.0;
                out.checks.push_back(OracleReport::make("sensitivity/closed-form/x1=" + detail::fmt(a) + "/" + tag,
                                                        (s.final_matrix() - expected).cwiseAbs().maxCoeff(), 1e-3,
                                                        "analytic", params));
                detail::GronwallTracker g;
                g.add(s, box_field.lipschitz_bound());
                out.checks.push_back(g.report("gronwall/x1=" + detail::fmt(a) + "/" + tag, box_field.lipschitz_bound()));
            }
        }

        const Trajectory origin = integrate_flow(origin_field, Vector::Zero(2), grid);
        const std::pair<SelectionPolicy, double> extremes[] = {{SelectionPolicy::right_extreme(), std::numbers::e},
                                                               {SelectionPolicy::left_extreme(), 1.0 / std::numbers::e},
                                                               {SelectionPolicy::midpoint(), 1.0}};
        for (const auto& [policy, target] : extremes) {
            const auto s = propagate_sensitivity(origin, origin_field, policy);
            const double m2 = s.final_matrix()(0, 0);
            const std::string name = std::string(to_string(policy.mode()));
            nlohmann::json p = params;
            p["m(2)"] = m2;
            out.checks.push_back(OracleReport::make("extreme/m(2)/" + name + "/" + tag, std::abs(m2 - target) / target,
                                                    opt.extreme_tolerance,
                                                    policy.is_extreme() ? "reference-value" : "analytic", p));
            detail::GronwallTracker g;
            g.add(s, origin_field.lipschitz_bound());
            out.checks.push_back(g.report("gronwall/origin/" + name + "/" + tag, origin_field.lipschitz_bound()));
        }

        auto flow_map = [&](const Vector& x) { return integrate_flow(box_field, x, grid).final_state(); };
        for (double a : {0.0, 0.3}) {
            const Matrix fd = fd_jacobian(flow_map, detail::vec2(a, 0.0));
            nlohmann::json p = params;
            p["fd_jacobian"] = {fd(0, 0), fd(0, 1), fd(1, 0), fd(1, 1)};
            out.checks.push_back(OracleReport::make("fd-jacobian=identity/x1=" + detail::fmt(a) + "/" + tag,
                                                    (fd - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(),
                                                    opt.jacobian_tolerance, "reference-value", p));
            Matrix closed(2, 2);
            closed << 1.0, -2.0 * std::abs(a), 0.0, 1.0;
            out.checks.push_back(OracleReport::make("fd-jacobian=closed-form/x1=" + detail::fmt(a) + "/" + tag,
                                                    (fd - closed).cwiseAbs().maxCoeff(), opt.jacobian_tolerance,
                                                    "analytic", p));
        }

        // The path crosses the origin at r = 1/3, never a quadrature node.
        const PathSpec path({detail::vec2(-0.4, -0.5), detail::vec2(0.0, 0.0), detail::vec2(0.3, 0.2), detail::vec2(0.5, 0.4)});
        for (const auto& policy : {SelectionPolicy::left_extreme(), SelectionPolicy::right_extreme(), SelectionPolicy::midpoint()})
            detail::flow_conservativity(out, "conservativity/through-origin/" + std::string(to_string(policy.mode())) + "/" + tag,
                                        path, policy, steps, opt.quadrature_nodes, opt.conservativity_tolerance,
                                        "reference-value");
    }
    return out;
}

// ---------------------------------------------------------------------------

struct ConservativityOptions {
    std::size_t paths = 50;
    std::size_t pinned = 10;
    double step = 1e-3;
    std::size_t quadrature_nodes = 200;
    double tolerance = 1e-3;
    std::uint64_t seed = 1;
};

/// Path-integral identity for x -> phi(x, 2) of the counterexample along
/// random piecewise-cubic paths in [-1, 1]^2, each under three policies.
inline SuiteReport conservativity_suite(const ConservativityOptions& opt = {}) {
    require(opt.pinned <= opt.paths, "pinned path count exceeds path count");
    SuiteReport out{"conservativity", {}};
    const auto steps = static_cast<std::size_t>(std::llround(2.0 / opt.step));
    for (std::size_t i = 0; i < opt.paths; ++i) {
        const std::uint64_t seed = nsode::detail::hash_combine(opt.seed, i);
        const bool pin = i < opt.pinned;
        // Pinned paths use 3 or 5 segments so the origin sits at k/3 or k/5,
        // which no quadrature node or dyadic refinement point reaches.
        const std::size_t controls = pin ? (i % 2 == 0 ? 4 : 6) : 4 + i % 3;
        const PathSpec path = PathSpec::random(2, controls, seed, 1.0, pin ? std::optional<Vector>(Vector::Zero(2)) : std::nullopt);
        const std::string base = "path-" + std::to_string(i) + (pin ? "-pinned" : "");
        const SelectionPolicy policies[] = {SelectionPolicy::left_extreme(), SelectionPolicy::right_extreme(),
                                            SelectionPolicy::seeded_random(seed)};
        for (const auto& policy : policies)
            detail::flow_conservativity(out, "conservativity/" + base + "/" + std::string(to_string(policy.mode())), path,
                                        policy, steps, opt.quadrature_nodes, opt.tolerance, "reference-value");
    }
    return out;
}

// ---------------------------------------------------------------------------

struct AgreementOptions {
    std::size_t problems = 20;
    std::size_t euler_steps = 10000;
    std::size_t rk4_steps = 1000;
    double euler_tolerance = 1e-3;
    double rk4_tolerance = 1e-6;
    std::uint64_t seed = 100;
};

namespace detail {

inline void agreement_case(SuiteReport& out, const RandomProblem& rp, double tolerance, const std::string& id) {
    const auto& pr = rp.problem;
    const Trajectory traj = integrate_parametrized_flow(pr.field, pr.z0, rp.theta, pr.cost.grid(), pr.scheme);
    const auto sens = propagate_parametrized_sensitivity(traj, pr.field, SelectionPolicy::midpoint(), pr.scheme);
    const Vector forward = forward_gradient_element(sens, traj, pr.cost, {});
    const AdjointTrajectory adj = solve_adjoint(traj, pr.field, pr.cost, {}, pr.scheme);
    const Vector backward = gradient_from_adjoint_param(adj);
    const double rel = (forward - backward).norm() / std::max(forward.norm(), 1e-12);
    out.checks.push_back(OracleReport::make(id, rel, tolerance, "oracle",
                                            {{"seed", rp.seed},
                                             {"state_dim", pr.z0.size()},
                                             {"param_dim", rp.theta.size()},
                                             {"steps", pr.cost.grid().steps()},
                                             {"scheme", std::string(to_string(pr.scheme))},
                                             {"smooth", rp.smooth}}));
    const double k = pr.field.field().lipschitz_bound();
    out.checks.push_back(gronwall_check(sens, k, "gronwall/" + id));
    out.checks.push_back(costate_bound_check(adj, k, "costate-bound/" + id));
}

} // namespace detail

/// Forward gradient vs adjoint gradient on random problems: nonsmooth
/// instances with Euler, smooth instances with RK4.
inline SuiteReport agreement_suite(const AgreementOptions& opt = {}) {
    SuiteReport out{"agreement", {}};
    for (std::size_t i = 0; i < opt.problems; ++i) {
        const std::uint64_t seed = opt.seed + i;
        detail::agreement_case(out, random_problem(seed, false, opt.euler_steps, Scheme::euler), opt.euler_tolerance,
                               "agreement/nonsmooth-euler/seed-" + std::to_string(seed));
    }
    for (std::size_t i = 0; i < opt.problems; ++i) {
        const std::uint64_t seed = opt.seed + opt.problems + i;
        detail::agreement_case(out, random_problem(seed, true, opt.rk4_steps, Scheme::rk4), opt.rk4_tolerance,
                               "agreement/smooth-rk4/seed-" + std::to_string(seed));
    }
    return out;
}

// ---------------------------------------------------------------------------

struct FdGradientOptions {
    std::size_t points = 100;
    std::size_t steps = 30000;
    Scheme scheme = Scheme::rk4;
    double fd_step = 1e-6;
    double tolerance = 1e-4;
    std::size_t max_offsets = 3;   // kink avoidance retries, 1e-3 each
    std::uint64_t seed = 1000;
};

/// Adjoint gradient in (z0, theta) against central differences of the
/// discrete loss at random points of random nonsmooth problems. When the two
/// disagree, differences with step 2s tell whether the point sits near a
/// kink of the loss; such a point is moved by 1e-3 and compared again.
inline SuiteReport fd_gradient_suite(const FdGradientOptions& opt = {}) {
    SuiteReport out{"fd-gradient", {}};
    for (std::size_t i = 0; i < opt.points; ++i) {
        const std::uint64_t seed = opt.seed + i;
        const RandomProblem rp = random_problem(seed, false, opt.steps, opt.scheme);
        const auto& pr = rp.problem;
        const Eigen::Index p = pr.z0.size();
        const Eigen::Index m = rp.theta.size();
        auto loss = [&](const Vector& x) {
            Vector o(1);
            o(0) = evaluate_loss(integrate_parametrized_flow(pr.field, x.head(p), x.tail(m), pr.cost.grid(), pr.scheme), pr.cost);
            return o;
        };
        Vector x(p + m);
        x << pr.z0, rp.theta;
        Vector fd, g(p + m);
        std::optional<Trajectory> traj;
        std::optional<AdjointTrajectory> adj;
        double disc = 0.0;
        std::size_t offsets = 0;
        for (;;) {
            fd = fd_jacobian(loss, x, opt.fd_step).row(0).transpose();
            traj = integrate_parametrized_flow(pr.field, x.head(p), x.tail(m), pr.cost.grid(), pr.scheme);
            adj = solve_adjoint(*traj, pr.field, pr.cost, {}, pr.scheme);
            g << gradient_from_adjoint_initial(*adj), gradient_from_adjoint_param(*adj);
            disc = (g - fd).norm() / std::max(fd.norm(), 1e-12);
            if (disc <= opt.tolerance || offsets == opt.max_offsets) break;
            const Vector fd2 = fd_jacobian(loss, x, 2.0 * opt.fd_step).row(0).transpose();
            if ((fd - fd2).norm() <= 0.5 * opt.tolerance * fd.norm()) break;
            for (Eigen::Index j = 0; j < x.size(); ++j)
                x(j) += (nsode::detail::mix64(seed * 131 + offsets * 17 + static_cast<std::uint64_t>(j)) & 1U) ? 1e-3 : -1e-3;
            ++offsets;
        }
        const std::string id = "fd-gradient/seed-" + std::to_string(seed);
        out.checks.push_back(OracleReport::make(id, disc, opt.tolerance, "oracle",
                                                {{"seed", seed},
                                                 {"state_dim", p},
                                                 {"param_dim", m},
                                                 {"steps", opt.steps},
                                                 {"scheme", std::string(to_string(opt.scheme))},
                                                 {"fd_step", opt.fd_step},
                                                 {"kink_offsets", offsets}}));
        const double k = pr.field.field().lipschitz_bound();
        out.checks.push_back(costate_bound_check(*adj, k, "costate-bound/" + id));
        Vector y = x;
        y.array() += 1e-3;
        const Trajectory other = integrate_parametrized_flow(pr.field, y.head(p), y.tail(m), pr.cost.grid(), pr.scheme);
        out.checks.push_back(flow_lipschitz_check(*traj, other, k, "lipschitz/" + id));
    }
    return out;
}

// ---------------------------------------------------------------------------

struct GronwallOptions {
    std::size_t steps = 1000;
};

/// Reference cases for the Gronwall bound: zero field, the counterexample
/// along the origin, and a diagonal linear field where the bound is tight.
inline SuiteReport gronwall_suite(const GronwallOptions& opt = {}) {
    SuiteReport out{"gronwall", {}};
    {
        const Field zero = zero_field(3, 3);
        const TimeGrid grid(1.0, opt.steps);
        const auto s = propagate_sensitivity(integrate_flow(zero, Vector::Ones(3), grid), zero, SelectionPolicy::midpoint());
        double spread = 0.0;
        for (std::size_t i = 0; i < grid.nodes(); ++i) spread = std::max(spread, std::abs(s.matrix(i).norm() - std::sqrt(3.0)));
        out.checks.push_back(OracleReport::make("gronwall/zero-field/constant-norm", spread, 1e-14, "trivial"));
        out.checks.push_back(gronwall_check(s, 1e-12, "gronwall/zero-field/bound"));
    }
    {
        const Field f = counterexample_field(0.0);
        const TimeGrid grid(2.0, opt.steps);
        const Trajectory t = integrate_flow(f, Vector::Zero(2), grid);
        for (const auto& policy : {SelectionPolicy::left_extreme(), SelectionPolicy::right_extreme(), SelectionPolicy::midpoint()})
            out.checks.push_back(gronwall_check(propagate_sensitivity(t, f, policy), 1.0,
                                                "gronwall/counterexample-origin/" + std::string(to_string(policy.mode()))));
    }
    {
        const double k = 0.8;
        const Field f = linear_field(k * Matrix::Identity(2, 2));
        const TimeGrid grid(1.5, opt.steps);
        const auto s = propagate_sensitivity(integrate_flow(f, Vector::Ones(2), grid, Scheme::rk4), f,
                                             SelectionPolicy::midpoint(), Scheme::rk4);
        const OracleReport r = gronwall_check(s, k, "gronwall/linear-diagonal/bound");
        out.checks.push_back(r);
        out.checks.push_back(OracleReport::make("gronwall/linear-diagonal/tight", std::abs(1.0 - r.discrepancy), 0.05, "analytic"));
        const Matrix exact = matrix_exponential(k * 1.5 * Matrix::Identity(2, 2));
        out.checks.push_back(OracleReport::make("linear-diagonal/matrix-exponential",
                                                (s.final_matrix() - exact).cwiseAbs().maxCoeff() / exact.norm(), 1e-8,
                                                "analytic"));
    }
    return out;
}

// ---------------------------------------------------------------------------

struct OptimizerSuiteOptions {
    std::size_t iterations = 2000;
    std::size_t criticality_samples = 16;
    double radius = 0.05;
    std::uint64_t seed = 7;
};

/// dz/dt = -z + theta, l(z) = z^2, z0 = 0 on [0, 1]: minimizer theta* = 0.
inline OptimizationProblem convex_scalar_problem(std::size_t steps = 100) {
    Matrix a(1, 2);
    a << -1.0, 1.0;
    const Field h = linear_field(a);
    const Field running = atom_field(AtomKind::polynomial, 1, {0.0, 0.0, 1.0});
    return {ParametrizedField(h, 1), CostSpec(running, std::nullopt, TimeGrid(1.0, steps)), Vector::Zero(1), Scheme::euler};
}

/// dz/dt = theta, l_T(z) = |z|, z0 = 0 on [0, 1]: L(theta) = |theta|, with
/// the conservative gradient [-1, 1] at theta = 0.
inline OptimizationProblem kink_problem(std::size_t steps = 100) {
    Matrix a(1, 2);
    a << 0.0, 1.0;
    return {ParametrizedField(linear_field(a), 1), CostSpec(std::nullopt, atom_field(AtomKind::abs, 1), TimeGrid(1.0, steps)),
            Vector::Zero(1), Scheme::euler};
}

inline SuiteReport optimizer_suite(const OptimizerSuiteOptions& opt = {}) {
    SuiteReport out{"optimizer", {}};
    const OptimizationProblem convex = convex_scalar_problem();
    RunOptions ro;
    ro.criticality_samples = opt.criticality_samples;
    ro.criticality_seed = opt.seed;
    const OptimizerRun run = nsode::run(convex, Vector::Ones(1), StepSchedule::power(0.5, 0.7), opt.iterations,
                                        PolicyStrategy::fixed(), ro);
    const nlohmann::json params{{"iterations", opt.iterations}, {"alpha0", 0.5}, {"beta", 0.7}};
    out.checks.push_back(OracleReport::make("optimizer/convex/|theta-theta*|", run.final_theta.norm(), 0.05, "analytic", params));
    out.checks.push_back(OracleReport::make("optimizer/convex/not-diverged", run.diverged ? 1.0 : 0.0, 0.0, "trivial"));
    const double crit = run.criticality.empty() ? std::numeric_limits<double>::infinity() : run.criticality[0].distance;
    out.checks.push_back(OracleReport::make("optimizer/convex/criticality", crit, 0.05, "analytic",
                                            {{"samples", opt.criticality_samples}, {"seed", opt.seed}}));
    const AccumulationReport acc = essential_accumulation_report(run, opt.radius, {Vector::Zero(1)});
    out.checks.push_back(OracleReport::make("optimizer/convex/accumulation-weight-near-theta*", 1.0 - acc.candidates[0].weight,
                                            0.1, "analytic", {{"radius", opt.radius}, {"weight", acc.candidates[0].weight}}));
    const bool top_near = !acc.clusters.empty() && acc.clusters[0].center.norm() <= opt.radius;
    out.checks.push_back(OracleReport::make("optimizer/convex/top-cluster-weight", top_near ? 1.0 - acc.clusters[0].weight : 1.0,
                                            0.1, "analytic",
                                            {{"clusters", acc.clusters.size()},
                                             {"top_weight", acc.clusters.empty() ? 0.0 : acc.clusters[0].weight}}));
    out.checks.push_back(OracleReport::make("optimizer/convex/replay-exact",
                                            replay_mismatch(run.records, run.final_theta) ? 1.0 : 0.0, 0.0, "trivial"));

    // Descent to schedule noise: L(theta_{k+1}) - L(theta_k) <= C alpha_k^2.
    double c_fit = 0.0;
    for (std::size_t k = 0; k + 1 < run.records.size(); ++k)
        c_fit = std::max(c_fit, (run.records[k + 1].loss - run.records[k].loss) / (run.records[k].alpha * run.records[k].alpha));
    out.checks.push_back(OracleReport::make("optimizer/convex/descent-constant", c_fit, 1.0, "analytic"));

    const OptimizationProblem kink = kink_problem();
    out.checks.push_back(OracleReport::make("optimizer/kink/criticality",
                                            criticality_estimate(kink, Vector::Zero(1), opt.criticality_samples, opt.seed), 0.05,
                                            "analytic", {{"samples", opt.criticality_samples}}));
    const OptimizerRun osc = nsode::run(kink, Vector::Constant(1, 0.23), StepSchedule::constant(0.1), 200);
    const AccumulationReport split = essential_accumulation_report(osc, 0.02);
    double total = 0.0;
    for (const auto& c : split.clusters) total += c.weight;
    out.checks.push_back(OracleReport::make("optimizer/oscillating/two-clusters",
                                            std::abs(static_cast<double>(split.clusters.size()) - 2.0), 0.0, "analytic"));
    out.checks.push_back(OracleReport::make("optimizer/oscillating/weights-sum-to-one", std::abs(total - 1.0), 1e-12, "analytic"));
    return out;
}

// ---------------------------------------------------------------------------

struct SuiteOptions {
    CounterexampleOptions counterexample;
    ConservativityOptions conservativity;
    AgreementOptions agreement;
    FdGradientOptions fd_gradient;
    GronwallOptions gronwall;
    OptimizerSuiteOptions optimizer;
};

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"counterexample", "conservativity", "agreement", "fd-gradient",
                                                "gronwall",       "optimizer",      "all"};
    return names;
}

inline SuiteReport run_suite(const std::string& name, const SuiteOptions& opt = {}) {
    if (name == "counterexample") return counterexample_suite(opt.counterexample);
    if (name == "conservativity") return conservativity_suite(opt.conservativity);
    if (name == "agreement") return agreement_suite(opt.agreement);
    if (name == "fd-gradient") return fd_gradient_suite(opt.fd_gradient);
    if (name == "gronwall") return gronwall_suite(opt.gronwall);
    if (name == "optimizer") return optimizer_suite(opt.optimizer);
    if (name == "all") {
        SuiteReport all{"all", {}};
        for (const auto& n : suite_names())
            if (n != "all") all.append(run_suite(n, opt));
        return all;
    }
    throw UsageError("unknown suite '" + name + "'");
}

} // namespace nsode::verification
