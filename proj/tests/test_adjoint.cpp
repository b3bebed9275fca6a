#include "test_util.hpp"

#include <sstream>

using namespace nsode;
using nsode::testing::max_abs_diff;
using nsode::testing::vec;

namespace {

Field linear_cost(const Vector& c) { return linear_field(c.transpose()); }

ParametrizedField growth_field() {
    FieldBuilder b(2);
    return ParametrizedField(b.build(b.mul(b.component(b.input(), 0), b.component(b.input(), 1))), 1);
}

} // namespace

TEST(Adjoint, LinearFieldTerminalCost) {
    const Matrix a = nsode::testing::mat({{-0.5, 1.0}, {-1.0, 0.2}});
    const Vector c = vec({1.0, -2.0});
    const CostSpec cost(std::nullopt, linear_cost(c), TimeGrid(2.0, 1000));
    const Trajectory t = integrate_flow(linear_field(a), vec({0.3, 0.1}), cost.grid(), Scheme::rk4);
    const auto adj = solve_adjoint(t, linear_field(a), cost, {}, Scheme::rk4);
    const Vector expected = verification::matrix_exponential(2.0 * a.transpose()) * c;
    EXPECT_LE((gradient_from_adjoint_initial(adj) - expected).norm(), 1e-9);
    EXPECT_EQ(max_abs_diff(adj.costate(1000), c), 0.0);
}

TEST(Adjoint, ZeroFieldTerminalCostIsConstant) {
    const Vector u = vec({0.5, -1.5, 2.0});
    const CostSpec cost(std::nullopt, linear_cost(u), TimeGrid(1.0, 20));
    const Field f = zero_field(3, 3);
    for (Scheme s : {Scheme::euler, Scheme::rk4}) {
        const auto adj = solve_adjoint(integrate_flow(f, Vector::Ones(3), cost.grid(), s), f, cost, {}, s);
        for (std::size_t i = 0; i < cost.grid().nodes(); ++i) EXPECT_EQ(max_abs_diff(adj.costate(i), u), 0.0);
    }
}

TEST(Adjoint, ZeroFieldRunningCostAccumulates) {
    const Vector c = vec({1.0, 3.0});
    const double horizon = 2.0;
    const CostSpec cost(linear_cost(c), std::nullopt, TimeGrid(horizon, 40));
    const Field f = zero_field(2, 2);
    for (Scheme s : {Scheme::euler, Scheme::rk4}) {
        const auto adj = solve_adjoint(integrate_flow(f, Vector::Zero(2), cost.grid(), s), f, cost, {}, s);
        EXPECT_LE(max_abs_diff(gradient_from_adjoint_initial(adj), horizon * c), 1e-13);
        EXPECT_LE(max_abs_diff(adj.costate(20), 0.5 * horizon * c), 1e-13);
    }
}

TEST(Adjoint, ParametrizedGrowthAnalytic) {
    // z' = theta z, z(0) = 1, L = z(T)^2 = e^{2 theta T}
    const double theta = 0.3, horizon = 1.0;
    const CostSpec cost(std::nullopt, atom_field(AtomKind::polynomial, 1, {0.0, 0.0, 1.0}), TimeGrid(horizon, 1000));
    const ParametrizedField h = growth_field();
    const Trajectory t = integrate_parametrized_flow(h, vec({1.0}), vec({theta}), cost.grid(), Scheme::rk4);
    const auto adj = solve_adjoint(t, h, cost, {}, Scheme::rk4);
    const double exact = 2.0 * horizon * std::exp(2.0 * theta * horizon);
    EXPECT_NEAR(gradient_from_adjoint_param(adj)(0), exact, 1e-6 * exact);
    EXPECT_NEAR(gradient_from_adjoint_initial(adj)(0), 2.0 * std::exp(2.0 * theta * horizon), 1e-9);
    auto loss = [&](double th) { return evaluate_loss(integrate_parametrized_flow(h, vec({1.0}), vec({th}), cost.grid(), Scheme::rk4), cost); };
    const double fd = (loss(theta + 1e-6) - loss(theta - 1e-6)) / 2e-6;
    EXPECT_NEAR(gradient_from_adjoint_param(adj)(0), fd, 1e-6 * exact);
}

TEST(Adjoint, AgreesWithForwardOnSmoothProblems) {
    for (std::uint64_t seed = 20; seed < 26; ++seed) {
        const auto rp = verification::random_problem(seed, true, 1000, Scheme::rk4);
        const auto& pr = rp.problem;
        const Trajectory t = integrate_parametrized_flow(pr.field, pr.z0, rp.theta, pr.cost.grid(), Scheme::rk4);
        const auto adj = solve_adjoint(t, pr.field, pr.cost, {}, Scheme::rk4);
        const Vector fwd = forward_gradient_param(t, pr.field, pr.cost, record_selections(t, pr.field, pr.cost, {}, Scheme::rk4));
        EXPECT_LE((gradient_from_adjoint_param(adj) - fwd).norm(), 1e-6 * std::max(1.0, fwd.norm())) << "seed " << seed;
        const Vector fwd0 = forward_gradient_initial(t, pr.field, pr.cost, record_selections(t, pr.field, pr.cost, {}, Scheme::rk4));
        EXPECT_LE((gradient_from_adjoint_initial(adj) - fwd0).norm(), 1e-6 * std::max(1.0, fwd0.norm())) << "seed " << seed;
    }
}

TEST(Adjoint, EulerAgreementIsFirstOrder) {
    const auto coarse = verification::random_problem(31, false, 1000, Scheme::euler);
    const auto fine = verification::random_problem(31, false, 10000, Scheme::euler);
    auto gap = [](const verification::RandomProblem& rp) {
        const auto& pr = rp.problem;
        const Trajectory t = integrate_parametrized_flow(pr.field, pr.z0, rp.theta, pr.cost.grid());
        const Vector fwd = forward_gradient_param(pr.field, pr.z0, rp.theta, pr.cost);
        return (gradient_from_adjoint_param(solve_adjoint(t, pr.field, pr.cost)) - fwd).norm() / std::max(fwd.norm(), 1e-12);
    };
    const double g1 = gap(coarse), g2 = gap(fine);
    EXPECT_LT(g2, 1e-3);
    EXPECT_LT(g2, g1);
}

TEST(Adjoint, TapeReplayMatchesPolicies) {
    const auto rp = verification::random_problem(12, false, 300, Scheme::rk4);
    const auto& pr = rp.problem;
    const Trajectory t = integrate_parametrized_flow(pr.field, pr.z0, rp.theta, pr.cost.grid(), Scheme::rk4);
    const auto policies = GradientPolicies::uniform(SelectionPolicy::seeded_random(99));
    const auto a = solve_adjoint(t, pr.field, pr.cost, policies, Scheme::rk4);
    const auto b = solve_adjoint(t, pr.field, pr.cost, record_selections(t, pr.field, pr.cost, policies, Scheme::rk4));
    EXPECT_EQ(max_abs_diff(a.costates, b.costates), 0.0);
    EXPECT_EQ(max_abs_diff(gradient_from_adjoint_param(a), gradient_from_adjoint_param(b)), 0.0);
}

TEST(Adjoint, CostateBound) {
    for (std::uint64_t seed = 40; seed < 45; ++seed) {
        const auto rp = verification::random_problem(seed, false, 500, Scheme::euler);
        const auto& pr = rp.problem;
        const Trajectory t = integrate_parametrized_flow(pr.field, pr.z0, rp.theta, pr.cost.grid());
        const auto r = verification::costate_bound_check(solve_adjoint(t, pr.field, pr.cost), pr.field.field().lipschitz_bound(), "c");
        EXPECT_TRUE(r.passed) << r.discrepancy;
    }
}

TEST(Adjoint, CsvLayout) {
    const CostSpec cost(std::nullopt, linear_cost(vec({1.0})), TimeGrid(1.0, 1));
    const Field f = zero_field(1, 1);
    std::ostringstream os;
    write_csv(os, solve_adjoint(integrate_flow(f, vec({0.0}), cost.grid()), f, cost));
    EXPECT_EQ(os.str(), "t,lambda_1\n0,1\n1,1\n");
}
