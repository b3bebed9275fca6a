#include "test_util.hpp"

#include <sstream>

using namespace nsode;
using nsode::testing::max_abs_diff;
using nsode::testing::vec;

namespace {

Field squared_norm(std::size_t p) {
    FieldBuilder b(p);
    return b.build(b.affine(b.atom(AtomKind::polynomial, b.input(), {0.0, 0.0, 1.0}), Matrix::Ones(1, static_cast<Eigen::Index>(p))));
}

Field constant_cost(std::size_t p, double c) {
    FieldBuilder b(p);
    return b.build(b.constant(Vector::Constant(1, c)));
}

double loss_at(const verification::RandomProblem& rp, const Vector& z0, const Vector& theta) {
    const auto& pr = rp.problem;
    return evaluate_loss(integrate_parametrized_flow(pr.field, z0, theta, pr.cost.grid(), pr.scheme), pr.cost);
}

} // namespace

TEST(Loss, ConstantRunningCostGivesHorizon) {
    const CostSpec cost(constant_cost(2, 1.0), std::nullopt, TimeGrid(2.5, 7));
    EXPECT_NEAR(evaluate_loss(integrate_flow(zero_field(2, 2), vec({1.0, 2.0}), cost.grid()), cost), 2.5, 1e-15);
}

TEST(Loss, TerminalSquaredNorm) {
    const CostSpec cost(std::nullopt, squared_norm(3), TimeGrid(1.0, 10));
    const Vector x0 = vec({1.0, -2.0, 0.5});
    EXPECT_DOUBLE_EQ(evaluate_loss(integrate_flow(zero_field(3, 3), x0, cost.grid()), cost), x0.squaredNorm());
}

TEST(Loss, DecayingRunningCost) {
    const CostSpec cost(squared_norm(1), std::nullopt, TimeGrid(1.0, 1000));
    const Trajectory t = integrate_flow(linear_field(-Matrix::Identity(1, 1)), vec({1.0}), cost.grid(), Scheme::rk4);
    EXPECT_NEAR(evaluate_loss(t, cost), 0.5 * (1.0 - std::exp(-2.0)), 1e-6);
}

TEST(Loss, IntegrandAndCsv) {
    const CostSpec cost(squared_norm(1), std::nullopt, TimeGrid(1.0, 2));
    const Trajectory t = integrate_flow(zero_field(1, 1), vec({3.0}), cost.grid());
    const auto vals = running_integrand(t, cost);
    ASSERT_EQ(vals.size(), 3u);
    for (double v : vals) EXPECT_EQ(v, 9.0);
    std::ostringstream os;
    write_integrand_csv(os, t, cost);
    EXPECT_EQ(os.str(), "t,integrand\n0,9\n0.5,9\n1,9\n");
}

TEST(Loss, Validation) {
    EXPECT_THROW(CostSpec(std::nullopt, std::nullopt, TimeGrid(1.0, 1)), UsageError);
    EXPECT_THROW(CostSpec(identity_field(2), std::nullopt, TimeGrid(1.0, 1)), UsageError);
    EXPECT_THROW(CostSpec(squared_norm(2), squared_norm(3), TimeGrid(1.0, 1)), UsageError);
    const CostSpec cost(squared_norm(2), std::nullopt, TimeGrid(1.0, 4));
    EXPECT_THROW(evaluate_loss(integrate_flow(zero_field(2, 2), vec({1.0, 1.0}), TimeGrid(1.0, 5)), cost), UsageError);
    EXPECT_THROW(evaluate_loss(integrate_flow(zero_field(3, 3), vec({1.0, 1.0, 1.0}), cost.grid()), cost), UsageError);
}

TEST(ForwardGradient, RunningSquaredNormOnZeroField) {
    const double horizon = 1.7;
    const CostSpec cost(squared_norm(2), std::nullopt, TimeGrid(horizon, 17));
    const Vector x0 = vec({0.5, -1.0});
    EXPECT_LE(max_abs_diff(forward_gradient_initial(zero_field(2, 2), x0, cost), 2.0 * horizon * x0), 1e-14);
}

TEST(ForwardGradient, TerminalAbsChoosesElementAtKink) {
    const CostSpec cost(std::nullopt, atom_field(AtomKind::abs, 1), TimeGrid(1.0, 10));
    GradientPolicies p;
    p.terminal = SelectionPolicy::fixed({0.75});
    EXPECT_DOUBLE_EQ(forward_gradient_initial(zero_field(1, 1), vec({0.0}), cost, p)(0), 0.5);
    EXPECT_DOUBLE_EQ(forward_gradient_initial(zero_field(1, 1), vec({0.2}), cost, p)(0), 1.0);
}

TEST(ForwardGradient, MatchesFiniteDifferencesOnSmoothProblems) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const auto rp = verification::random_problem(seed, true, 2000, Scheme::rk4);
        const auto& pr = rp.problem;
        const Trajectory t = integrate_parametrized_flow(pr.field, pr.z0, rp.theta, pr.cost.grid(), Scheme::rk4);
        const Vector gz = forward_gradient_initial(t, pr.field, pr.cost, record_selections(t, pr.field, pr.cost, {}, Scheme::rk4));
        const Vector gt = forward_gradient_param(pr.field, pr.z0, rp.theta, pr.cost, {}, Scheme::rk4);
        auto fd = [&](const Vector& x, auto&& f) {
            Vector g(x.size());
            for (Eigen::Index j = 0; j < x.size(); ++j) {
                Vector xp = x, xm = x;
                xp(j) += 1e-6;
                xm(j) -= 1e-6;
                g(j) = (f(xp) - f(xm)) / 2e-6;
            }
            return g;
        };
        const Vector fz = fd(pr.z0, [&](const Vector& z) { return loss_at(rp, z, rp.theta); });
        const Vector ft = fd(rp.theta, [&](const Vector& th) { return loss_at(rp, pr.z0, th); });
        EXPECT_LE((gz - fz).norm(), 1e-7 * std::max(1.0, fz.norm())) << "seed " << seed;
        EXPECT_LE((gt - ft).norm(), 1e-7 * std::max(1.0, ft.norm())) << "seed " << seed;
    }
}

TEST(ForwardGradient, TapeReplayMatchesPolicies) {
    const auto rp = verification::random_problem(8, false, 200, Scheme::euler);
    const auto& pr = rp.problem;
    const Trajectory t = integrate_parametrized_flow(pr.field, pr.z0, rp.theta, pr.cost.grid());
    const auto policies = GradientPolicies::uniform(SelectionPolicy::seeded_random(4));
    const SelectionTape tape = record_selections(t, pr.field, pr.cost, policies, Scheme::euler);
    EXPECT_EQ(max_abs_diff(forward_gradient_param(t, pr.field, pr.cost, tape),
                           forward_gradient_param(pr.field, pr.z0, rp.theta, pr.cost, policies)),
              0.0);
}
