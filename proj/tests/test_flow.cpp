#include "test_util.hpp"

#include <sstream>

using namespace nsode;
using nsode::testing::max_abs_diff;
using nsode::testing::vec;
using nsode::verification::counterexample_field;
using nsode::verification::counterexample_flow;

TEST(TimeGrid, NodesAndWeights) {
    const TimeGrid g(2.0, 4);
    EXPECT_EQ(g.nodes(), 5u);
    EXPECT_DOUBLE_EQ(g.step(), 0.5);
    EXPECT_EQ(g.time(4), 2.0);
    EXPECT_DOUBLE_EQ(g.trapezoid_weight(0), 0.25);
    EXPECT_DOUBLE_EQ(g.trapezoid_weight(2), 0.5);
    EXPECT_THROW(TimeGrid(0.0, 4), UsageError);
    EXPECT_THROW(TimeGrid(1.0, 0), UsageError);
}

TEST(Flow, ExponentialRk4) {
    const Trajectory t = integrate_flow(identity_field(1), vec({1.0}), TimeGrid(1.0, 1000), Scheme::rk4);
    EXPECT_NEAR(t.final_state()(0), std::exp(1.0), 1e-9);
}

TEST(Flow, ExponentialEulerMatchesRecurrence) {
    const Trajectory t = integrate_flow(identity_field(1), vec({1.0}), TimeGrid(1.0, 1000));
    EXPECT_NEAR(t.final_state()(0), std::pow(1.001, 1000), 1e-12);
    EXPECT_NEAR(t.final_state()(0), std::exp(1.0), 2e-3);
}

TEST(Flow, ZeroFieldIsConstant) {
    const Trajectory t = integrate_flow(zero_field(3, 3), vec({1.0, -2.0, 3.0}), TimeGrid(1.0, 50));
    for (std::size_t i = 0; i < t.grid.nodes(); ++i) EXPECT_EQ(max_abs_diff(t.state(i), vec({1.0, -2.0, 3.0})), 0.0);
}

TEST(Flow, ParametrizedLinearGrowth) {
    // dz/dt = theta z built as mul(z, theta)
    FieldBuilder b(2);
    const Field h = b.build(b.mul(b.component(b.input(), 0), b.component(b.input(), 1)));
    const ParametrizedField pf(h, 1);
    for (double theta : {-0.7, 0.0, 0.3}) {
        const Trajectory t = integrate_parametrized_flow(pf, vec({2.0}), vec({theta}), TimeGrid(1.5, 1000), Scheme::rk4);
        EXPECT_NEAR(t.final_state()(0), 2.0 * std::exp(1.5 * theta), 1e-10);
        EXPECT_EQ(t.parameters(0), theta);
    }
}

TEST(Flow, ReluEquilibrium) {
    // dx/dt = -relu(x): every x <= 0 is an equilibrium, x > 0 decays.
    const Field f = compose(linear_field(-Matrix::Identity(1, 1)), atom_field(AtomKind::relu, 1));
    for (double x0 : {-1.0, 0.0}) {
        const Trajectory t = integrate_flow(f, vec({x0}), TimeGrid(3.0, 300));
        EXPECT_EQ(t.final_state()(0), x0);
    }
    const Trajectory t = integrate_flow(f, vec({1.0}), TimeGrid(3.0, 3000), Scheme::rk4);
    EXPECT_NEAR(t.final_state()(0), std::exp(-3.0), 1e-10);
}

TEST(Flow, CounterexampleEulerIsFirstOrder) {
    const Field f = counterexample_field();
    for (double a : {1.0, -1.0}) {
        const Vector x0 = vec({a, 0.0});
        const double exact = counterexample_flow(x0, 2.0)(0);
        EXPECT_DOUBLE_EQ(exact, a);   // x1(2) = x1(0) for any x1(0)
        const double e3 = std::abs(integrate_flow(f, x0, TimeGrid(2.0, 2000)).final_state()(0) - exact);
        const double e4 = std::abs(integrate_flow(f, x0, TimeGrid(2.0, 20000)).final_state()(0) - exact);
        EXPECT_NEAR(e3 / e4, 10.0, 0.2) << "a=" << a;
        EXPECT_LT(e4, 1.5e-4);
        EXPECT_NEAR(integrate_flow(f, x0, TimeGrid(2.0, 20000)).final_state()(1), 2.0, 1e-12);
    }
}

TEST(Flow, CounterexampleRk4AwayFromKink) {
    const Vector x0 = vec({0.4, 0.2});
    const Trajectory t = integrate_flow(counterexample_field(), x0, TimeGrid(1.0, 1000), Scheme::rk4);
    EXPECT_LE((t.final_state() - counterexample_flow(x0, 1.0)).norm(), 1e-11);
}

TEST(Flow, OriginStaysOnKink) {
    const Trajectory t = integrate_flow(counterexample_field(), Vector::Zero(2), TimeGrid(2.0, 100));
    for (std::size_t i = 0; i < t.grid.nodes(); ++i) EXPECT_EQ(t.states(0, static_cast<Eigen::Index>(i)), 0.0);
}

TEST(Flow, StepSizeWarning) {
    const Field fast = linear_field(10.0 * Matrix::Identity(1, 1));
    EXPECT_TRUE(integrate_flow(fast, vec({1.0}), TimeGrid(1.0, 10)).step_size_warning);
    EXPECT_FALSE(integrate_flow(fast, vec({1.0}), TimeGrid(1.0, 100)).step_size_warning);
}

TEST(Flow, DivergenceIsReported) {
    const Field sq = atom_field(AtomKind::polynomial, 1, {0.0, 0.0, 1.0});
    try {
        integrate_flow(sq, vec({1e100}), TimeGrid(1.0, 10));
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.step(), 1u);
        EXPECT_LE(e.step(), 10u);
    }
}

TEST(Flow, InputValidation) {
    EXPECT_THROW(integrate_flow(counterexample_field(), vec({1.0}), TimeGrid(1.0, 10)), UsageError);
    EXPECT_THROW(integrate_flow(zero_field(2, 1), vec({1.0, 1.0}), TimeGrid(1.0, 10)), UsageError);
    EXPECT_THROW(integrate_flow(identity_field(1), vec({NAN}), TimeGrid(1.0, 10)), UsageError);
}

TEST(Flow, CsvLayout) {
    std::ostringstream os;
    write_csv(os, integrate_flow(zero_field(2, 2), vec({1.0, 2.0}), TimeGrid(1.0, 2)));
    EXPECT_EQ(os.str(), "t,x_1,x_2\n0,1,2\n0.5,1,2\n1,1,2\n");
}

TEST(FlowProperties, LipschitzDependenceOnInitialState) {
    std::mt19937_64 rng(9);
    for (int net = 0; net < 10; ++net) {
        const Field f = nsode::testing::random_network(rng, 2, 4, 2, false);
        const double k = f.lipschitz_bound();
        const TimeGrid grid(1.0, 2000);
        for (int trial = 0; trial < 5; ++trial) {
            const Vector x = nsode::testing::random_vector(rng, 2), y = nsode::testing::random_vector(rng, 2);
            const auto tx = integrate_flow(f, x, grid, Scheme::rk4), ty = integrate_flow(f, y, grid, Scheme::rk4);
            for (std::size_t i = 0; i < grid.nodes(); i += 100)
                EXPECT_LE((tx.state(i) - ty.state(i)).norm(), std::exp(k * grid.time(i)) * (x - y).norm() * 1.05);
        }
    }
}
