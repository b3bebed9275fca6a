#include "test_util.hpp"

#include <sstream>

using namespace nsode;
using nsode::testing::vec;
using nsode::verification::convex_scalar_problem;
using nsode::verification::kink_problem;

namespace {

// dz/dt = relu(theta_1) - relu(theta_2), z(0) = 0, l_T = (z - 0.5)^2 on [0, 1].
OptimizationProblem relu_fit_problem() {
    FieldBuilder b(3);
    Matrix sel(2, 3);
    sel << 0.0, 1.0, 0.0, 0.0, 0.0, 1.0;
    const NodeId r = b.atom(AtomKind::relu, b.affine(b.input(), sel));
    Matrix diff(1, 2);
    diff << 1.0, -1.0;
    const Field h = b.build(b.affine(r, diff));
    const Field terminal = atom_field(AtomKind::polynomial, 1, {0.25, -1.0, 1.0});
    return {ParametrizedField(h, 1), CostSpec(std::nullopt, terminal, TimeGrid(1.0, 20)), Vector::Zero(1), Scheme::euler};
}

} // namespace

TEST(StepSchedule, PowerAndConstant) {
    const auto s = StepSchedule::power(0.5, 0.7);
    EXPECT_EQ(s(0), 0.5);
    EXPECT_DOUBLE_EQ(s(3), 0.5 / std::pow(4.0, 0.7));
    EXPECT_EQ(StepSchedule::constant(0.1)(1000), 0.1);
    EXPECT_THROW(StepSchedule::power(0.5, 1.5), UsageError);
    EXPECT_THROW(StepSchedule::power(-1.0, 0.5), UsageError);
    EXPECT_THROW(StepSchedule::constant(0.0), UsageError);
}

TEST(Optimizer, ConvexRunConverges) {
    const auto run = nsode::run(convex_scalar_problem(), Vector::Ones(1), StepSchedule::power(0.5, 0.7), 2000);
    EXPECT_FALSE(run.diverged);
    EXPECT_EQ(run.records.size(), 2000u);
    EXPECT_LE(std::abs(run.final_theta(0)), 0.05);
    EXPECT_EQ(run.stop_reason, "completed");
}

TEST(Optimizer, ZeroGradientKeepsParameters) {
    // the parameter does not enter the dynamics
    Matrix a(1, 2);
    a << -1.0, 0.0;
    const OptimizationProblem pr{ParametrizedField(linear_field(a), 1),
                                 CostSpec(atom_field(AtomKind::polynomial, 1, {0.0, 0.0, 1.0}), std::nullopt, TimeGrid(1.0, 50)),
                                 Vector::Ones(1), Scheme::euler};
    const auto run = nsode::run(pr, vec({0.7}), StepSchedule::power(0.5, 0.7), 25);
    EXPECT_EQ(run.final_theta(0), 0.7);
    for (const auto& r : run.records) EXPECT_EQ(r.gradient.norm(), 0.0);
}

TEST(Optimizer, ReluToyFit) {
    const auto pr = relu_fit_problem();
    const Vector theta0 = vec({1.0, 0.2});
    const double initial = gradient_sample(pr, theta0).loss;
    EXPECT_NEAR(initial, 0.09, 1e-12);
    const auto run = nsode::run(pr, theta0, StepSchedule::power(0.5, 0.7), 300);
    const double final_loss = gradient_sample(pr, run.final_theta).loss;
    EXPECT_LE(final_loss, 1e-3 * initial);
}

TEST(Optimizer, CriticalityAtKinkAndAwayFromIt) {
    EXPECT_LE(criticality_estimate(kink_problem(), Vector::Zero(1), 16, 7), 0.05);
    EXPECT_NEAR(criticality_estimate(kink_problem(), vec({0.4}), 16, 7), 1.0, 1e-12);
    const double g = gradient_sample(convex_scalar_problem(), Vector::Ones(1)).gradient.norm();
    EXPECT_NEAR(criticality_estimate(convex_scalar_problem(), Vector::Ones(1), 4, 1), g, 1e-12);
    EXPECT_THROW(criticality_estimate(kink_problem(), Vector::Zero(1), 0, 7), UsageError);
}

TEST(Optimizer, CriticalityRecordedAtEnd) {
    RunOptions ro;
    ro.criticality_samples = 16;
    ro.criticality_seed = 3;
    const auto run = nsode::run(convex_scalar_problem(), Vector::Ones(1), StepSchedule::power(0.5, 0.7), 2000, PolicyStrategy::fixed(), ro);
    ASSERT_EQ(run.criticality.size(), 1u);
    EXPECT_EQ(run.criticality[0].iteration, 2000u);
    EXPECT_LE(run.criticality[0].distance, 0.05);
}

TEST(Optimizer, Divergence) {
    const auto run = nsode::run(convex_scalar_problem(), Vector::Ones(1), StepSchedule::constant(1e6), 50);
    EXPECT_TRUE(run.diverged);
    EXPECT_LT(run.records.size(), 50u);
    EXPECT_NE(run.stop_reason.find("exceeded"), std::string::npos);
}

TEST(Optimizer, SeededRandomStrategyIsReproducible) {
    const auto a = nsode::run(kink_problem(), vec({0.3}), StepSchedule::power(0.5, 0.7), 100, PolicyStrategy::seeded_random(5));
    const auto b = nsode::run(kink_problem(), vec({0.3}), StepSchedule::power(0.5, 0.7), 100, PolicyStrategy::seeded_random(5));
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t k = 0; k < a.records.size(); ++k) {
        EXPECT_EQ(a.records[k].theta(0), b.records[k].theta(0));
        EXPECT_EQ(a.records[k].seed, b.records[k].seed);
        EXPECT_EQ(a.records[k].policy, "seeded-random");
    }
    EXPECT_NE(a.records[1].seed, a.records[2].seed);
}

TEST(Optimizer, ReplayDetectsTampering) {
    auto run = nsode::run(convex_scalar_problem(), Vector::Ones(1), StepSchedule::power(0.5, 0.7), 40);
    EXPECT_FALSE(replay_mismatch(run.records, run.final_theta).has_value());
    run.records[10].gradient(0) += 1e-15;
    const auto bad = replay_mismatch(run.records, run.final_theta);
    ASSERT_TRUE(bad.has_value());
    EXPECT_EQ(*bad, 10u);
}

TEST(Optimizer, JsonlRoundTripIsExact) {
    const auto run = nsode::run(kink_problem(), vec({0.3}), StepSchedule::power(0.5, 0.7), 60, PolicyStrategy::seeded_random(9));
    std::stringstream ss;
    write_jsonl(ss, run);
    const auto back = read_jsonl(ss);
    ASSERT_EQ(back.size(), run.records.size());
    for (std::size_t k = 0; k < back.size(); ++k) {
        EXPECT_EQ(back[k].k, run.records[k].k);
        EXPECT_EQ(back[k].theta(0), run.records[k].theta(0));
        EXPECT_EQ(back[k].gradient(0), run.records[k].gradient(0));
        EXPECT_EQ(back[k].alpha, run.records[k].alpha);
        EXPECT_EQ(back[k].loss, run.records[k].loss);
        EXPECT_EQ(back[k].seed, run.records[k].seed);
    }
    EXPECT_FALSE(replay_mismatch(back, run.final_theta).has_value());
}

TEST(Accumulation, ConvergentRunConcentrates) {
    const auto run = nsode::run(convex_scalar_problem(), Vector::Ones(1), StepSchedule::power(0.5, 0.7), 2000);
    const auto rep = essential_accumulation_report(run, 0.05, {Vector::Zero(1), Vector::Ones(1)});
    EXPECT_EQ(rep.first_iteration, 1000u);
    EXPECT_GE(rep.candidates[0].weight, 0.9);
    EXPECT_EQ(rep.candidates[1].weight, 0.0);
    ASSERT_FALSE(rep.clusters.empty());
    EXPECT_LE(rep.clusters[0].center.norm(), 0.05);
}

TEST(Accumulation, OscillationSplitsIntoTwoClusters) {
    const auto run = nsode::run(kink_problem(), vec({0.23}), StepSchedule::constant(0.1), 200);
    const auto rep = essential_accumulation_report(run, 0.02);
    ASSERT_EQ(rep.clusters.size(), 2u);
    EXPECT_NEAR(rep.clusters[0].weight + rep.clusters[1].weight, 1.0, 1e-12);
    EXPECT_NEAR(rep.clusters[0].weight, 0.5, 0.02);
    EXPECT_NEAR(std::abs(rep.clusters[0].center(0) - rep.clusters[1].center(0)), 0.1, 1e-9);
}

TEST(Accumulation, Validation) {
    const auto run = nsode::run(kink_problem(), vec({0.23}), StepSchedule::constant(0.1), 10);
    EXPECT_THROW(essential_accumulation_report(run, 0.0), UsageError);
    EXPECT_THROW(essential_accumulation_report(run, 0.1, {}, 3, 0.0), UsageError);
    EXPECT_THROW(essential_accumulation_report(run, 0.1, {}, 0), UsageError);
}
