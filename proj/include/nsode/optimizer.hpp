// Small-step method  theta_{k+1} = theta_k - alpha_k g_k  with adjoint gradient
// elements, sampled-hull criticality and essential-accumulation reports.
#pragma once

#include "nsode/adjoint.hpp"
#include "nsode/core.hpp"
#include "nsode/field.hpp"
#include "nsode/flow.hpp"
#include "nsode/loss.hpp"
#include "nsode/min_norm_point.hpp"
#include "nsode/selection.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace nsode {

class StepSchedule {
public:
    enum class Kind { power, constant };

    /// alpha_k = alpha0 / (1+k)^beta with beta in (0, 1].
    static StepSchedule power(double alpha0, double beta) {
        require(alpha0 > 0.0 && std::isfinite(alpha0), "step size alpha0 must be positive");
        require(beta > 0.0 && beta <= 1.0, "power schedule exponent must lie in (0, 1]");
        return StepSchedule(Kind::power, alpha0, beta);
    }
    /// Constant steps; diagnostics only, since alpha_k does not vanish.
    static StepSchedule constant(double alpha0) {
        require(alpha0 > 0.0 && std::isfinite(alpha0), "step size alpha0 must be positive");
        return StepSchedule(Kind::constant, alpha0, 0.0);
    }

    Kind kind() const noexcept { return kind_; }
    double alpha0() const noexcept { return alpha0_; }
    double beta() const noexcept { return beta_; }

    double operator()(std::size_t k) const {
        if (kind_ == Kind::constant) return alpha0_;
        return alpha0_ / std::pow(1.0 + static_cast<double>(k), beta_);
    }

private:
    StepSchedule(Kind k, double a, double b) : kind_(k), alpha0_(a), beta_(b) {}
    Kind kind_;
    double alpha0_;
    double beta_;
};

/// Which selection each iteration uses.
class PolicyStrategy {
public:
    static PolicyStrategy fixed(SelectionPolicy p = SelectionPolicy::midpoint()) { return PolicyStrategy(p, false, 0); }
    /// A fresh seeded-random policy per iteration, derived from `seed` and k.
    static PolicyStrategy seeded_random(std::uint64_t seed) {
        return PolicyStrategy(SelectionPolicy::seeded_random(seed), true, seed);
    }

    bool randomized() const noexcept { return random_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const SelectionPolicy& base() const noexcept { return base_; }

    SelectionPolicy at(std::size_t k) const {
        if (!random_) return base_;
        return SelectionPolicy::seeded_random(detail::hash_combine(seed_, k), base_.breakpoint_tolerance());
    }

private:
    PolicyStrategy(SelectionPolicy p, bool r, std::uint64_t s) : base_(std::move(p)), random_(r), seed_(s) {}
    SelectionPolicy base_;
    bool random_;
    std::uint64_t seed_;
};

struct OptimizationProblem {
    ParametrizedField field;
    CostSpec cost;
    Vector z0;
    Scheme scheme = Scheme::euler;
};

/// One element of D_L(theta) and the selection that produced it.
struct GradientSample {
    Vector gradient;
    double loss = 0.0;
    SelectionPolicy policy;
};

inline GradientSample gradient_sample(const OptimizationProblem& problem, const Vector& theta,
                                      const SelectionPolicy& policy = SelectionPolicy::midpoint()) {
    const Trajectory traj = integrate_parametrized_flow(problem.field, problem.z0, theta, problem.cost.grid(), problem.scheme);
    const auto policies = GradientPolicies::uniform(policy);
    const AdjointTrajectory adj = solve_adjoint(traj, problem.field, problem.cost, policies, problem.scheme);
    return {gradient_from_adjoint_param(adj), evaluate_loss(traj, problem.cost), policy};
}

/// Distance from 0 to the convex hull of `samples` gradient elements drawn
/// under distinct seeded-random policies.
inline double criticality_estimate(const OptimizationProblem& problem, const Vector& theta, std::size_t samples,
                                   std::uint64_t seed) {
    require(samples >= 1, "criticality estimate needs at least one sample");
    Matrix points(theta.size(), static_cast<Eigen::Index>(samples));
    for (std::size_t s = 0; s < samples; ++s)
        points.col(static_cast<Eigen::Index>(s)) =
            gradient_sample(problem, theta, SelectionPolicy::seeded_random(detail::hash_combine(seed, s))).gradient;
    return min_norm_point(points).distance;
}

struct IterationRecord {
    std::size_t k = 0;
    Vector theta;
    Vector gradient;
    double alpha = 0.0;
    double loss = 0.0;
    std::string policy;
    std::uint64_t seed = 0;
};

struct CriticalityRecord {
    std::size_t iteration = 0;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
    double distance = 0.0;
};

struct OptimizerRun {
    std::vector<IterationRecord> records;
    Vector final_theta;
    StepSchedule schedule = StepSchedule::constant(1.0);
    bool diverged = false;
    std::string stop_reason = "completed";
    std::vector<CriticalityRecord> criticality;
};

struct RunOptions {
    double divergence_bound = 1e8;      // stop once ||theta|| exceeds this
    std::size_t criticality_samples = 0;   // 0 disables the final-iterate estimate
    std::uint64_t criticality_seed = 0;
};

inline OptimizerRun run(const OptimizationProblem& problem, const Vector& theta0, const StepSchedule& schedule,
                        std::size_t iterations, const PolicyStrategy& strategy = PolicyStrategy::fixed(),
                        const RunOptions& options = {}) {
    require(iterations >= 1, "optimizer needs at least one iteration");
    require(static_cast<std::size_t>(theta0.size()) == problem.field.param_dim(),
            "initial parameters have dimension " + std::to_string(theta0.size()) + ", field expects " +
                std::to_string(problem.field.param_dim()));
    OptimizerRun out;
    out.schedule = schedule;
    out.records.reserve(iterations);
    Vector theta = theta0;
    for (std::size_t k = 0; k < iterations; ++k) {
        const SelectionPolicy policy = strategy.at(k);
        GradientSample g;
        try {
            g = gradient_sample(problem, theta, policy);
        } catch (const DivergenceError& e) {
            out.diverged = true;
            out.stop_reason = std::string("integration diverged at iteration ") + std::to_string(k) + ": " + e.what();
            break;
        }
        const double alpha = schedule(k);
        out.records.push_back({k, theta, g.gradient, alpha, g.loss, std::string(to_string(policy.mode())), policy.seed()});
        theta = theta - alpha * g.gradient;
        if (!theta.allFinite() || theta.norm() > options.divergence_bound) {
            out.diverged = true;
            out.stop_reason = "parameter norm exceeded bound at iteration " + std::to_string(k + 1);
            break;
        }
    }
    out.final_theta = theta;
    if (!out.diverged && options.criticality_samples > 0)
        out.criticality.push_back({out.records.size(), options.criticality_samples, options.criticality_seed,
                                   criticality_estimate(problem, theta, options.criticality_samples,
                                                        options.criticality_seed)});
    return out;
}

/// Index of the first record whose successor breaks theta_{k+1} = theta_k - alpha_k g_k
/// bit for bit, or nullopt if the log is an exact replay.
inline std::optional<std::size_t> replay_mismatch(const std::vector<IterationRecord>& records,
                                                  const std::optional<Vector>& final_theta = std::nullopt) {
    for (std::size_t k = 0; k < records.size(); ++k) {
        const Vector next = records[k].theta - records[k].alpha * records[k].gradient;
        const Vector* logged = nullptr;
        if (k + 1 < records.size()) logged = &records[k + 1].theta;
        else if (final_theta) logged = &*final_theta;
        if (logged && !(next.array() == logged->array()).all()) return k;
    }
    return std::nullopt;
}

struct AccumulationCluster {
    Vector center;
    double weight = 0.0;
};

struct CandidateWeight {
    Vector candidate;
    double weight = 0.0;
};

struct AccumulationReport {
    double radius = 0.0;
    double tail_fraction = 0.0;
    std::size_t first_iteration = 0;
    std::vector<CandidateWeight> candidates;
    std::vector<AccumulationCluster> clusters;   // descending weight
};

/// Step-size-weighted occupation of the last `tail_fraction` of the iterates:
/// weight within radius r of each candidate, and weighted k-means centers
/// with centers closer than r merged.
inline AccumulationReport essential_accumulation_report(const OptimizerRun& run, double radius,
                                                        const std::vector<Vector>& candidates = {},
                                                        std::size_t clusters = 3, double tail_fraction = 0.5) {
    require(radius > 0.0, "accumulation radius must be positive");
    require(tail_fraction > 0.0 && tail_fraction <= 1.0, "tail fraction must lie in (0, 1]");
    require(clusters >= 1, "need at least one cluster");
    AccumulationReport rep;
    rep.radius = radius;
    rep.tail_fraction = tail_fraction;
    const std::size_t n = run.records.size();
    if (n == 0) return rep;
    rep.first_iteration = n - std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tail_fraction * n)));

    std::vector<const Vector*> pts;
    std::vector<double> w;
    double total = 0.0;
    for (std::size_t k = rep.first_iteration; k < n; ++k) {
        pts.push_back(&run.records[k].theta);
        w.push_back(run.records[k].alpha);
        total += run.records[k].alpha;
    }
    for (double& v : w) v /= total;

    for (const Vector& c : candidates) {
        double mass = 0.0;
        for (std::size_t i = 0; i < pts.size(); ++i)
            if ((*pts[i] - c).norm() <= radius) mass += w[i];
        rep.candidates.push_back({c, mass});
    }

    // Farthest-point initialization from the last iterate, then weighted Lloyd.
    std::vector<Vector> centers{*pts.back()};
    while (centers.size() < clusters) {
        double best = 0.0;
        std::size_t arg = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double d = std::numeric_limits<double>::infinity();
            for (const Vector& c : centers) d = std::min(d, (*pts[i] - c).norm());
            if (d > best) best = d, arg = i;
        }
        if (best <= 0.0) break;
        centers.push_back(*pts[arg]);
    }
    std::vector<std::size_t> label(pts.size(), 0);
    std::vector<double> mass(centers.size(), 0.0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = iter == 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            std::size_t arg = 0;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < centers.size(); ++c) {
                const double d = (*pts[i] - centers[c]).squaredNorm();
                if (d < best) best = d, arg = c;
            }
            if (label[i] != arg) changed = true, label[i] = arg;
        }
        std::vector<Vector> sums(centers.size(), Vector::Zero(centers[0].size()));
        std::fill(mass.begin(), mass.end(), 0.0);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            sums[label[i]] += w[i] * *pts[i];
            mass[label[i]] += w[i];
        }
        for (std::size_t c = 0; c < centers.size(); ++c)
            if (mass[c] > 0.0) centers[c] = sums[c] / mass[c];
        if (!changed) break;
    }

    std::vector<AccumulationCluster> out;
    for (std::size_t c = 0; c < centers.size(); ++c)
        if (mass[c] > 0.0) out.push_back({centers[c], mass[c]});
    for (bool merged = true; merged;) {
        merged = false;
        for (std::size_t a = 0; a < out.size() && !merged; ++a)
            for (std::size_t b = a + 1; b < out.size() && !merged; ++b)
                if ((out[a].center - out[b].center).norm() < radius) {
                    const double m = out[a].weight + out[b].weight;
                    out[a].center = (out[a].weight * out[a].center + out[b].weight * out[b].center) / m;
                    out[a].weight = m;
                    out.erase(out.begin() + static_cast<std::ptrdiff_t>(b));
                    merged = true;
                }
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.weight > b.weight; });
    rep.clusters = std::move(out);
    return rep;
}

// ---- run logs ----

inline nlohmann::json to_json(const IterationRecord& r) {
    return {{"k", r.k},
            {"theta", std::vector<double>(r.theta.data(), r.theta.data() + r.theta.size())},
            {"gradient", std::vector<double>(r.gradient.data(), r.gradient.data() + r.gradient.size())},
            {"alpha", r.alpha},
            {"loss", r.loss},
            {"policy", r.policy},
            {"seed", r.seed}};
}

inline IterationRecord record_from_json(const nlohmann::json& j) {
    auto vec = [](const nlohmann::json& a) {
        const auto v = a.get<std::vector<double>>();
        return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    return {j.at("k").get<std::size_t>(), vec(j.at("theta")), vec(j.at("gradient")), j.at("alpha").get<double>(),
            j.at("loss").get<double>(), j.at("policy").get<std::string>(), j.at("seed").get<std::uint64_t>()};
}

/// One JSON object per iteration.
inline void write_jsonl(std::ostream& os, const OptimizerRun& run) {
    for (const auto& r : run.records) os << to_json(r).dump() << '\n';
}

inline std::vector<IterationRecord> read_jsonl(std::istream& is) {
    std::vector<IterationRecord> out;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) out.push_back(record_from_json(nlohmann::json::parse(line)));
    return out;
}

/// CSV with columns k, alpha, loss, grad_norm, theta_1..theta_m.
inline void write_summary_csv(std::ostream& os, const OptimizerRun& run) {
    const Eigen::Index m = run.final_theta.size();
    os << "k,alpha,loss,grad_norm";
    for (Eigen::Index j = 0; j < m; ++j) os << ",theta_" << (j + 1);
    os << '\n';
    os.precision(17);
    for (const auto& r : run.records) {
        os << r.k << ',' << r.alpha << ',' << r.loss << ',' << r.gradient.norm();
        for (Eigen::Index j = 0; j < m; ++j) os << ',' << r.theta(j);
        os << '\n';
    }
}

} // namespace nsode
