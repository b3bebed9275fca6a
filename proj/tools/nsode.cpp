// nsode: flows, conservative sensitivities, adjoints and training runs for
// nonsmooth vector fields described in JSON.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or configuration
// error, 3 numerical divergence.

#include "config.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace nsode;
using nsode::tool::Config;
using nlohmann::json;

namespace {

enum Exit { ok = 0, verification_failed = 1, usage = 2, diverged = 3 };

struct Options {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> grid_steps;
    std::string suite = "all";
};

class Output {
public:
    Output(const std::string& dir, std::string hash) : dir_(dir), hash_(std::move(hash)) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw UsageError("cannot create output directory '" + dir + "': " + ec.message());
    }

    std::ofstream open(const std::string& name) {
        const fs::path p = dir_ / name;
        std::ofstream os(p, std::ios::binary);
        if (!os) throw UsageError("cannot write '" + p.string() + "'");
        written_.push_back(p.string());
        return os;
    }

    void csv(const std::string& name, const std::function<void(std::ostream&)>& body) {
        auto os = open(name);
        os << "# config_hash=" << hash_ << '\n';
        body(os);
    }

    void json_file(const std::string& name, json j) {
        j["config_hash"] = hash_;
        open(name) << j.dump(2) << '\n';
    }

    const std::string& hash() const { return hash_; }
    const std::vector<std::string>& written() const { return written_; }

private:
    fs::path dir_;
    std::string hash_;
    std::vector<std::string> written_;
};

void require_key(bool present, const std::string& what) {
    if (!present) throw tool::ConfigError("configuration needs " + what);
}

void need_flow(const Config& c) {
    require_key(c.field.has_value(), "'field'");
    require_key(c.grid.has_value(), "'horizon' and 'steps'");
}

json matrix_json(const Matrix& m) { return to_json(m); }

Trajectory flow_of(const Config& c) {
    return integrate_parametrized_flow(*c.field, c.x0, c.theta, *c.grid, c.scheme);
}

void warn_step(const Trajectory& t) {
    if (t.step_size_warning) std::cerr << "warning: step size times Lipschitz bound is at least 1\n";
}

int cmd_flow(const Config& c, Output& out) {
    need_flow(c);
    const Trajectory t = flow_of(c);
    warn_step(t);
    out.csv("trajectory.csv", [&](std::ostream& os) { write_csv(os, t); });
    json j{{"command", "flow"},
           {"final_state", to_json(t.final_state())},
           {"steps", t.grid.steps()},
           {"horizon", t.grid.horizon()},
           {"scheme", std::string(to_string(c.scheme))},
           {"lipschitz_bound", c.field->field().lipschitz_bound()},
           {"step_size_warning", t.step_size_warning}};
    if (c.cost) {
        j["loss"] = evaluate_loss(t, *c.cost);
        out.csv("integrand.csv", [&](std::ostream& os) { write_integrand_csv(os, t, *c.cost); });
    }
    out.json_file("flow.json", j);
    std::cout << "flow: final state " << to_json(t.final_state()).dump() << '\n';
    return ok;
}

int cmd_sense(const Config& c, Output& out) {
    need_flow(c);
    const Trajectory t = flow_of(c);
    warn_step(t);
    const auto v = propagate_sensitivity(t, *c.field, c.policy, c.scheme);
    out.csv("sensitivity.csv", [&](std::ostream& os) { write_csv(os, v); });
    const double k = c.field->field().lipschitz_bound();
    json j{{"command", "sense"},
           {"policy", std::string(to_string(c.policy.mode()))},
           {"scheme", std::string(to_string(c.scheme))},
           {"final_state_sensitivity", matrix_json(v.final_matrix())},
           {"gronwall_ratio", verification::gronwall_check(v, k, "").discrepancy}};
    if (c.field->param_dim() > 0) {
        const auto m = propagate_parametrized_sensitivity(t, *c.field, c.policy, c.scheme);
        out.csv("param_sensitivity.csv", [&](std::ostream& os) { write_csv(os, m); });
        j["final_param_sensitivity"] = matrix_json(m.final_matrix());
        if (c.cost) j["gradient_param"] = to_json(forward_gradient_element(m, t, *c.cost, GradientPolicies::uniform(c.policy)));
    }
    if (c.cost) {
        j["loss"] = evaluate_loss(t, *c.cost);
        j["gradient_initial"] = to_json(forward_gradient_element(v, t, *c.cost, GradientPolicies::uniform(c.policy)));
    }
    if (c.field->param_dim() == 0) {
        const auto env = sensitivity_envelope(c.x0, c.field->field(), *c.grid, c.envelope_policies, c.scheme);
        json names = json::array();
        for (const auto& p : c.envelope_policies) names.push_back(std::string(to_string(p.mode())));
        out.json_file("envelope.json", {{"lower", matrix_json(env.lower)}, {"upper", matrix_json(env.upper)}, {"policies", names}});
    }
    out.json_file("sense.json", j);
    std::cout << "sense: V(T) " << matrix_json(v.final_matrix()).dump() << '\n';
    return ok;
}

int cmd_adjoint(const Config& c, Output& out) {
    need_flow(c);
    require_key(c.cost.has_value(), "'cost'");
    const Trajectory t = flow_of(c);
    warn_step(t);
    const auto adj = solve_adjoint(t, *c.field, *c.cost, GradientPolicies::uniform(c.policy), c.scheme);
    out.csv("costate.csv", [&](std::ostream& os) { write_csv(os, adj); });
    const double k = c.field->field().lipschitz_bound();
    json j{{"command", "adjoint"},
           {"policy", std::string(to_string(c.policy.mode()))},
           {"scheme", std::string(to_string(c.scheme))},
           {"loss", evaluate_loss(t, *c.cost)},
           {"gradient_initial", to_json(gradient_from_adjoint_initial(adj))},
           {"costate_bound_ratio", verification::costate_bound_check(adj, k, "").discrepancy}};
    if (c.field->param_dim() > 0) j["gradient_param"] = to_json(gradient_from_adjoint_param(adj));
    out.json_file("adjoint.json", j);
    std::cout << "adjoint: loss " << j["loss"].dump() << ", gradient_initial " << j["gradient_initial"].dump();
    if (j.contains("gradient_param")) std::cout << ", gradient_param " << j["gradient_param"].dump();
    std::cout << '\n';
    return ok;
}

int cmd_optimize(const Config& c, Output& out) {
    need_flow(c);
    require_key(c.cost.has_value(), "'cost'");
    if (c.field->param_dim() == 0) throw tool::ConfigError("optimize needs a parametrized field and 'theta'");
    const OptimizationProblem problem{*c.field, *c.cost, c.x0, c.scheme};
    const auto& oc = c.optimizer;
    RunOptions ro;
    ro.divergence_bound = oc.divergence_bound;
    ro.criticality_samples = oc.criticality_samples;
    ro.criticality_seed = c.seed;
    const PolicyStrategy strategy = oc.random_policies ? PolicyStrategy::seeded_random(c.seed) : PolicyStrategy::fixed(c.policy);
    const OptimizerRun r = nsode::run(problem, c.theta, oc.schedule, oc.iterations, strategy, ro);

    {
        auto os = out.open("iterations.jsonl");
        for (const auto& rec : r.records) {
            json line = to_json(rec);
            line["config_hash"] = out.hash();
            os << line.dump() << '\n';
        }
    }
    out.csv("summary.csv", [&](std::ostream& os) { write_summary_csv(os, r); });
    const AccumulationReport acc = essential_accumulation_report(r, oc.radius);
    json clusters = json::array();
    for (const auto& cl : acc.clusters) clusters.push_back({{"center", to_json(cl.center)}, {"weight", cl.weight}});
    json j{{"command", "optimize"},
           {"iterations", r.records.size()},
           {"final_theta", to_json(r.final_theta)},
           {"diverged", r.diverged},
           {"stop_reason", r.stop_reason},
           {"schedule",
            {{"kind", oc.schedule.kind() == StepSchedule::Kind::power ? "power" : "constant"},
             {"alpha0", oc.schedule.alpha0()},
             {"beta", oc.schedule.beta()}}},
           {"strategy", oc.random_policies ? "seeded-random" : "fixed"},
           {"accumulation", {{"radius", acc.radius}, {"tail_fraction", acc.tail_fraction}, {"clusters", clusters}}}};
    if (!r.records.empty()) j["final_loss"] = r.records.back().loss;
    if (!r.criticality.empty())
        j["criticality"] = {{"samples", r.criticality[0].samples}, {"seed", r.criticality[0].seed}, {"distance", r.criticality[0].distance}};
    j["replay_exact"] = !replay_mismatch(r.records, r.final_theta).has_value();
    out.json_file("optimize.json", j);
    std::cout << "optimize: " << r.records.size() << " iterations, final theta " << to_json(r.final_theta).dump();
    if (!r.criticality.empty()) std::cout << ", criticality " << r.criticality[0].distance;
    std::cout << '\n';
    if (r.diverged) {
        std::cerr << "error: " << r.stop_reason << '\n';
        return diverged;
    }
    return ok;
}

int cmd_verify(const Options& o, const std::optional<Config>& c, Output& out) {
    verification::SuiteOptions so;
    const std::optional<std::uint64_t> seed = o.seed ? o.seed : (c && c->raw.contains("seed") ? std::optional(c->seed) : std::nullopt);
    if (seed) {
        so.conservativity.seed = *seed;
        so.agreement.seed = *seed;
        so.fd_gradient.seed = *seed;
        so.optimizer.seed = *seed;
    }
    const bool known = std::find(verification::suite_names().begin(), verification::suite_names().end(), o.suite) !=
                       verification::suite_names().end();
    if (!known) throw UsageError("unknown suite '" + o.suite + "'");
    const auto report = verification::run_suite(o.suite, so);
    verification::write_table(std::cout, report);
    json j = verification::to_json(report);
    j["command"] = "verify";
    j["passed"] = report.passed();
    j["failures"] = report.failures();
    if (seed) j["seed"] = *seed;
    out.json_file("verify.json", j);
    std::cout << report.checks.size() - report.failures() << "/" << report.checks.size() << " checks passed\n";
    return report.passed() ? ok : verification_failed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flows, conservative sensitivities and adjoints of nonsmooth ODEs"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* sub, bool config_required) {
        auto* cfg = sub->add_option("--config", o.config, "JSON experiment configuration")->check(CLI::ExistingFile);
        if (config_required) cfg->required();
        sub->add_option("--out", o.out, "output directory")->capture_default_str();
        sub->add_option("--seed", o.seed, "seed, overrides the configuration");
        sub->add_option("--grid-steps", o.grid_steps, "number of grid steps, overrides the configuration")
            ->check(CLI::PositiveNumber);
    };
    auto* flow = app.add_subcommand("flow", "integrate the flow and write the trajectory");
    auto* sense = app.add_subcommand("sense", "propagate a sensitivity element and its envelope");
    auto* adjoint = app.add_subcommand("adjoint", "solve the adjoint and report loss gradients");
    auto* optimize = app.add_subcommand("optimize", "run the stochastic subgradient method");
    auto* verify = app.add_subcommand("verify", "run a verification suite");
    for (auto* s : {flow, sense, adjoint, optimize}) common(s, true);
    common(verify, false);
    verify->add_option("--suite", o.suite, "counterexample, conservativity, agreement, fd-gradient, gronwall, optimizer or all")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : usage;
    }

    try {
        std::optional<Config> cfg;
        if (!o.config.empty()) cfg = tool::load_config(o.config, {o.seed, o.grid_steps});
        Output out(o.out, cfg ? cfg->hash : tool::fnv1a_hex(json{{"suite", o.suite}, {"seed", o.seed ? json(*o.seed) : json()}}.dump()));
        if (*flow) return cmd_flow(*cfg, out);
        if (*sense) return cmd_sense(*cfg, out);
        if (*adjoint) return cmd_adjoint(*cfg, out);
        if (*optimize) return cmd_optimize(*cfg, out);
        return cmd_verify(o, cfg, out);
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return diverged;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return usage;
    } catch (const EnumerationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return usage;
    }
}
