// Acceptance criteria, one PASS/FAIL line each.
//
//   acceptance [c1 .. c7 | all] [--reports DIR]
//
// c1-c4 write their suite reports to DIR; c5 collects the bound checks from
// those reports and reruns a suite only when its report is missing.

#include "nsode/nsode.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

namespace v = nsode::verification;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool passed = false;
    std::string summary;
    std::vector<std::string> details;
};

fs::path reports_dir = "acceptance_reports";

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

double worst_ratio(const v::SuiteReport& r, const std::function<bool(const v::OracleReport&)>& keep) {
    double worst = 0.0;
    for (const auto& c : r.checks)
        if (keep(c)) worst = std::max(worst, c.tolerance > 0.0 ? c.discrepancy / c.tolerance : c.discrepancy);
    return worst;
}

void save(const std::string& tag, const v::SuiteReport& r) {
    fs::create_directories(reports_dir);
    std::ofstream(reports_dir / (tag + ".json")) << v::to_json(r).dump(1) << '\n';
}

std::optional<v::SuiteReport> load(const std::string& tag) {
    std::ifstream is(reports_dir / (tag + ".json"));
    if (!is) return std::nullopt;
    const json j = json::parse(is);
    v::SuiteReport r{j.at("suite").get<std::string>(), {}};
    for (const auto& c : j.at("checks")) {
        const double disc = c.at("discrepancy").is_number() ? c.at("discrepancy").get<double>()
                                                            : std::numeric_limits<double>::infinity();
        r.checks.push_back(v::OracleReport::make(c.at("id").get<std::string>(), disc, c.at("tolerance").get<double>(),
                                                 c.at("source").get<std::string>()));
    }
    return r;
}

// Suite with a wall-clock limit; every check must pass.
Outcome timed_suite(const std::string& tag, const std::string& title, double limit,
                    const std::function<v::SuiteReport()>& body) {
    const auto start = std::chrono::steady_clock::now();
    const v::SuiteReport r = body();
    const double elapsed = seconds_since(start);
    save(tag, r);
    Outcome o;
    o.passed = r.passed() && elapsed <= limit;
    o.summary = title + ": " + std::to_string(r.checks.size() - r.failures()) + "/" + std::to_string(r.checks.size()) +
                " checks, worst discrepancy/tolerance " + fmt(worst_ratio(r, [](const auto&) { return true; })) + ", " +
                fmt(elapsed) + " s (limit " + fmt(limit) + " s)";
    for (const auto& c : r.checks)
        if (!c.passed) o.details.push_back(c.id + ": " + fmt(c.discrepancy) + " > " + fmt(c.tolerance));
    if (elapsed > limit) o.details.push_back("time limit exceeded");
    return o;
}

Outcome c1() {
    return timed_suite("c1", "counterexample suite", 5.0, [] { return v::counterexample_suite(); });
}

Outcome c2() {
    return timed_suite("c2", "conservativity, 50 paths x 3 policies", 60.0, [] {
        v::SuiteReport r = v::conservativity_suite();
        // the criterion is about the path-integral identity; bound checks go to c5
        v::SuiteReport own{r.name, {}};
        for (const auto& c : r.checks)
            if (c.id.rfind("conservativity/", 0) == 0) own.checks.push_back(c);
        save("c2-full", r);
        return own;
    });
}

Outcome c3() {
    return timed_suite("c3", "forward/adjoint agreement, 20+20 problems", 30.0, [] {
        v::SuiteReport r = v::agreement_suite();
        v::SuiteReport own{r.name, {}};
        for (const auto& c : r.checks)
            if (c.id.rfind("agreement/", 0) == 0) own.checks.push_back(c);
        save("c3-full", r);
        return own;
    });
}

Outcome c4() {
    return timed_suite("c4", "adjoint vs finite differences, 100 points", 60.0, [] {
        v::SuiteReport r = v::fd_gradient_suite();
        v::SuiteReport own{r.name, {}};
        for (const auto& c : r.checks)
            if (c.id.rfind("fd-gradient/", 0) == 0) own.checks.push_back(c);
        save("c4-full", r);
        return own;
    });
}

bool is_bound_check(const v::OracleReport& c) {
    for (const char* prefix : {"gronwall/", "lipschitz/", "costate-bound/"})
        if (c.id.rfind(prefix, 0) == 0) return true;
    return false;
}

Outcome c5() {
    v::SuiteReport bounds{"bounds", {}};
    std::vector<std::string> rerun;
    const std::pair<const char*, std::function<v::SuiteReport()>> sources[] = {
        {"c1", [] { return v::counterexample_suite(); }},
        {"c2-full", [] { return v::conservativity_suite(); }},
        {"c3-full", [] { return v::agreement_suite(); }},
        {"c4-full", [] { return v::fd_gradient_suite(); }},
    };
    for (const auto& [tag, make] : sources) {
        std::optional<v::SuiteReport> r = load(tag);
        if (!r) {
            r = make();
            rerun.push_back(tag);
        }
        for (const auto& c : r->checks)
            if (is_bound_check(c)) bounds.checks.push_back(c);
    }
    bounds.append(v::gronwall_suite());
    Outcome o;
    o.passed = bounds.passed();
    o.summary = "Gronwall, flow Lipschitz and costate bounds (slack 1.05): " +
                std::to_string(bounds.checks.size() - bounds.failures()) + "/" + std::to_string(bounds.checks.size()) +
                " checks, worst ratio " + fmt(worst_ratio(bounds, is_bound_check));
    if (!rerun.empty()) o.summary += ", recomputed " + std::to_string(rerun.size()) + " suite(s)";
    for (const auto& c : bounds.checks)
        if (!c.passed) o.details.push_back(c.id + ": " + fmt(c.discrepancy) + " > " + fmt(c.tolerance));
    return o;
}

Outcome c6() {
    return timed_suite("c6", "optimizer convergence, criticality and accumulation", 120.0, [] { return v::optimizer_suite(); });
}

std::string jsonl_of_run() {
    const auto pr = v::kink_problem();
    const auto run = nsode::run(pr, Eigen::VectorXd::Constant(1, 0.3), nsode::StepSchedule::power(0.5, 0.7), 200,
                                nsode::PolicyStrategy::seeded_random(11));
    std::ostringstream os;
    nsode::write_jsonl(os, run);
    return os.str();
}

Outcome c7() {
    v::ConservativityOptions cons;
    cons.paths = 3;
    cons.pinned = 2;
    v::AgreementOptions agree;
    agree.problems = 4;
    v::FdGradientOptions fdg;
    fdg.points = 4;
    fdg.steps = 2000;
    const std::pair<const char*, std::function<std::string()>> outputs[] = {
        {"counterexample report", [] { return v::to_json(v::counterexample_suite()).dump(); }},
        {"conservativity report", [&] { return v::to_json(v::conservativity_suite(cons)).dump(); }},
        {"agreement report", [&] { return v::to_json(v::agreement_suite(agree)).dump(); }},
        {"fd-gradient report", [&] { return v::to_json(v::fd_gradient_suite(fdg)).dump(); }},
        {"optimizer log", jsonl_of_run},
    };
    Outcome o;
    o.passed = true;
    std::size_t bytes = 0;
    for (const auto& [name, make] : outputs) {
        const std::string a = make(), b = make();
        bytes += a.size();
        if (a != b) {
            o.passed = false;
            o.details.push_back(std::string(name) + " differs between runs");
        }
    }
    o.summary = "byte-identical reruns: " + std::to_string(std::size(outputs)) + " outputs, " + std::to_string(bytes) +
                " bytes compared";
    return o;
}

} // namespace

int main(int argc, char** argv) {
    const std::map<std::string, std::function<Outcome()>> criteria{
        {"c1", c1}, {"c2", c2}, {"c3", c3}, {"c4", c4}, {"c5", c5}, {"c6", c6}, {"c7", c7}};
    std::vector<std::string> selected;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--reports" && i + 1 < argc) {
            reports_dir = argv[++i];
        } else if (arg == "all") {
            for (const auto& [name, _] : criteria) selected.push_back(name);
        } else if (criteria.count(arg)) {
            selected.push_back(arg);
        } else {
            std::cerr << "usage: acceptance [c1..c7|all] [--reports DIR]\n";
            return 2;
        }
    }
    if (selected.empty())
        for (const auto& [name, _] : criteria) selected.push_back(name);

    bool all_passed = true;
    for (const auto& name : selected) {
        Outcome o;
        try {
            o = criteria.at(name)();
        } catch (const std::exception& e) {
            o.summary = std::string("error: ") + e.what();
        }
        all_passed = all_passed && o.passed;
        std::cout << (o.passed ? "PASS " : "FAIL ") << name << "  " << o.summary << '\n';
        for (const auto& d : o.details) std::cout << "     " << d << '\n';
        std::cout.flush();
    }
    return all_passed ? 0 : 1;
}
