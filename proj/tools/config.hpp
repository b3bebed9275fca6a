// Experiment configuration for the nsode tool: JSON with a fixed key set,
// errors reported with the line of the offending value.
#pragma once

#include "nsode/nsode.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

namespace nsode::tool {

using nlohmann::json;

/// Line numbers of every value in a JSON text, keyed by JSON pointer.
class LineIndex {
public:
    explicit LineIndex(const std::string& text) : text_(text) {
        skip_ws();
        if (pos_ < text_.size()) value("");
    }

    /// Line of the deepest recorded prefix of `pointer`, or 0.
    std::size_t line_of(std::string pointer) const {
        for (;;) {
            if (auto it = lines_.find(pointer); it != lines_.end()) return it->second;
            if (pointer.empty()) return 0;
            pointer.erase(pointer.rfind('/'));
        }
    }

private:
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            if (text_[pos_] == '\n') ++line_;
            ++pos_;
        }
    }

    std::string string_token() {
        std::string out;
        ++pos_;   // opening quote
        while (pos_ < text_.size() && text_[pos_] != '"') {
            if (text_[pos_] == '\\') ++pos_;
            if (pos_ < text_.size()) out += text_[pos_++];
        }
        ++pos_;
        return out;
    }

    static std::string escape(const std::string& key) {
        std::string out;
        for (char c : key) {
            if (c == '~') out += "~0";
            else if (c == '/') out += "~1";
            else out += c;
        }
        return out;
    }

    void value(const std::string& pointer) {
        lines_.emplace(pointer, line_);
        const char c = text_[pos_];
        if (c == '{') {
            ++pos_;
            skip_ws();
            while (pos_ < text_.size() && text_[pos_] != '}') {
                const std::string key = string_token();
                skip_ws();
                ++pos_;   // ':'
                skip_ws();
                value(pointer + "/" + escape(key));
                skip_ws();
                if (pos_ < text_.size() && text_[pos_] == ',') ++pos_;
                skip_ws();
            }
            ++pos_;
        } else if (c == '[') {
            ++pos_;
            skip_ws();
            for (std::size_t i = 0; pos_ < text_.size() && text_[pos_] != ']'; ++i) {
                value(pointer + "/" + std::to_string(i));
                skip_ws();
                if (pos_ < text_.size() && text_[pos_] == ',') ++pos_;
                skip_ws();
            }
            ++pos_;
        } else if (c == '"') {
            string_token();
        } else {
            while (pos_ < text_.size() && !std::strchr(",]} \t\r\n", text_[pos_])) ++pos_;
        }
    }

    const std::string& text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::map<std::string, std::size_t> lines_;
};

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct OptimizerConfig {
    std::size_t iterations = 2000;
    StepSchedule schedule = StepSchedule::power(0.5, 0.7);
    bool random_policies = false;
    std::size_t criticality_samples = 16;
    double radius = 0.05;
    double divergence_bound = 1e8;
};

struct Config {
    json raw;                 // effective configuration, overrides applied
    std::string hash;
    std::optional<ParametrizedField> field;
    Vector x0;
    Vector theta;
    std::optional<TimeGrid> grid;
    Scheme scheme = Scheme::euler;
    SelectionPolicy policy = SelectionPolicy::midpoint();
    std::vector<SelectionPolicy> envelope_policies;
    std::optional<CostSpec> cost;
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;
};

class ConfigError : public UsageError {
public:
    using UsageError::UsageError;
};

namespace detail {

class Reader {
public:
    Reader(const std::string& source, const LineIndex& lines) : source_(source), lines_(lines) {}

    [[noreturn]] void fail(const std::string& pointer, const std::string& message) const {
        const std::size_t line = lines_.line_of(pointer);
        std::string where = source_;
        if (line > 0) where += ":" + std::to_string(line);
        throw ConfigError(where + ": " + (pointer.empty() ? std::string("/") : pointer) + ": " + message);
    }

    void only(const json& obj, const std::string& pointer, std::initializer_list<const char*> allowed) const {
        if (!obj.is_object()) fail(pointer, "expected an object");
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            bool ok = false;
            for (const char* a : allowed) ok = ok || it.key() == a;
            if (!ok) fail(pointer + "/" + it.key(), "unknown key '" + it.key() + "'");
        }
    }

    double number(const json& j, const std::string& pointer) const {
        if (!j.is_number()) fail(pointer, "expected a number");
        return j.get<double>();
    }

    std::size_t count(const json& j, const std::string& pointer) const {
        if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0))
            fail(pointer, "expected a nonnegative integer");
        return j.get<std::size_t>();
    }

    Vector vector(const json& j, const std::string& pointer) const {
        if (!j.is_array()) fail(pointer, "expected an array of numbers");
        Vector v(static_cast<Eigen::Index>(j.size()));
        for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], pointer + "/" + std::to_string(i));
        return v;
    }

    /// Field errors name their location as field.nodes[3]; map that onto the pointer.
    Field field(const json& j, const std::string& pointer) const {
        try {
            return field_from_json(j);
        } catch (const UsageError& e) {
            const std::string msg = e.what();
            const auto colon = msg.find(": ");
            if (colon != std::string::npos && msg.rfind("field", 0) == 0) {
                std::string path = msg.substr(5, colon - 5);
                for (char& c : path)
                    if (c == '.' || c == '[') c = '/';
                path.erase(std::remove(path.begin(), path.end(), ']'), path.end());
                fail(pointer + path, msg.substr(colon + 2));
            }
            fail(pointer, msg);
        }
    }

    SelectionPolicy policy(const json& j, const std::string& pointer, std::uint64_t default_seed) const {
        if (j.is_string()) return policy(json{{"mode", j}}, pointer, default_seed);
        only(j, pointer, {"mode", "seed", "coordinates", "eps"});
        if (!j.contains("mode") || !j["mode"].is_string()) fail(pointer, "policy needs a string 'mode'");
        const std::string mode = j["mode"].get<std::string>();
        const double eps = j.contains("eps") ? number(j["eps"], pointer + "/eps") : SelectionPolicy::default_breakpoint_tolerance;
        if (eps < 0.0) fail(pointer + "/eps", "must be nonnegative");
        if (mode != "seeded-random" && j.contains("seed")) fail(pointer + "/seed", "only seeded-random policies take a seed");
        if (mode != "fixed" && j.contains("coordinates")) fail(pointer + "/coordinates", "only fixed policies take coordinates");
        if (mode == "midpoint") return SelectionPolicy::midpoint(eps);
        if (mode == "left-extreme") return SelectionPolicy::left_extreme(eps);
        if (mode == "right-extreme") return SelectionPolicy::right_extreme(eps);
        if (mode == "seeded-random")
            return SelectionPolicy::seeded_random(j.contains("seed") ? count(j["seed"], pointer + "/seed") : default_seed, eps);
        if (mode == "fixed") {
            if (!j.contains("coordinates")) fail(pointer, "fixed policy needs 'coordinates'");
            const Vector c = vector(j["coordinates"], pointer + "/coordinates");
            for (Eigen::Index i = 0; i < c.size(); ++i)
                if (c(i) < 0.0 || c(i) > 1.0) fail(pointer + "/coordinates/" + std::to_string(i), "selector must lie in [0, 1]");
            return SelectionPolicy::fixed(SelectorCoordinates(c.data(), c.data() + c.size()), eps);
        }
        fail(pointer + "/mode", "unknown policy mode '" + mode + "'");
    }

private:
    std::string source_;
    const LineIndex& lines_;
};

} // namespace detail

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> grid_steps;
};

/// Parses and validates a configuration text. `source` names it in messages.
inline Config parse_config(const std::string& text, const std::string& source, const Overrides& overrides = {}) {
    json raw;
    try {
        raw = json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::string what = e.what();
        if (auto p = what.find("syntax error"); p != std::string::npos) what = what.substr(p);
        throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON: " + what);
    }
    const LineIndex lines(text);
    const detail::Reader rd(source, lines);
    rd.only(raw, "", {"field", "state_dim", "x0", "theta", "horizon", "steps", "scheme", "policy", "envelope_policies",
                      "cost", "optimizer", "seed"});

    if (overrides.seed) raw["seed"] = *overrides.seed;
    if (overrides.grid_steps) raw["steps"] = *overrides.grid_steps;

    Config cfg;
    cfg.seed = raw.contains("seed") ? rd.count(raw["seed"], "/seed") : 0;

    if (raw.contains("field")) {
        const Field f = rd.field(raw["field"], "/field");
        const std::size_t p = raw.contains("state_dim") ? rd.count(raw["state_dim"], "/state_dim") : f.output_dim();
        if (p != f.output_dim()) rd.fail("/state_dim", "field output dimension is " + std::to_string(f.output_dim()));
        if (p > f.input_dim()) rd.fail("/state_dim", "exceeds the field input dimension");
        cfg.field.emplace(f, p);
    } else if (raw.contains("state_dim")) {
        rd.fail("/state_dim", "given without a field");
    }

    if (raw.contains("x0")) cfg.x0 = rd.vector(raw["x0"], "/x0");
    if (raw.contains("theta")) cfg.theta = rd.vector(raw["theta"], "/theta");
    if (cfg.field) {
        if (!raw.contains("x0")) rd.fail("", "missing key 'x0'");
        if (static_cast<std::size_t>(cfg.x0.size()) != cfg.field->state_dim())
            rd.fail("/x0", "has " + std::to_string(cfg.x0.size()) + " entries, state dimension is " +
                               std::to_string(cfg.field->state_dim()));
        if (static_cast<std::size_t>(cfg.theta.size()) != cfg.field->param_dim())
            rd.fail(raw.contains("theta") ? "/theta" : "", "field expects " + std::to_string(cfg.field->param_dim()) +
                                                               " parameters, got " + std::to_string(cfg.theta.size()));
    }

    if (raw.contains("horizon") || raw.contains("steps")) {
        if (!raw.contains("horizon")) rd.fail("", "missing key 'horizon'");
        if (!raw.contains("steps")) rd.fail("", "missing key 'steps'");
        const double horizon = rd.number(raw["horizon"], "/horizon");
        const std::size_t steps = rd.count(raw["steps"], "/steps");
        if (!(horizon > 0.0) || !std::isfinite(horizon)) rd.fail("/horizon", "must be positive");
        if (steps == 0) rd.fail("/steps", "must be positive");
        cfg.grid.emplace(horizon, steps);
    }

    if (raw.contains("scheme")) {
        if (!raw["scheme"].is_string()) rd.fail("/scheme", "expected \"euler\" or \"rk4\"");
        try {
            cfg.scheme = scheme_from_string(raw["scheme"].get<std::string>());
        } catch (const UsageError& e) {
            rd.fail("/scheme", e.what());
        }
    }

    if (raw.contains("policy")) cfg.policy = rd.policy(raw["policy"], "/policy", cfg.seed);
    if (raw.contains("envelope_policies")) {
        const json& list = raw["envelope_policies"];
        if (!list.is_array() || list.empty()) rd.fail("/envelope_policies", "expected a nonempty array of policies");
        for (std::size_t i = 0; i < list.size(); ++i)
            cfg.envelope_policies.push_back(rd.policy(list[i], "/envelope_policies/" + std::to_string(i), cfg.seed + i));
    } else {
        cfg.envelope_policies = {SelectionPolicy::left_extreme(), SelectionPolicy::right_extreme(), SelectionPolicy::midpoint()};
    }

    if (raw.contains("cost")) {
        const json& c = raw["cost"];
        rd.only(c, "/cost", {"running", "terminal"});
        if (!cfg.grid) rd.fail("/cost", "a cost needs 'horizon' and 'steps'");
        std::optional<Field> running, terminal;
        if (c.contains("running")) running = rd.field(c["running"], "/cost/running");
        if (c.contains("terminal")) terminal = rd.field(c["terminal"], "/cost/terminal");
        if (!running && !terminal) rd.fail("/cost", "needs 'running' or 'terminal'");
        for (const auto& [part, f] : {std::pair{"running", running}, std::pair{"terminal", terminal}}) {
            if (!f) continue;
            const std::string ptr = std::string("/cost/") + part;
            if (f->output_dim() != 1) rd.fail(ptr, "cost must have output dimension 1");
            if (cfg.field && f->input_dim() != cfg.field->state_dim())
                rd.fail(ptr, "cost input dimension " + std::to_string(f->input_dim()) + " differs from state dimension " +
                                 std::to_string(cfg.field->state_dim()));
        }
        cfg.cost.emplace(running, terminal, *cfg.grid);
    }

    if (raw.contains("optimizer")) {
        const json& o = raw["optimizer"];
        rd.only(o, "/optimizer", {"iterations", "schedule", "strategy", "criticality_samples", "radius", "divergence_bound"});
        auto& oc = cfg.optimizer;
        if (o.contains("iterations")) oc.iterations = rd.count(o["iterations"], "/optimizer/iterations");
        if (oc.iterations == 0) rd.fail("/optimizer/iterations", "must be positive");
        if (o.contains("schedule")) {
            const json& s = o["schedule"];
            rd.only(s, "/optimizer/schedule", {"kind", "alpha0", "beta"});
            const std::string kind = s.contains("kind") && s["kind"].is_string() ? s["kind"].get<std::string>() : "power";
            const double a0 = s.contains("alpha0") ? rd.number(s["alpha0"], "/optimizer/schedule/alpha0") : 0.5;
            try {
                if (kind == "power") {
                    oc.schedule = StepSchedule::power(a0, s.contains("beta") ? rd.number(s["beta"], "/optimizer/schedule/beta") : 0.7);
                } else if (kind == "constant") {
                    if (s.contains("beta")) rd.fail("/optimizer/schedule/beta", "constant schedules take no exponent");
                    oc.schedule = StepSchedule::constant(a0);
                } else {
                    rd.fail("/optimizer/schedule/kind", "expected \"power\" or \"constant\"");
                }
            } catch (const ConfigError&) {
                throw;
            } catch (const UsageError& e) {
                rd.fail("/optimizer/schedule", e.what());
            }
        }
        if (o.contains("strategy")) {
            const json& s = o["strategy"];
            if (s == "fixed") oc.random_policies = false;
            else if (s == "seeded-random") oc.random_policies = true;
            else rd.fail("/optimizer/strategy", "expected \"fixed\" or \"seeded-random\"");
        }
        if (o.contains("criticality_samples"))
            oc.criticality_samples = rd.count(o["criticality_samples"], "/optimizer/criticality_samples");
        if (o.contains("radius")) oc.radius = rd.number(o["radius"], "/optimizer/radius");
        if (!(oc.radius > 0.0)) rd.fail("/optimizer/radius", "must be positive");
        if (o.contains("divergence_bound")) oc.divergence_bound = rd.number(o["divergence_bound"], "/optimizer/divergence_bound");
        if (!(oc.divergence_bound > 0.0)) rd.fail("/optimizer/divergence_bound", "must be positive");
    }

    cfg.raw = raw;
    cfg.hash = fnv1a_hex(raw.dump());
    return cfg;
}

inline Config load_config(const std::string& path, const Overrides& overrides = {}) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError(path + ": cannot open configuration file");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path, overrides);
}

} // namespace nsode::tool
