// Common types, errors and the time grid shared by every module.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nsode {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Raised for dimension mismatches, malformed inputs and violated preconditions.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an integration produces a non-finite value.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::string_view what, std::size_t step)
        : std::runtime_error(std::string(what) + " diverged at step " + std::to_string(step)),
          step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Raised when too many breakpoint atoms are active to enumerate extreme Jacobians.
class EnumerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Scheme { euler, rk4 };

inline std::string_view to_string(Scheme s) { return s == Scheme::euler ? "euler" : "rk4"; }

inline Scheme scheme_from_string(std::string_view name) {
    if (name == "euler") return Scheme::euler;
    if (name == "rk4") return Scheme::rk4;
    throw UsageError("unknown integration scheme '" + std::string(name) + "'");
}

/// Uniform grid t_i = i*h on [0, T], h = T/N.
class TimeGrid {
public:
    TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
        if (!(horizon > 0.0) || !std::isfinite(horizon))
            throw UsageError("time grid horizon must be positive and finite");
        if (steps == 0) throw UsageError("time grid needs at least one step");
    }

    double horizon() const noexcept { return horizon_; }
    std::size_t steps() const noexcept { return steps_; }
    std::size_t nodes() const noexcept { return steps_ + 1; }
    double step() const noexcept { return horizon_ / static_cast<double>(steps_); }
    double time(std::size_t i) const noexcept {
        return i == steps_ ? horizon_ : static_cast<double>(i) * step();
    }

    /// Trapezoidal weight of node i.
    double trapezoid_weight(std::size_t i) const noexcept {
        return (i == 0 || i == steps_) ? 0.5 * step() : step();
    }

    friend bool operator==(const TimeGrid& a, const TimeGrid& b) noexcept {
        return a.horizon_ == b.horizon_ && a.steps_ == b.steps_;
    }

private:
    double horizon_;
    std::size_t steps_;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw UsageError(message);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

} // namespace nsode
