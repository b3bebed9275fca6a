// Deterministic rules for picking one element of a set-valued Jacobian.
#pragma once

#include "nsode/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nsode {

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) noexcept {
    return mix64(seed ^ (value + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

/// Points are quantized on a 1e-9 lattice before hashing so that
/// the forward and backward passes key identical selections.
inline std::uint64_t quantize(double v) noexcept {
    if (!std::isfinite(v)) return 0x7ff8000000000000ULL;
    const double scaled = std::clamp(v * 1e9, -9.0e18, 9.0e18);
    return static_cast<std::uint64_t>(std::llround(scaled));
}

inline double unit_interval(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

} // namespace detail

/// Convex-combination weights in [0,1], one per nonsmooth atom occurrence.
/// Weight 0 selects the left one-sided derivative, 1 the right one.
using SelectorCoordinates = std::vector<double>;

class SelectionPolicy {
public:
    enum class Mode { fixed, left_extreme, right_extreme, midpoint, seeded_random };

    static constexpr double default_breakpoint_tolerance = 1e-12;

    static SelectionPolicy midpoint(double eps = default_breakpoint_tolerance) {
        return SelectionPolicy(Mode::midpoint, {}, 0, eps);
    }
    static SelectionPolicy left_extreme(double eps = default_breakpoint_tolerance) {
        return SelectionPolicy(Mode::left_extreme, {}, 0, eps);
    }
    static SelectionPolicy right_extreme(double eps = default_breakpoint_tolerance) {
        return SelectionPolicy(Mode::right_extreme, {}, 0, eps);
    }
    static SelectionPolicy seeded_random(std::uint64_t seed, double eps = default_breakpoint_tolerance) {
        return SelectionPolicy(Mode::seeded_random, {}, seed, eps);
    }
    static SelectionPolicy fixed(SelectorCoordinates coords, double eps = default_breakpoint_tolerance) {
        for (double c : coords)
            require(c >= 0.0 && c <= 1.0, "selector coordinates must lie in [0,1]");
        return SelectionPolicy(Mode::fixed, std::move(coords), 0, eps);
    }

    SelectionPolicy() : SelectionPolicy(Mode::midpoint, {}, 0, default_breakpoint_tolerance) {}

    Mode mode() const noexcept { return mode_; }
    std::uint64_t seed() const noexcept { return seed_; }
    double breakpoint_tolerance() const noexcept { return eps_; }
    const SelectorCoordinates& coordinates() const noexcept { return coords_; }

    /// True for the modes that pick a vertex of the Jacobian set by enumeration.
    bool is_extreme() const noexcept {
        return mode_ == Mode::left_extreme || mode_ == Mode::right_extreme;
    }

    /// Hash of the evaluation point and time key, used by seeded_random.
    std::uint64_t point_key(std::span<const double> x, std::int64_t time_key) const noexcept {
        std::uint64_t h = detail::mix64(seed_);
        h = detail::hash_combine(h, static_cast<std::uint64_t>(time_key));
        for (double v : x) h = detail::hash_combine(h, detail::quantize(v));
        return h;
    }

    /// Selector for one atom occurrence. Not meaningful for the extreme modes.
    double selector(std::size_t occurrence, std::uint64_t point_hash) const {
        switch (mode_) {
        case Mode::midpoint: return 0.5;
        case Mode::left_extreme: return 0.0;
        case Mode::right_extreme: return 1.0;
        case Mode::fixed:
            if (occurrence >= coords_.size())
                throw UsageError("fixed selection policy has " + std::to_string(coords_.size()) +
                                 " coordinates, occurrence " + std::to_string(occurrence) + " requested");
            return coords_[occurrence];
        case Mode::seeded_random:
            return detail::unit_interval(detail::hash_combine(point_hash, occurrence + 1));
        }
        return 0.5;
    }

private:
    SelectionPolicy(Mode m, SelectorCoordinates c, std::uint64_t seed, double eps)
        : mode_(m), coords_(std::move(c)), seed_(seed), eps_(eps) {
        require(eps >= 0.0, "breakpoint tolerance must be nonnegative");
    }

    Mode mode_;
    SelectorCoordinates coords_;
    std::uint64_t seed_;
    double eps_;
};

inline std::string_view to_string(SelectionPolicy::Mode m) {
    switch (m) {
    case SelectionPolicy::Mode::fixed: return "fixed";
    case SelectionPolicy::Mode::left_extreme: return "left-extreme";
    case SelectionPolicy::Mode::right_extreme: return "right-extreme";
    case SelectionPolicy::Mode::midpoint: return "midpoint";
    case SelectionPolicy::Mode::seeded_random: return "seeded-random";
    }
    return "midpoint";
}

} // namespace nsode
