// Lipschitz, path-differentiable vector fields built from affine maps and
// piecewise-smooth atoms, with a conservative-Jacobian oracle.
//
// A field is an immutable directed acyclic graph. Each nonsmooth atom
// component is an "occurrence" with a global index; at a breakpoint its
// derivative is the convex combination (1-s)*left + s*right of its one-sided
// derivatives, where s is supplied by a SelectionPolicy. Set-valued
// Jacobians are never materialized: callers get one element per query, or
// the 2^a vertices through jacobian_extremes().
#pragma once

#include "nsode/core.hpp"
#include "nsode/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nsode {

enum class AtomKind { abs, relu, max2, min2, identity, tanh, sin, cos, polynomial };

inline bool is_nonsmooth(AtomKind k) noexcept {
    return k == AtomKind::abs || k == AtomKind::relu || k == AtomKind::max2 || k == AtomKind::min2;
}

inline bool is_binary(AtomKind k) noexcept { return k == AtomKind::max2 || k == AtomKind::min2; }

inline std::string_view to_string(AtomKind k) {
    switch (k) {
    case AtomKind::abs: return "abs";
    case AtomKind::relu: return "relu";
    case AtomKind::max2: return "max2";
    case AtomKind::min2: return "min2";
    case AtomKind::identity: return "identity";
    case AtomKind::tanh: return "tanh";
    case AtomKind::sin: return "sin";
    case AtomKind::cos: return "cos";
    case AtomKind::polynomial: return "polynomial";
    }
    return "identity";
}

inline std::optional<AtomKind> atom_from_string(std::string_view name) {
    for (AtomKind k : {AtomKind::abs, AtomKind::relu, AtomKind::max2, AtomKind::min2, AtomKind::identity,
                       AtomKind::tanh, AtomKind::sin, AtomKind::cos, AtomKind::polynomial})
        if (to_string(k) == name) return k;
    return std::nullopt;
}

namespace detail {

enum class NodeOp { input, affine, atom, mul, sum, concat };

struct Node {
    NodeOp op = NodeOp::input;
    AtomKind atom = AtomKind::identity;
    std::vector<std::size_t> inputs;
    std::size_t dim = 0;
    std::size_t value_offset = 0;
    std::size_t jac_offset = 0;
    Matrix matrix;                        // affine
    Vector offset;                        // affine
    std::vector<double> coefficients;     // polynomial, ascending powers
    std::size_t first_occurrence = 0;     // nonsmooth atoms
    double bound = 0.0;                   // Jacobian operator-norm bound w.r.t. the field input
};

struct Graph {
    std::size_t input_dim = 0;
    std::vector<Node> nodes;
    std::size_t output = 0;
    std::size_t value_size = 0;
    std::size_t occurrences = 0;
    double lipschitz_bound = std::numeric_limits<double>::infinity();
    bool declared_bound = false;
};

inline double atom_slope_bound(AtomKind k, const std::vector<double>& coeffs) {
    switch (k) {
    case AtomKind::abs:
    case AtomKind::relu:
    case AtomKind::identity:
    case AtomKind::tanh:
    case AtomKind::sin:
    case AtomKind::cos: return 1.0;
    case AtomKind::polynomial:
        if (coeffs.size() <= 1) return 0.0;
        if (coeffs.size() == 2 || std::all_of(coeffs.begin() + 2, coeffs.end(), [](double c) { return c == 0.0; }))
            return std::abs(coeffs[1]);
        return std::numeric_limits<double>::infinity();
    default: return 1.0;
    }
}

inline double scaled_bound(double factor, double k) {
    if (factor == 0.0 || k == 0.0) return 0.0;
    return factor * k;
}

inline double spectral_norm(const Matrix& a) {
    if (a.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(a);
    return svd.singularValues()(0);
}

} // namespace detail

struct NodeId {
    std::size_t index = 0;
};

class FieldEvaluator;
class FieldBuilder;

/// Immutable path-differentiable map R^n -> R^d. Cheap to copy.
class Field {
public:
    Field() = default;

    std::size_t input_dim() const noexcept { return graph_->input_dim; }
    std::size_t output_dim() const noexcept { return graph_->nodes[graph_->output].dim; }

    /// Number of nonsmooth atom components, i.e. the length of SelectorCoordinates.
    std::size_t nonsmooth_occurrences() const noexcept { return graph_->occurrences; }

    /// Operator-norm bound K on every Jacobian element; +inf when unknown.
    double lipschitz_bound() const noexcept { return graph_->lipschitz_bound; }
    bool has_declared_bound() const noexcept { return graph_->declared_bound; }

    /// Copy of this field with K replaced by a user-declared bound, valid on
    /// the domain where the field is used.
    Field with_lipschitz_bound(double k) const {
        require(k > 0.0, "declared Lipschitz bound must be positive");
        auto g = std::make_shared<detail::Graph>(*graph_);
        g->lipschitz_bound = k;
        g->declared_bound = true;
        return Field(std::move(g));
    }

    Vector eval(const Vector& x) const;
    Matrix jacobian_element(const Vector& x, const SelectionPolicy& policy, std::int64_t time_key = 0) const;
    std::vector<Matrix> jacobian_extremes(const Vector& x,
                                          double eps = SelectionPolicy::default_breakpoint_tolerance,
                                          std::size_t cap = 10) const;
    std::size_t active_breakpoints(const Vector& x,
                                   double eps = SelectionPolicy::default_breakpoint_tolerance) const;

    const detail::Graph& graph() const noexcept { return *graph_; }

private:
    friend class FieldBuilder;
    explicit Field(std::shared_ptr<const detail::Graph> g) : graph_(std::move(g)) {}

    std::shared_ptr<const detail::Graph> graph_;
};

/// Scalar costs (l, l_T, delta, delta_T) are fields with output dimension 1.
using ScalarCost = Field;

class FieldBuilder {
public:
    explicit FieldBuilder(std::size_t input_dim) {
        require(input_dim > 0, "field input dimension must be positive");
        graph_.input_dim = input_dim;
        detail::Node in;
        in.op = detail::NodeOp::input;
        in.dim = input_dim;
        in.bound = 1.0;
        push(std::move(in));
    }

    NodeId input() const noexcept { return NodeId{0}; }
    std::size_t dim(NodeId n) const { return node(n).dim; }

    NodeId affine(NodeId in, Matrix a, Vector b = Vector()) {
        const auto& src = node(in);
        require(static_cast<std::size_t>(a.cols()) == src.dim,
                "affine node: matrix has " + std::to_string(a.cols()) + " columns, input has dimension " +
                    std::to_string(src.dim));
        require(a.rows() > 0, "affine node needs at least one row");
        if (b.size() == 0) b = Vector::Zero(a.rows());
        require(b.size() == a.rows(), "affine node: offset length differs from matrix rows");
        detail::Node n;
        n.op = detail::NodeOp::affine;
        n.inputs = {in.index};
        n.dim = static_cast<std::size_t>(a.rows());
        n.bound = detail::scaled_bound(detail::spectral_norm(a), src.bound);
        n.matrix = std::move(a);
        n.offset = std::move(b);
        return push(std::move(n));
    }

    NodeId constant(const Vector& c) {
        require(c.size() > 0, "constant node needs a nonempty value");
        return affine(input(), Matrix::Zero(c.size(), static_cast<Eigen::Index>(graph_.input_dim)), c);
    }

    /// Picks component `index` of node `in` as a one-dimensional node.
    NodeId component(NodeId in, std::size_t index) {
        const std::size_t d = dim(in);
        require(index < d, "component index out of range");
        Matrix a = Matrix::Zero(1, static_cast<Eigen::Index>(d));
        a(0, static_cast<Eigen::Index>(index)) = 1.0;
        return affine(in, std::move(a));
    }

    NodeId atom(AtomKind kind, NodeId in, std::vector<double> coefficients = {}) {
        require(!is_binary(kind), std::string("atom '") + std::string(to_string(kind)) + "' takes two inputs");
        require(kind != AtomKind::polynomial || !coefficients.empty(), "polynomial atom needs coefficients");
        const auto& src = node(in);
        detail::Node n;
        n.op = detail::NodeOp::atom;
        n.atom = kind;
        n.inputs = {in.index};
        n.dim = src.dim;
        n.bound = detail::scaled_bound(detail::atom_slope_bound(kind, coefficients), src.bound);
        n.coefficients = std::move(coefficients);
        if (is_nonsmooth(kind)) {
            n.first_occurrence = graph_.occurrences;
            graph_.occurrences += n.dim;
        }
        return push(std::move(n));
    }

    NodeId atom(AtomKind kind, NodeId a, NodeId b) {
        require(is_binary(kind), std::string("atom '") + std::string(to_string(kind)) + "' takes one input");
        const auto& na = node(a);
        const auto& nb = node(b);
        require(na.dim == nb.dim, "max2/min2 operands must have equal dimension");
        detail::Node n;
        n.op = detail::NodeOp::atom;
        n.atom = kind;
        n.inputs = {a.index, b.index};
        n.dim = na.dim;
        n.bound = std::hypot(na.bound, nb.bound);
        n.first_occurrence = graph_.occurrences;
        graph_.occurrences += n.dim;
        return push(std::move(n));
    }

    /// Elementwise product; a one-dimensional operand is broadcast.
    NodeId mul(NodeId a, NodeId b) {
        const auto& na = node(a);
        const auto& nb = node(b);
        require(na.dim == nb.dim || na.dim == 1 || nb.dim == 1, "mul operands must have equal dimension");
        detail::Node n;
        n.op = detail::NodeOp::mul;
        n.inputs = {a.index, b.index};
        n.dim = std::max(na.dim, nb.dim);
        n.bound = (na.bound == 0.0 && nb.bound == 0.0) ? 0.0 : std::numeric_limits<double>::infinity();
        return push(std::move(n));
    }

    NodeId sum(const std::vector<NodeId>& terms) {
        require(!terms.empty(), "sum needs at least one term");
        detail::Node n;
        n.op = detail::NodeOp::sum;
        n.dim = node(terms.front()).dim;
        for (NodeId t : terms) {
            require(node(t).dim == n.dim, "sum terms must have equal dimension");
            n.inputs.push_back(t.index);
            n.bound += node(t).bound;
        }
        return push(std::move(n));
    }

    NodeId concat(const std::vector<NodeId>& parts) {
        require(!parts.empty(), "concat needs at least one part");
        detail::Node n;
        n.op = detail::NodeOp::concat;
        double sq = 0.0;
        for (NodeId p : parts) {
            n.inputs.push_back(p.index);
            n.dim += node(p).dim;
            sq += node(p).bound * node(p).bound;
        }
        n.bound = std::sqrt(sq);
        return push(std::move(n));
    }

    /// Splices `f` into this graph with its input wired to `in`; returns f's output.
    NodeId embed(const Field& f, NodeId in) {
        const auto& g = f.graph();
        require(g.input_dim == dim(in), "embedded field input dimension " + std::to_string(g.input_dim) +
                                            " does not match node dimension " + std::to_string(dim(in)));
        std::vector<std::size_t> remap(g.nodes.size());
        remap[0] = in.index;
        const std::size_t occ_base = graph_.occurrences;
        for (std::size_t i = 1; i < g.nodes.size(); ++i) {
            detail::Node n = g.nodes[i];
            for (auto& j : n.inputs) j = remap[j];
            if (n.op == detail::NodeOp::atom && is_nonsmooth(n.atom)) n.first_occurrence += occ_base;
            remap[i] = push(std::move(n)).index;
        }
        graph_.occurrences += g.occurrences;
        rebound_from(g.nodes.size() > 1 ? remap[1] : in.index);
        NodeId out{remap[g.output]};
        if (f.has_declared_bound()) graph_.nodes[out.index].bound = detail::scaled_bound(g.lipschitz_bound, node(in).bound);
        return out;
    }

    Field build(NodeId output, std::optional<double> declared_bound = std::nullopt) const {
        auto g = std::make_shared<detail::Graph>(graph_);
        require(output.index < g->nodes.size(), "unknown output node");
        g->output = output.index;
        if (declared_bound) {
            require(*declared_bound > 0.0, "declared Lipschitz bound must be positive");
            g->lipschitz_bound = *declared_bound;
            g->declared_bound = true;
        } else {
            g->lipschitz_bound = g->nodes[output.index].bound;
            g->declared_bound = false;
        }
        return Field(std::move(g));
    }

private:
    const detail::Node& node(NodeId n) const {
        require(n.index < graph_.nodes.size(), "unknown node id");
        return graph_.nodes[n.index];
    }

    NodeId push(detail::Node n) {
        n.value_offset = graph_.value_size;
        graph_.value_size += n.dim;
        graph_.nodes.push_back(std::move(n));
        return NodeId{graph_.nodes.size() - 1};
    }

    // Recompute propagated bounds of spliced nodes, whose stored bounds were
    // relative to the embedded field's own input.
    void rebound_from(std::size_t first) {
        for (std::size_t i = first; i < graph_.nodes.size(); ++i) {
            auto& n = graph_.nodes[i];
            auto in_bound = [&](std::size_t k) { return graph_.nodes[n.inputs[k]].bound; };
            switch (n.op) {
            case detail::NodeOp::input: break;
            case detail::NodeOp::affine: n.bound = detail::scaled_bound(detail::spectral_norm(n.matrix), in_bound(0)); break;
            case detail::NodeOp::atom:
                n.bound = is_binary(n.atom) ? std::hypot(in_bound(0), in_bound(1))
                                            : detail::scaled_bound(detail::atom_slope_bound(n.atom, n.coefficients), in_bound(0));
                break;
            case detail::NodeOp::mul:
                n.bound = (in_bound(0) == 0.0 && in_bound(1) == 0.0) ? 0.0 : std::numeric_limits<double>::infinity();
                break;
            case detail::NodeOp::sum:
                n.bound = 0.0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) n.bound += in_bound(k);
                break;
            case detail::NodeOp::concat: {
                double sq = 0.0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) sq += in_bound(k) * in_bound(k);
                n.bound = std::sqrt(sq);
                break;
            }
            }
        }
    }

    detail::Graph graph_;
};

/// Evaluation workspace bound to one field. Not thread-safe; create one per thread.
class FieldEvaluator {
public:
    explicit FieldEvaluator(const Field& f)
        : field_(f), g_(&f.graph()), values_(g_->value_size), jac_offsets_(g_->nodes.size()),
          selectors_(g_->occurrences, 0.0) {
        std::size_t total = 0;
        for (std::size_t i = 0; i < g_->nodes.size(); ++i) {
            jac_offsets_[i] = total;
            total += g_->nodes[i].dim * g_->input_dim;
        }
        jac_.resize(total);
    }

    const Field& field() const noexcept { return field_; }

    /// F(x) into `out`.
    void value(std::span<const double> x, std::span<double> out) {
        check_input(x.size());
        forward<false>(x.data(), [](std::size_t) { return 0.5; }, 0.0);
        const auto& o = g_->nodes[g_->output];
        std::copy_n(values_.data() + o.value_offset, o.dim, out.data());
    }

    Vector value(const Vector& x) {
        Vector out(static_cast<Eigen::Index>(field_.output_dim()));
        value(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())),
              std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
        return out;
    }

    /// One element of the conservative Jacobian at x chosen by `policy`.
    /// `time_key` feeds the seeded-random hash. Optionally writes F(x) to `value_out`.
    void jacobian(std::span<const double> x, const SelectionPolicy& policy, std::int64_t time_key,
                  Eigen::Ref<Matrix> out, double* value_out = nullptr) {
        check_input(x.size());
        const double eps = policy.breakpoint_tolerance();
        if (policy.is_extreme()) {
            jacobian_extreme(x, policy, out);
        } else {
            bool hashed = false;
            std::uint64_t key = 0;
            forward<true>(
                x.data(),
                [&](std::size_t occ) {
                    if (!hashed) {
                        key = policy.point_key(x, time_key);
                        hashed = true;
                    }
                    return policy.selector(occ, key);
                },
                eps);
            copy_output_jacobian(out);
        }
        if (value_out) {
            const auto& o = g_->nodes[g_->output];
            std::copy_n(values_.data() + o.value_offset, o.dim, value_out);
        }
    }

    Matrix jacobian(const Vector& x, const SelectionPolicy& policy, std::int64_t time_key = 0) {
        Matrix out(static_cast<Eigen::Index>(field_.output_dim()), static_cast<Eigen::Index>(field_.input_dim()));
        jacobian(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), policy, time_key, out);
        return out;
    }

    /// Jacobian with explicit selector values for every occurrence.
    Matrix jacobian_with_selectors(const Vector& x, std::span<const double> selectors, double eps) {
        check_input(static_cast<std::size_t>(x.size()));
        require(selectors.size() == g_->occurrences, "selector count does not match nonsmooth occurrences");
        forward<true>(x.data(), [&](std::size_t occ) { return selectors[occ]; }, eps);
        Matrix out(static_cast<Eigen::Index>(field_.output_dim()), static_cast<Eigen::Index>(field_.input_dim()));
        copy_output_jacobian(out);
        return out;
    }

    /// Occurrences within eps of their breakpoint at x.
    const std::vector<std::size_t>& active_occurrences(std::span<const double> x, double eps) {
        check_input(x.size());
        forward<false>(x.data(), [](std::size_t) { return 0.5; }, eps);
        return active_;
    }

    std::vector<Matrix> extremes(const Vector& x, double eps, std::size_t cap) {
        std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
        const std::vector<std::size_t> active = active_occurrences(xs, eps);
        if (active.size() > cap)
            throw EnumerationError(std::to_string(active.size()) + " active breakpoint atoms exceed the enumeration cap of " +
                                   std::to_string(cap));
        std::vector<Matrix> result;
        const std::size_t count = std::size_t{1} << active.size();
        result.reserve(count);
        for (std::size_t mask = 0; mask < count; ++mask) {
            std::fill(selectors_.begin(), selectors_.end(), 0.5);
            for (std::size_t b = 0; b < active.size(); ++b) selectors_[active[b]] = ((mask >> b) & 1U) ? 1.0 : 0.0;
            forward<true>(x.data(), [&](std::size_t occ) { return selectors_[occ]; }, eps);
            Matrix m(static_cast<Eigen::Index>(field_.output_dim()), static_cast<Eigen::Index>(field_.input_dim()));
            copy_output_jacobian(m);
            result.push_back(std::move(m));
        }
        return result;
    }

private:
    void check_input(std::size_t n) const {
        if (n != g_->input_dim)
            throw UsageError("field expects input of dimension " + std::to_string(g_->input_dim) + ", got " +
                             std::to_string(n));
    }

    void copy_output_jacobian(Eigen::Ref<Matrix> out) const {
        const auto& o = g_->nodes[g_->output];
        const std::size_t n = g_->input_dim;
        const double* j = jac_.data() + jac_offsets_[g_->output];
        for (std::size_t r = 0; r < o.dim; ++r)
            for (std::size_t c = 0; c < n; ++c)
                out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r * n + c];
    }

    // Lexicographic (row-major) minimum or maximum over the vertex set.
    void jacobian_extreme(std::span<const double> x, const SelectionPolicy& policy, Eigen::Ref<Matrix> out) {
        const double eps = policy.breakpoint_tolerance();
        forward<true>(x.data(), [](std::size_t) { return 0.0; }, eps);
        if (active_.empty()) {
            copy_output_jacobian(out);
            return;
        }
        const std::vector<std::size_t> active = active_;
        if (active.size() > 20)
            throw EnumerationError("too many active breakpoint atoms for extreme selection");
        const bool want_max = policy.mode() == SelectionPolicy::Mode::right_extreme;
        Matrix best, candidate(out.rows(), out.cols());
        const std::size_t count = std::size_t{1} << active.size();
        for (std::size_t mask = 0; mask < count; ++mask) {
            std::fill(selectors_.begin(), selectors_.end(), 0.5);
            for (std::size_t b = 0; b < active.size(); ++b) selectors_[active[b]] = ((mask >> b) & 1U) ? 1.0 : 0.0;
            forward<true>(x.data(), [&](std::size_t occ) { return selectors_[occ]; }, eps);
            copy_output_jacobian(candidate);
            if (mask == 0 || lexicographic_better(candidate, best, want_max)) best = candidate;
        }
        out = best;
        // leave values_ consistent with x for callers reading F(x)
    }

    static bool lexicographic_better(const Matrix& a, const Matrix& b, bool want_max) {
        for (Eigen::Index r = 0; r < a.rows(); ++r)
            for (Eigen::Index c = 0; c < a.cols(); ++c) {
                if (a(r, c) == b(r, c)) continue;
                return want_max ? a(r, c) > b(r, c) : a(r, c) < b(r, c);
            }
        return false;
    }

    template <bool WithJacobian, class SelectorFn>
    void forward(const double* x, SelectorFn&& select, double eps) {
        active_.clear();
        const std::size_t n = g_->input_dim;
        double* val = values_.data();
        for (std::size_t idx = 0; idx < g_->nodes.size(); ++idx) {
            const detail::Node& node = g_->nodes[idx];
            double* v = val + node.value_offset;
            double* jac = WithJacobian ? jac_.data() + jac_offsets_[idx] : nullptr;
            switch (node.op) {
            case detail::NodeOp::input:
                std::copy_n(x, n, v);
                if constexpr (WithJacobian) {
                    std::fill_n(jac, n * n, 0.0);
                    for (std::size_t i = 0; i < n; ++i) jac[i * n + i] = 1.0;
                }
                break;
            case detail::NodeOp::affine: {
                const std::size_t src = node.inputs[0];
                const double* u = val + g_->nodes[src].value_offset;
                const double* ju = WithJacobian ? jac_.data() + jac_offsets_[src] : nullptr;
                const std::size_t cols = static_cast<std::size_t>(node.matrix.cols());
                if constexpr (WithJacobian) std::fill_n(jac, node.dim * n, 0.0);
                for (std::size_t r = 0; r < node.dim; ++r) {
                    double acc = node.offset(static_cast<Eigen::Index>(r));
                    for (std::size_t k = 0; k < cols; ++k) {
                        const double a = node.matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
                        if (a == 0.0) continue;
                        acc += a * u[k];
                        if constexpr (WithJacobian)
                            for (std::size_t c = 0; c < n; ++c) jac[r * n + c] += a * ju[k * n + c];
                    }
                    v[r] = acc;
                }
                break;
            }
            case detail::NodeOp::atom:
                if (is_binary(node.atom))
                    binary_atom<WithJacobian>(node, v, jac, select, eps);
                else
                    unary_atom<WithJacobian>(node, v, jac, select, eps);
                break;
            case detail::NodeOp::mul: {
                const auto& na = g_->nodes[node.inputs[0]];
                const auto& nb = g_->nodes[node.inputs[1]];
                const double* a = val + na.value_offset;
                const double* b = val + nb.value_offset;
                const double* ja = WithJacobian ? jac_.data() + jac_offsets_[node.inputs[0]] : nullptr;
                const double* jb = WithJacobian ? jac_.data() + jac_offsets_[node.inputs[1]] : nullptr;
                for (std::size_t r = 0; r < node.dim; ++r) {
                    const std::size_t ra = na.dim == 1 ? 0 : r;
                    const std::size_t rb = nb.dim == 1 ? 0 : r;
                    v[r] = a[ra] * b[rb];
                    if constexpr (WithJacobian)
                        for (std::size_t c = 0; c < n; ++c) jac[r * n + c] = b[rb] * ja[ra * n + c] + a[ra] * jb[rb * n + c];
                }
                break;
            }
            case detail::NodeOp::sum: {
                std::fill_n(v, node.dim, 0.0);
                if constexpr (WithJacobian) std::fill_n(jac, node.dim * n, 0.0);
                for (std::size_t src : node.inputs) {
                    const double* u = val + g_->nodes[src].value_offset;
                    for (std::size_t r = 0; r < node.dim; ++r) v[r] += u[r];
                    if constexpr (WithJacobian) {
                        const double* ju = jac_.data() + jac_offsets_[src];
                        for (std::size_t k = 0; k < node.dim * n; ++k) jac[k] += ju[k];
                    }
                }
                break;
            }
            case detail::NodeOp::concat: {
                std::size_t row = 0;
                for (std::size_t src : node.inputs) {
                    const auto& s = g_->nodes[src];
                    std::copy_n(val + s.value_offset, s.dim, v + row);
                    if constexpr (WithJacobian) std::copy_n(jac_.data() + jac_offsets_[src], s.dim * n, jac + row * n);
                    row += s.dim;
                }
                break;
            }
            }
        }
    }

    template <bool WithJacobian, class SelectorFn>
    void unary_atom(const detail::Node& node, double* v, double* jac, SelectorFn& select, double eps) {
        const std::size_t n = g_->input_dim;
        const std::size_t src = node.inputs[0];
        const double* u = values_.data() + g_->nodes[src].value_offset;
        const double* ju = WithJacobian ? jac_.data() + jac_offsets_[src] : nullptr;
        for (std::size_t r = 0; r < node.dim; ++r) {
            const double t = u[r];
            double d = 1.0;
            switch (node.atom) {
            case AtomKind::abs:
                v[r] = std::abs(t);
                if (std::abs(t) <= eps) {
                    active_.push_back(node.first_occurrence + r);
                    if constexpr (WithJacobian) d = -1.0 + 2.0 * select(node.first_occurrence + r);
                } else {
                    d = t > 0.0 ? 1.0 : -1.0;
                }
                break;
            case AtomKind::relu:
                v[r] = t > 0.0 ? t : 0.0;
                if (std::abs(t) <= eps) {
                    active_.push_back(node.first_occurrence + r);
                    if constexpr (WithJacobian) d = select(node.first_occurrence + r);
                } else {
                    d = t > 0.0 ? 1.0 : 0.0;
                }
                break;
            case AtomKind::identity: v[r] = t; break;
            case AtomKind::tanh: {
                const double th = std::tanh(t);
                v[r] = th;
                d = 1.0 - th * th;
                break;
            }
            case AtomKind::sin:
                v[r] = std::sin(t);
                d = std::cos(t);
                break;
            case AtomKind::cos:
                v[r] = std::cos(t);
                d = -std::sin(t);
                break;
            case AtomKind::polynomial: {
                const auto& c = node.coefficients;
                double p = 0.0, dp = 0.0;
                for (std::size_t k = c.size(); k-- > 0;) {
                    dp = dp * t + p;
                    p = p * t + c[k];
                }
                v[r] = p;
                d = dp;
                break;
            }
            default: break;
            }
            if constexpr (WithJacobian)
                for (std::size_t c = 0; c < n; ++c) jac[r * n + c] = d * ju[r * n + c];
        }
    }

    template <bool WithJacobian, class SelectorFn>
    void binary_atom(const detail::Node& node, double* v, double* jac, SelectorFn& select, double eps) {
        const std::size_t n = g_->input_dim;
        const auto& na = g_->nodes[node.inputs[0]];
        const auto& nb = g_->nodes[node.inputs[1]];
        const double* a = values_.data() + na.value_offset;
        const double* b = values_.data() + nb.value_offset;
        const double* ja = WithJacobian ? jac_.data() + jac_offsets_[node.inputs[0]] : nullptr;
        const double* jb = WithJacobian ? jac_.data() + jac_offsets_[node.inputs[1]] : nullptr;
        const bool is_max = node.atom == AtomKind::max2;
        for (std::size_t r = 0; r < node.dim; ++r) {
            const double diff = a[r] - b[r];
            v[r] = is_max ? std::max(a[r], b[r]) : std::min(a[r], b[r]);
            double wa;
            if (std::abs(diff) <= eps) {
                active_.push_back(node.first_occurrence + r);
                double s = 0.5;
                if constexpr (WithJacobian) s = select(node.first_occurrence + r);
                // max(a,b) = b + relu(a-b);  min(a,b) = a - relu(a-b)
                wa = is_max ? s : 1.0 - s;
            } else {
                wa = (diff > 0.0) == is_max ? 1.0 : 0.0;
            }
            if constexpr (WithJacobian)
                for (std::size_t c = 0; c < n; ++c) jac[r * n + c] = wa * ja[r * n + c] + (1.0 - wa) * jb[r * n + c];
        }
    }

    Field field_;
    const detail::Graph* g_;
    std::vector<double> values_;
    std::vector<double> jac_;
    std::vector<std::size_t> jac_offsets_;
    std::vector<double> selectors_;
    std::vector<std::size_t> active_;
};

inline Vector Field::eval(const Vector& x) const { return FieldEvaluator(*this).value(x); }

inline Matrix Field::jacobian_element(const Vector& x, const SelectionPolicy& policy, std::int64_t time_key) const {
    return FieldEvaluator(*this).jacobian(x, policy, time_key);
}

inline std::vector<Matrix> Field::jacobian_extremes(const Vector& x, double eps, std::size_t cap) const {
    return FieldEvaluator(*this).extremes(x, eps, cap);
}

inline std::size_t Field::active_breakpoints(const Vector& x, double eps) const {
    FieldEvaluator ev(*this);
    return ev.active_occurrences(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), eps).size();
}

/// Conservative gradient element of a scalar cost, as a column vector.
inline Vector gradient_element(const ScalarCost& cost, const Vector& x, const SelectionPolicy& policy,
                               std::int64_t time_key = 0) {
    require(cost.output_dim() == 1, "scalar cost must have output dimension 1");
    return cost.jacobian_element(x, policy, time_key).transpose();
}

// ---------------------------------------------------------------------------
// Calculus rules on whole fields.

/// outer(inner(x)).
inline Field compose(const Field& outer, const Field& inner) {
    require(outer.input_dim() == inner.output_dim(), "compose: outer input dimension must equal inner output dimension");
    FieldBuilder b(inner.input_dim());
    NodeId mid = b.embed(inner, b.input());
    return b.build(b.embed(outer, mid));
}

inline Field sum(const std::vector<Field>& fields) {
    require(!fields.empty(), "sum needs at least one field");
    FieldBuilder b(fields.front().input_dim());
    std::vector<NodeId> outs;
    for (const auto& f : fields) outs.push_back(b.embed(f, b.input()));
    return b.build(b.sum(outs));
}

inline Field concat(const std::vector<Field>& fields) {
    require(!fields.empty(), "concat needs at least one field");
    FieldBuilder b(fields.front().input_dim());
    std::vector<NodeId> outs;
    for (const auto& f : fields) outs.push_back(b.embed(f, b.input()));
    return b.build(b.concat(outs));
}

inline Field linear_field(const Matrix& a, const Vector& offset = Vector()) {
    FieldBuilder b(static_cast<std::size_t>(a.cols()));
    return b.build(b.affine(b.input(), a, offset));
}

inline Field zero_field(std::size_t input_dim, std::size_t output_dim) {
    return linear_field(Matrix::Zero(static_cast<Eigen::Index>(output_dim), static_cast<Eigen::Index>(input_dim)));
}

inline Field identity_field(std::size_t dim) {
    return linear_field(Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim)));
}

/// Elementwise atom applied to the field input.
inline Field atom_field(AtomKind kind, std::size_t dim, std::vector<double> coefficients = {}) {
    FieldBuilder b(dim);
    return b.build(b.atom(kind, b.input(), std::move(coefficients)));
}

/// Time-rescaled lift (y, a) -> (a F(y), 0) on R^{p+1}, whose flow at s
/// equals the flow of F at time a*s.
inline Field time_rescaled(const Field& f) {
    require(f.input_dim() == f.output_dim(), "time_rescaled needs a square field");
    const std::size_t p = f.input_dim();
    const auto pi = static_cast<Eigen::Index>(p);
    FieldBuilder b(p + 1);
    Matrix select_y = Matrix::Zero(pi, pi + 1);
    select_y.leftCols(pi).setIdentity();
    Matrix select_a = Matrix::Zero(1, pi + 1);
    select_a(0, pi) = 1.0;
    NodeId y = b.affine(b.input(), select_y);
    NodeId a = b.affine(b.input(), select_a);
    NodeId scaled = b.mul(a, b.embed(f, y));
    NodeId zero = b.constant(Vector::Zero(1));
    return b.build(b.concat({scaled, zero}));
}

/// H : R^{p+m} -> R^p viewed as dZ/dt = H(Z, theta).
class ParametrizedField {
public:
    ParametrizedField(Field h, std::size_t state_dim) : field_(std::move(h)), state_dim_(state_dim) {
        require(state_dim > 0, "state dimension must be positive");
        require(field_.output_dim() == state_dim, "parametrized field output dimension must equal the state dimension");
        require(field_.input_dim() >= state_dim, "parametrized field input must contain the state");
    }

    /// Unparametrized field F viewed with an empty parameter vector.
    explicit ParametrizedField(Field f) : ParametrizedField(f, f.output_dim()) {}

    const Field& field() const noexcept { return field_; }
    std::size_t state_dim() const noexcept { return state_dim_; }
    std::size_t param_dim() const noexcept { return field_.input_dim() - state_dim_; }

    Vector joint(const Vector& z, const Vector& theta) const {
        require(static_cast<std::size_t>(z.size()) == state_dim_, "state has wrong dimension");
        require(static_cast<std::size_t>(theta.size()) == param_dim(), "parameter vector has wrong dimension");
        Vector x(z.size() + theta.size());
        x << z, theta;
        return x;
    }

private:
    Field field_;
    std::size_t state_dim_;
};

} // namespace nsode
