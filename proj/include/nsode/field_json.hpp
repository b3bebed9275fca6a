// JSON expression format for fields. See docs/field_format.md.
#pragma once

#include "nsode/field.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <set>
#include <string>

namespace nsode {

using json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key())) throw UsageError(where + ": unknown key '" + it.key() + "'");
}

inline Matrix matrix_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw UsageError(where + ": matrix must be a nonempty array of rows");
    const std::size_t rows = j.size();
    const std::size_t cols = j.at(0).is_array() ? j.at(0).size() : 0;
    if (cols == 0) throw UsageError(where + ": matrix rows must be nonempty arrays");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& row = j.at(r);
        if (!row.is_array() || row.size() != cols) throw UsageError(where + ": ragged matrix");
        for (std::size_t c = 0; c < cols; ++c) {
            if (!row.at(c).is_number()) throw UsageError(where + ": matrix entries must be numbers");
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row.at(c).get<double>();
        }
    }
    return m;
}

inline Vector vector_from_json(const json& j, const std::string& where) {
    if (!j.is_array()) throw UsageError(where + ": expected an array of numbers");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j.at(i).is_number()) throw UsageError(where + ": expected numbers");
        v(static_cast<Eigen::Index>(i)) = j.at(i).get<double>();
    }
    return v;
}

} // namespace detail

inline json to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline json to_json(const Matrix& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        a.push_back(std::move(row));
    }
    return a;
}

/// Builds a field from its JSON expression. Node ids are referenced by later
/// nodes; the reserved id "x" is the field input.
inline Field field_from_json(const json& spec) {
    const std::string where = "field";
    if (!spec.is_object()) throw UsageError(where + ": expected an object");
    detail::reject_unknown_keys(spec, {"input_dim", "nodes", "output", "lipschitz_bound"}, where);
    if (!spec.contains("input_dim") || !spec.at("input_dim").is_number_integer() || spec.at("input_dim").get<long long>() <= 0)
        throw UsageError(where + ": 'input_dim' must be a positive integer");
    if (!spec.contains("nodes") || !spec.at("nodes").is_array()) throw UsageError(where + ": 'nodes' must be an array");
    if (!spec.contains("output") || !spec.at("output").is_string()) throw UsageError(where + ": 'output' must be a node id");

    FieldBuilder b(spec.at("input_dim").get<std::size_t>());
    std::map<std::string, NodeId> ids{{"x", b.input()}};

    auto ref = [&](const json& j, const std::string& ctx) {
        if (!j.is_string()) throw UsageError(ctx + ": node references must be strings");
        auto it = ids.find(j.get<std::string>());
        if (it == ids.end()) throw UsageError(ctx + ": unknown node '" + j.get<std::string>() + "'");
        return it->second;
    };

    std::size_t index = 0;
    for (const auto& n : spec.at("nodes")) {
        const std::string ctx = where + ".nodes[" + std::to_string(index++) + "]";
        if (!n.is_object() || !n.contains("id") || !n.at("id").is_string() || !n.contains("op") || !n.at("op").is_string())
            throw UsageError(ctx + ": every node needs string 'id' and 'op'");
        const std::string id = n.at("id").get<std::string>();
        const std::string op = n.at("op").get<std::string>();
        if (ids.count(id)) throw UsageError(ctx + ": duplicate node id '" + id + "'");
        NodeId out;
        if (op == "affine") {
            detail::reject_unknown_keys(n, {"id", "op", "input", "matrix", "offset"}, ctx);
            if (!n.contains("input") || !n.contains("matrix")) throw UsageError(ctx + ": affine needs 'input' and 'matrix'");
            Vector off = n.contains("offset") ? detail::vector_from_json(n.at("offset"), ctx + ".offset") : Vector();
            out = b.affine(ref(n.at("input"), ctx), detail::matrix_from_json(n.at("matrix"), ctx + ".matrix"), off);
        } else if (op == "constant") {
            detail::reject_unknown_keys(n, {"id", "op", "value"}, ctx);
            if (!n.contains("value")) throw UsageError(ctx + ": constant needs 'value'");
            out = b.constant(detail::vector_from_json(n.at("value"), ctx + ".value"));
        } else if (op == "mul" || op == "max2" || op == "min2") {
            detail::reject_unknown_keys(n, {"id", "op", "inputs"}, ctx);
            if (!n.contains("inputs") || !n.at("inputs").is_array() || n.at("inputs").size() != 2)
                throw UsageError(ctx + ": '" + op + "' needs exactly two 'inputs'");
            NodeId a = ref(n.at("inputs").at(0), ctx), c = ref(n.at("inputs").at(1), ctx);
            out = op == "mul" ? b.mul(a, c) : b.atom(*atom_from_string(op), a, c);
        } else if (op == "sum" || op == "concat") {
            detail::reject_unknown_keys(n, {"id", "op", "inputs"}, ctx);
            if (!n.contains("inputs") || !n.at("inputs").is_array() || n.at("inputs").empty())
                throw UsageError(ctx + ": '" + op + "' needs a nonempty 'inputs' array");
            std::vector<NodeId> parts;
            for (const auto& r : n.at("inputs")) parts.push_back(ref(r, ctx));
            out = op == "sum" ? b.sum(parts) : b.concat(parts);
        } else if (auto kind = atom_from_string(op)) {
            detail::reject_unknown_keys(n, {"id", "op", "input", "coefficients"}, ctx);
            if (!n.contains("input")) throw UsageError(ctx + ": atom needs 'input'");
            std::vector<double> coeffs;
            if (*kind == AtomKind::polynomial) {
                if (!n.contains("coefficients")) throw UsageError(ctx + ": polynomial needs 'coefficients'");
                const Vector c = detail::vector_from_json(n.at("coefficients"), ctx + ".coefficients");
                coeffs.assign(c.data(), c.data() + c.size());
            } else if (n.contains("coefficients")) {
                throw UsageError(ctx + ": only polynomial atoms take 'coefficients'");
            }
            out = b.atom(*kind, ref(n.at("input"), ctx), std::move(coeffs));
        } else {
            throw UsageError(ctx + ": unknown op '" + op + "'");
        }
        ids.emplace(id, out);
    }

    std::optional<double> bound;
    if (spec.contains("lipschitz_bound")) {
        if (!spec.at("lipschitz_bound").is_number()) throw UsageError(where + ": 'lipschitz_bound' must be a number");
        bound = spec.at("lipschitz_bound").get<double>();
    }
    return b.build(ref(spec.at("output"), where + ".output"), bound);
}

} // namespace nsode
