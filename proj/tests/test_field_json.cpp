#include "test_util.hpp"

using namespace nsode;
using nsode::testing::max_abs_diff;
using nsode::testing::vec;

namespace {

const char* counterexample_text = R"({
  "input_dim": 2,
  "nodes": [
    {"id": "x1", "op": "affine", "input": "x", "matrix": [[1, 0]]},
    {"id": "a", "op": "abs", "input": "x1"},
    {"id": "s", "op": "affine", "input": "x", "matrix": [[0, -1]], "offset": [1]},
    {"id": "f1", "op": "mul", "inputs": ["s", "a"]},
    {"id": "f2", "op": "constant", "value": [1]},
    {"id": "F", "op": "concat", "inputs": ["f1", "f2"]}
  ],
  "output": "F",
  "lipschitz_bound": 1.0
})";

json with(const std::string& patch_path, const json& value) {
    json j = json::parse(counterexample_text);
    j[json::json_pointer(patch_path)] = value;
    return j;
}

} // namespace

TEST(FieldJson, ParsesCounterexample) {
    const Field f = field_from_json(json::parse(counterexample_text));
    const Field ref = verification::counterexample_field();
    EXPECT_EQ(f.lipschitz_bound(), 1.0);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        const Vector x = nsode::testing::random_vector(rng, 2, 2.0);
        EXPECT_EQ(max_abs_diff(f.eval(x), ref.eval(x)), 0.0);
        EXPECT_EQ(max_abs_diff(f.jacobian_element(x, SelectionPolicy::midpoint()), ref.jacobian_element(x, SelectionPolicy::midpoint())), 0.0);
    }
    EXPECT_EQ(max_abs_diff(f.jacobian_element(Vector::Zero(2), SelectionPolicy::left_extreme()),
                           ref.jacobian_element(Vector::Zero(2), SelectionPolicy::left_extreme())),
              0.0);
}

TEST(FieldJson, AllAtoms) {
    const json spec = json::parse(R"({
      "input_dim": 2,
      "nodes": [
        {"id": "a", "op": "relu", "input": "x"},
        {"id": "b", "op": "tanh", "input": "x"},
        {"id": "c", "op": "sin", "input": "x"},
        {"id": "d", "op": "cos", "input": "x"},
        {"id": "e", "op": "identity", "input": "x"},
        {"id": "p", "op": "polynomial", "input": "x", "coefficients": [0, 1, 1]},
        {"id": "u", "op": "affine", "input": "x", "matrix": [[1, 0]]},
        {"id": "v", "op": "affine", "input": "x", "matrix": [[0, 1]]},
        {"id": "m", "op": "max2", "inputs": ["u", "v"]},
        {"id": "n", "op": "min2", "inputs": ["u", "v"]},
        {"id": "s", "op": "sum", "inputs": ["a", "b", "c", "d", "e", "p"]},
        {"id": "out", "op": "concat", "inputs": ["s", "m", "n"]}
      ],
      "output": "out"
    })");
    const Field f = field_from_json(spec);
    const Vector x = vec({0.3, -0.2});
    const Vector v = f.eval(x);
    ASSERT_EQ(v.size(), 4);
    auto expect = [](double t) { return std::max(t, 0.0) + std::tanh(t) + std::sin(t) + std::cos(t) + t + t + t * t; };
    EXPECT_NEAR(v(0), expect(0.3), 1e-15);
    EXPECT_NEAR(v(1), expect(-0.2), 1e-15);
    EXPECT_EQ(v(2), 0.3);
    EXPECT_EQ(v(3), -0.2);
    EXPECT_FALSE(f.has_declared_bound());
    EXPECT_FALSE(std::isfinite(f.lipschitz_bound()));
}

TEST(FieldJson, Rejections) {
    auto rejects = [](const json& j, const std::string& fragment) {
        try {
            field_from_json(j);
            ADD_FAILURE() << "accepted: " << j.dump();
        } catch (const UsageError& e) {
            EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
        }
    };
    rejects(with("/extra", 1), "extra");
    rejects(with("/nodes/1/bogus", true), "nodes[1]");
    rejects(with("/nodes/1/op", "sqrt"), "unknown op 'sqrt'");
    rejects(with("/nodes/1/input", "nowhere"), "unknown node 'nowhere'");
    rejects(with("/nodes/2/id", "x1"), "duplicate node id");
    rejects(with("/nodes/1/coefficients", json::array({1, 2})), "only polynomial");
    rejects(with("/output", "missing"), "unknown node 'missing'");
    rejects(with("/input_dim", 0), "input_dim");
    rejects(with("/lipschitz_bound", "big"), "lipschitz_bound");
    rejects(with("/nodes/3/inputs", json::array({"s"})), "exactly two");
    rejects(json::array(), "expected an object");
    rejects(with("/nodes/0/matrix", json::array({json::array({1, "a"})})), "matrix");
}

TEST(FieldJson, DimensionMismatchRejected) {
    EXPECT_THROW(field_from_json(with("/nodes/0/matrix", json::array({json::array({1, 0, 0})}))), UsageError);
}

TEST(FieldJson, MatrixRoundTrip) {
    const Matrix m = nsode::testing::mat({{1.0, -2.5}, {0.0, 3.0}, {4.0, 5.0}});
    const json j = to_json(m);
    EXPECT_EQ(j.size(), 3u);
    EXPECT_EQ(j[0][1].get<double>(), -2.5);
    EXPECT_EQ(to_json(vec({1.0, 2.0})).dump(), "[1.0,2.0]");
}
