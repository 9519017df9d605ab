#include <gtest/gtest.h>

#include <functional>

#include "dsp/nn/gradcheck.hpp"

using namespace dsp;
using namespace dsp::nn;

namespace {

using Mat = Matrix<double>;
using Build = std::function<Var(Graph<double>&, const std::vector<Var>&)>;

ParameterSet<double> random_params(const std::vector<std::pair<int, int>>& shapes, std::uint64_t seed) {
  ParameterSet<double> ps;
  Rng rng(seed);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    int idx = ps.add("p" + std::to_string(i) + ".w", shapes[i].first, shapes[i].second);
    auto& v = ps[static_cast<std::size_t>(idx)].value;
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = rng.uniform(-1.0, 1.0);
  }
  return ps;
}

// Reduces `out` with fixed random weights so no coordinate has a trivially
// zero gradient (softmax outputs sum to one, for instance).
Var weighted_sum(Graph<double>& g, Var out, std::uint64_t seed) {
  const Mat& v = g.value(out);
  Mat w(v.rows(), v.cols());
  Rng rng(seed);
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = rng.uniform(-2.0, 2.0);
  return g.sum(g.cmul(out, g.constant(w)));
}

double check(const std::vector<std::pair<int, int>>& shapes, const Build& build, std::uint64_t seed = 1) {
  auto ps = random_params(shapes, seed);
  auto loss = [&](Graph<double>& g) {
    std::vector<Var> in;
    for (std::size_t i = 0; i < ps.size(); ++i) in.push_back(g.param(static_cast<int>(i), ps[i].value));
    return weighted_sum(g, build(g, in), seed + 100);
  };
  GradCheckOptions opts;
  opts.samples_per_param = 50;
  return grad_check(ps, loss, opts).max_rel_error;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(GraphGradients, MatrixProducts) {
  EXPECT_LT(check({{3, 4}, {4, 2}}, [](auto& g, auto& v) { return g.matmul(v[0], v[1]); }), kTol);
  EXPECT_LT(check({{4, 3}, {4, 2}}, [](auto& g, auto& v) { return g.matmul_tn(v[0], v[1]); }), kTol);
  EXPECT_LT(check({{3, 4}, {4, 1}, {3, 1}}, [](auto& g, auto& v) { return g.affine(v[0], v[1], v[2]); }), kTol);
}

TEST(GraphGradients, Elementwise) {
  EXPECT_LT(check({{3, 2}, {3, 2}}, [](auto& g, auto& v) { return g.add(v[0], v[1]); }), kTol);
  EXPECT_LT(check({{3, 2}, {3, 1}}, [](auto& g, auto& v) { return g.add_bias(v[0], v[1]); }), kTol);
  EXPECT_LT(check({{3, 2}, {3, 2}}, [](auto& g, auto& v) { return g.cmul(v[0], v[1]); }), kTol);
  EXPECT_LT(check({{3, 2}}, [](auto& g, auto& v) { return g.scale(v[0], -1.7); }), kTol);
  EXPECT_LT(check({{3, 2}, {1, 1}}, [](auto& g, auto& v) { return g.mul_scalar(v[0], v[1]); }), kTol);
  EXPECT_LT(check({{3, 2}}, [](auto& g, auto& v) { return g.one_minus(v[0]); }), kTol);
  EXPECT_LT(check({{3, 2}}, [](auto& g, auto& v) { return g.sigmoid(v[0]); }), kTol);
  EXPECT_LT(check({{3, 2}}, [](auto& g, auto& v) { return g.tanh(v[0]); }), kTol);
  // log needs positive inputs.
  EXPECT_LT(check({{3, 2}}, [](auto& g, auto& v) { return g.log(g.sigmoid(v[0])); }), kTol);
}

TEST(GraphGradients, SoftmaxAndReductions) {
  EXPECT_LT(check({{5, 1}}, [](auto& g, auto& v) { return g.softmax(v[0]); }), kTol);
  EXPECT_LT(check({{3, 2}}, [](auto& g, auto& v) { return g.sum(v[0]); }), kTol);
  EXPECT_LT(check({{5, 1}}, [](auto& g, auto& v) { return g.gather_sum(v[0], {0, 2, 2, 4}); }), kTol);
  EXPECT_LT(check({{2, 2}, {2, 2}, {2, 2}}, [](auto& g, auto& v) { return g.add_all({v[0], v[1], v[2], v[0]}); }),
            kTol);
}

TEST(GraphGradients, Reshaping) {
  EXPECT_LT(check({{2, 3}, {1, 3}}, [](auto& g, auto& v) { return g.concat_rows({v[0], v[1]}); }), kTol);
  EXPECT_LT(check({{2, 3}, {2, 1}}, [](auto& g, auto& v) { return g.concat_cols({v[0], v[1]}); }), kTol);
  EXPECT_LT(check({{5, 2}}, [](auto& g, auto& v) { return g.slice_rows(v[0], 1, 3); }), kTol);
  EXPECT_LT(check({{3, 4}}, [](auto& g, auto& v) { return g.column(v[0], 2); }), kTol);
}

TEST(GraphGradients, LstmCell) {
  EXPECT_LT(check({{8, 1}, {2, 1}},
                  [](auto& g, auto& v) {
                    auto cell = g.lstm_cell(v[0], v[1]);
                    return g.concat_rows({cell.h, cell.c});
                  }),
            kTol);
  EXPECT_LT(check({{8, 1}}, [](auto& g, auto& v) { return g.lstm_cell(v[0], Var{}).h; }), kTol);
}

TEST(GraphGradients, SharedSubexpressionsAccumulate) {
  // x used three times: d/dx sum(x*x + x) = 2x + 1.
  auto ps = random_params({{4, 1}}, 3);
  Graph<double> g(1);
  Var x = g.param(0, ps[0].value);
  Var loss = g.sum(g.add(g.cmul(x, x), x));
  g.backward(loss);
  Mat expected = (2 * ps[0].value.array() + 1).matrix();
  EXPECT_LT((g.grad(x) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GraphGradients, QuadraticToyIsExact) {
  // L = 0.5 * ||A x - b||^2 with analytic gradient A^T (A x - b).
  auto ps = random_params({{3, 1}}, 5);
  Mat A = random_params({{4, 3}}, 6)[0].value;
  Mat b = random_params({{4, 1}}, 7)[0].value;
  auto loss = [&](Graph<double>& g) {
    Var r = g.add(g.matmul(g.constant(A), g.param(0, ps[0].value)), g.constant(-b));
    return g.scale(g.sum(g.cmul(r, r)), 0.5);
  };
  Graph<double> g(1);
  Var l = loss(g);
  g.backward(l);
  Mat analytic;
  g.for_each_param_grad([&](int, const Mat& gi) { analytic = gi; });
  Mat expected = A.transpose() * (A * ps[0].value - b);
  EXPECT_LT((analytic - expected).cwiseAbs().maxCoeff(), 1e-12);
  GradCheckOptions opts;
  opts.samples_per_param = 3;
  EXPECT_LT(grad_check(ps, loss, opts).max_rel_error, 1e-8);
}

TEST(GraphGradients, ConstantsGetNoGradient) {
  Graph<double> g(1);
  Var c = g.constant(Mat::Ones(2, 1));
  EXPECT_FALSE(g.needs_grad(c));
  Var p = g.param(0, Mat::Ones(2, 1));
  EXPECT_TRUE(g.needs_grad(g.add(c, p)));
  EXPECT_FALSE(g.needs_grad(g.tanh(c)));
}

TEST(GraphShapes, MismatchesThrow) {
  Graph<double> g;
  Var a = g.constant(Mat::Ones(2, 3));
  Var b = g.constant(Mat::Ones(2, 2));
  try {
    g.matmul(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ShapeMismatch);
  }
  EXPECT_THROW(g.add(a, b), Error);
  EXPECT_THROW(g.lstm_cell(g.constant(Mat::Ones(6, 1)), Var{}), Error);
}

TEST(GradCheckOptions, RejectsEpsilonOutsideRange) {
  auto ps = random_params({{2, 1}}, 1);
  auto loss = [&](Graph<double>& g) { return g.sum(g.param(0, ps[0].value)); };
  EXPECT_THROW(grad_check(ps, loss, {.epsilon = 1e-7}), Error);
  EXPECT_THROW(grad_check(ps, loss, {.epsilon = 1e-2}), Error);
}

TEST(GradCheckOptions, DetectsAWrongGradient) {
  // A loss whose forward value disagrees with the tape: the check must notice.
  auto ps = random_params({{3, 1}}, 2);
  auto loss = [&](Graph<double>& g) {
    Var x = g.param(0, ps[0].value);
    return g.add(g.sum(x), g.constant(Mat::Constant(1, 1, ps[0].value.squaredNorm())));
  };
  EXPECT_GT(grad_check(ps, loss).max_rel_error, 1e-2);
}
