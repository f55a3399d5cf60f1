#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "ogaseg/checkpoint.hpp"
#include "ogaseg/grad_check.hpp"
#include "ogaseg/grad_suite.hpp"
#include "ogaseg/ops.hpp"

namespace ogaseg {
namespace {

using T = double;

Tensor<T> vec(std::vector<T> v) {
  const std::size_t n = v.size();
  return Tensor<T>({n}, std::move(v));
}

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor<T>({2, 3}, std::vector<T>(5)), ShapeError);
  Tensor<T> t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(Tensor<T>().size(), 1u);
  EXPECT_THROW(t.item(), ShapeError);
}

TEST(Ops, ReluDefinition) {
  Tape<T> tape;
  auto y = ops::relu(tape.constant(vec({-1, 0, 2})));
  EXPECT_EQ(y.value().vec(), (std::vector<T>{0, 0, 2}));
}

TEST(Ops, ReluSubgradientAtZeroIsZero) {
  Tape<T> tape;
  auto x = tape.leaf(vec({-1, 0, 2}));
  tape.backward(ops::sum(ops::relu(x)));
  EXPECT_EQ(tape.grad(x).vec(), (std::vector<T>{0, 0, 1}));
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  Tape<T> tape;
  auto y = ops::softmax(tape.constant(vec({0, 0, 0})), 0);
  for (T v : y.value().vec()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Ops, SoftmaxRowsAreStochastic) {
  Tape<T> tape;
  Rng rng(3);
  Tensor<T> x({4, 5, 6});
  for (auto& v : x.vec()) v = rng.uniform(-30, 30);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const auto& y = ops::softmax(tape.constant(x), axis, 0.7).value();
    const std::size_t n = x.dim(axis);
    const std::size_t inner = axis == 2 ? 1 : (axis == 1 ? 6 : 30);
    const std::size_t outer = x.size() / (n * inner);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        T s = 0;
        for (std::size_t k = 0; k < n; ++k) {
          const T v = y[(o * n + k) * inner + i];
          EXPECT_GE(v, 0.0);
          s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
  }
}

TEST(Ops, ConvAllOnesCenterIsNine) {
  Tape<T> tape;
  auto x = tape.constant(Tensor<T>({1, 3, 3}, 1.0));
  auto w = tape.constant(Tensor<T>({1, 1, 3, 3}, 1.0));
  auto b = tape.constant(Tensor<T>({1}, 0.0));
  auto y = ops::conv2d(x, w, b, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3}));
  EXPECT_EQ(y.value().at(0, 1, 1), 9.0);
  EXPECT_EQ(y.value().at(0, 0, 0), 4.0);
}

TEST(Ops, ConvStrideTwoHalvesResolution) {
  Tape<T> tape;
  auto y = ops::conv2d(tape.constant(Tensor<T>({2, 8, 6})), tape.constant(Tensor<T>({3, 2, 3, 3})),
                       tape.constant(Tensor<T>({3})), 2, 1);
  EXPECT_EQ(y.shape(), (Shape{3, 4, 3}));
}

TEST(Ops, ShapeErrorsNameTheOp) {
  Tape<T> tape;
  auto a = tape.constant(Tensor<T>({2, 3}));
  auto b = tape.constant(Tensor<T>({3, 2}));
  try {
    ops::add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(ops::matmul(a, a), ShapeError);
  EXPECT_THROW(ops::conv2d(tape.constant(Tensor<T>({2, 4, 4})), tape.constant(Tensor<T>({1, 3, 3, 3})),
                           tape.constant(Tensor<T>({1}))),
               ShapeError);
}

TEST(Ops, NonFiniteOutputIsANumericError) {
  Tape<T> tape;
  auto x = tape.constant(vec({1e300}));
  EXPECT_THROW(ops::mul(x, x), NumericError);
  EXPECT_THROW(tape.constant(vec({std::numeric_limits<T>::quiet_NaN()})), NumericError);
}

TEST(Ops, OperandsFromDifferentTapesAreRejected) {
  Tape<T> t1, t2;
  EXPECT_THROW(ops::add(t1.constant(vec({1})), t2.constant(vec({1}))), std::invalid_argument);
}

TEST(Ops, UpsampleBilinearPreservesConstantsAndShape) {
  Tape<T> tape;
  auto y = ops::upsample_bilinear(tape.constant(Tensor<T>({2, 2, 3}, 0.25)), 8);
  ASSERT_EQ(y.shape(), (Shape{2, 16, 24}));
  for (T v : y.value().vec()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ops, UpsampleBilinearHalfPixelSampling) {
  // 1x2 row [0, 8] at factor 2: sample centres map to -0.25, 0.25, 0.75, 1.25
  // which clamp / interpolate to 0, 2, 6, 8.
  Tape<T> tape;
  auto y = ops::upsample_bilinear(tape.constant(Tensor<T>({1, 1, 2}, std::vector<T>{0, 8})), 2);
  EXPECT_EQ(y.value().vec(), (std::vector<T>{0, 2, 6, 8, 0, 2, 6, 8}));
}

TEST(Ops, GlobalPools) {
  Tape<T> tape;
  auto x = tape.constant(Tensor<T>({2, 1, 3}, std::vector<T>{1, 2, 3, -1, 5, 0}));
  EXPECT_EQ(ops::global_avg_pool(x).value().vec(), (std::vector<T>{2, 4.0 / 3.0}));
  EXPECT_EQ(ops::global_max_pool(x).value().vec(), (std::vector<T>{3, 5}));
}

TEST(Ops, ConcatAndSliceAreInverse) {
  Tape<T> tape;
  auto a = tape.constant(Tensor<T>({1, 2, 2}, std::vector<T>{1, 2, 3, 4}));
  auto b = tape.constant(Tensor<T>({2, 2, 2}, std::vector<T>{5, 6, 7, 8, 9, 10, 11, 12}));
  auto c = ops::concat_channels<T>({a, b});
  EXPECT_EQ(c.shape(), (Shape{3, 2, 2}));
  EXPECT_EQ(ops::slice_channels(c, 0, 1).value(), a.value());
  EXPECT_EQ(ops::slice_channels(c, 1, 3).value(), b.value());
}

TEST(Backward, SumGivesOnes) {
  Tape<T> tape;
  auto x = tape.leaf(vec({0.3, -2, 5, 7}));
  tape.backward(ops::sum(x));
  EXPECT_EQ(tape.grad(x).vec(), (std::vector<T>{1, 1, 1, 1}));
}

TEST(Backward, SumOfSquares) {
  Tape<T> tape;
  auto x = tape.leaf(vec({1, 2}));
  tape.backward(ops::sum(ops::mul(x, x)));
  EXPECT_EQ(tape.grad(x).vec(), (std::vector<T>{2, 4}));
}

TEST(Backward, FanOutAccumulates) {
  Tape<T> tape;
  auto x = tape.leaf(vec({3}));
  auto y = ops::add(ops::scale(x, 2.0), ops::mul(x, x));  // 2x + x^2
  tape.backward(ops::sum(y));
  EXPECT_EQ(tape.grad(x).vec(), (std::vector<T>{8}));
}

TEST(Backward, RejectsNonScalarAndReuse) {
  Tape<T> tape;
  auto x = tape.leaf(vec({1, 2}));
  EXPECT_THROW(tape.backward(x), ShapeError);
  auto s = ops::sum(x);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), std::logic_error);
  Tape<T> other;
  EXPECT_THROW(other.backward(s), std::invalid_argument);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Tape<T> tape;
  auto x = tape.leaf(vec({1, 2}));
  auto c = tape.constant(vec({3, 4}));
  tape.backward(ops::sum(ops::mul(x, c)));
  EXPECT_EQ(tape.grad(x).vec(), (std::vector<T>{3, 4}));
  EXPECT_FALSE(c.requires_grad());
  EXPECT_EQ(tape.grad(c).vec(), (std::vector<T>{0, 0}));
}

TEST(Backward, DetachStopsGradient) {
  Tape<T> tape;
  auto x = tape.leaf(vec({2}));
  tape.backward(ops::sum(ops::mul(x, ops::detach(x))));
  EXPECT_EQ(tape.grad(x).vec(), (std::vector<T>{2}));
}

TEST(Backward, ForwardIsDeterministic) {
  auto run = [] {
    Tape<T> tape;
    Rng rng(11);
    Tensor<T> x({3, 8, 8}), w({4, 3, 3, 3}), b({4});
    for (auto* t : {&x, &w, &b})
      for (auto& v : t->vec()) v = rng.uniform(-1, 1);
    return ops::softmax(ops::conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 2, 1), 0).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(GradCheck, SumHasZeroError) {
  Rng rng(5);
  Tensor<T> x({7});
  for (auto& v : x.vec()) v = rng.uniform(-1, 1);
  auto r = grad_check<T>([](Tape<T>&, Var<T> v) { return ops::sum(v); }, x);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.checked, 7u);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, SoftmaxOfSquares) {
  Rng rng(6);
  Tensor<T> x({5});
  for (auto& v : x.vec()) v = rng.uniform(-1, 1);
  Tensor<T> r({5});
  for (auto& v : r.vec()) v = rng.uniform(-1, 1);
  auto rep = grad_check<T>(
      [&](Tape<T>& t, Var<T> v) { return ops::sum(ops::mul(ops::softmax(ops::mul(v, v), 0), t.constant(r))); }, x);
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_error, 1e-4);
}

TEST(GradCheck, ReluAtZeroIsReportedAsKink) {
  auto rep = grad_check<T>([](Tape<T>&, Var<T> v) { return ops::sum(ops::relu(v)); }, vec({0.0, 0.5, -0.5}));
  ASSERT_EQ(rep.entries.size(), 3u);
  EXPECT_TRUE(rep.entries[0].nondifferentiable);
  EXPECT_FALSE(rep.entries[1].nondifferentiable);
  EXPECT_FALSE(rep.entries[2].nondifferentiable);
  EXPECT_EQ(rep.skipped, 1u);
  EXPECT_TRUE(rep.passed);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // detach hides x from the tape, so the analytic gradient of x * detach(x)
  // is x while the true derivative is 2x.
  auto rep = grad_check<T>([](Tape<T>&, Var<T> v) { return ops::sum(ops::mul(v, ops::detach(v))); }, vec({1.0, 2.0}));
  EXPECT_FALSE(rep.passed);
  EXPECT_NEAR(rep.max_rel_error, 0.5, 1e-6);
}

TEST(GradCheck, RejectsNonScalarFunctions) {
  EXPECT_THROW(grad_check<T>([](Tape<T>&, Var<T> v) { return v; }, vec({1, 2})), ShapeError);
}

TEST(GradCheck, NonFiniteProbeIsReported) {
  // x * x is finite at the base point but overflows at x + step.
  const T big = 0.999 * std::sqrt(std::numeric_limits<T>::max());
  GradCheckOptions opt;
  opt.step = 0.01 * big;
  EXPECT_THROW(grad_check<T>([](Tape<T>&, Var<T> v) { return ops::sum(ops::mul(v, v)); }, vec({big}), opt),
               NumericError);
}

TEST(GradSuite, EveryPrimitiveAndTheCompactModelPass) {
  const GradSuiteResult r = run_grad_suite();
  for (const auto& e : r.entries) {
    EXPECT_TRUE(e.passed) << e.name << " max rel err " << e.report.max_rel_error;
  }
  EXPECT_TRUE(r.passed());
}

TEST(Checkpoint, RoundTripPreservesNamesShapesAndValues) {
  ParamStore<float> p;
  p.add("a.weight", Tensor<float>({2, 3}, std::vector<float>{1, -2, 3.5f, 1e-8f, -0.0f, 7}));
  p.add("b", Tensor<float>({1}, std::vector<float>{42}));
  const std::string path = ::testing::TempDir() + "/rt.ckpt";
  save_checkpoint(path, p);
  const auto records = read_checkpoint(path);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].name, "a.weight");
  EXPECT_EQ(records[0].value, p[0].value);
  EXPECT_EQ(records[1].value, p[1].value);
  ParamStore<float> q;
  q.add("a.weight", Tensor<float>({2, 3}));
  q.add("b", Tensor<float>({1}));
  load_checkpoint(path, q);
  EXPECT_EQ(q[0].value, p[0].value);
}

TEST(Checkpoint, ByteLayout) {
  ParamStore<float> p;
  p.add("w", Tensor<float>({1}, std::vector<float>{1.0f}));
  const std::string path = ::testing::TempDir() + "/layout.ckpt";
  save_checkpoint(path, p);
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::vector<unsigned char> expected{'O', 'G', 'A', 'S', 'E', 'G', '1',
                                            1, 0, 0, 0, 0, 0, 0, 0,  // name length
                                            'w',
                                            1, 0, 0, 0, 0, 0, 0, 0,  // rank
                                            1, 0, 0, 0, 0, 0, 0, 0,  // extent
                                            0x00, 0x00, 0x80, 0x3f};  // 1.0f
  EXPECT_EQ(bytes, expected);
}

TEST(Checkpoint, MismatchesAreFormatErrors) {
  ParamStore<float> p;
  p.add("w", Tensor<float>({2}));
  const std::string path = ::testing::TempDir() + "/mm.ckpt";
  save_checkpoint(path, p);
  ParamStore<float> other;
  other.add("w", Tensor<float>({3}));
  EXPECT_THROW(load_checkpoint(path, other), FormatError);
  ParamStore<float> renamed;
  renamed.add("v", Tensor<float>({2}));
  EXPECT_THROW(load_checkpoint(path, renamed), FormatError);
  std::ofstream(path, std::ios::binary | std::ios::trunc) << "NOTACKPT";
  EXPECT_THROW(read_checkpoint(path), FormatError);
  std::ofstream(path, std::ios::binary | std::ios::trunc) << "OGASEG1" << std::string(3, '\x01');
  EXPECT_THROW(read_checkpoint(path), FormatError);
}

}  // namespace
}  // namespace ogaseg
