#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tmeg/checkpoint.hpp"
#include "tmeg/fixtures.hpp"
#include "tmeg/gradcheck.hpp"

using namespace tmeg;

namespace {

DenseArray random_array(std::size_t r, std::size_t c, std::uint64_t seed, Real scale = 1) {
  Rng rng = derive_stream_n(seed, "test-array", r * 1000 + c);
  std::normal_distribution<Real> dist(0, scale);
  DenseArray a(r, c);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = dist(rng);
  return a;
}

}  // namespace

TEST(DenseArray, ShapeAndValueCount) {
  DenseArray a(2, 3, Real(1.5));
  EXPECT_EQ(a.size(), 6u);
  EXPECT_EQ(a.shape(), (std::vector<std::size_t>{2, 3}));
  EXPECT_THROW(DenseArray(2, 2, std::vector<Real>{1, 2, 3}), ShapeError);
  EXPECT_THROW(DenseArray::from_rows({{1, 2}, {3}}), ShapeError);
  EXPECT_EQ(DenseArray::identity(2), DenseArray::from_rows({{1, 0}, {0, 1}}));
}

TEST(Softmax, UniformRow) {
  const DenseArray y = ad::softmax_rows_value(DenseArray::row({0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], Real(1) / 3, 1e-15);
}

TEST(Softmax, LogTwoGapGivesOneThirdTwoThirds) {
  for (Real c : {Real(-50), Real(0), Real(3.25), Real(700)}) {
    const DenseArray y = ad::softmax_rows_value(DenseArray::row({c, c + std::log(Real(2))}));
    EXPECT_NEAR(y[0], Real(1) / 3, 1e-12) << "c=" << c;
    EXPECT_NEAR(y[1], Real(2) / 3, 1e-12) << "c=" << c;
  }
}

TEST(Softmax, SingleElementIsOne) { EXPECT_EQ(ad::softmax_rows_value(DenseArray::row({-4.2}))[0], 1.0); }

TEST(Softmax, NanInputIsAnError) {
  EXPECT_THROW(ad::softmax_rows_value(DenseArray::row({0, std::nan("")})), NumericError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const DenseArray x = random_array(4, 9, seed, 5);
    const DenseArray y = ad::softmax_rows_value(x);
    DenseArray shifted = x;
    for (std::size_t c = 0; c < 9; ++c) shifted(2, c) += Real(17.5);
    const DenseArray ys = ad::softmax_rows_value(shifted);
    for (std::size_t r = 0; r < 4; ++r) {
      Real s = 0;
      for (std::size_t c = 0; c < 9; ++c) s += y(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_LE(max_abs_diff(y, ys), 1e-12);
  }
}

namespace {

DenseArray layer_norm_value(const DenseArray& x, const DenseArray& g, const DenseArray& b) {
  ad::Tape t(false);
  return ad::layer_norm_rows(t.constant(x), t.constant(g), t.constant(b)).value();
}

}  // namespace

TEST(LayerNorm, ConstantRowGivesZeros) {
  const DenseArray y = layer_norm_value(DenseArray::row({3, 3, 3, 3}), DenseArray(1, 4, 1), DenseArray(1, 4));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(LayerNorm, PlusMinusOneIsFixedUpToEps) {
  // mean 0, variance 1: output = x / sqrt(1 + 1e-12)
  const DenseArray y = layer_norm_value(DenseArray::row({1, -1}), DenseArray(1, 2, 1), DenseArray(1, 2));
  EXPECT_NEAR(y[0], 1.0, 1e-11);
  EXPECT_NEAR(y[1], -1.0, 1e-11);
}

TEST(LayerNorm, ZeroGammaGivesBeta) {
  const DenseArray beta = DenseArray::row({0.5, -2, 7});
  const DenseArray y = layer_norm_value(DenseArray::row({4, -1, 9}), DenseArray(1, 3), beta);
  EXPECT_EQ(y, beta);
}

TEST(LayerNorm, UnitAffineGivesZeroMeanUnitVariance) {
  const DenseArray y = layer_norm_value(random_array(3, 16, 4, 3), DenseArray(1, 16, 1), DenseArray(1, 16));
  for (std::size_t r = 0; r < 3; ++r) {
    Real mean = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += y(r, c) / 16;
    for (std::size_t c = 0; c < 16; ++c) var += (y(r, c) - mean) * (y(r, c) - mean) / 16;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(Linear, IdentityWeightZeroBias) {
  ad::Tape t(false);
  const DenseArray x = random_array(2, 3, 1);
  auto y = ad::linear(t.constant(x), t.constant(DenseArray::identity(3)), t.constant(DenseArray(1, 3)));
  EXPECT_EQ(y.value(), x);
}

TEST(Linear, ScalarHandArithmetic) {
  ad::Tape t(false);
  auto y = ad::linear(t.constant(DenseArray::row({5})), t.constant(DenseArray::row({2})),
                      t.constant(DenseArray::row({3})));
  EXPECT_EQ(y.value()[0], 13.0);
}

TEST(Linear, ShapeMismatchThrows) {
  ad::Tape t(false);
  EXPECT_THROW(ad::linear(t.constant(DenseArray(2, 3)), t.constant(DenseArray(2, 3)), t.constant(DenseArray(1, 3))),
               ShapeError);
  EXPECT_THROW(ad::linear(t.constant(DenseArray(2, 3)), t.constant(DenseArray(3, 2)), t.constant(DenseArray(1, 3))),
               ShapeError);
}

TEST(EmbedLookup, RowLocality) {
  DenseArray table = random_array(5, 4, 2);
  auto lookup = [&](std::size_t r) {
    ad::Tape t(false);
    return ad::embed_lookup(t.constant(table), r).value();
  };
  const DenseArray r1 = lookup(1), r3 = lookup(3);
  table(3, 2) += 1;
  EXPECT_EQ(lookup(1), r1);
  EXPECT_NE(lookup(3), r3);
  EXPECT_THROW(lookup(5), ShapeError);
}

TEST(GradEval, SquareHasDerivativeSix) {
  ParamStore store;
  Parameter& p = store.add("p", DenseArray::row({3}));
  const Real loss = grad_eval(
      [&](ad::Tape& t) {
        auto v = t.param(p);
        return ad::matmul(v, v);
      },
      store);
  EXPECT_EQ(loss, 9.0);
  EXPECT_EQ(p.grad[0], 6.0);
}

TEST(GradEval, UniformCrossEntropyGradientIsProbsMinusOneHot) {
  ParamStore store;
  Parameter& logits = store.add("logits", DenseArray(1, 4, Real(0.3)));
  grad_eval([&](ad::Tape& t) { return ad::cross_entropy(t.param(logits), 0); }, store);
  // softmax of equal logits is 1/4 each; subtract the one-hot of class 0
  const std::vector<Real> expected{0.25 - 1, 0.25, 0.25, 0.25};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(logits.grad[i], expected[i], 1e-15);
}

TEST(GradEval, UnreachableParameterGetsZero) {
  ParamStore store;
  Parameter& used = store.add("used", DenseArray::row({2}));
  Parameter& unused = store.add("unused", DenseArray::row({5}));
  unused.grad[0] = 42;
  grad_eval([&](ad::Tape& t) { return ad::scale(t.param(used), 3); }, store);
  EXPECT_EQ(used.grad[0], 3.0);
  EXPECT_EQ(unused.grad[0], 0.0);
}

TEST(GradEval, NonScalarLossThrows) {
  ParamStore store;
  Parameter& p = store.add("p", DenseArray(1, 2));
  EXPECT_THROW(grad_eval([&](ad::Tape& t) { return t.param(p); }, store), ShapeError);
}

TEST(GradEval, Deterministic) {
  const Corpus corpus = fixtures::tiny_corpus();
  const ModelConfig mc = fixtures::tiny_model_config(corpus);
  const auto prepared = prepare_instances(corpus, fixtures::tiny_instances(), mc, Ablation::None);
  TmegModel model(mc, 3);
  auto fn = fixtures::tiny_loss(model, prepared, Real(0.1));
  grad_eval(fn, model.store());
  const ParamStore first = model.store();
  grad_eval(fn, model.store());
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_EQ(first.params()[i].grad, model.store().params()[i].grad);
}

TEST(FiniteDifference, QuadraticIsExactToRoundoff) {
  ParamStore store;
  Parameter& p = store.add("p", DenseArray::row({0.7, -1.3, 2.0}));
  const GradCheckReport r = finite_difference_check(
      [&](ad::Tape& t) {
        auto v = t.param(p);
        return ad::matmul_nt(v, v);
      },
      store);
  EXPECT_LT(r.max_relative_error, 1e-9);
  EXPECT_EQ(r.coordinates_checked, 3u);
}

TEST(FiniteDifference, TinyModelPasses) {
  const GradCheckReport r = fixtures::tiny_grad_check({});
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_parameter << "[" << r.worst_index << "]";
}

TEST(FiniteDifference, SubsamplesLargeParameters) {
  ParamStore store;
  Parameter& p = store.add("p", DenseArray(10, 10, Real(0.5)));
  const GradCheckReport r = finite_difference_check(
      [&](ad::Tape& t) {
        ad::Var v = t.param(p);
        return ad::sum({ad::element(ad::matmul_nt(v, v), 0, 0)});
      },
      store, Real(1e-5), 7, 32);
  EXPECT_EQ(r.coordinates_checked, 32u);
}

class BackwardMutation : public ::testing::TestWithParam<ad::Op> {};

TEST_P(BackwardMutation, CorruptedRuleIsDetected) {
  const ad::fault::Scope corrupt(GetParam());
  const GradCheckReport r = fixtures::tiny_grad_check({});
  EXPECT_GT(r.max_relative_error, 1e-2) << ad::op_name(GetParam());
}

INSTANTIATE_TEST_SUITE_P(EveryRule, BackwardMutation,
                         ::testing::Values(ad::Op::MatMul, ad::Op::MatMulNT, ad::Op::Add, ad::Op::AddRow,
                                           ad::Op::Scale, ad::Op::Tanh, ad::Op::Gelu, ad::Op::SoftmaxRows,
                                           ad::Op::LayerNorm, ad::Op::GatherRows, ad::Op::ConcatRows,
                                           ad::Op::ConcatCols, ad::Op::SliceCols, ad::Op::EdgeBias,
                                           ad::Op::NormalizeRows, ad::Op::LogSumExpRows, ad::Op::Element,
                                           ad::Op::Sum),
                         [](const auto& info) { return std::string(ad::op_name(info.param)); });

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore store;
  Parameter& p = store.add("p", DenseArray::row({1}));
  p.grad[0] = 1;
  store.adam_step({Real(0.1)});
  // m_hat = v_hat = 1 after bias correction
  EXPECT_NEAR(p.value[0], 1 - 0.1 / (1 + 1e-8), 1e-15);
  EXPECT_EQ(store.step(), 1u);
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Adam, ZeroGradientFromRestLeavesParameter) {
  ParamStore store;
  Parameter& p = store.add("p", DenseArray::row({2.5, -1}));
  store.adam_step({});
  EXPECT_EQ(p.value, DenseArray::row({2.5, -1}));
  EXPECT_EQ(p.first_moment, DenseArray(1, 2));
}

TEST(Adam, MomentsDecayUnderZeroGradient) {
  ParamStore store;
  Parameter& p = store.add("p", DenseArray::row({1}));
  p.grad[0] = 2;
  store.adam_step({});
  const Real m = p.first_moment[0], v = p.second_moment[0];
  store.adam_step({});
  EXPECT_DOUBLE_EQ(p.first_moment[0], 0.9 * m);
  EXPECT_DOUBLE_EQ(p.second_moment[0], 0.999 * v);
}

TEST(Adam, IdenticalRunsGiveIdenticalParameters) {
  auto run = [] {
    ParamStore store;
    Parameter& p = store.add("p", DenseArray::row({0.3, -0.2}));
    for (int k = 0; k < 20; ++k) {
      grad_eval(
          [&](ad::Tape& t) {
            auto v = t.param(p);
            return ad::logsumexp_rows(ad::matmul_nt(v, v));
          },
          store);
      store.adam_step({Real(0.01)});
    }
    return p.value;
  };
  EXPECT_EQ(run(), run());
}

TEST(ParamStore, RejectsDuplicateNamesAndKeepsOrder) {
  ParamStore store;
  store.add("b", DenseArray(1, 1));
  store.add("a", DenseArray(1, 2));
  EXPECT_THROW(store.add("a", DenseArray(1, 1)), ConfigError);
  EXPECT_EQ(store.params()[0].name, "b");
  EXPECT_EQ(store.scalar_count(), 3u);
  ParamStore copy = store;
  EXPECT_EQ(&copy.get("a"), &copy.params()[1]);
}

TEST(Checkpoint, RoundTripRestoresValuesAndOptimizerState) {
  const Corpus corpus = fixtures::tiny_corpus();
  const ModelConfig mc = fixtures::tiny_model_config(corpus);
  TmegModel model(mc, 5);
  for (Parameter& p : model.store().params()) p.grad.fill(Real(0.25));
  model.store().adam_step({});
  std::stringstream ss;
  write_checkpoint(ss, model.store(), model_config_text(mc));

  TmegModel restored(mc, 99);
  read_checkpoint(ss, restored.store(), model_config_text(mc));
  EXPECT_EQ(restored.store().step(), 1u);
  for (std::size_t i = 0; i < model.store().size(); ++i) {
    const Parameter& a = model.store().params()[i];
    const Parameter& b = restored.store().params()[i];
    EXPECT_EQ(a.value, b.value) << a.name;
    EXPECT_EQ(a.first_moment, b.first_moment) << a.name;
    EXPECT_EQ(a.second_moment, b.second_moment) << a.name;
  }
}

TEST(Checkpoint, ConfigHashMismatchIsRejected) {
  const Corpus corpus = fixtures::tiny_corpus();
  ModelConfig mc = fixtures::tiny_model_config(corpus);
  TmegModel model(mc, 5);
  std::stringstream ss;
  write_checkpoint(ss, model.store(), model_config_text(mc));
  ModelConfig other = mc;
  other.tau = Real(0.5);
  TmegModel target(other, 5);
  EXPECT_THROW(read_checkpoint(ss, target.store(), model_config_text(other)), ConfigError);
}

TEST(Checkpoint, CorruptInputIsADataError) {
  std::stringstream bad("NOTACKPT");
  ParamStore store;
  EXPECT_THROW(read_checkpoint(bad, store, "{}"), DataError);

  ParamStore small;
  small.add("w", DenseArray::row({1, 2}));
  std::stringstream ss;
  write_checkpoint(ss, small, "{}");
  const std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_checkpoint(truncated, small, "{}"), DataError);
}

TEST(Streams, DerivedStreamsAreStableAndDistinct) {
  Rng a = derive_stream(11, "x", "doc-1");
  Rng b = derive_stream(11, "x", "doc-1");
  Rng c = derive_stream(11, "x", "doc-2");
  EXPECT_EQ(a(), b());
  EXPECT_NE(derive_stream(11, "x", "doc-1")(), c());
  EXPECT_NE(derive_stream(11, "ab", "c")(), derive_stream(11, "a", "bc")());
}
