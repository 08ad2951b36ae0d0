#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "less/nn/attention.hpp"
#include "less/nn/checkpoint.hpp"
#include "less/nn/conv.hpp"
#include "less/nn/cross_attention.hpp"
#include "less/nn/encoder.hpp"
#include "less/nn/optim.hpp"
#include "less/nn/transformer.hpp"

using namespace less;
using namespace less::nn;
using less::testing::check_params;
using less::testing::check_tensor;
using less::testing::dot;
using less::testing::GradReport;
using less::testing::Mat;

namespace {

Mat randn(Index r, Index c, Rng& rng) { return normal_matrix<double>(r, c, 1.0, rng); }

TEST(Attention, HandEvaluatedTwoKeyExample) {
  Mat q(1, 2), k(2, 2), v(2, 2);
  q << 1, 0;
  k << 1, 0, 0, 1;
  v << 1, 0, 0, 1;
  const auto out = attention<double>(q, k, v, 1);
  // softmax(1/sqrt(2), 0) = e^0.70711 / (e^0.70711 + 1) = 2.02811 / 3.02811
  EXPECT_NEAR(out.maps[0](0, 0), 0.669761, 1e-6);
  EXPECT_NEAR(out.maps[0](0, 1), 0.330239, 1e-6);
  EXPECT_NEAR(out.output(0, 0), 0.669761, 1e-6);
}

TEST(Attention, SingleKeyReturnsItsValue) {
  Rng rng(1);
  const Mat q = randn(1, 4, rng), k = randn(1, 4, rng), v = randn(1, 4, rng);
  const auto out = attention<double>(q, k, v, 2);
  for (const auto& m : out.maps) EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
  EXPECT_LT((out.output - v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, EqualLogitsAverageValues) {
  Mat q(1, 2), k(2, 2), v(2, 2);
  q << 0.3, -0.2;
  k << 1, 2, 1, 2;
  v << 4, 0, 0, 2;
  const auto out = attention<double>(q, k, v, 1);
  EXPECT_NEAR(out.output(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(out.output(0, 1), 1.0, 1e-12);
}

TEST(Attention, RejectsIndivisibleHeads) {
  Rng rng(2);
  const Mat x = randn(3, 6, rng);
  EXPECT_THROW(attention<double>(x, x, x, 4), ShapeError);
}

TEST(Softmax, RowsSumToOneForExtremeLogits) {
  Mat x(3, 4);
  x << 1000, -1000, 0, 1, -1e4, -1e4, -1e4, -1e4, 0, 0, 0, 700;
  const Mat p = softmax_rows<double>(x);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-12);
  EXPECT_TRUE(p.allFinite());
}

TEST(Layers, LinearLayerNormConvGradients) {
  Rng rng(3);
  Linear<double> lin("lin", 5, 3, rng, Init::kKaimingUniform);
  LayerNorm<double> ln("ln", 5);
  Mat x = randn(4, 5, rng);
  const Mat w = randn(4, 3, rng);
  ParamRefs<double> ps;
  ln.collect(ps);
  lin.collect(ps);
  less::testing::jitter(ps, rng);
  auto loss = [&] { return dot(w, lin.forward(ln.forward(x))); };
  zero_grads(ps);
  LayerNorm<double>::Cache c;
  const Mat h = ln.forward(x, &c);
  const Mat dx = ln.backward(c, lin.backward(h, w));
  auto rep = check_params(ps, loss);
  check_tensor(x, dx, "x", loss, rep);
  EXPECT_LE(rep.max_rel, 1e-4) << rep.worst;

  Conv2d<double> conv("conv", ConvGeometry{2, 7, 3, 3, 2, 1}, rng);
  Mat img = randn(2, 2 * 7 * 7, rng);
  const Mat y0 = conv.forward(img);
  const Mat wy = randn(y0.rows(), y0.cols(), rng);
  ParamRefs<double> cps;
  conv.collect(cps);
  zero_grads(cps);
  const Mat dimg = conv.backward(img, wy, true);
  auto crep = check_params(cps, [&] { return dot(wy, conv.forward(img)); });
  check_tensor(img, dimg, "img", [&] { return dot(wy, conv.forward(img)); }, crep);
  EXPECT_LE(crep.max_rel, 1e-4) << crep.worst;
}

TEST(Layers, ConvMatchesDirectLoop) {
  Rng rng(4);
  const ConvGeometry g{2, 6, 3, 3, 2, 1};
  Conv2d<double> conv("conv", g, rng);
  conv.bias.value = randn(1, 3, rng);
  const Mat x = randn(1, 2 * 6 * 6, rng);
  const Mat y = conv.forward(x);
  const Index o = g.out_size();
  ASSERT_EQ(o, 3);
  for (Index oc = 0; oc < 3; ++oc) {
    for (Index oy = 0; oy < o; ++oy) {
      for (Index ox = 0; ox < o; ++ox) {
        double acc = conv.bias.value(0, oc);
        for (Index ic = 0; ic < 2; ++ic) {
          for (Index ky = 0; ky < 3; ++ky) {
            for (Index kx = 0; kx < 3; ++kx) {
              const Index iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || ix < 0 || iy >= 6 || ix >= 6) continue;
              acc += conv.weight.value(oc, (ic * 3 + ky) * 3 + kx) * x(0, (ic * 6 + iy) * 6 + ix);
            }
          }
        }
        EXPECT_NEAR(y(0, (oc * o + oy) * o + ox), acc, 1e-12);
      }
    }
  }
}

TEST(TransformerBlock, ZeroSublayersAreIdentity) {
  Rng rng(5);
  TransformerBlock<double> blk("b", 8, 2, 4.0, 0.0, 0.0, rng);
  for (auto* p : {&blk.attn.proj.weight, &blk.attn.proj.bias, &blk.mlp.fc2.weight, &blk.mlp.fc2.bias}) {
    p->value.setZero();
  }
  const Mat x = randn(5, 8, rng);
  TransformerBlock<double>::Cache c;
  EXPECT_EQ(blk.forward(x, Context{}, c), x);
}

TEST(TransformerBlock, EvalModeIsDeterministicAndFiniteChecked) {
  Rng rng(6);
  TransformerBlock<double> blk("b", 8, 2, 4.0, 0.3, 0.3, rng);
  const Mat x = randn(5, 8, rng);
  TransformerBlock<double>::Cache c1, c2;
  EXPECT_EQ(blk.forward(x, Context{}, c1), blk.forward(x, Context{}, c2));
  Mat bad = x;
  bad(0, 0) = std::nan("");
  EXPECT_THROW(blk.forward(bad, Context{}, c1), std::domain_error);
}

TEST(CrossAttention, ZeroedMcaKeepsTokensAndMapsCls) {
  Rng rng(7);
  CrossAttentionModule<double> mod("x", 6, 8, 2, 2, rng);
  mod.large.mca.proj.weight.value.setZero();
  mod.large.mca.proj.bias.value.setZero();
  const Mat xl = randn(4, 8, rng), xs = randn(6, 6, rng);
  CrossAttentionModule<double>::Cache c;
  const auto out = mod.forward(xl, xs, c);
  EXPECT_EQ(out.z_large.bottomRows(3), xl.bottomRows(3));
  // CLS = g(f(cls)) when the attention contributes nothing.
  Projection<double>::Cache fc, gc;
  const Mat expect = mod.large.g.forward(mod.large.f.forward(xl.topRows(1), fc), gc);
  EXPECT_LT((out.z_large.topRows(1) - expect).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(out.attn_large_query.sum(), 1.0, 1e-12);
  EXPECT_EQ(out.attn_large_query.cols(), 6);
}

TEST(Encoder, ShapesAndNormalisation) {
  Rng rng(8);
  EncoderNet<float> net(EncoderSpec::small_scale(), rng);
  const Matrix<float> x = normal_matrix<float>(3, EncoderSpec::small_scale().input_numel(), 1.0f, rng);
  const auto out = net.forward(x);
  EXPECT_EQ(out.embedding.rows(), 3);
  EXPECT_EQ(out.embedding.cols(), 384);
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(out.log_prob.row(i).array().exp().sum(), 1.0f, 1e-6f);
  EXPECT_EQ(EncoderSpec::large_scale().embed_dim, 768);
  EXPECT_THROW(net.forward(Matrix<float>::Zero(1, 10)), ShapeError);
}

TEST(Encoder, ZeroFinalLayerGivesUniformLogProb) {
  Rng rng(9);
  EncoderNet<double> net(EncoderSpec::small_scale(), rng);
  net.fc3.weight.value.setZero();
  net.fc3.bias.value.setZero();
  const Mat x = normal_matrix<double>(2, EncoderSpec::small_scale().input_numel(), 1.0, rng);
  const auto out = net.forward(x);
  EXPECT_NEAR(out.log_prob(0, 0), std::log(0.5), 1e-15);
  EXPECT_NEAR(out.log_prob(1, 1), std::log(0.5), 1e-15);
}

TEST(Encoder, SpecRoundTrip) {
  auto s = EncoderSpec::large_scale();
  s.hidden = 77;
  const auto r = EncoderSpec::from_string(s.to_string());
  EXPECT_EQ(r.to_string(), s.to_string());
  EXPECT_EQ(r.hidden, 77);
  EXPECT_EQ(r.input_px, 256);
}

TEST(Checkpoint, RoundTripRestoresParameters) {
  Rng rng(10);
  EncoderSpec spec;
  spec.hidden = 8;
  spec.embed_dim = 6;
  EncoderNet<float> a(spec, rng), b(spec, rng);
  const auto path = std::filesystem::temp_directory_path() / "less_ckpt_test.ckpt";
  nn::write_checkpoint(path, nn::make_checkpoint("encoder", spec.to_string(), a.parameters()));
  const auto ck = nn::read_checkpoint(path);
  EXPECT_EQ(ck.kind, "encoder");
  load_parameters(ck, b.parameters());
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
  std::filesystem::remove(path);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  Rng rng(11);
  Linear<double> a("l", 3, 2, rng, Init::kKaimingUniform), b("l", 4, 2, rng, Init::kKaimingUniform);
  ParamRefs<double> pa, pb;
  a.collect(pa);
  b.collect(pb);
  const auto ck = make_checkpoint("x", "", pa);
  EXPECT_THROW(load_parameters(ck, pb), std::exception);
}

TEST(Optim, StepScheduleHalvesEveryTwoEpochsDownToFloor) {
  const StepSchedule s{1e-4, 0.5, 2, 1.25e-5};
  EXPECT_DOUBLE_EQ(s.at(0), 1e-4);
  EXPECT_DOUBLE_EQ(s.at(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.at(2), 5e-5);
  EXPECT_DOUBLE_EQ(s.at(4), 2.5e-5);
  EXPECT_DOUBLE_EQ(s.at(6), 1.25e-5);
  EXPECT_DOUBLE_EQ(s.at(9), 1.25e-5);
}

TEST(Optim, WarmupCosineEndpoints) {
  const WarmupCosineSchedule s{1e-6, 5e-7, 5, 40};
  EXPECT_DOUBLE_EQ(s.at(0), 1e-7);
  EXPECT_DOUBLE_EQ(s.at(5), 1e-6);
  EXPECT_NEAR(s.at(39), 5e-7, 1e-18);
  for (int e = 5; e < 39; ++e) EXPECT_GE(s.at(e), s.at(e + 1));
}

TEST(Optim, AdamMinimisesQuadratic) {
  Parameter<double> p("p", Mat::Constant(1, 3, 5.0));
  Adam<double> opt({&p}, {});
  for (int i = 0; i < 2000; ++i) {
    p.grad = 2.0 * p.value;  // d/dp |p|^2
    opt.step(0.05);
  }
  EXPECT_LT(p.value.cwiseAbs().maxCoeff(), 1e-2);
}

}  // namespace
