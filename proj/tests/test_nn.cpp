#include <cmath>
#include <random>

#include "rspace/nn/adam.hpp"
#include "rspace/nn/grad_check.hpp"
#include "rspace/nn/sequential.hpp"
#include "rspace/nn/serialize.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace rspace;
using namespace rspace::nn;
using namespace rspace::oracle;

namespace {

// Direct seven-loop cross-correlation, weights [co][ci][kz][ky][kx].
Tensor<double> conv_reference(const Tensor<double>& x, std::span<const double> w, std::span<const double> b, int cout,
                              int k, int stride, int pad) {
  const int cin = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int od = (D + 2 * pad - k) / stride + 1, oh = (H + 2 * pad - k) / stride + 1, ow = (W + 2 * pad - k) / stride + 1;
  Tensor<double> y({cout, od, oh, ow});
  for (int co = 0; co < cout; ++co)
    for (int z = 0; z < od; ++z)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b[std::size_t(co)];
          for (int ci = 0; ci < cin; ++ci)
            for (int kz = 0; kz < k; ++kz)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iz = z * stride - pad + kz, iy = yy * stride - pad + ky, ix = xx * stride - pad + kx;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= D || iy >= H || ix >= W) continue;
                  acc += w[(((std::size_t(co) * cin + ci) * k + kz) * k + ky) * k + kx] *
                         x[((std::size_t(ci) * D + iz) * H + iy) * W + ix];
                }
          y[((std::size_t(co) * od + z) * oh + yy) * ow + xx] = acc;
        }
  return y;
}

// Direct scatter form of the transposed convolution, weights [ci][co][kz][ky][kx].
Tensor<double> conv_transposed_reference(const Tensor<double>& x, std::span<const double> w, std::span<const double> b,
                                         const Shape& out_shape, int k, int stride, int pad) {
  const int cin = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int cout = out_shape[0], od = out_shape[1], oh = out_shape[2], ow = out_shape[3];
  Tensor<double> y(out_shape);
  for (int co = 0; co < cout; ++co)
    for (std::size_t i = 0; i < std::size_t(od) * oh * ow; ++i) y[std::size_t(co) * od * oh * ow + i] = b[std::size_t(co)];
  for (int ci = 0; ci < cin; ++ci)
    for (int z = 0; z < D; ++z)
      for (int yy = 0; yy < H; ++yy)
        for (int xx = 0; xx < W; ++xx)
          for (int co = 0; co < cout; ++co)
            for (int kz = 0; kz < k; ++kz)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int oz = z * stride - pad + kz, oy = yy * stride - pad + ky, ox = xx * stride - pad + kx;
                  if (oz < 0 || oy < 0 || ox < 0 || oz >= od || oy >= oh || ox >= ow) continue;
                  y[((std::size_t(co) * od + oz) * oh + oy) * ow + ox] +=
                      w[(((std::size_t(ci) * cout + co) * k + kz) * k + ky) * k + kx] *
                      x[((std::size_t(ci) * D + z) * H + yy) * W + xx];
                }
  return y;
}

}  // namespace

TEST(Tensor, ShapeAndCount) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
  t.reshape({24});
  EXPECT_EQ(t.rank(), 1u);
  EXPECT_THROW(t.reshape({5, 5}), ShapeError);
}

TEST(Conv3d, IdentityKernel) {
  Sequential<double> m({2, 3, 4, 5}, {LayerSpec::conv3d(2, 2, 1, 1, 0)});
  std::fill(m.params().begin(), m.params().end(), 0.0);
  m.params()[0] = 1.0;  // w[0][0]
  m.params()[3] = 1.0;  // w[1][1]
  const auto x = random_tensor({2, 3, 4, 5}, 1);
  EXPECT_EQ(m.forward(x), x);
}

TEST(Conv3d, ZeroWeightsGiveConstantBias) {
  Sequential<double> m({1, 4, 4, 4}, {LayerSpec::conv3d(1, 2, 3, 1, 1)});
  std::fill(m.params().begin(), m.params().end(), 0.0);
  m.params()[m.num_params() - 2] = 0.75;
  m.params()[m.num_params() - 1] = -2.0;
  const auto y = m.forward(random_tensor({1, 4, 4, 4}, 2));
  for (std::size_t i = 0; i < 64; ++i) ASSERT_EQ(y[i], 0.75);
  for (std::size_t i = 64; i < 128; ++i) ASSERT_EQ(y[i], -2.0);
}

TEST(Conv3d, MatchesDirectConvolution) {
  struct Case {
    Shape in;
    int cout, k, stride, pad;
  };
  for (const Case& c : {Case{{1, 4, 4, 4}, 1, 3, 1, 1}, Case{{3, 7, 6, 5}, 4, 3, 2, 1}, Case{{2, 6, 6, 6}, 3, 2, 2, 0}}) {
    Sequential<double> m(c.in, {LayerSpec::conv3d(c.in[0], c.cout, c.k, c.stride, c.pad)});
    randomize(m.params(), 3);
    const auto x = random_tensor(c.in, 4);
    const auto y = m.forward(x);
    const auto spec = m.specs()[0];
    const auto ref = conv_reference(x, m.params().subspan(0, spec.weight_count()),
                                    m.params().subspan(spec.weight_count()), c.cout, c.k, c.stride, c.pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-6);
  }
}

TEST(Conv3dTransposed, MatchesDirectScatter) {
  Sequential<double> m({3, 3, 4, 2}, {LayerSpec::conv3d_transposed(3, 2, 3, 2, 1, 1)});
  randomize(m.params(), 5);
  const auto x = random_tensor({3, 3, 4, 2}, 6);
  const auto y = m.forward(x);
  EXPECT_EQ(y.shape(), (Shape{2, 6, 8, 4}));
  const auto spec = m.specs()[0];
  const auto ref = conv_transposed_reference(x, m.params().subspan(0, spec.weight_count()),
                                             m.params().subspan(spec.weight_count()), y.shape(), 3, 2, 1);
  for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-9);
}

TEST(Conv3dTransposed, IsAdjointOfConv3d) {
  for (int stride : {1, 2}) {
    const int op = stride == 2 ? 1 : 0;
    Sequential<double> conv({2, 8, 8, 8}, {LayerSpec::conv3d(2, 3, 3, stride, 1)});
    Sequential<double> convt(conv.output_shape(), {LayerSpec::conv3d_transposed(3, 2, 3, stride, 1, op)});
    ASSERT_EQ(convt.output_shape(), conv.input_shape());
    randomize(conv.params(), 7);
    const std::size_t nw = conv.specs()[0].weight_count();
    std::fill(conv.params().begin() + std::ptrdiff_t(nw), conv.params().end(), 0.0);
    std::fill(convt.params().begin(), convt.params().end(), 0.0);
    std::copy(conv.params().begin(), conv.params().begin() + std::ptrdiff_t(nw), convt.params().begin());
    const auto x = random_tensor(conv.input_shape(), 8);
    const auto y = random_tensor(conv.output_shape(), 9);
    EXPECT_NEAR(dot(conv.forward(x), y), dot(x, convt.forward(y)), 1e-6);
  }
}

TEST(Layers, ShapeErrorsAtBuildTimeNameTheAxis) {
  try {
    Sequential<float> m({1, 8, 8, 8}, {LayerSpec::conv3d(1, 4, 3, 2, 1), LayerSpec::conv3d(3, 2, 3, 1, 1)});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 0 expected 3, got 4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(Sequential<float>({1, 8, 8, 8}, {LayerSpec::conv3d(1, 4, 3, 2, 1), LayerSpec::dense(100, 10)}),
               ShapeError);
  EXPECT_THROW(Sequential<float>({2, 8, 8, 8}, {LayerSpec::conv3d(1, 4, 3, 1, 1)}), ShapeError);
  EXPECT_THROW(Sequential<float>({1, 4, 4, 4}, {LayerSpec::crop3d(2)}), ShapeError);
  EXPECT_THROW(Sequential<float>({1, 4, 4, 4}, {LayerSpec::reshape({5, 5})}), ShapeError);
  EXPECT_THROW(Sequential<float>({1, 4, 4, 4}, {LayerSpec::conv3d_transposed(1, 1, 3, 2, 1, 2)}), ShapeError);
  Sequential<float> ok({1, 4, 4, 4}, {LayerSpec::flatten(), LayerSpec::dense(64, 3)});
  EXPECT_THROW(ok.forward(Tensor<float>({1, 4, 4, 5})), ShapeError);
}

TEST(Backward, SumLossGivesUnitInputGradient) {
  Sequential<double> m({2, 3, 3, 3}, {LayerSpec::pad3d(1), LayerSpec::crop3d(1), LayerSpec::flatten()});
  Tape<double> tape;
  const auto y = m.forward(random_tensor({2, 3, 3, 3}, 1), &tape);
  const auto g = backward(m, tape, sum_loss(y));
  for (double v : g.input.vec()) ASSERT_EQ(v, 1.0);
}

TEST(Backward, MseLossClosedForm) {
  const auto y = random_tensor({10}, 2), t = random_tensor({10}, 3);
  const auto loss = mse_loss(y, t);
  double expect = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    expect += (y[i] - t[i]) * (y[i] - t[i]) / 10.0;
    EXPECT_NEAR(loss.grad_output[i], 2.0 * (y[i] - t[i]) / 10.0, 1e-15);
  }
  EXPECT_NEAR(loss.value[0], expect, 1e-15);
}

TEST(Backward, NonScalarLossIsContractError) {
  Sequential<double> m({4}, {LayerSpec::dense(4, 3)});
  Tape<double> tape;
  const auto y = m.forward(random_tensor({4}, 1), &tape);
  EXPECT_THROW(backward(m, tape, LossNode<double>{y, y}), ContractError);
}

TEST(Backward, DeadReluLeavesUpstreamGradientsZero) {
  Sequential<double> m({3}, {LayerSpec::dense(3, 4), LayerSpec::relu(), LayerSpec::dense(4, 2)});
  std::fill(m.params().begin(), m.params().end(), 0.5);
  for (std::size_t i = 12; i < 16; ++i) m.params()[i] = -10.0;  // first-layer biases kill every unit
  Tape<double> tape;
  const auto y = m.forward(random_tensor({3}, 4), &tape);
  const auto g = backward(m, tape, sum_loss(y));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(g.params[i], 0.0);
  EXPECT_NE(g.params[m.num_params() - 1], 0.0);
}

TEST(GradCheck, EveryLayerKindParameters) {
  for (const auto& c : layer_param_cases()) {
    Sequential<double> m(c.in, c.specs);
    randomize(m.params(), 12);
    const auto x = away_from_zero(random_tensor(c.in, 13), 1e-3);
    const GradCheckReport r = grad_check(m, x, 1e-4, 400, 5);
    EXPECT_LT(r.max_rel_error, 1e-5) << c.name;
    EXPECT_GT(r.checked, 0u) << c.name;
  }
}

TEST(GradCheck, EveryLayerKindInputs) {
  for (const auto& c : layer_input_cases()) {
    Sequential<double> m(c.in, c.specs);
    randomize(m.params(), 21);
    const auto x = away_from_zero(random_tensor(c.in, 22), 1e-3);
    EXPECT_LT(input_grad_error(m, x, 23), 1e-5) << c.name;
  }
}

TEST(GradCheck, LinearModelIsExact) {
  Sequential<double> m({6}, {LayerSpec::dense(6, 5), LayerSpec::dense(5, 3)});
  randomize(m.params(), 1);
  const GradCheckReport r = grad_check(m, random_tensor({6}, 2), 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.checked, m.num_params());
}

TEST(GradCheck, SubsamplesAtLeast200Coordinates) {
  Sequential<double> m({1, 4, 4, 4}, {LayerSpec::conv3d(1, 4, 3, 1, 1), LayerSpec::flatten(), LayerSpec::dense(256, 3)});
  m.init(3);
  const GradCheckReport r = grad_check(m, random_tensor({1, 4, 4, 4}, 4), 1e-4, 256, 9);
  EXPECT_EQ(r.checked + r.skipped_kinks, 256u);
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(GradCheck, DetectsCorruptedGradient) {
  Sequential<double> m({5}, {LayerSpec::dense(5, 3)});
  randomize(m.params(), 7);
  const auto x = random_tensor({5}, 8);
  const auto r = random_tensor(m.output_shape(), 9);
  Tape<double> tape;
  m.forward(x, &tape);
  Buffer<double> g(m.num_params(), 0.0);
  m.backward(tape, r, g, false);
  g[4] *= 1.1;
  auto probe = [&] { return LossProbe{dot(r, m.forward(x)), 0}; };
  const GradCheckReport rep = grad_check_params<double>(m.params(), g, probe, 1e-4);
  EXPECT_GT(rep.max_rel_error, 1e-2);
  EXPECT_EQ(rep.worst_index, 4u);
}

TEST(Forward, FiniteAndDeterministicOnRandomModels) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int c = std::uniform_int_distribution<int>(1, 3)(rng);
    Sequential<float> m({c, 8, 8, 8}, {LayerSpec::pad3d(1), LayerSpec::conv3d(c, 4, 3, 2, 1), LayerSpec::relu(),
                                       LayerSpec::conv3d_transposed(4, 2, 3, 2, 1, 1), LayerSpec::crop3d(1),
                                       LayerSpec::flatten(), LayerSpec::dense(2 * 512, 5)});
    m.init(std::uint64_t(trial));
    const auto x = random_tensor({c, 8, 8, 8}, std::uint64_t(trial)).cast<float>();
    const auto y1 = m.forward(x), y2 = m.forward(x);
    EXPECT_TRUE(y1.all_finite());
    EXPECT_EQ(y1, y2);
  }
}

TEST(Init, GlorotUniformBoundsAndZeroBias) {
  Sequential<double> m({10}, {LayerSpec::dense(10, 30)});
  m.init(1);
  const double limit = std::sqrt(6.0 / 40.0);
  for (std::size_t i = 0; i < 300; ++i) {
    EXPECT_LE(std::abs(m.params()[i]), limit);
  }
  for (std::size_t i = 300; i < 330; ++i) EXPECT_EQ(m.params()[i], 0.0);
  Sequential<double> again({10}, {LayerSpec::dense(10, 30)});
  again.init(1);
  EXPECT_TRUE(std::equal(m.params().begin(), m.params().end(), again.params().begin()));
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<double> p{1.0, -2.0, 3.0}, g(3, 0.0);
  Adam<double> opt(3, {});
  opt.step(p, g);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> p{0.5}, g{1.0};
  Adam<double> opt(1, {});
  opt.step(p, g);
  EXPECT_NEAR(p[0], 0.5 - 1e-3, 1e-10);
}

TEST(Adam, MatchesHandIteratedRecurrence) {
  const AdamConfig c{0.01, 0.9, 0.999, 1e-8};
  const double g = 0.37;
  std::vector<double> p{1.5}, gv{g};
  Adam<double> opt(1, c);
  opt.step(p, gv);
  opt.step(p, gv);
  double theta = 1.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = c.beta1 * m + (1 - c.beta1) * g;
    v = c.beta2 * v + (1 - c.beta2) * g * g;
    const double mh = m / (1 - std::pow(c.beta1, t)), vh = v / (1 - std::pow(c.beta2, t));
    theta -= c.lr * mh / (std::sqrt(vh) + c.eps);
  }
  EXPECT_NEAR(p[0], theta, 1e-12);
  EXPECT_NEAR(opt.first_moment()[0], m, 1e-15);
  EXPECT_NEAR(opt.second_moment()[0], v, 1e-15);
}

TEST(Adam, NonFiniteGradientFailsFastWithoutMutation) {
  std::vector<double> p{1.0, 2.0}, g{0.1, std::nan("")};
  Adam<double> opt(2, {});
  EXPECT_THROW(opt.step(p, g), TrainingError);
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(opt.step_count(), 0u);
  EXPECT_EQ(opt.first_moment()[0], 0.0);
  std::vector<double> wrong(3, 0.0);
  EXPECT_THROW(opt.step(p, wrong), ShapeError);
}

TEST(ModelFile, RoundTripIsBitExact) {
  const auto dir = rspace::test::scratch_dir("mdl");
  Sequential<float> m({1, 4, 4, 4}, {LayerSpec::conv3d(1, 2, 3, 2, 1), LayerSpec::relu(), LayerSpec::flatten(),
                                     LayerSpec::dense(16, 3)});
  m.init(4);
  const std::string path = (dir / "m.rsmdl").string();
  write_model_file(path, m.describe(), {m.params()});
  const ModelFile mf = read_model_file(path, [](const nlohmann::json& d) {
    return Sequential<float>::from_description(d).num_params();
  });
  auto back = Sequential<float>::from_description(mf.descriptor);
  EXPECT_EQ(back.specs(), m.specs());
  ASSERT_EQ(mf.params.size(), m.num_params());
  EXPECT_TRUE(std::equal(mf.params.begin(), mf.params.end(), m.params().begin()));

  std::string bytes = rspace::test::slurp(path);
  EXPECT_EQ(bytes.substr(0, 6), "RSMDL1");
  rspace::test::spit(dir / "short.rsmdl", bytes.substr(0, bytes.size() - 4));
  auto count = [](const nlohmann::json& d) { return Sequential<float>::from_description(d).num_params(); };
  EXPECT_THROW(read_model_file((dir / "short.rsmdl").string(), count), FormatError);
  bytes[0] = 'Q';
  rspace::test::spit(dir / "magic.rsmdl", bytes);
  EXPECT_THROW(read_model_file((dir / "magic.rsmdl").string(), count), FormatError);
}
