#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ikno/error.hpp"
#include "ikno/model.hpp"
#include "ikno/resolvent.hpp"
#include "ikno/training.hpp"
#include "test_util.hpp"

namespace ikno {
namespace {

using test::random_cloud;

ModelConfig toy_config() {
  ModelConfig c;
  c.dim = 2;
  c.grid_points = 4;
  c.hidden = 8;
  c.branches = 2;
  c.processor_width = 4;
  c.init_scales = {1.0, 2.0};
  c.init_alpha = -0.3;
  return c;
}

void randomize(ParamVector& p, std::string_view segment, Rng64& rng, double scale = 0.5) {
  for (auto& v : p.segment(segment)) v = rng.uniform(-scale, scale);
}

// Straight-line MLP: y = W_L(...gelu(W_1 x + b_1)...) + b_L
DenseMatrix mlp_oracle(const std::vector<std::size_t>& widths, std::span<const double> p,
                       const DenseMatrix& x, bool gelu) {
  DenseMatrix cur = x;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    DenseMatrix next(cur.rows(), out);
    for (std::size_t r = 0; r < cur.rows(); ++r)
      for (std::size_t o = 0; o < out; ++o) {
        double s = p[off + in * out + o];
        for (std::size_t i = 0; i < in; ++i) s += cur(r, i) * p[off + i * out + o];
        next(r, o) = (gelu && l + 2 < widths.size()) ? gelu_tanh(s) : s;
      }
    off += in * out + out;
    cur = std::move(next);
  }
  return cur;
}

TEST(PositionalEncode, Values) {
  const std::vector<double> zero{0.0};
  EXPECT_EQ(positional_encode(zero), (std::vector<double>{0.0, 1.0, 0.0}));
  const std::vector<double> half{std::numbers::pi / 2};
  const auto e = positional_encode(half);
  EXPECT_NEAR(e[1], 0.0, 1e-12);
  EXPECT_NEAR(e[2], 1.0, 1e-12);
  const std::vector<double> two{0.0, std::numbers::pi};
  const auto f = positional_encode(two);
  const std::vector<double> expected{0.0, std::numbers::pi, 1.0, -1.0, 0.0, 0.0};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(f[i], expected[i], 1e-12);
  EXPECT_THROW(positional_encode(two, 2), Error);
}

TEST(Gelu, DerivativeMatchesDifferences) {
  for (double x = -4; x <= 4; x += 0.37) {
    const double fd = (gelu_tanh(x + 1e-6) - gelu_tanh(x - 1e-6)) / 2e-6;
    EXPECT_NEAR(gelu_tanh_derivative(x), fd, 1e-8);
  }
  EXPECT_EQ(gelu_tanh(0.0), 0.0);
}

TEST(InitParams, BranchDefaults) {
  ModelConfig c;
  c.branches = 3;
  const IknoModel model(c);
  const ParamVector p = model.init_params(1);
  const auto k = model.kernel_params(p);
  const double scales[] = {1.0, 2.0, 4.0};
  for (std::size_t q = 0; q < 3; ++q) {
    EXPECT_EQ(k.branches[q].alpha, -1.0);
    for (const auto& a : k.branches[q].axes) {
      EXPECT_EQ(a.beta, scales[q]);
      EXPECT_EQ(a.gamma, scales[q]);
      EXPECT_EQ(a.c, 1.0);
    }
  }
  EXPECT_EQ(model.init_params(1).values, p.values);
  EXPECT_NE(model.init_params(2).values, p.values);
}

TEST(Tokenize, ZeroWeights) {
  const IknoModel model(toy_config());
  ParamVector p = model.init_params(0);
  for (auto& v : p.segment("tokenizer")) v = 0.0;
  Rng64 rng(1);
  const DenseMatrix t = model.tokenize(p, random_cloud(2, 5, 1, rng));
  for (double v : t.values()) EXPECT_EQ(v, 0.0);
}

TEST(Tokenize, MatchesStraightLineMlp) {
  const IknoModel model(toy_config());
  const ParamVector p = model.init_params(3);
  Rng64 rng(2);
  const PointCloud cloud = random_cloud(2, 3, 1, rng);
  DenseMatrix feats(3, 7);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto e = positional_encode(cloud.point(i));
    for (std::size_t k = 0; k < 6; ++k) feats(i, k) = e[k];
    feats(i, 6) = cloud.values[i];
  }
  const DenseMatrix expected = mlp_oracle(model.tokenizer_mlp().widths, p.segment("tokenizer"), feats, true);
  EXPECT_LE(max_abs_diff(model.tokenize(p, cloud), expected), 1e-14);
}

TEST(Encode, EmptyCloudGivesFusionOfZero) {
  const IknoModel model(toy_config());
  ParamVector p = model.init_params(0);
  Rng64 rng(3);
  randomize(p, "encoder_fusion", rng);
  const PointCloud empty(2, {}, 1, {});
  const DenseMatrix v = model.encode(p, DenseMatrix(0, 8), empty);
  const auto bias = p.segment("encoder_fusion").subspan(16 * 8, 8);
  for (std::size_t g = 0; g < v.rows(); ++g)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(v(g, c), bias[c]);
}

TEST(Encode, FirstOrderReduction) {
  ModelConfig c = toy_config();
  c.branches = 1;
  c.init_scales = {1.5};
  c.variant = OperatorVariant::Truncated;
  c.truncation_order = 0;
  const IknoModel model(c);
  const ParamVector p = model.init_params(4);
  Rng64 rng(4);
  const PointCloud cloud = random_cloud(2, 9, 1, rng);
  const DenseMatrix tokens = model.tokenize(p, cloud);
  const auto k = model.kernel_params(p);
  const DenseMatrix kgp = cross_kernel(k.branches[0].axes, model.grid(), cloud);
  EXPECT_LE(max_abs_diff(model.encode(p, tokens, cloud), matmul(kgp, tokens)), 1e-13);
}

TEST(Encode, ZeroAlphaVanillaIsFirstOrder) {
  ModelConfig c = toy_config();
  c.branches = 1;
  c.init_scales = {1.0};
  c.variant = OperatorVariant::Vanilla;
  c.init_alpha = 0.0;
  const IknoModel model(c);
  const ParamVector p = model.init_params(5);
  Rng64 rng(5);
  const PointCloud cloud = random_cloud(2, 7, 1, rng);
  const DenseMatrix tokens = model.tokenize(p, cloud);
  const DenseMatrix kgp = cross_kernel(model.kernel_params(p).branches[0].axes, model.grid(), cloud);
  EXPECT_LE(max_abs_diff(model.encode(p, tokens, cloud), matmul(kgp, tokens)), 1e-12);
}

// Encoder and decoder composed from the library primitives.
struct PipelineOracle {
  const IknoModel& model;
  const ParamVector& p;

  LatentTensor resolve(const KernelBranch& b, const DenseMatrix& m) const {
    std::vector<DenseMatrix> grams;
    for (std::size_t j = 0; j < model.config().dim; ++j)
      grams.push_back(axis_gram(b.axes[j], model.grid().axis(j)));
    const LatentTensor t = LatentTensor::from_matrix(model.grid().axis_sizes(), m);
    return LatentTensor::from_matrix(model.grid().axis_sizes(),
                                     matmul(dense_resolvent(grams, b.alpha), t.to_matrix()));
  }

  DenseMatrix fuse(std::string_view seg, const std::vector<DenseMatrix>& parts) const {
    const std::size_t h = model.config().hidden;
    DenseMatrix concat(parts[0].rows(), parts.size() * h);
    for (std::size_t q = 0; q < parts.size(); ++q)
      for (std::size_t r = 0; r < concat.rows(); ++r)
        for (std::size_t c = 0; c < h; ++c) concat(r, q * h + c) = parts[q](r, c);
    return mlp_oracle({parts.size() * h, h}, p.segment(seg), concat, false);
  }

  DenseMatrix encode(const DenseMatrix& tokens, const PointCloud& cloud) const {
    std::vector<DenseMatrix> parts;
    for (const auto& b : model.kernel_params(p).branches)
      parts.push_back(resolve(b, matmul(cross_kernel(b.axes, model.grid(), cloud), tokens)).to_matrix());
    return fuse("encoder_fusion", parts);
  }

  DenseMatrix decode(const DenseMatrix& latent, const PointCloud& queries) const {
    std::vector<DenseMatrix> parts;
    for (const auto& b : model.kernel_params(p).branches)
      parts.push_back(matmul(cross_kernel(b.axes, queries, model.grid()), resolve(b, latent).to_matrix()));
    return mlp_oracle(model.head_mlp().widths, p.segment("head"), fuse("decoder_fusion", parts), true);
  }
};

TEST(Pipeline, EncodeDecodeMatchComponentOracle) {
  ModelConfig c = toy_config();
  c.variant = OperatorVariant::Vanilla;
  const IknoModel model(c);
  ParamVector p = model.init_params(6);
  Rng64 rng(6);
  randomize(p, "encoder_fusion", rng);
  randomize(p, "decoder_fusion", rng);
  const PointCloud cloud = random_cloud(2, 16, 1, rng);
  const PointCloud queries = random_cloud(2, 5, 0, rng);
  const PipelineOracle oracle{model, p};
  const DenseMatrix tokens = model.tokenize(p, cloud);
  const DenseMatrix enc = model.encode(p, tokens, cloud);
  EXPECT_LE(max_abs_diff(enc, oracle.encode(tokens, cloud)), 1e-9);
  const DenseMatrix proc = model.process(p, enc);
  const DenseMatrix dec = model.decode(p, proc, queries);
  EXPECT_LE(max_abs_diff(dec, oracle.decode(proc, queries)), 1e-9);
  EXPECT_LE(max_abs_diff(model.forward(p, cloud, queries), dec), 1e-12);
}

TEST(Process, IdentityAndZeroMlp) {
  ModelConfig c = toy_config();
  c.processor = ProcessorKind::Identity;
  Rng64 rng(7);
  const DenseMatrix latent = test::random_matrix(16, 8, rng);
  const IknoModel id(c);
  EXPECT_EQ(id.process(id.init_params(0), latent).values(), latent.values());
  c.processor = ProcessorKind::Mlp;
  const IknoModel mlp(c);
  ParamVector p = mlp.init_params(0);
  for (auto& v : p.segment("processor")) v = 0.0;
  EXPECT_EQ(mlp.process(p, latent).values(), latent.values());
}

TEST(Process, TwoTokenAttention) {
  ModelConfig c = toy_config();
  c.grid_points = 2;
  c.dim = 1;
  c.hidden = 2;
  c.processor = ProcessorKind::TinyAttention;
  c.attention_heads = 1;
  const IknoModel model(c);
  ParamVector p = model.init_params(0);
  auto w = p.segment("processor");
  // Wq = I, Wk = 2I, Wv = [[1,1],[0,1]], Wo = I, bo = (0.1, -0.2)
  const double vals[] = {1, 0, 0, 1, 2, 0, 0, 2, 1, 1, 0, 1, 1, 0, 0, 1, 0.1, -0.2};
  std::copy(std::begin(vals), std::end(vals), w.begin());
  const DenseMatrix x = DenseMatrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  // scores_ij = (x_i · 2 x_j) / √2 → diag √2, off 0
  const double s = std::sqrt(2.0);
  const double p_self = std::exp(s) / (std::exp(s) + 1.0);
  const double p_other = 1.0 - p_self;
  // v rows: x Wv = (1, 1), (0, 1)
  const DenseMatrix expected = DenseMatrix::from_rows(
      {{1.0 + p_self * 1 + p_other * 0 + 0.1, 0.0 + p_self * 1 + p_other * 1 - 0.2},
       {0.0 + p_other * 1 + p_self * 0 + 0.1, 1.0 + p_other * 1 + p_self * 1 - 0.2}});
  EXPECT_LE(max_abs_diff(model.process(p, x), expected), 1e-14);
}

TEST(Decode, ZeroLatentGivesConstantField) {
  const IknoModel model(toy_config());
  const ParamVector p = model.init_params(8);
  Rng64 rng(8);
  const DenseMatrix out = model.decode(p, DenseMatrix(16, 8), random_cloud(2, 6, 0, rng));
  for (std::size_t r = 1; r < out.rows(); ++r) EXPECT_EQ(out(r, 0), out(0, 0));
}

TEST(Forward, ZeroHeadGivesZero) {
  const IknoModel model(toy_config());
  ParamVector p = model.init_params(9);
  for (auto& v : p.segment("head")) v = 0.0;
  Rng64 rng(9);
  const DenseMatrix out = model.forward(p, random_cloud(2, 10, 1, rng), random_cloud(2, 4, 0, rng));
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

class VariantTest : public ::testing::TestWithParam<OperatorVariant> {};

TEST_P(VariantTest, PermutationEquivarianceAndSubsets) {
  ModelConfig c = toy_config();
  c.variant = GetParam();
  const IknoModel model(c);
  const ParamVector p = model.init_params(10);
  Rng64 rng(10);
  const PointCloud cloud = random_cloud(2, 12, 1, rng);
  const PointCloud queries = random_cloud(2, 7, 0, rng);
  const DenseMatrix base = model.forward(p, cloud, queries);

  std::vector<std::size_t> perm{3, 0, 11, 5, 1, 2, 4, 6, 7, 10, 8, 9};
  const DenseMatrix tokens = model.tokenize(p, cloud);
  const DenseMatrix a = model.encode(p, tokens, cloud);
  const PointCloud pc = cloud.permuted(perm);
  const DenseMatrix b = model.encode(p, model.tokenize(p, pc), pc);
  EXPECT_LE(max_abs_diff(a, b), 1e-12 * (1.0 + a.max_abs()));

  std::vector<std::size_t> qperm{6, 2, 0, 1, 5, 4, 3};
  const DenseMatrix permuted = model.forward(p, cloud, queries.permuted(qperm));
  for (std::size_t i = 0; i < qperm.size(); ++i) EXPECT_EQ(permuted(i, 0), base(qperm[i], 0));

  std::vector<std::size_t> rows{1, 4, 6};
  const DenseMatrix sub = model.forward(p, cloud, queries.subset(rows));
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(sub(i, 0), base(rows[i], 0));
}

TEST_P(VariantTest, GradientMatchesFiniteDifferences) {
  ModelConfig c = toy_config();
  c.variant = GetParam();
  c.truncation_order = 2;
  const IknoModel model(c);
  const ParamVector p = model.init_params(11);
  Rng64 rng(11);
  const PointCloud cloud = random_cloud(2, 10, 1, rng);
  const PointCloud queries = random_cloud(2, 6, 0, rng);
  const DenseMatrix target = test::random_matrix(6, 1, rng);
  std::vector<double> g(p.values.size(), 0.0);
  model.loss_and_gradient(p, cloud, queries, target, g);
  const auto fd = grad_fd(
      [&](std::span<const double> v) {
        ParamVector q = p;
        q.values.assign(v.begin(), v.end());
        return *relative_l2_loss(target.values(), model.forward(q, cloud, queries).values());
      },
      p.values);
  for (std::size_t i = 0; i < fd.size(); ++i) {
    if (std::abs(fd[i]) < 1e-6) EXPECT_NEAR(g[i], fd[i], 1e-6) << i;
    else EXPECT_LE(std::abs(g[i] - fd[i]) / std::abs(fd[i]), 1e-4) << i;
  }
}

INSTANTIATE_TEST_SUITE_P(All, VariantTest,
                         ::testing::Values(OperatorVariant::Vanilla, OperatorVariant::TP,
                                           OperatorVariant::Truncated),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Gradient, AttentionAndWindowModels) {
  for (int which = 0; which < 2; ++which) {
    ModelConfig c = toy_config();
    if (which == 0) {
      c.processor = ProcessorKind::TinyAttention;
      c.attention_heads = 2;
    } else {
      c.kernel = KernelFamily::LinearWindow;
      c.window = {0.8, 1.0, -0.15};
      c.branches = 1;
      c.variant = OperatorVariant::Vanilla;
    }
    const IknoModel model(c);
    const ParamVector p = model.init_params(12);
    Rng64 rng(12);
    const PointCloud cloud = random_cloud(2, 8, 1, rng);
    const PointCloud queries = random_cloud(2, 5, 0, rng);
    const DenseMatrix target = test::random_matrix(5, 1, rng);
    std::vector<double> g(p.values.size(), 0.0);
    model.loss_and_gradient(p, cloud, queries, target, g);
    const auto fd = grad_fd(
        [&](std::span<const double> v) {
          ParamVector q = p;
          q.values.assign(v.begin(), v.end());
          return *relative_l2_loss(target.values(), model.forward(q, cloud, queries).values());
        },
        p.values);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      if (std::abs(fd[i]) < 1e-6) EXPECT_NEAR(g[i], fd[i], 1e-6) << which << ":" << i;
      else EXPECT_LE(std::abs(g[i] - fd[i]) / std::abs(fd[i]), 1e-4) << which << ":" << i;
    }
  }
}

TEST(Gradient, SingleAlphaProbe) {
  const IknoModel model(toy_config());
  const ParamVector p = model.init_params(13);
  Rng64 rng(13);
  const PointCloud cloud = random_cloud(2, 10, 1, rng);
  const PointCloud queries = random_cloud(2, 6, 0, rng);
  const DenseMatrix target = test::random_matrix(6, 1, rng);
  std::vector<double> g(p.values.size(), 0.0);
  model.loss_and_gradient(p, cloud, queries, target, g);
  const std::size_t k = model.kernel_index_alpha(0);
  const std::vector<double> a0{p.values[k]};
  const auto fd = grad_fd(
      [&](std::span<const double> v) {
        ParamVector q = p;
        q.values[k] = v[0];
        return *relative_l2_loss(target.values(), model.forward(q, cloud, queries).values());
      },
      a0);
  EXPECT_LE(std::abs(g[k] - fd[0]) / std::abs(fd[0]), 1e-5);
}

TEST(Gradient, DuplicatedBatchDoubles) {
  const IknoModel model(toy_config());
  const ParamVector p = model.init_params(14);
  Rng64 rng(14);
  SampleRecord s{random_cloud(2, 8, 1, rng), random_cloud(2, 4, 0, rng), test::random_matrix(4, 1, rng)};
  const std::vector<SampleRecord> one{s}, two{s, s};
  const LossGradient a = grad_analytic(model, p, one);
  const LossGradient b = grad_analytic(model, p, two);
  EXPECT_EQ(b.loss_sum, 2.0 * a.loss_sum);
  for (std::size_t i = 0; i < a.grad.size(); ++i) EXPECT_EQ(b.grad[i], 2.0 * a.grad[i]);
}

TEST(Gradient, ZeroTargetRejected) {
  const IknoModel model(toy_config());
  const ParamVector p = model.init_params(0);
  Rng64 rng(15);
  std::vector<double> g(p.values.size());
  try {
    model.loss_and_gradient(p, random_cloud(2, 4, 1, rng), random_cloud(2, 3, 0, rng), DenseMatrix(3, 1), g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ZeroTarget);
  }
}

TEST(Variants, CoincideAtDimOne) {
  for (int family = 0; family < 2; ++family) {
    ModelConfig c = toy_config();
    c.dim = 1;
    c.grid_points = 8;
    if (family == 1) {
      c.kernel = KernelFamily::LinearWindow;
      c.window = {0.4, 1.0, -0.15};
    }
    c.variant = OperatorVariant::Vanilla;
    const IknoModel van(c);
    c.variant = OperatorVariant::TP;
    const IknoModel tp(c);
    Rng64 rng(16);
    for (int trial = 0; trial < 5; ++trial) {
      ParamVector p = van.init_params(trial);
      if (family == 0)
        for (std::size_t q = 0; q < c.branches; ++q) p.values[van.kernel_index_alpha(q)] = rng.uniform(-2.0, -0.1);
      const PointCloud cloud = random_cloud(1, 12, 1, rng);
      const PointCloud queries = random_cloud(1, 9, 0, rng);
      EXPECT_LE(max_abs_diff(van.forward(p, cloud, queries), tp.forward(p, cloud, queries)), 1e-9);
    }
  }
}

TEST(Variants, DeadParameterAudit) {
  const IknoModel model(toy_config());
  const ParamVector p = model.init_params(17);
  Rng64 rng(17);
  std::vector<std::pair<PointCloud, PointCloud>> probes;
  for (int i = 0; i < 3; ++i) probes.emplace_back(random_cloud(2, 10, 1, rng), random_cloud(2, 6, 0, rng));
  std::vector<bool> alive(p.values.size(), false);
  for (const auto& [cloud, queries] : probes) {
    const DenseMatrix base = model.forward(p, cloud, queries);
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      if (alive[i]) continue;
      ParamVector q = p;
      q.values[i] += 1e-4;
      alive[i] = max_abs_diff(model.forward(q, cloud, queries), base) > 0.0;
    }
  }
  for (std::size_t i = 0; i < alive.size(); ++i) EXPECT_TRUE(alive[i]) << "parameter " << i;
}

TEST(ModelConfig, Validation) {
  ModelConfig c = toy_config();
  c.dim = 0;
  EXPECT_THROW(IknoModel{c}, Error);
  c = toy_config();
  c.hidden = 3;
  c.processor = ProcessorKind::TinyAttention;
  c.attention_heads = 2;
  EXPECT_THROW(IknoModel{c}, Error);
  const IknoModel model(toy_config());
  Rng64 rng(18);
  try {
    model.forward(model.init_params(0), random_cloud(2, 4, 2, rng), random_cloud(2, 3, 0, rng));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ChannelMismatch);
  }
}

}  // namespace
}  // namespace ikno
