#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mstts/autodiff/grad_check.h"
#include "mstts/model/model.h"
#include "test_util.h"

namespace ad = mstts::ad;
namespace nn = mstts::nn;
namespace model = mstts::model;
using ad::Shape;
using ad::Tensor;
using model::ModelConfig;
using model::Variant;
using mstts::testutil::random_tensor;
using mstts::testutil::values;

namespace {

ModelConfig tiny(Variant v = Variant::Proposed) { return mstts::testutil::tiny_config(v); }

std::vector<ad::NamedTensor> all_params(const nn::ParameterStore<double>& store) {
  std::vector<ad::NamedTensor> out;
  for (const auto& p : store.parameters()) out.push_back({p.name, p.value});
  return out;
}

// Zero-initialized biases put ReLUs exactly on their kink for zero inputs
// (the decoder's go-frame); finite differences are meaningless there.
void jitter_biases(nn::ParameterStore<double>& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.3, 0.3);
  for (const auto& p : store.parameters()) {
    if (p.init != nn::InitKind::Zeros) continue;
    for (auto& v : p.value.impl()->data) v = dist(rng);
  }
}

void set_param(nn::ParameterStore<double>& store, const std::string& name, std::vector<double> v) {
  auto t = store.find(name)->value;
  ASSERT_EQ(t.size(), v.size()) << name;
  std::copy(v.begin(), v.end(), t.mutable_data().begin());
}

}  // namespace

// ---- reference encoder ----------------------------------------------------

TEST(DownsampledLength, Examples) {
  const std::vector<std::size_t> strides = {2, 1, 2, 1, 2, 2};
  EXPECT_EQ(model::downsampled_length(160, strides), 10u);
  EXPECT_EQ(model::downsampled_length(1, strides), 1u);
  EXPECT_EQ(model::downsampled_length(17, strides), 2u);
  EXPECT_THROW(model::downsampled_length(0, strides), ad::EmptyInputError);
  for (std::size_t t = 1; t <= 512; ++t) EXPECT_EQ(model::downsampled_length(t, strides), (t + 15) / 16);
}

TEST(Granularity, Examples) {
  model::RefEncoderConfig cfg;
  EXPECT_DOUBLE_EQ(model::granularity_ms(cfg), 200.0);
  cfg.strides.assign(6, 1);
  EXPECT_DOUBLE_EQ(model::granularity_ms(cfg), 12.5);
  cfg.strides = {2, 1, 2, 1, 2, 2};
  cfg.frame_shift_ms = 10;
  EXPECT_DOUBLE_EQ(model::granularity_ms(cfg), 160.0);
}

TEST(ReferenceEncoder, DefaultShapes) {
  model::Model<float> m(ModelConfig{});
  m.initialize(1);
  auto x = random_tensor<float>(Shape{32, 32}, 2, -1, 1, false);
  auto style = m.encode_reference(x);
  EXPECT_EQ(style.lpe.shape(), (Shape{6, 2}));
  EXPECT_EQ(style.gse.shape(), (Shape{128}));
  EXPECT_EQ(style.source_frames, 32u);
}

TEST(ReferenceEncoder, ZeroInputZeroHeadsGiveZeroGse) {
  model::Model<float> m(ModelConfig{});  // uninitialized: all parameters zero
  auto style = m.encode_reference(Tensor<float>::zeros(Shape{32, 20}));
  for (float v : style.gse.data()) EXPECT_EQ(v, 0.0f);
}

TEST(ReferenceEncoder, ChannelMismatchRejected) {
  model::Model<float> m(ModelConfig{});
  EXPECT_THROW(m.encode_reference(Tensor<float>::zeros(Shape{31, 20})), ad::ShapeError);
}

TEST(ReferenceEncoder, ShapeLawExhaustive) {
  // default strides at default widths, unit strides at pilot widths
  model::Model<float> proposed(ModelConfig{});
  model::Model<float> fs(ModelConfig::pilot(Variant::BaseFS));
  proposed.initialize(3);
  fs.initialize(3);
  auto big = random_tensor<float>(Shape{32, 512}, 4, -1, 1, false);
  for (std::size_t t = 1; t <= 512; ++t) {
    auto x = ad::slice(big, 1, 0, t);
    auto conv = proposed.ref_encoder().conv_stack(x, nn::Mode::Eval);
    ASSERT_EQ(conv.dim(1), (t + 15) / 16) << t;
    ASSERT_EQ(proposed.ref_encoder().local_head(conv).shape(), (Shape{6, (t + 15) / 16}));
    auto conv_fs = fs.ref_encoder().conv_stack(x, nn::Mode::Eval);
    ASSERT_EQ(conv_fs.dim(1), t) << t;
  }
  auto style = fs.encode_reference(ad::slice(big, 1, 0, 100));
  EXPECT_EQ(style.lpe.shape(), (Shape{6, 100}));
}

TEST(ReferenceEncoder, RangeAndDeterminism) {
  model::Model<float> m(ModelConfig::pilot());
  m.initialize(5);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto x = random_tensor<float>(Shape{32, 40 + seed * 13}, seed, -3, 3, false);
    auto a = m.encode_reference(x);
    auto b = m.encode_reference(x);
    EXPECT_EQ(values(a.gse), values(b.gse));
    EXPECT_EQ(values(a.lpe), values(b.lpe));
    for (float v : a.gse.data()) EXPECT_LT(std::abs(v), 1.0f);
    for (float v : a.lpe.data()) EXPECT_LT(std::abs(v), 1.0f);
  }
}

TEST(ReferenceEncoder, Locality) {
  model::Model<double> m(ModelConfig::pilot());
  m.initialize(6);
  // nonzero running statistics so eval-mode batchnorm is not trivial
  for (auto& b : m.params().buffers()) {
    for (std::size_t i = 0; i < b.values.size(); ++i) b.values[i] += 0.1f * float(i % 3);
  }
  const auto& strides = m.config().ref.strides;
  const long rf = long(model::receptive_field_radius(strides));
  auto x = random_tensor(Shape{32, 400}, 7, -1, 1, false);
  auto y = x.clone();
  const std::size_t a = 200, b = 216;
  for (std::size_t c = 0; c < 32; ++c)
    for (std::size_t t = a; t < b; ++t) y.mutable_data()[c * 400 + t] += 0.5;
  auto cx = m.ref_encoder().conv_stack(x, nn::Mode::Eval);
  auto cy = m.ref_encoder().conv_stack(y, nn::Mode::Eval);
  const long lo = long(a / 16) - rf, hi = long((b + 15) / 16) + rf;
  bool changed_inside = false;
  for (std::size_t c = 0; c < cx.dim(0); ++c) {
    for (std::size_t t = 0; t < cx.dim(1); ++t) {
      const bool same = cx.at(c, t) == cy.at(c, t);
      if (long(t) < lo || long(t) > hi) EXPECT_TRUE(same) << "conv column " << t;
      changed_inside = changed_inside || !same;
    }
  }
  EXPECT_TRUE(changed_inside);
  auto lx = m.ref_encoder().local_head(cx);
  auto ly = m.ref_encoder().local_head(cy);
  for (long t = 0; t < lo; ++t)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(lx.at(c, std::size_t(t)), ly.at(c, std::size_t(t)));
}

TEST(ReferenceEncoder, GradCheckFiveSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    model::Model<double> m(tiny());
    m.initialize(seed);
    auto x = random_tensor(Shape{4, 20}, seed + 10, -1, 1, false);
    auto report = ad::grad_check(
        [&] {
          auto conv = m.ref_encoder().conv_stack(x, nn::Mode::Train);
          auto gse = m.ref_encoder().global_head(conv);
          auto lpe = m.ref_encoder().local_head(conv);
          return ad::add(ad::mean(gse), ad::mean(lpe));
        },
        all_params(m.params()));
    // skip parameters outside the encoder (zero gradient on both sides)
    EXPECT_TRUE(report.passed()) << report.summary();
  }
}

// ---- reference attention ---------------------------------------------------

TEST(ReferenceAttention, SingleKeyRepeatsValue) {
  model::Model<double> m(tiny());
  m.initialize(1);
  auto lpe = random_tensor(Shape{6, 1}, 2);
  auto phon = random_tensor(Shape{8, 5}, 3);
  auto res = m.ref_attention().align(lpe, phon);
  ASSERT_EQ(res.weights.shape(), (Shape{5, 1}));
  ASSERT_EQ(res.aligned.shape(), (Shape{3, 5}));
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(res.weights.at(i, 0), 1.0);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(res.aligned.at(c, i), lpe.at(3 + c, 0));
  }
}

TEST(ReferenceAttention, IdenticalKeysGiveUniformRows) {
  model::Model<double> m(tiny());
  m.initialize(1);
  Tensor<double> lpe(Shape{6, 4}, {0.1, 0.1, 0.1, 0.1, -0.2, -0.2, -0.2, -0.2, 0.3, 0.3, 0.3, 0.3,
                                   1, 2, 3, 4, 5, 6, 7, 8, -1, 0, 1, 2});
  auto res = m.ref_attention().align(lpe, random_tensor(Shape{8, 3}, 4));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(res.weights.at(i, j), 0.25, 1e-15);
    EXPECT_NEAR(res.aligned.at(0, i), 2.5, 1e-12);
    EXPECT_NEAR(res.aligned.at(1, i), 6.5, 1e-12);
    EXPECT_NEAR(res.aligned.at(2, i), 0.5, 1e-12);
  }
}

TEST(ReferenceAttention, FixtureLogitsPickFirstKey) {
  nn::ParameterStore<double> store;
  model::RefAttnConfig cfg;
  cfg.d_a = 1;
  model::ReferenceAttention<double> attn(store, 1, 2, cfg);
  set_param(store, "ref_attention.proj_q.weight", {1.0});
  set_param(store, "ref_attention.proj_k.weight", {1.0});
  Tensor<double> lpe(Shape{2, 3}, {10, 0, 0, 7, 8, 9});
  Tensor<double> phon(Shape{1, 1}, {1.0});
  auto res = attn.align(lpe, phon);
  const double z = std::exp(10.0) + 2.0;
  EXPECT_NEAR(res.weights.at(0, 0), std::exp(10.0) / z, 1e-12);
  EXPECT_GT(res.weights.at(0, 0), 0.9999);
  EXPECT_NEAR(res.weights.at(0, 1), 1.0 / z, 1e-12);
  EXPECT_NEAR(res.aligned.at(0, 0), (7 * std::exp(10.0) + 8 + 9) / z, 1e-12);
}

TEST(ReferenceAttention, EntropyAndCoverageExamples) {
  Tensor<double> onehot(Shape{2, 3}, {1, 0, 0, 0, 0, 1});
  EXPECT_DOUBLE_EQ(model::attention_entropy(onehot), 0.0);
  Tensor<double> uniform4(Shape{2, 4}, {.25, .25, .25, .25, .25, .25, .25, .25});
  EXPECT_NEAR(model::attention_entropy(uniform4), std::log(4.0), 1e-12);
  Tensor<double> half(Shape{1, 4}, {.5, .5, 0, 0});
  EXPECT_NEAR(model::attention_entropy(half), std::log(2.0), 1e-12);

  Tensor<double> eye(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_DOUBLE_EQ(model::attention_coverage(eye), 1.0);
  Tensor<double> first(Shape{3, 4}, {1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0});
  EXPECT_DOUBLE_EQ(model::attention_coverage(first), 0.25);
  Tensor<double> uniform2(Shape{2, 2}, {.5, .5, .5, .5});
  EXPECT_DOUBLE_EQ(model::attention_coverage(uniform2, 0.3), 1.0);
}

TEST(ReferenceAttention, RowStochasticOnRandomShapes) {
  std::mt19937_64 rng(11);
  model::Model<double> m(tiny());
  m.initialize(2);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t tl = 1 + rng() % 40, tp = 1 + rng() % 40;
    auto res = m.ref_attention().align(random_tensor(Shape{6, tl}, rng(), -3, 3),
                                       random_tensor(Shape{8, tp}, rng(), -3, 3));
    for (std::size_t i = 0; i < tp; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < tl; ++j) {
        EXPECT_GE(res.weights.at(i, j), 0.0);
        s += res.weights.at(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-5);
    }
  }
}

TEST(ReferenceAttention, PermutationEquivariance) {
  model::Model<double> m(tiny());
  m.initialize(3);
  auto lpe = random_tensor(Shape{6, 5}, 4);
  auto phon = random_tensor(Shape{8, 4}, 5);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<double> pd(30);
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t j = 0; j < 5; ++j) pd[c * 5 + j] = lpe.at(c, perm[j]);
  auto a = m.ref_attention().align(lpe, phon);
  auto b = m.ref_attention().align(Tensor<double>(Shape{6, 5}, pd), phon);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(b.weights.at(i, j), a.weights.at(i, perm[j]), 1e-14);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(b.aligned.at(c, i), a.aligned.at(c, i), 1e-12);
  }
}

TEST(ReferenceAttention, TemperatureScalingKeepsArgmax) {
  model::Model<double> m(tiny());
  m.initialize(4);
  auto lpe = random_tensor(Shape{6, 7}, 5);
  auto phon = random_tensor(Shape{8, 6}, 6);
  auto a = m.ref_attention().align(lpe, phon);
  auto w = m.params().find("ref_attention.proj_q.weight")->value;
  for (auto& v : w.mutable_data()) v *= 3.0;
  auto b = m.ref_attention().align(lpe, phon);
  for (std::size_t i = 0; i < 6; ++i) {
    std::size_t am = 0, bm = 0;
    for (std::size_t j = 1; j < 7; ++j) {
      if (a.weights.at(i, j) > a.weights.at(i, am)) am = j;
      if (b.weights.at(i, j) > b.weights.at(i, bm)) bm = j;
    }
    EXPECT_EQ(am, bm);
  }
}

TEST(ReferenceAttention, GradCheckFiveSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    nn::ParameterStore<double> store;
    model::ReferenceAttention<double> attn(store, 8, 6, {4});
    store.initialize(seed);
    auto lpe = random_tensor(Shape{6, 5}, seed + 1);
    auto phon = random_tensor(Shape{8, 4}, seed + 2);
    auto params = all_params(store);
    params.push_back({"lpe", lpe});
    params.push_back({"phon", phon});
    auto mix = random_tensor(Shape{3, 4}, seed + 3, -1, 1, false);
    auto report = ad::grad_check([&] { return ad::sum(ad::mul(attn.align(lpe, phon).aligned, mix)); }, params);
    EXPECT_TRUE(report.passed()) << report.summary();
  }
}

// ---- backbone ----------------------------------------------------------------

TEST(TextEncoder, LengthDeterminismAndVocabulary) {
  model::Model<float> m(ModelConfig::pilot());
  m.initialize(1);
  const std::vector<std::size_t> ids = {1, 2, 3, 4, 5};
  auto a = m.text_encoder()(ids);
  EXPECT_EQ(a.shape(), (Shape{32, 5}));
  EXPECT_EQ(values(a), values(m.text_encoder()(ids)));
  const std::vector<std::size_t> bad = {1, 17};
  EXPECT_THROW(m.text_encoder()(bad), model::OutOfVocabularyError);
}

TEST(TextEncoder, ZeroRecurrenceIsPerToken) {
  model::Model<double> m(tiny());
  m.initialize(2);
  for (const auto& p : m.params().parameters()) {
    if (p.name.find("text_encoder.gru_") != 0) continue;
    // zero recurrences; the update gate is saturated shut so that the
    // z * h_prev carry of the pinned equations vanishes as well
    if (p.name.find(".u_") != std::string::npos) {
      std::fill(p.value.impl()->data.begin(), p.value.impl()->data.end(), 0.0);
    }
    if (p.name.find(".b_z") != std::string::npos) {
      std::fill(p.value.impl()->data.begin(), p.value.impl()->data.end(), -1000.0);
    }
  }
  const std::vector<std::size_t> ids = {3, 7, 3, 9, 3};
  auto out = m.text_encoder()(ids);
  for (std::size_t r = 0; r < out.dim(0); ++r) {
    EXPECT_NEAR(out.at(r, 0), out.at(r, 2), 1e-15);
    EXPECT_NEAR(out.at(r, 0), out.at(r, 4), 1e-15);
  }
}

TEST(Assembly, BroadcastAndWidths) {
  auto gse = random_tensor<float>(Shape{128}, 1);
  auto seq = model::broadcast_gse(gse, 3);
  ASSERT_EQ(seq.shape(), (Shape{128, 3}));
  for (std::size_t r = 0; r < 128; ++r) {
    EXPECT_EQ(seq.at(r, 0), seq.at(r, 1));
    EXPECT_EQ(seq.at(r, 0), seq.at(r, 2));
  }
  EXPECT_EQ(model::broadcast_gse(gse, 1).shape(), (Shape{128, 1}));

  auto phon = random_tensor<float>(Shape{64, 3}, 2);
  auto aligned = random_tensor<float>(Shape{3, 3}, 3);
  auto mem = model::assemble(phon, aligned, model::broadcast_gse(Tensor<float>::zeros(Shape{128}), 3));
  EXPECT_EQ(mem.shape(), (Shape{195, 3}));
  EXPECT_EQ(values(ad::slice(mem, 0, 64, 67)), values(aligned));
  const auto gse_rows = ad::slice(mem, 0, 67, 195);
  for (float v : gse_rows.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(model::assemble(phon, random_tensor<float>(Shape{3, 4}, 4), Tensor<float>{}), ad::ShapeError);
  EXPECT_EQ(ModelConfig{}.memory_width(), 195u);
  EXPECT_EQ(ModelConfig::for_variant(Variant::BaseG).memory_width(), 64u + 128u);
  EXPECT_EQ(ModelConfig::for_variant(Variant::BaseL).memory_width(), 64u + 3u);
}

TEST(Decoder, TeacherForcedStepsFollowPaddedLength) {
  model::Model<float> m(ModelConfig::pilot());
  m.initialize(3);
  const std::vector<std::size_t> ids = {1, 2, 3};
  auto ref = random_tensor<float>(Shape{32, 40}, 4, -1, 1, false);
  for (std::size_t t = 1; t <= 30; ++t) {
    auto target = random_tensor<float>(Shape{t, 32}, t, -1, 1, false);
    auto res = m.synthesize(ids, ref, {}, model::GseSource::Reference, target);
    const std::size_t padded = (t + 2) / 3 * 3;
    EXPECT_EQ(res.decoded.steps, padded / 3);
    EXPECT_EQ(res.decoded.frames.shape(), (Shape{padded, 32}));
    EXPECT_EQ(res.decoded.stop_logits.shape(), (Shape{padded / 3}));
    EXPECT_EQ(res.decoded.target_frames, t);
    for (std::size_t k = 0; k < res.decoded.steps; ++k) {
      double s = 0;
      for (std::size_t j = 0; j < 3; ++j) s += res.decoded.alignment.at(k, j);
      EXPECT_NEAR(s, 1.0, 1e-5);
    }
  }
}

TEST(Decoder, FreeRunStopsWhenStopHeadSaturates) {
  model::Model<float> m(ModelConfig::pilot());
  m.initialize(4);
  auto bias = m.params().find("decoder.output.bias")->value;
  const std::vector<std::size_t> ids = {1, 2, 3};
  auto ref = random_tensor<float>(Shape{32, 40}, 5, -1, 1, false);
  bias.mutable_data()[3 * 32] = 10.0f;
  auto weight = m.params().find("decoder.output.weight")->value;
  for (std::size_t c = 0; c < weight.dim(1); ++c) weight.mutable_data()[3 * 32 * weight.dim(1) + c] = 0;
  auto res = m.synthesize(ids, ref, {}, model::GseSource::Reference);
  EXPECT_EQ(res.decoded.steps, 1u);
  EXPECT_FALSE(res.decoded.incomplete);
  EXPECT_EQ(res.decoded.frames.dim(0), 3u);
  bias.mutable_data()[3 * 32] = -10.0f;
  auto never = m.synthesize(ids, ref, {}, model::GseSource::Reference, {}, 7);
  EXPECT_EQ(never.decoded.steps, 7u);
  EXPECT_TRUE(never.decoded.incomplete);
  EXPECT_EQ(never.decoded.frames.dim(0) % 3, 0u);
}

TEST(Classifier, ZeroGseGivesUniformLogits) {
  model::Model<float> m(ModelConfig::pilot());
  auto logits = m.classifier()(Tensor<float>::zeros(Shape{32}));
  ASSERT_EQ(logits.shape(), (Shape{7}));
  for (float v : logits.data()) EXPECT_EQ(v, 0.0f);
  auto p = ad::softmax(logits, 0);
  for (float v : p.data()) EXPECT_NEAR(v, 1.0 / 7.0, 1e-7);
}

TEST(Classifier, GradientReachesGse) {
  model::Model<double> m(tiny());
  m.initialize(5);
  auto gse = random_tensor(Shape{8}, 6);
  auto report = ad::grad_check([&] { return ad::cross_entropy(m.classifier()(gse), 2); }, {{"gse", gse}});
  EXPECT_TRUE(report.passed()) << report.summary();
  ad::Tape<double> tape;
  tape.backward(ad::cross_entropy(m.classifier()(gse), 2));
  double norm = 0;
  for (double g : gse.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(Variants, ParameterInventories) {
  auto has = [](const model::Model<float>& m, const std::string& prefix) {
    return m.params().has_prefix(prefix);
  };
  model::Model<float> p(ModelConfig::pilot(Variant::Proposed));
  model::Model<float> g(ModelConfig::pilot(Variant::BaseG));
  model::Model<float> l(ModelConfig::pilot(Variant::BaseL));
  model::Model<float> fs(ModelConfig::pilot(Variant::BaseFS));
  for (const auto* prefix : {"text_encoder", "ref_encoder.conv", "ref_encoder.global_head",
                             "ref_encoder.local_head", "ref_attention", "decoder", "classifier"}) {
    EXPECT_TRUE(has(p, prefix)) << prefix;
    EXPECT_TRUE(has(fs, prefix)) << prefix;
  }
  EXPECT_FALSE(has(g, "ref_attention"));
  EXPECT_FALSE(has(g, "ref_encoder.local_head"));
  EXPECT_TRUE(has(g, "classifier"));
  EXPECT_FALSE(has(l, "ref_encoder.global_head"));
  EXPECT_FALSE(has(l, "classifier"));
  EXPECT_TRUE(has(l, "ref_attention"));
  EXPECT_EQ(p.params().names(), fs.params().names());
  EXPECT_THROW(l.classifier(), ad::ContractError);
}

TEST(EndToEnd, TinyModelGradCheck) {
  const std::vector<std::size_t> ids = {4, 1, 9};
  for (Variant v : {Variant::Proposed, Variant::BaseG, Variant::BaseL, Variant::BaseFS}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      model::Model<double> m(tiny(v));
      m.initialize(seed);
      jitter_biases(m.params(), seed);
      auto ref = random_tensor(Shape{4, 20}, seed + 50, -1, 1, false);
      auto target = random_tensor(Shape{21, 4}, seed + 51, -1, 1, false);
      const std::vector<double> stops = {0, 0, 0, 0, 0, 0, 1};
      auto report = ad::grad_check(
          [&] {
            auto conv = m.ref_encoder().conv_stack(ref, nn::Mode::Train);
            auto res = m.synthesize_from_conv(ids, conv, conv, model::GseSource::Reference, target);
            auto loss = ad::add(ad::masked_mse(res.decoded.frames, target, 20),
                                ad::bce_with_logits(res.decoded.stop_logits, std::span<const double>(stops)));
            if (m.config().has_classifier()) loss = ad::add(loss, ad::cross_entropy(m.classifier()(res.style.gse), 3));
            return loss;
          },
          all_params(m.params()));
      EXPECT_TRUE(report.passed()) << model::variant_name(v) << " seed " << seed << "\n" << report.summary();
    }
  }
}

TEST(EndToEnd, ZeroGseIgnoresGlobalReference) {
  model::Model<float> m(ModelConfig::pilot());
  m.initialize(8);
  const std::vector<std::size_t> ids = {2, 5, 7, 1};
  auto local = random_tensor<float>(Shape{32, 60}, 9, -1, 1, false);
  auto g1 = random_tensor<float>(Shape{32, 50}, 10, -1, 1, false);
  auto g2 = random_tensor<float>(Shape{32, 70}, 11, -2, 2, false);
  auto target = random_tensor<float>(Shape{60, 32}, 12, -1, 1, false);
  auto a = m.synthesize(ids, local, g1, model::GseSource::Zero, target);
  auto b = m.synthesize(ids, local, g2, model::GseSource::Zero, target);
  EXPECT_EQ(values(a.decoded.frames), values(b.decoded.frames));
  EXPECT_EQ(values(a.decoded.stop_logits), values(b.decoded.stop_logits));
  auto c = m.synthesize(ids, local, g1, model::GseSource::Reference, target);
  EXPECT_NE(values(a.decoded.frames), values(c.decoded.frames));
}

TEST(ModelConfigJson, RoundTripAndUnknownKeys) {
  for (Variant v : {Variant::Proposed, Variant::BaseG, Variant::BaseL, Variant::BaseFS}) {
    auto cfg = ModelConfig::pilot(v);
    auto j = model::to_json(cfg);
    auto back = model::model_config_from_json(j);
    EXPECT_EQ(model::to_json(back), j);
  }
  auto j = model::to_json(ModelConfig{});
  j["backbone"]["bogus"] = 1;
  EXPECT_THROW(model::model_config_from_json(j), model::ConfigError);
  EXPECT_EQ(model::model_config_from_json(nlohmann::json::object()).backbone.d_p, 64u);
  EXPECT_THROW(model::parse_variant("base-x"), model::ConfigError);
}
