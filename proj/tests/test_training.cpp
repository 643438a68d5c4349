#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "mstts/training/checkpoint.h"
#include "mstts/training/training.h"
#include "test_util.h"

namespace ad = mstts::ad;
namespace corpus = mstts::corpus;
namespace model = mstts::model;
namespace training = mstts::training;
using ad::Shape;
using ad::Tensor;
using model::Variant;
using mstts::testutil::tiny_config;

namespace {

const corpus::Corpus& small_corpus() {
  static const corpus::Corpus c = [] {
    corpus::CorpusConfig cfg;
    cfg.n_utterances = 70;
    cfg.seed = 3;
    cfg.d_spec = 4;
    return corpus::generate_corpus(cfg);
  }();
  return c;
}

training::TrainConfig quick_config() {
  training::TrainConfig tc;
  tc.batch_size = 2;
  tc.lr = 1e-2;
  tc.seed = 5;
  return tc;
}

std::vector<float> snapshot(const model::Model<float>& m, const std::vector<std::string>& prefixes) {
  std::vector<float> out;
  for (const auto& p : m.params().parameters()) {
    for (const auto& pre : prefixes) {
      if (mstts::nn::matches_prefix(p.name, pre)) {
        out.insert(out.end(), p.value.data().begin(), p.value.data().end());
        break;
      }
    }
  }
  return out;
}

std::unique_ptr<model::Model<float>> fresh(Variant v, std::uint64_t seed = 11) {
  auto m = std::make_unique<model::Model<float>>(tiny_config(v));
  m->initialize(seed);
  return m;
}

}  // namespace

// ---- losses ---------------------------------------------------------------

TEST(Loss, PerfectPredictionIsNearZero) {
  const auto target = mstts::testutil::random_tensor<double>(Shape{9, 4}, 1, -1, 1, false);
  model::DecodeResult<double> d;
  d.frames = target;
  d.steps = 3;
  d.target_frames = 9;
  d.stop_logits = Tensor<double>(Shape{3}, {-20.0, -20.0, 20.0});
  const auto terms = training::compute_loss(d, target, Tensor<double>(), 0, 5.0, 1.0);
  EXPECT_LT(terms.total.item(), 1e-6);
  EXPECT_FALSE(terms.ce.defined());
}

TEST(Loss, UniformLogitsGiveLogSeven) {
  const auto target = mstts::testutil::random_tensor<double>(Shape{3, 4}, 2, -1, 1, false);
  model::DecodeResult<double> d;
  d.frames = target;
  d.steps = 1;
  d.target_frames = 3;
  d.stop_logits = Tensor<double>(Shape{1}, {20.0});
  const auto terms = training::compute_loss(d, target, Tensor<double>::zeros(Shape{7}), 3, 5.0, 1.0);
  EXPECT_NEAR(terms.ce.item(), std::log(7.0), 1e-12);
}

TEST(Loss, StagesDifferExactlyByClassifierTerm) {
  const auto target = mstts::testutil::random_tensor<double>(Shape{6, 4}, 3, -1, 1, false);
  model::DecodeResult<double> d;
  d.frames = mstts::testutil::random_tensor<double>(Shape{6, 4}, 4, -1, 1, false);
  d.steps = 2;
  d.target_frames = 5;
  d.stop_logits = Tensor<double>(Shape{2}, {0.3, -0.2});
  const auto logits = mstts::testutil::random_tensor<double>(Shape{7}, 5, -2, 2, false);
  const auto s1 = training::compute_loss(d, target, Tensor<double>(), 2, 5.0, 0.7);
  const auto s2 = training::compute_loss(d, target, logits, 2, 5.0, 0.7);
  EXPECT_DOUBLE_EQ(s2.total.item() - s1.total.item(), 0.7 * s2.ce.item());
  EXPECT_DOUBLE_EQ(s1.mse.item(), s2.mse.item());
}

TEST(Loss, MaskIgnoresPaddedRows) {
  auto target = Tensor<double>(Shape{3, 1}, {1.0, 2.0, 7.0});
  model::DecodeResult<double> d;
  d.frames = Tensor<double>(Shape{3, 1}, {1.0, 2.0, -100.0});
  d.steps = 1;
  d.target_frames = 2;
  d.stop_logits = Tensor<double>(Shape{1}, {20.0});
  EXPECT_NEAR(training::compute_loss(d, target, Tensor<double>(), 0, 0.0, 0.0).mse.item(), 0.0, 1e-15);
}

TEST(PadTarget, RepeatsLastFrame) {
  const Tensor<float> t(Shape{4, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const auto p = training::pad_target(t, 3);
  ASSERT_EQ(p.shape(), (Shape{6, 2}));
  EXPECT_EQ(mstts::testutil::values(p), (std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8, 7, 8, 7, 8}));
  EXPECT_EQ(training::pad_target(p, 3).impl(), p.impl());
}

// ---- optimizer --------------------------------------------------------------

TEST(Optimizer, ClipsGlobalNorm) {
  mstts::nn::ParameterStore<float> store;
  auto w = store.add("w", Shape{2}, mstts::nn::InitKind::Zeros);
  auto g = w.impl()->grad_buffer();
  g[0] = 6.0f;
  g[1] = 8.0f;
  training::TrainConfig cfg;
  cfg.lr = 1.0;
  cfg.momentum = 0.0;
  training::Optimizer opt(store, cfg);
  EXPECT_NEAR(opt.step(), 10.0, 1e-9);
  EXPECT_NEAR(w.data()[0], -0.6f, 1e-6);
  EXPECT_NEAR(w.data()[1], -0.8f, 1e-6);
  EXPECT_FALSE(w.has_grad());
}

TEST(Optimizer, MomentumAccumulates) {
  mstts::nn::ParameterStore<float> store;
  auto w = store.add("w", Shape{1}, mstts::nn::InitKind::Zeros);
  training::TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  training::Optimizer opt(store, cfg);
  for (int i = 0; i < 2; ++i) {
    w.impl()->grad_buffer()[0] = 0.5f;
    opt.step();
  }
  // v1 = 0.5, v2 = 0.9 * 0.5 + 0.5 = 0.95
  EXPECT_NEAR(w.data()[0], -0.1 * (0.5 + 0.95), 1e-6);
}

TEST(Optimizer, SkipsFrozenParameters) {
  mstts::nn::ParameterStore<float> store;
  auto w = store.add("w", Shape{1}, mstts::nn::InitKind::Zeros);
  w.impl()->grad_buffer()[0] = 1.0f;
  w.set_trainable(false);
  training::Optimizer opt(store, training::TrainConfig{});
  EXPECT_EQ(opt.step(), 0.0);
  EXPECT_EQ(w.data()[0], 0.0f);
}

TEST(Optimizer, NonFiniteGradientNamesParameter) {
  mstts::nn::ParameterStore<float> store;
  store.add("a", Shape{1}, mstts::nn::InitKind::Zeros);
  auto b = store.add("decoder.output.w", Shape{2}, mstts::nn::InitKind::Zeros);
  b.impl()->grad_buffer()[1] = std::nanf("");
  training::Optimizer opt(store, training::TrainConfig{});
  try {
    opt.step();
    FAIL() << "expected NumericalError";
  } catch (const ad::NumericalError& e) {
    EXPECT_EQ(e.primitive(), "decoder.output.w");
  }
}

// ---- configuration ------------------------------------------------------------

TEST(TrainConfigJson, RoundTripAndStrictKeys) {
  auto cfg = quick_config();
  cfg.optimizer = training::OptimizerKind::Adam;
  const auto back = training::train_config_from_json(training::to_json(cfg));
  EXPECT_EQ(training::to_json(back), training::to_json(cfg));
  EXPECT_THROW(training::train_config_from_json({{"learning_rate", 0.1}}), model::ConfigError);
  EXPECT_THROW(training::train_config_from_json({{"batch_size", 0}}), model::ConfigError);
  EXPECT_THROW(training::train_config_from_json({{"optimizer", "rmsprop"}}), model::ConfigError);
}

TEST(GuidedAttention, PenalizesOffDiagonalMass) {
  // 2x2 grid: the off-diagonal weight is 1 - exp(-0.5^2 / (2 * 0.2^2)).
  const double off = 1.0 - std::exp(-0.25 / 0.08);
  Tensor<double> diag(Shape{2, 2}, {1, 0, 0, 1});
  Tensor<double> anti(Shape{2, 2}, {0, 1, 1, 0});
  EXPECT_NEAR(training::guided_attention_loss(diag, 0.2).item(), 0.0, 1e-12);
  EXPECT_NEAR(training::guided_attention_loss(anti, 0.2).item(), 2.0 * off / 4.0, 1e-12);
}

TEST(GuidedAttention, WiderPriorPenalizesLess) {
  Tensor<double> anti(Shape{2, 2}, {0, 1, 1, 0});
  EXPECT_LT(training::guided_attention_loss(anti, 0.5).item(),
            training::guided_attention_loss(anti, 0.2).item());
}

TEST(TrainConfigJson, RejectsBadRegularizers) {
  EXPECT_THROW(training::train_config_from_json({{"guided_attn_weight", -1.0}}), model::ConfigError);
  EXPECT_THROW(training::train_config_from_json({{"guided_attn_width", 0.0}}), model::ConfigError);
  EXPECT_THROW(training::train_config_from_json({{"teacher_noise", -0.1}}), model::ConfigError);
}

// ---- stages -----------------------------------------------------------------

TEST(Stages, ZeroStepsLeaveInitialization) {
  auto m = fresh(Variant::Proposed);
  const auto before = training::encode_checkpoint(*m);
  training::Trainer t(*m, small_corpus(), quick_config());
  t.run_stage(1, 0);
  m->set_stage(0);
  EXPECT_EQ(training::encode_checkpoint(*m), before);
}

TEST(Stages, StageOneLeavesGlobalPathUntouched) {
  auto m = fresh(Variant::Proposed);
  const auto global = model::Model<float>::global_path_prefixes();
  const auto before = snapshot(*m, global);
  const auto dec_before = snapshot(*m, {"decoder"});
  training::Trainer t(*m, small_corpus(), quick_config());
  t.run_stage(1, 5);
  EXPECT_EQ(snapshot(*m, global), before);
  EXPECT_NE(snapshot(*m, {"decoder"}), dec_before);
  EXPECT_EQ(m->stage(), 1);
}

TEST(Stages, StageTwoFreezesExactly) {
  auto m = fresh(Variant::Proposed);
  training::Trainer t(*m, small_corpus(), quick_config());
  t.run_stage(1, 3);
  const auto frozen = model::Model<float>::stage2_frozen_prefixes();
  const auto frozen_before = snapshot(*m, frozen);
  std::vector<std::vector<float>> trained_before;
  const std::vector<std::string> trained = {"ref_encoder.global_head", "decoder", "classifier"};
  for (const auto& p : trained) trained_before.push_back(snapshot(*m, {p}));
  std::vector<float> bn_before;
  for (const auto& b : m->params().buffers()) bn_before.insert(bn_before.end(), b.values.begin(), b.values.end());

  t.run_stage(2, 10);
  EXPECT_EQ(snapshot(*m, frozen), frozen_before);
  for (std::size_t i = 0; i < trained.size(); ++i) {
    EXPECT_NE(snapshot(*m, {trained[i]}), trained_before[i]) << trained[i];
  }
  std::vector<float> bn_after;
  for (const auto& b : m->params().buffers()) bn_after.insert(bn_after.end(), b.values.begin(), b.values.end());
  EXPECT_EQ(bn_after, bn_before);
  EXPECT_EQ(m->stage(), 2);
}

TEST(Stages, ProvenanceIsEnforced) {
  auto m = fresh(Variant::Proposed);
  training::Trainer t(*m, small_corpus(), quick_config());
  EXPECT_THROW(t.run_stage(2, 1), training::ProvenanceError);
  auto l = fresh(Variant::BaseL);
  training::Trainer tl(*l, small_corpus(), quick_config());
  tl.run_stage(1, 1);
  EXPECT_THROW(tl.run_stage(2, 1), training::ProvenanceError);
  m->set_stage(2);
  EXPECT_THROW(t.run_stage(1, 1), training::ProvenanceError);
}

TEST(Stages, SingleStageVariantsTrainEverything) {
  auto g = fresh(Variant::BaseG);
  const auto before = snapshot(*g, {"ref_encoder.global_head", "classifier"});
  training::Trainer t(*g, small_corpus(), quick_config());
  EXPECT_EQ(t.gse_source(1), model::GseSource::Reference);
  t.run_stage(1, 3);
  EXPECT_NE(snapshot(*g, {"ref_encoder.global_head", "classifier"}), before);
}

TEST(Stages, TrainingIsDeterministic) {
  std::vector<std::uint8_t> bytes[2];
  std::vector<std::string> logs[2];
  for (int run = 0; run < 2; ++run) {
    auto m = fresh(Variant::Proposed);
    training::Trainer t(*m, small_corpus(), quick_config());
    t.set_log_sink([&](const nlohmann::json& j) {
      auto copy = j;
      copy.erase("wall_s");
      logs[run].push_back(copy.dump());
    });
    t.run_stage(1, 4);
    t.run_stage(2, 3);
    bytes[run] = training::encode_checkpoint(*m);
  }
  EXPECT_EQ(bytes[0], bytes[1]);
  EXPECT_EQ(logs[0], logs[1]);
  EXPECT_FALSE(logs[0].empty());
}

TEST(Stages, LogLinesCarryRequiredFields) {
  auto m = fresh(Variant::BaseG);
  training::Trainer t(*m, small_corpus(), quick_config());
  std::vector<nlohmann::json> lines;
  t.set_log_sink([&](const nlohmann::json& j) { lines.push_back(j); });
  t.run_stage(1, 2);
  std::size_t steps = 0;
  for (const auto& j : lines) {
    if (j.at("event") != "step") continue;
    ++steps;
    for (const char* key : {"stage", "step", "loss", "mse", "stop", "ce", "lr", "wall_s"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
  }
  EXPECT_EQ(steps, 2u);
}

TEST(Stages, RegularizersAreDeterministicAndActive) {
  auto cfg = quick_config();
  cfg.guided_attn_weight = 2.0;
  cfg.teacher_noise = 0.3;
  std::vector<std::uint8_t> bytes[2];
  double guide = 0;
  for (int run = 0; run < 2; ++run) {
    auto m = fresh(Variant::Proposed);
    training::Trainer t(*m, small_corpus(), cfg);
    t.set_log_sink([&](const nlohmann::json& j) {
      if (j.at("event") == "step") guide = j.at("guide").get<double>();
    });
    t.run_stage(1, 3);
    bytes[run] = training::encode_checkpoint(*m);
  }
  EXPECT_EQ(bytes[0], bytes[1]);
  EXPECT_GT(guide, 0.0);

  auto plain = fresh(Variant::Proposed);
  training::Trainer t(*plain, small_corpus(), quick_config());
  t.run_stage(1, 3);
  EXPECT_NE(training::encode_checkpoint(*plain), bytes[0]);
}

TEST(Stages, RejectsMismatchedCorpus) {
  corpus::CorpusConfig cfg;
  cfg.n_utterances = 70;
  cfg.d_spec = 8;
  const auto c = corpus::generate_corpus(cfg);
  auto m = fresh(Variant::Proposed);
  EXPECT_THROW(training::Trainer(*m, c, quick_config()), ad::ShapeError);
}

// ---- checkpoints ------------------------------------------------------------

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto m = fresh(Variant::Proposed);
  training::Trainer t(*m, small_corpus(), quick_config());
  t.run_stage(1, 2);
  const nlohmann::json run = {{"version", 1}, {"note", "x"}};
  const auto bytes = training::encode_checkpoint(*m, training::to_json(quick_config()), run);
  const auto ckpt = training::decode_checkpoint(bytes, "memory");
  EXPECT_EQ(ckpt.stage, 1);
  EXPECT_EQ(ckpt.run, run);
  EXPECT_EQ(training::encode_checkpoint(ckpt), bytes);
  auto loaded = training::instantiate(ckpt);
  EXPECT_EQ(training::encode_checkpoint(*loaded, ckpt.train, ckpt.run), bytes);
}

TEST(Checkpoint, ManifestFollowsParameterOrder) {
  auto m = fresh(Variant::BaseG);
  const auto ckpt = training::decode_checkpoint(training::encode_checkpoint(*m), "memory");
  const auto names = m->params().names();
  ASSERT_GE(ckpt.manifest.size(), names.size());
  for (std::size_t i = 0; i < names.size(); ++i) EXPECT_EQ(ckpt.manifest[i].name, names[i]);
  for (std::size_t i = names.size(); i < ckpt.manifest.size(); ++i) EXPECT_EQ(ckpt.manifest[i].kind, "buffer");
}

TEST(Checkpoint, ForwardIsBitwiseEqualAfterReload) {
  auto m = fresh(Variant::Proposed);
  training::Trainer t(*m, small_corpus(), quick_config());
  t.run_stage(1, 2);
  t.run_stage(2, 2);
  auto loaded = training::instantiate(training::decode_checkpoint(training::encode_checkpoint(*m), "memory"));
  const auto& rec = small_corpus().records.front();
  const auto ref = rec.features.channel_major<float>();
  const auto a = m->synthesize(rec.text, ref, {}, model::GseSource::Reference, {}, 20);
  const auto b = loaded->synthesize(rec.text, ref, {}, model::GseSource::Reference, {}, 20);
  EXPECT_EQ(mstts::testutil::values(a.decoded.frames), mstts::testutil::values(b.decoded.frames));
  EXPECT_EQ(loaded->stage(), 2);
}

TEST(Checkpoint, FlippedPayloadByteNamesParameter) {
  auto m = fresh(Variant::Proposed);
  auto bytes = training::encode_checkpoint(*m);
  const auto ckpt = training::decode_checkpoint(bytes, "memory");
  const auto& target = ckpt.manifest[3];
  const std::size_t payload_start = bytes.size() - ckpt.payload.size();
  bytes[payload_start + target.offset + 1] ^= 0x40;
  try {
    training::decode_checkpoint(bytes, "memory");
    FAIL() << "expected CorruptCheckpointError";
  } catch (const training::CorruptCheckpointError& e) {
    EXPECT_EQ(e.entry(), target.name);
    EXPECT_NE(std::string(e.what()).find(target.name), std::string::npos);
  }
}

TEST(Checkpoint, RejectsBadMagicAndTruncation) {
  auto m = fresh(Variant::BaseL);
  auto bytes = training::encode_checkpoint(*m);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(training::decode_checkpoint(bad, "memory"), training::CorruptCheckpointError);
  bytes.resize(bytes.size() - 5);
  EXPECT_THROW(training::decode_checkpoint(bytes, "memory"), training::CorruptCheckpointError);
}

TEST(Checkpoint, StageProvenance) {
  auto m = fresh(Variant::Proposed);
  m->set_stage(1);
  const auto ckpt = training::decode_checkpoint(training::encode_checkpoint(*m), "memory");
  EXPECT_THROW(training::require_stage(ckpt, 2, "eval"), training::ProvenanceError);
  EXPECT_NO_THROW(training::require_stage(ckpt, 1, "train"));
  EXPECT_EQ(training::final_stage(Variant::BaseFS), 2);
  EXPECT_EQ(training::final_stage(Variant::BaseG), 1);
}

TEST(Checkpoint, FileRoundTrip) {
  auto m = fresh(Variant::BaseFS);
  const auto path = std::filesystem::temp_directory_path() / "mstts_ckpt_roundtrip.ckpt";
  training::save_checkpoint(*m, path);
  const auto ckpt = training::load_checkpoint(path);
  EXPECT_EQ(ckpt.model.variant, Variant::BaseFS);
  EXPECT_EQ(training::encode_checkpoint(*training::instantiate(ckpt)), mstts::read_file(path));
  std::filesystem::remove(path);
  EXPECT_THROW(training::load_checkpoint(path), mstts::IoError);
}
