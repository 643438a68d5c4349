#include "mstts/diagnostics/grad_suite.h"

#include <chrono>
#include <functional>
#include <random>

#include "mstts/autodiff/ops.h"
#include "mstts/model/model.h"
#include "mstts/nn/layers.h"

namespace mstts::diagnostics {

using ad::Shape;
using ad::Tensor;
using model::ModelConfig;
using model::Variant;

namespace {

Tensor<double> uniform(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                       bool trainable = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(ad::numel(shape));
  for (auto& v : data) v = dist(rng);
  Tensor<double> t(std::move(shape), std::move(data));
  t.set_trainable(trainable);
  return t;
}

std::vector<ad::NamedTensor> named(const nn::ParameterStore<double>& store) {
  std::vector<ad::NamedTensor> out;
  for (const auto& p : store.parameters()) out.push_back({p.name, p.value});
  return out;
}

void jitter_biases(nn::ParameterStore<double>& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::uniform_real_distribution<double> dist(-0.3, 0.3);
  for (const auto& p : store.parameters()) {
    if (p.init != nn::InitKind::Zeros) continue;
    auto t = p.value;
    for (auto& v : t.mutable_data()) v = dist(rng);
  }
}

/// Weighted sum with fixed random weights so that every output element
/// contributes a distinct amount.
Tensor<double> weighted(const Tensor<double>& t, std::uint64_t seed) {
  return ad::sum(ad::mul(t, uniform(t.shape(), seed + 999, -1, 1, false)));
}

class Collector {
 public:
  explicit Collector(std::vector<GradCase>& out) : out_(out) {}
  void check(std::string name, std::uint64_t seed, const std::function<Tensor<double>()>& program,
             const std::vector<ad::NamedTensor>& params) {
    out_.push_back({std::move(name), seed, ad::grad_check(program, params)});
  }

 private:
  std::vector<GradCase>& out_;
};

void primitives(Collector& c, std::uint64_t seed) {
  auto a = uniform(Shape{3, 4}, seed * 7 + 1);
  auto b = uniform(Shape{3, 4}, seed * 7 + 2);
  auto w = uniform(Shape{5, 4}, seed * 7 + 3);
  auto bias = uniform(Shape{5}, seed * 7 + 4);
  auto v = uniform(Shape{4}, seed * 7 + 5);
  auto gamma = uniform(Shape{3}, seed * 7 + 6, 0.5, 1.5);
  auto beta = uniform(Shape{3}, seed * 7 + 7);
  auto table = uniform(Shape{6, 4}, seed * 7 + 8);
  auto mix = uniform(Shape{3, 4}, seed * 7 + 9, -1, 1, false);
  auto x = uniform(Shape{2, 9}, seed * 7 + 10);
  auto k = uniform(Shape{3, 2, 3}, seed * 7 + 11);
  auto kb = uniform(Shape{3}, seed * 7 + 12);
  auto xp = uniform(Shape{2, 6}, seed * 7 + 13);
  auto hp = uniform(Shape{1, 6}, seed * 7 + 14);
  auto gb = uniform(Shape{6}, seed * 7 + 15);
  auto h0 = uniform(Shape{1, 2}, seed * 7 + 16);
  const std::vector<float> bn_mean = {0.1f, -0.2f, 0.3f}, bn_var = {0.5f, 1.5f, 2.0f};
  const std::vector<ad::NamedTensor> params = {
      {"a", a}, {"b", b}, {"w", w}, {"bias", bias}, {"v", v}, {"gamma", gamma},
      {"beta", beta}, {"table", table}, {"x", x}, {"k", k}, {"kb", kb},
      {"xp", xp}, {"hp", hp}, {"gb", gb}, {"h0", h0}};
  const std::vector<std::pair<std::string, std::function<Tensor<double>()>>> programs = {
      {"matmul", [&] { return weighted(ad::matmul(a, ad::transpose(w)), seed); }},
      {"linear", [&] { return weighted(ad::linear(a, w, bias), seed); }},
      {"add", [&] { return weighted(ad::add(a, b), seed); }},
      {"sub", [&] { return weighted(ad::sub(a, b), seed); }},
      {"mul", [&] { return weighted(ad::mul(a, b), seed); }},
      {"scale", [&] { return weighted(ad::scale(a, 1.7), seed); }},
      {"add_rowvec", [&] { return weighted(ad::add_rowvec(a, v), seed); }},
      {"tanh", [&] { return weighted(ad::tanh(a), seed); }},
      {"relu", [&] { return weighted(ad::relu(ad::add(a, mix)), seed); }},
      {"sigmoid", [&] { return weighted(ad::sigmoid(a), seed); }},
      {"mean", [&] { return ad::mul(ad::mean(ad::mul(a, b)), ad::sum(a)); }},
      {"concat", [&] { return weighted(ad::concat({a, b}, 1), seed); }},
      {"split", [&] { return weighted(ad::split(a, 1, {1, 3})[1], seed); }},
      {"slice", [&] { return weighted(ad::slice(a, 0, 1, 3), seed); }},
      {"reshape", [&] { return weighted(ad::reshape(a, Shape{4, 3}), seed); }},
      {"repeat", [&] { return weighted(ad::repeat(v, 0, 3), seed); }},
      {"softmax", [&] { return weighted(ad::softmax(a, 1), seed); }},
      {"conv1d_same", [&] { return weighted(ad::tanh(ad::conv1d_same(x, k, kb, 2)), seed); }},
      {"batch_norm", [&] {
         ad::ChannelStats stats;
         return weighted(ad::batch_norm_train(a, gamma, beta, 1e-5, &stats), seed);
       }},
      {"batch_norm_eval", [&] {
         return weighted(ad::batch_norm_eval(a, gamma, beta, bn_mean, bn_var, 1e-5), seed);
       }},
      {"transpose", [&] { return weighted(ad::transpose(ad::mul(a, b)), seed); }},
      {"gru_gates", [&] { return weighted(ad::gru_gates(xp, 1, hp, gb, h0), seed); }},
      {"gather_rows", [&] {
         const std::size_t ids[] = {1, 4, 1};
         return weighted(ad::gather_rows(table, ids), seed);
       }},
      {"masked_mse", [&] { return ad::masked_mse(ad::tanh(a), b, 2); }},
      {"bce_with_logits", [&] {
         const std::vector<double> targets = {0, 1, 0, 1};
         return ad::bce_with_logits(v, std::span<const double>(targets));
       }},
      {"cross_entropy", [&] { return ad::cross_entropy(ad::linear(v, w, bias), seed % 5); }},
  };
  for (const auto& [name, program] : programs) c.check("primitive/" + name, seed, program, params);
}

void layers(Collector& c, std::uint64_t seed) {
  {
    nn::ParameterStore<double> store;
    nn::Linear<double> lin(store, "lin", 4, 3);
    store.initialize(seed);
    jitter_biases(store, seed);
    auto x = uniform(Shape{5, 4}, seed + 10, -1, 1, false);
    c.check("layer/linear", seed, [&] { return ad::sum(ad::tanh(lin(x))); }, named(store));
  }
  {
    nn::ParameterStore<double> store;
    nn::ConvBlock<double> block(store, "conv", 2, 3, 2);
    store.initialize(seed);
    jitter_biases(store, seed);
    auto x = uniform(Shape{2, 7}, seed + 20, -1, 1, false);
    auto mix = uniform(Shape{3, 4}, seed + 21, -1, 1, false);
    c.check("layer/conv_block", seed, [&] { return ad::sum(ad::mul(block(x, nn::Mode::Train), mix)); },
            named(store));
  }
  {
    nn::ParameterStore<double> store;
    nn::Gru<double> gru(store, "gru", 3, 4);
    store.initialize(seed);
    jitter_biases(store, seed);
    auto xs = uniform(Shape{5, 3}, seed + 30, -1, 1, false);
    auto mix = uniform(Shape{5, 4}, seed + 31, -1, 1, false);
    c.check("layer/gru_unroll", seed,
            [&] {
              auto out = gru.run(xs);
              return ad::add(ad::sum(ad::mul(out.states, mix)), ad::sum(out.final));
            },
            named(store));
  }
  {
    nn::ParameterStore<double> store;
    nn::Embedding<double> emb(store, "emb", 6, 3);
    store.initialize(seed);
    const std::size_t ids[] = {0, 5, 2, 5};
    c.check("layer/embedding", seed, [&] { return weighted(ad::tanh(emb.rows(ids)), seed); }, named(store));
  }
}

void modules(Collector& c, std::uint64_t seed) {
  const std::vector<std::size_t> ids = {4, 1, 9};
  {
    model::Model<double> m(ModelConfig::tiny());
    m.initialize(seed);
    jitter_biases(m.params(), seed);
    auto x = uniform(Shape{4, 64}, seed + 40, -1, 1, false);
    c.check("module/reference_encoder", seed,
            [&] {
              auto conv = m.ref_encoder().conv_stack(x, nn::Mode::Train);
              return ad::add(weighted(m.ref_encoder().global_head(conv), seed),
                             weighted(m.ref_encoder().local_head(conv), seed + 1));
            },
            named(m.params()));
    c.check("module/text_encoder", seed, [&] { return weighted(m.text_encoder()(ids), seed); },
            named(m.params()));
    auto gse = uniform(Shape{8}, seed + 41);
    auto params = named(m.params());
    params.push_back({"gse", gse});
    c.check("module/classifier", seed, [&] { return ad::cross_entropy(m.classifier()(gse), seed % 7); },
            params);
  }
  {
    nn::ParameterStore<double> store;
    model::ReferenceAttention<double> attn(store, 8, 6, model::RefAttnConfig{4});
    store.initialize(seed);
    jitter_biases(store, seed);
    auto lpe = uniform(Shape{6, 5}, seed + 50);
    auto phon = uniform(Shape{8, 4}, seed + 51);
    auto params = named(store);
    params.push_back({"lpe", lpe});
    params.push_back({"phon", phon});
    c.check("module/reference_attention", seed, [&] { return weighted(attn.align(lpe, phon).aligned, seed); },
            params);
  }
  {
    const auto cfg = ModelConfig::tiny();
    nn::ParameterStore<double> store;
    model::Decoder<double> dec(store, cfg.d_spec, 7, cfg.backbone);
    store.initialize(seed);
    jitter_biases(store, seed);
    auto memory = uniform(Shape{7, 3}, seed + 60);
    auto target = uniform(Shape{9, cfg.d_spec}, seed + 61, -1, 1, false);
    auto params = named(store);
    params.push_back({"memory", memory});
    c.check("module/decoder", seed,
            [&] {
              auto res = dec.teacher_forced(memory, target);
              return ad::add(ad::masked_mse(res.frames, target, 9), weighted(res.stop_logits, seed));
            },
            params);
  }
}

void end_to_end(Collector& c, std::uint64_t seed) {
  const std::vector<std::size_t> ids = {4, 1, 9};
  for (Variant v : {Variant::Proposed, Variant::BaseG, Variant::BaseL, Variant::BaseFS}) {
    model::Model<double> m(ModelConfig::tiny(v));
    m.initialize(seed);
    jitter_biases(m.params(), seed);
    auto ref = uniform(Shape{4, 64}, seed + 70, -1, 1, false);
    auto target = uniform(Shape{21, 4}, seed + 71, -1, 1, false);
    const std::vector<double> stops = {0, 0, 0, 0, 0, 0, 1};
    c.check(std::string("model/") + model::variant_name(v), seed,
            [&] {
              auto conv = m.ref_encoder().conv_stack(ref, nn::Mode::Train);
              auto res = m.synthesize_from_conv(ids, conv, conv, model::GseSource::Reference, target);
              auto loss = ad::add(ad::masked_mse(res.decoded.frames, target, 20),
                                  ad::bce_with_logits(res.decoded.stop_logits, std::span<const double>(stops)));
              if (m.config().has_classifier())
                loss = ad::add(loss, ad::cross_entropy(m.classifier()(res.style.gse), seed % 7));
              return loss;
            },
            named(m.params()));
  }
}

}  // namespace

bool GradSuiteResult::passed() const {
  for (const auto& c : cases)
    if (!c.report.passed()) return false;
  return !cases.empty();
}

double GradSuiteResult::max_rel_error() const {
  double worst = 0;
  for (const auto& c : cases) worst = std::max(worst, c.report.max_rel_error());
  return worst;
}

GradSuiteResult run_grad_suite(std::size_t seeds) {
  const auto start = std::chrono::steady_clock::now();
  GradSuiteResult result;
  Collector c(result.cases);
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    primitives(c, seed);
    layers(c, seed);
    modules(c, seed);
    end_to_end(c, seed);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace mstts::diagnostics
