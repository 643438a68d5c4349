#include "mstts/app/cli.h"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "mstts/app/experiments.h"
#include "mstts/app/run_config.h"
#include "mstts/autodiff/tensor.h"
#include "mstts/corpus/corpus.h"
#include "mstts/diagnostics/grad_suite.h"
#include "mstts/eval/evaluation.h"
#include "mstts/training/checkpoint.h"
#include "mstts/training/training.h"
#include "mstts/version.h"

namespace mstts::app {

namespace fs = std::filesystem;
using json = nlohmann::json;
using model::Variant;

namespace {

constexpr std::size_t kMinUtterances = 70;

RunConfig resolve_config(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

std::string resolve_data(const std::string& flag, const RunConfig& cfg) {
  if (!flag.empty()) return flag;
  if (!cfg.paths.data.empty()) return cfg.paths.data;
  throw UsageError("--data is required (or set paths.data in the config)");
}

std::string full_precision(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void ensure_parent(const fs::path& p) {
  if (!p.has_parent_path()) return;
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + p.parent_path().string() + ": " + ec.message());
}

fs::path with_stage_suffix(const fs::path& p, int stage) {
  fs::path out = p.parent_path() / (p.stem().string() + ".stage" + std::to_string(stage) + p.extension().string());
  return out;
}

// ---- gen-data ---------------------------------------------------------------

struct GenDataFlags {
  std::string out;
  std::size_t utterances = 700;
  std::uint64_t seed = 7;
  double neutral_frac = 0.4667;
  double parallel_frac = 0.15;
  std::size_t d_spec = 32;
};

int cmd_gen_data(const GenDataFlags& f, std::ostream& out) {
  if (f.utterances < kMinUtterances) {
    throw UsageError("--utterances " + std::to_string(f.utterances) + " is below minimum " +
                     std::to_string(kMinUtterances));
  }
  if (!(f.neutral_frac >= 0 && f.neutral_frac < 1) || !(f.parallel_frac >= 0 && f.parallel_frac <= 1)) {
    throw UsageError("--neutral-frac must lie in [0, 1) and --parallel-frac in [0, 1]");
  }
  if (f.d_spec < 8) throw UsageError("--d-spec must be at least 8");
  corpus::CorpusConfig cc;
  cc.n_utterances = f.utterances;
  cc.seed = f.seed;
  cc.neutral_frac = f.neutral_frac;
  cc.parallel_frac = f.parallel_frac;
  cc.d_spec = f.d_spec;
  const auto c = corpus::generate_corpus(cc);
  corpus::write_corpus(c, f.out);
  out << "wrote " << c.records.size() << " utterances to " << f.out << "\n";
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainFlags {
  std::string config, data, stage = "both", variant, out, resume, log;
};

json run_record(const RunConfig& cfg, const std::string& command, const std::string& data) {
  return {{"command", command}, {"data", data}, {"config", to_json(cfg)}};
}

int cmd_train(const TrainFlags& f, std::ostream& out) {
  const Variant v = [&] {
    try {
      return model::parse_variant(f.variant);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }();
  const RunConfig cfg = resolve_config(f.config);
  const std::string data = resolve_data(f.data, cfg);
  const model::ModelConfig mc = cfg.model_for(v);

  const bool two_stage = mc.two_stage();
  if (f.stage == "2" && v == Variant::BaseL) {
    throw UsageError("variant base-l has no global head; it trains in a single stage (use --stage 1)");
  }
  if (!two_stage && f.stage != "1") {
    throw UsageError(std::string("variant ") + model::variant_name(v) +
                     " trains in a single stage; use --stage 1");
  }
  if (f.stage == "2" && f.resume.empty()) throw UsageError("--stage 2 requires --resume with a stage-1 checkpoint");
  if (f.stage != "2" && !f.resume.empty()) throw UsageError("--resume is only used with --stage 2");

  const auto corpus = corpus::load_corpus(data);
  const json run = run_record(cfg, "train", data);

  std::unique_ptr<std::ofstream> log_file;
  auto attach_log = [&](training::Trainer& t) {
    if (f.log.empty()) return;
    if (!log_file) {
      ensure_parent(f.log);
      log_file = std::make_unique<std::ofstream>(f.log, std::ios::trunc);
      if (!*log_file) throw IoError("cannot write " + f.log);
    }
    t.set_log_sink([&](const json& j) { *log_file << j.dump() << "\n"; });
  };

  std::unique_ptr<model::Model<float>> m;
  if (f.stage == "2") {
    const auto ckpt = training::load_checkpoint(f.resume);
    training::require_stage(ckpt, 1, f.resume);
    if (ckpt.model.variant != v) {
      throw training::ProvenanceError(f.resume + " holds variant " + model::variant_name(ckpt.model.variant) +
                                      ", not " + model::variant_name(v));
    }
    m = training::instantiate(ckpt);
  } else {
    m = std::make_unique<model::Model<float>>(mc);
    m->initialize(cfg.train.seed);
  }

  training::Trainer trainer(*m, corpus, cfg.train);
  attach_log(trainer);
  const json train_json = training::to_json(cfg.train);
  auto report = [&](const training::StageSummary& s, const fs::path& path) {
    out << "stage " << s.stage << ": " << s.steps << " steps in " << full_precision(s.seconds)
        << " s, val mse " << full_precision(s.val_mse_start) << " -> " << full_precision(s.val_mse_end) << ", wrote "
        << path.string() << "\n";
  };

  const fs::path out_path = f.out;
  ensure_parent(out_path);
  if (!two_stage) {
    const auto s = trainer.run_stage(1, cfg.train.stage1_steps + cfg.train.stage2_steps);
    training::save_checkpoint(*m, out_path, train_json, run);
    report(s, out_path);
  } else if (f.stage == "1") {
    const auto s = trainer.run_stage(1, cfg.train.stage1_steps);
    training::save_checkpoint(*m, out_path, train_json, run);
    report(s, out_path);
  } else if (f.stage == "2") {
    const auto s = trainer.run_stage(2, cfg.train.stage2_steps);
    training::save_checkpoint(*m, out_path, train_json, run);
    report(s, out_path);
  } else {
    const auto s1 = trainer.run_stage(1, cfg.train.stage1_steps);
    const fs::path p1 = with_stage_suffix(out_path, 1), p2 = with_stage_suffix(out_path, 2);
    training::save_checkpoint(*m, p1, train_json, run);
    report(s1, p1);
    const auto s2 = trainer.run_stage(2, cfg.train.stage2_steps);
    training::save_checkpoint(*m, p2, train_json, run);
    report(s2, p2);
  }
  if (m->config().has_classifier() && m->stage() == training::final_stage(v)) {
    out << "classifier val accuracy " << full_precision(trainer.classifier_accuracy()) << "\n";
  }
  return kExitOk;
}

// ---- transfer ----------------------------------------------------------------

struct TransferFlags {
  std::string config, ckpt, data, text, local_ref, global_ref, out;
};

std::vector<std::size_t> parse_text(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::size_t> ids;
  std::string tok;
  while (in >> tok) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size() || tok[0] == '-') throw UsageError("--text: '" + tok + "' is not a symbol id");
    ids.push_back(v);
  }
  if (ids.empty()) throw UsageError("--text is empty");
  return ids;
}

const corpus::UtteranceRecord& find_record(const corpus::Corpus& c, const std::string& id) {
  for (const auto& r : c.records)
    if (r.id == id) return r;
  throw UsageError("no utterance with id " + id + " in the corpus");
}

std::string alignment_csv(const ad::Tensor<float>& w, const char* header) {
  std::string s = std::string(header) + "\n";
  for (std::size_t i = 0; i < w.dim(0); ++i) {
    for (std::size_t j = 0; j < w.dim(1); ++j) {
      s += std::to_string(i) + "," + std::to_string(j) + "," + full_precision(w.at(i, j)) + "\n";
    }
  }
  return s;
}

std::vector<std::uint8_t> alignment_pgm(const ad::Tensor<float>& w) {
  const std::string head = "P5\n" + std::to_string(w.dim(1)) + " " + std::to_string(w.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  for (std::size_t i = 0; i < w.dim(0); ++i) {
    for (std::size_t j = 0; j < w.dim(1); ++j) {
      const double v = std::clamp(double(w.at(i, j)), 0.0, 1.0);
      bytes.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
    }
  }
  return bytes;
}

int cmd_transfer(const TransferFlags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f.config);
  const std::string data = resolve_data(f.data, cfg);
  const auto ids = parse_text(f.text);
  const auto ckpt = training::load_checkpoint(f.ckpt);
  training::require_stage(ckpt, training::final_stage(ckpt.model.variant), f.ckpt);
  auto m = training::instantiate(ckpt);
  const auto corpus = corpus::load_corpus(data);
  const auto& local = find_record(corpus, f.local_ref);
  const auto& global = f.global_ref.empty() ? local : find_record(corpus, f.global_ref);
  if (ids != local.text) {
    throw eval::ContentMismatchError("--text does not match the text of local reference " + local.id);
  }
  const auto local_t = local.features.channel_major<float>();
  const ad::Tensor<float> global_t = &global == &local ? ad::Tensor<float>() : global.features.channel_major<float>();
  auto res = m->synthesize(ids, local_t, global_t, model::GseSource::Reference, {}, cfg.eval.max_steps);

  const fs::path prefix = f.out;
  ensure_parent(prefix);
  auto named = [&](const std::string& suffix) { return fs::path(prefix.string() + suffix); };
  const auto& frames = res.decoded.frames;
  auto features = FeatureMatrix::from_time_major(frames, frames.dim(0));
  features.frame_shift_ms = corpus.inventory.frame_shift_ms;
  write_file(named(".f32"), encode_feature_file(features));
  json files = {named(".f32").string()};
  if (res.ref_attn.weights.defined()) {
    write_text_file(named(".refattn.csv"), alignment_csv(res.ref_attn.weights, "t_p,t_l,weight"));
    write_file(named(".refattn.pgm"), alignment_pgm(res.ref_attn.weights));
    files.push_back(named(".refattn.csv").string());
    files.push_back(named(".refattn.pgm").string());
  }
  write_text_file(named(".decattn.csv"), alignment_csv(res.decoded.alignment, "step,t_p,weight"));
  files.push_back(named(".decattn.csv").string());

  json side = {{"tool_version", kToolVersion},
               {"config", to_json(cfg)},
               {"checkpoint",
                {{"path", f.ckpt},
                 {"variant", model::variant_name(ckpt.model.variant)},
                 {"stage", ckpt.stage},
                 {"tool_version", ckpt.tool_version}}},
               {"text", ids},
               {"local_ref", local.id},
               {"global_ref", global.id},
               {"output_frames", features.frames},
               {"decoder_steps", res.decoded.steps},
               {"completed", !res.decoded.incomplete},
               {"ref_attention_shape",
                res.ref_attn.weights.defined()
                    ? json::array({res.ref_attn.weights.dim(0), res.ref_attn.weights.dim(1)})
                    : json(nullptr)},
               {"files", files}};
  write_text_file(named(".json"), side.dump(2) + "\n");
  files.push_back(named(".json").string());
  out << "synthesized " << features.frames << " frames (" << (res.decoded.incomplete ? "incomplete" : "completed")
      << ")\n";
  for (const auto& p : files) out << "wrote " << p.get<std::string>() << "\n";
  return kExitOk;
}

// ---- eval ----------------------------------------------------------------

struct EvalFlags {
  std::string config, data, report;
  std::vector<std::string> ckpts;
  std::size_t jobs = 1;
};

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  const RunConfig cfg = resolve_config(f.config);
  const std::string data = resolve_data(f.data, cfg);
  if (f.jobs == 0) throw UsageError("--jobs must be positive");
  for (const auto& p : f.ckpts) {
    if (!fs::exists(p)) throw IoError("checkpoint not found: " + p);
  }
  std::vector<training::Checkpoint> ckpts;
  std::map<Variant, std::size_t> seen;
  for (std::size_t i = 0; i < f.ckpts.size(); ++i) {
    ckpts.push_back(training::load_checkpoint(f.ckpts[i]));
    const auto v = ckpts.back().model.variant;
    training::require_stage(ckpts.back(), training::final_stage(v), f.ckpts[i]);
    if (!seen.emplace(v, i).second) {
      throw UsageError(std::string("two checkpoints for variant ") + model::variant_name(v));
    }
  }
  const auto corpus = corpus::load_corpus(data);
  const auto probe = eval::train_probe(corpus, cfg.eval.probe_min_accuracy);
  const auto groups = eval::test_groups(corpus, cfg.eval.min_groups, cfg.eval.seed);

  std::vector<std::optional<VariantEvaluation>> results(ckpts.size());
  std::vector<std::exception_ptr> errors(ckpts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < ckpts.size(); i = next++) {
      try {
        auto m = training::instantiate(ckpts[i]);
        results[i] = evaluate_model(*m, probe, corpus.inventory, groups, cfg.eval);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(f.jobs, ckpts.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::map<Variant, VariantEvaluation> by_variant;
  json checkpoints = json::array(), variants = json::object();
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    const auto& c = ckpts[i];
    checkpoints.push_back({{"path", f.ckpts[i]},
                           {"variant", model::variant_name(c.model.variant)},
                           {"stage", c.stage},
                           {"tool_version", c.tool_version},
                           {"model", model::to_json(c.model)},
                           {"train", c.train},
                           {"run", c.run}});
    variants[model::variant_name(c.model.variant)] = to_json(*results[i]);
    by_variant.emplace(c.model.variant, std::move(*results[i]));
  }
  const auto trends = compute_trends(by_variant);
  json trend_json = json::array();
  for (const auto& t : trends) trend_json.push_back(to_json(t));
  json report = {{"tool_version", kToolVersion},
                 {"config", to_json(cfg)},
                 {"data", data},
                 {"probe_val_accuracy", probe.accuracy(corpus.split(corpus::Split::Val))},
                 {"test_groups", groups.size()},
                 {"checkpoints", checkpoints},
                 {"variants", variants},
                 {"trends", trend_json}};
  if (by_variant.count(Variant::Proposed) && by_variant.count(Variant::BaseFS)) {
    report["granularity"] = eval::compare_granularity(by_variant.at(Variant::Proposed).parallel,
                                                      by_variant.at(Variant::BaseFS).parallel)
                                .to_json();
  }
  ensure_parent(f.report);
  write_text_file(f.report, report.dump(2) + "\n");

  for (const auto& [v, e] : by_variant) {
    out << model::variant_name(v) << ": global match " << full_precision(e.parallel.global_match_rate())
        << ", duration r " << full_precision(e.parallel.mean_duration_pearson()) << ", completion "
        << full_precision(e.parallel.completion_rate()) << "\n";
  }
  for (const auto& t : trends) {
    out << (t.passed ? "PASS " : "FAIL ") << t.name << " = " << full_precision(t.value) << " (gate "
        << full_precision(t.threshold) << ")\n";
  }
  out << "wrote " << f.report << "\n";
  return kExitOk;
}

// ---- grad-check --------------------------------------------------------------

struct GradFlags {
  std::size_t seeds = 5;
  std::string corrupt;
  bool verbose = false;
};

int cmd_grad_check(const GradFlags& f, std::ostream& out) {
  if (f.seeds == 0) throw UsageError("--seeds must be positive");
  struct Reset {
    ~Reset() { ad::testing::set_corrupted_backward(""); }
  } reset;
  ad::testing::set_corrupted_backward(f.corrupt);
  const auto result = diagnostics::run_grad_suite(f.seeds);

  std::map<std::string, std::pair<double, bool>> per_name;
  std::vector<std::string> order;
  for (const auto& c : result.cases) {
    auto [it, inserted] = per_name.emplace(c.name, std::make_pair(0.0, true));
    if (inserted) order.push_back(c.name);
    it->second.first = std::max(it->second.first, c.report.max_rel_error());
    it->second.second = it->second.second && c.report.passed();
    if (!c.report.passed() || f.verbose) {
      out << (c.report.passed() ? "pass " : "FAIL ") << c.name << " seed " << c.seed << "\n" << c.report.summary();
    }
  }
  std::size_t failed = 0;
  for (const auto& name : order) {
    const auto& [err, ok] = per_name.at(name);
    failed += ok ? 0 : 1;
    out << (ok ? "PASS " : "FAIL ") << name << " max rel err " << full_precision(err) << "\n";
  }
  out << "grad-check: " << result.cases.size() << " checks over " << f.seeds << " seeds, " << failed
      << " failing, max rel err " << full_precision(result.max_rel_error()) << ", "
      << full_precision(result.seconds) << " s\n";
  return result.passed() ? kExitOk : kExitNumerical;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale style transfer TTS toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenDataFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic emotional corpus");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--utterances", gen.utterances, "Number of utterances (at least 70)");
  gen_cmd->add_option("--seed", gen.seed, "Corpus seed");
  gen_cmd->add_option("--neutral-frac", gen.neutral_frac, "Fraction of neutral utterances");
  gen_cmd->add_option("--parallel-frac", gen.parallel_frac, "Fraction of utterances in parallel groups");
  gen_cmd->add_option("--d-spec", gen.d_spec, "Feature channels");

  TrainFlags train;
  auto* train_cmd = app.add_subcommand("train", "Train one model variant");
  train_cmd->add_option("--config", train.config, "Run configuration JSON");
  train_cmd->add_option("--data", train.data, "Corpus directory");
  train_cmd->add_option("--stage", train.stage, "Stage to run")->check(CLI::IsMember({"1", "2", "both"}));
  train_cmd->add_option("--variant", train.variant, "proposed, base-g, base-l or base-fs")->required();
  train_cmd->add_option("--out", train.out, "Checkpoint path")->required();
  train_cmd->add_option("--resume", train.resume, "Stage-1 checkpoint (required for --stage 2)");
  train_cmd->add_option("--log", train.log, "JSONL training log");

  TransferFlags transfer;
  auto* transfer_cmd = app.add_subcommand("transfer", "Synthesize text with a local and a global reference");
  transfer_cmd->add_option("--config", transfer.config, "Run configuration JSON");
  transfer_cmd->add_option("--ckpt", transfer.ckpt, "Trained checkpoint")->required();
  transfer_cmd->add_option("--data", transfer.data, "Corpus directory holding the references");
  transfer_cmd->add_option("--text", transfer.text, "Space-separated symbol ids")->required();
  transfer_cmd->add_option("--local-ref", transfer.local_ref, "Local reference utterance id")->required();
  transfer_cmd->add_option("--global-ref", transfer.global_ref, "Global reference id (default: the local one)");
  transfer_cmd->add_option("--out", transfer.out, "Output prefix")->required();

  EvalFlags ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate trained variants and write a report");
  eval_cmd->add_option("--config", ev.config, "Run configuration JSON");
  eval_cmd->add_option("--ckpt", ev.ckpts, "Checkpoint, one per variant (repeatable)")->required();
  eval_cmd->add_option("--data", ev.data, "Corpus directory");
  eval_cmd->add_option("--report", ev.report, "Report JSON path")->required();
  eval_cmd->add_option("--jobs", ev.jobs, "Parallel variant jobs");

  GradFlags grad;
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  grad_cmd->add_option("--seeds", grad.seeds, "Seeds per check");
  grad_cmd->add_option("--corrupt", grad.corrupt, "Corrupt the backward pass of one primitive (test fixture)");
  grad_cmd->add_flag("--verbose", grad.verbose, "Print every check");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("mstts");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (app.get_subcommands().empty()) err << app.help();
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (train_cmd->parsed()) return cmd_train(train, out);
    if (transfer_cmd->parsed()) return cmd_transfer(transfer, out);
    if (eval_cmd->parsed()) return cmd_eval(ev, out);
    if (grad_cmd->parsed()) return cmd_grad_check(grad, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const model::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const training::CorruptCheckpointError& e) {
    err << "corrupt checkpoint: " << e.what() << "\n";
    return kExitIo;
  } catch (const corpus::CorruptCorpusError& e) {
    err << "corrupt corpus: " << e.what() << "\n";
    return kExitIo;
  } catch (const corpus::CorpusVersionError& e) {
    err << "corpus version: " << e.what() << "\n";
    return kExitIo;
  } catch (const ad::NumericalError& e) {
    err << "numerical failure in " << e.primitive() << ": " << e.what() << "\n";
    return kExitNumerical;
  } catch (const ad::ContractError& e) {
    err << "contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const ad::ShapeError& e) {
    err << "contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const ad::EmptyInputError& e) {
    err << "contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const training::ProvenanceError& e) {
    err << "contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const eval::ProbeUnfitError& e) {
    err << "contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const model::OutOfVocabularyError& e) {
    err << "contract violation: " << e.what() << "\n";
    return kExitContract;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mstts::app
