#include <CLI11.hpp>
#include <json.hpp>

#include <rmn/data.hpp>
#include <rmn/gradsuite.hpp>
#include <rmn/infer.hpp>
#include <rmn/metrics.hpp>
#include <rmn/model.hpp>
#include <rmn/train.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes: 0 success, 1 verification/metric failure, 2 usage or data error.
constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw rmn::IoError("cannot open '" + path.string() + "' for writing");
  os << content;
  if (content.empty() || content.back() != '\n') os << '\n';
}

std::vector<rmn::FeatureBundle> load_feature_dir(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw rmn::IoError("feature directory '" + dir.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".rmnf") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw rmn::DataError("no .rmnf feature files in '" + dir.string() + "'");
  std::vector<rmn::FeatureBundle> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(rmn::load_features(f.string()));
  return out;
}

// Config parsing lives here in the tool; canonical emission lives in the
// library so hashes are computed in one place. Missing keys keep their
// defaults, which lets config files stay partial.
rmn::TrainConfig train_config_from_json(const json& j, rmn::TrainConfig cfg = {}) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("d_h", cfg.d_h);
  get("d_e", cfg.d_e);
  get("d_a", cfg.d_a);
  get("d_s", cfg.d_s);
  get("lr", cfg.lr);
  get("lr_decay_factor", cfg.lr_decay_factor);
  get("lr_decay_interval", cfg.lr_decay_interval);
  get("batch_size", cfg.batch_size);
  get("epochs", cfg.epochs);
  get("lambda", cfg.lambda);
  get("tau", cfg.tau);
  get("clip_norm", cfg.clip_norm);
  get("seed", cfg.seed);
  get("mode", cfg.mode);
  get("linguistic", cfg.linguistic);
  get("min_count", cfg.min_count);
  get("workers", cfg.workers);
  return cfg;
}

rmn::ModelConfig model_config_from_json(const json& j) {
  rmn::ModelConfig mc;
  mc.vocab = j.at("vocab").get<std::size_t>();
  mc.d_h = j.at("d_h").get<std::size_t>();
  mc.d_e = j.at("d_e").get<std::size_t>();
  mc.d_a = j.at("d_a").get<std::size_t>();
  mc.d_s = j.at("d_s").get<std::size_t>();
  mc.d_va_raw = j.at("d_va_raw").get<std::size_t>();
  mc.d_vm_raw = j.at("d_vm_raw").get<std::size_t>();
  mc.d_o = j.at("d_o").get<std::size_t>();
  mc.max_caption = j.at("max_caption").get<std::size_t>();
  return mc;
}

struct CheckpointBundle {
  rmn::TrainConfig train_cfg;
  rmn::ModelConfig model_cfg;
  std::unique_ptr<rmn::RmnModel> model;
};

CheckpointBundle load_checkpoint(const std::string& path) {
  const std::string sidecar = path + ".json";
  std::ifstream is(sidecar, std::ios::binary);
  if (!is) throw rmn::IoError("checkpoint sidecar '" + sidecar + "' not found");
  json j = json::parse(is);
  CheckpointBundle b;
  b.train_cfg = train_config_from_json(j.at("train"));
  b.model_cfg = model_config_from_json(j.at("model"));
  const std::string recorded = j.at("hash").get<std::string>();
  const std::string actual = rmn::config_hash(b.train_cfg, b.model_cfg);
  if (recorded != actual)
    throw rmn::DataError("checkpoint config hash mismatch for '" + path + "': sidecar records " +
                         recorded + " but its configuration hashes to " + actual);
  b.model = std::make_unique<rmn::RmnModel>(b.model_cfg, 0);
  b.model->params().load(path);
  return b;
}

rmn::Hypothesis decode_video(const rmn::RmnModel& model, const rmn::FeatureBundle& fb,
                             std::size_t beam, rmn::real tau) {
  rmn::ModelStepper stepper(model, model.encode_features(fb.va, fb.vo, fb.vm), tau);
  return rmn::beam_decode(stepper, beam).front();
}

// ------------------------------------------------------------- synth-gen

struct SynthArgs {
  std::size_t videos = 0;
  std::uint64_t seed = 1;
  std::string out;
  rmn::SyntheticGrammar grammar;
  std::size_t min_count = 1;
};

std::string synth_echo_json(const SynthArgs& a) {
  return rmn::JsonObject()
      .num("videos", static_cast<std::uint64_t>(a.videos))
      .num("seed", a.seed)
      .num("frames", static_cast<std::uint64_t>(a.grammar.frames))
      .num("regions", static_cast<std::uint64_t>(a.grammar.regions))
      .num("d_va", static_cast<std::uint64_t>(a.grammar.d_va))
      .num("d_vm", static_cast<std::uint64_t>(a.grammar.d_vm))
      .num("d_o", static_cast<std::uint64_t>(a.grammar.d_o))
      .num("sigma", a.grammar.sigma)
      .num("min_count", static_cast<std::uint64_t>(a.min_count))
      .done();
}

int run_synth_gen(const SynthArgs& a) {
  if (a.videos == 0) {
    std::cerr << "error: --videos must be at least 1\n";
    return kExitUsage;
  }
  rmn::SynthCorpus corpus = rmn::synth_generate(a.grammar, a.videos, a.seed);
  const fs::path out(a.out);
  fs::create_directories(out / "features");
  for (const auto& fb : corpus.features)
    rmn::save_features((out / "features" / (fb.video_id + ".rmnf")).string(), fb);
  rmn::save_corpus((out / "corpus.tsv").string(), corpus.captions);

  std::vector<std::string> caps;
  caps.reserve(corpus.captions.size());
  for (const auto& r : corpus.captions) caps.push_back(r.caption);
  rmn::Vocabulary vocab = rmn::Vocabulary::build(caps, a.min_count);
  vocab.save((out / "vocab.txt").string());

  write_text(out / "synth-gen.config.json", synth_echo_json(a));
  std::cout << "wrote " << corpus.features.size() << " videos, " << corpus.captions.size()
            << " captions, vocabulary of " << vocab.size() << " to " << out.string() << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- train

struct TrainArgs {
  std::string data, out, config_file;
  rmn::TrainConfig flags;
  std::string linguistic = "on";
};

int run_train(const CLI::App* cmd, const TrainArgs& a) {
  rmn::TrainConfig cfg;
  if (!a.config_file.empty()) {
    std::ifstream is(a.config_file, std::ios::binary);
    if (!is) throw rmn::IoError("config file '" + a.config_file + "' not found");
    cfg = train_config_from_json(json::parse(is));
  }
  // command-line flags override the config file
  auto take = [&](const char* flag, auto member) {
    if (cmd->count(flag)) cfg.*member = a.flags.*member;
  };
  take("--d-h", &rmn::TrainConfig::d_h);
  take("--d-e", &rmn::TrainConfig::d_e);
  take("--d-a", &rmn::TrainConfig::d_a);
  take("--d-s", &rmn::TrainConfig::d_s);
  take("--lr", &rmn::TrainConfig::lr);
  take("--lr-decay-factor", &rmn::TrainConfig::lr_decay_factor);
  take("--lr-decay-interval", &rmn::TrainConfig::lr_decay_interval);
  take("--batch-size", &rmn::TrainConfig::batch_size);
  take("--epochs", &rmn::TrainConfig::epochs);
  take("--lambda", &rmn::TrainConfig::lambda);
  take("--tau", &rmn::TrainConfig::tau);
  take("--clip-norm", &rmn::TrainConfig::clip_norm);
  take("--seed", &rmn::TrainConfig::seed);
  take("--mode", &rmn::TrainConfig::mode);
  take("--min-count", &rmn::TrainConfig::min_count);
  take("--workers", &rmn::TrainConfig::workers);
  if (cmd->count("--linguistic-loss")) cfg.linguistic = a.linguistic == "on";
  cfg.validate();

  const fs::path data(a.data);
  std::vector<rmn::CorpusRecord> records = rmn::load_corpus((data / "corpus.tsv").string());
  std::vector<rmn::FeatureBundle> features = load_feature_dir(data / "features");

  rmn::Vocabulary vocab;
  if (fs::exists(data / "vocab.txt")) {
    vocab = rmn::Vocabulary::load((data / "vocab.txt").string());
  } else {
    std::vector<std::string> caps;
    for (const auto& r : records) caps.push_back(r.caption);
    vocab = rmn::Vocabulary::build(caps, cfg.min_count);
  }

  std::vector<rmn::CaptionSample> samples;
  samples.reserve(records.size());
  for (const auto& r : records) samples.push_back(rmn::encode_sample(r, vocab));

  rmn::ModelConfig mc = rmn::derive_model_config(cfg, vocab.size(), features[0]);
  rmn::RmnModel model(mc, cfg.seed);

  const fs::path out(a.out);
  fs::create_directories(out);
  vocab.save((out / "vocab.txt").string());
  write_text(out / "train.config.json", rmn::checkpoint_sidecar_json(cfg, mc));

  rmn::TrainPaths paths;
  paths.checkpoint = (out / "checkpoint.rmnc").string();
  paths.log = (out / "train_log.jsonl").string();
  rmn::TrainResult res =
      rmn::train(model, features, samples, vocab, cfg, paths, nullptr,
                 [](const rmn::EpochStats& e) { std::cout << rmn::epoch_stats_json(e) << "\n"; });

  std::cout << rmn::JsonObject()
                   .str("setting", cfg.setting_name())
                   .num("best_epoch", static_cast<std::uint64_t>(res.best_epoch))
                   .num("best_cider", res.best_cider)
                   .str("checkpoint", paths.checkpoint)
                   .done()
            << "\n";
  return kExitOk;
}

// ------------------------------------------------- caption / trace / eval

struct DecodeArgs {
  std::string checkpoint, data, vocab_path, out, video;
  std::vector<std::string> feature_files;
  std::size_t beam = 2;
  double tau = 1.0;
  std::string format = "jsonl";  // trace only
};

rmn::Vocabulary load_vocab_for(const DecodeArgs& a) {
  std::string path = a.vocab_path;
  if (path.empty() && !a.data.empty()) path = (fs::path(a.data) / "vocab.txt").string();
  if (path.empty()) throw rmn::DataError("no vocabulary: pass --vocab or --data");
  return rmn::Vocabulary::load(path);
}

std::vector<rmn::FeatureBundle> gather_features(const DecodeArgs& a) {
  std::vector<rmn::FeatureBundle> features;
  if (!a.feature_files.empty()) {
    for (const auto& f : a.feature_files) features.push_back(rmn::load_features(f));
  } else if (!a.data.empty()) {
    features = load_feature_dir(fs::path(a.data) / "features");
  } else {
    throw rmn::DataError("no input videos: pass --features or --data");
  }
  if (!a.video.empty()) {
    std::erase_if(features, [&](const rmn::FeatureBundle& f) { return f.video_id != a.video; });
    if (features.empty()) throw rmn::DataError("video '" + a.video + "' not found in the input set");
  }
  return features;
}

std::string decode_echo_json(const DecodeArgs& a, const CheckpointBundle& cb) {
  return rmn::JsonObject()
      .str("checkpoint", a.checkpoint)
      .str("hash", rmn::config_hash(cb.train_cfg, cb.model_cfg))
      .num("beam", static_cast<std::uint64_t>(a.beam))
      .num("tau", a.tau)
      .done();
}

int run_caption(const DecodeArgs& a) {
  CheckpointBundle cb = load_checkpoint(a.checkpoint);
  rmn::Vocabulary vocab = load_vocab_for(a);
  if (vocab.size() != cb.model_cfg.vocab)
    throw rmn::DataError("vocabulary of " + std::to_string(vocab.size()) +
                         " does not match checkpoint vocabulary of " +
                         std::to_string(cb.model_cfg.vocab));
  std::string lines;
  for (const auto& fb : gather_features(a)) {
    rmn::Hypothesis hyp = decode_video(*cb.model, fb, a.beam, a.tau);
    lines += fb.video_id + "\t" + rmn::detokenize(vocab.to_words(hyp.tokens)) + "\n";
  }
  std::cout << lines;
  if (!a.out.empty()) {
    write_text(a.out, lines);
    write_text(a.out + ".config.json", decode_echo_json(a, cb));
  }
  return kExitOk;
}

int run_trace(const DecodeArgs& a) {
  CheckpointBundle cb = load_checkpoint(a.checkpoint);
  rmn::Vocabulary vocab = load_vocab_for(a);
  if (vocab.size() != cb.model_cfg.vocab)
    throw rmn::DataError("vocabulary of " + std::to_string(vocab.size()) +
                         " does not match checkpoint vocabulary of " +
                         std::to_string(cb.model_cfg.vocab));
  std::string body;
  for (const auto& fb : gather_features(a)) {
    rmn::Hypothesis hyp = decode_video(*cb.model, fb, a.beam, a.tau);
    if (a.format == "ansi") {
      body += fb.video_id + "  " + rmn::trace_to_ansi(hyp.tokens, hyp.trace, vocab) + "\n";
    } else {
      body += rmn::JsonObject()
                  .str("video_id", fb.video_id)
                  .str("caption", rmn::detokenize(vocab.to_words(hyp.tokens)))
                  .num("log_prob", hyp.log_prob)
                  .done() +
              "\n";
      body += rmn::trace_to_jsonl(hyp.tokens, hyp.trace, vocab);
    }
  }
  std::cout << body;
  if (!a.out.empty()) {
    write_text(a.out, body);
    write_text(a.out + ".config.json", decode_echo_json(a, cb));
  }
  return kExitOk;
}

struct EvalArgs {
  DecodeArgs decode;
  std::string candidates;  // optional: score a caption file instead of a model
};

int run_eval(const EvalArgs& a) {
  const fs::path data(a.decode.data);
  std::vector<rmn::CorpusRecord> records = rmn::load_corpus((data / "corpus.tsv").string());

  // references per video, in first-appearance order
  std::vector<std::string> video_ids;
  std::vector<std::vector<rmn::Sentence>> refs;
  std::unordered_map<std::string, std::size_t> slot;
  for (const auto& r : records) {
    auto [it, fresh] = slot.try_emplace(r.video_id, video_ids.size());
    if (fresh) {
      video_ids.push_back(r.video_id);
      refs.emplace_back();
    }
    refs[it->second].push_back(rmn::tokenize(r.caption));
  }

  std::vector<rmn::Sentence> cands(video_ids.size());
  std::string echo;
  if (!a.candidates.empty()) {
    std::unordered_map<std::string, std::string> by_video;
    for (const auto& r : rmn::load_corpus(a.candidates)) {
      if (!by_video.emplace(r.video_id, r.caption).second)
        throw rmn::DataError("candidate file has two captions for '" + r.video_id + "'");
    }
    for (std::size_t i = 0; i < video_ids.size(); ++i) {
      auto it = by_video.find(video_ids[i]);
      if (it == by_video.end())
        throw rmn::DataError("candidate file has no caption for '" + video_ids[i] + "'");
      cands[i] = rmn::tokenize(it->second);
    }
    echo = rmn::JsonObject().str("candidates", a.candidates).done();
  } else {
    if (a.decode.checkpoint.empty())
      throw rmn::DataError("eval needs --checkpoint (or --candidates to score a caption file)");
    CheckpointBundle cb = load_checkpoint(a.decode.checkpoint);
    rmn::Vocabulary vocab = load_vocab_for(a.decode);
    if (vocab.size() != cb.model_cfg.vocab)
      throw rmn::DataError("vocabulary of " + std::to_string(vocab.size()) +
                           " does not match checkpoint vocabulary of " +
                           std::to_string(cb.model_cfg.vocab));
    std::unordered_map<std::string, const rmn::FeatureBundle*> by_id;
    std::vector<rmn::FeatureBundle> features = load_feature_dir(data / "features");
    for (const auto& f : features) by_id[f.video_id] = &f;
    for (std::size_t i = 0; i < video_ids.size(); ++i) {
      auto it = by_id.find(video_ids[i]);
      if (it == by_id.end()) throw rmn::DataError("no features for video '" + video_ids[i] + "'");
      rmn::Hypothesis hyp = decode_video(*cb.model, *it->second, a.decode.beam, a.decode.tau);
      cands[i] = vocab.to_words(hyp.tokens);
    }
    echo = decode_echo_json(a.decode, cb);
  }

  rmn::EvalMetrics m = rmn::evaluate_captions(cands, refs);
  const std::string report = rmn::JsonObject()
                                 .num("videos", static_cast<std::uint64_t>(video_ids.size()))
                                 .num("bleu4", m.bleu4)
                                 .num("rouge_l", m.rouge_l)
                                 .num("cider", m.cider)
                                 .done();
  std::cout << report << "\n";
  if (!a.decode.out.empty()) {
    write_text(a.decode.out, report);
    write_text(a.decode.out + ".config.json", echo);
  }
  return kExitOk;
}

// ------------------------------------------------------------ grad-check

int run_grad_check(bool negative_control) {
  auto checks = rmn::grad_check_suite(negative_control);
  std::size_t width = 0;
  for (const auto& c : checks) width = std::max(width, c.name.size());
  bool all_pass = true;
  for (const auto& c : checks) {
    char line[160];
    std::snprintf(line, sizeof line, "%s  %-*s  max_rel=%.3e  tol=%.0e", c.pass() ? "PASS" : "FAIL",
                  static_cast<int>(width), c.name.c_str(), c.result.max_rel_err, c.tol);
    std::cout << line << "\n";
    all_pass = all_pass && c.pass();
  }
  std::cout << (all_pass ? "all gradient checks passed" : "gradient checks FAILED") << "\n";
  return all_pass ? kExitOk : kExitVerifyFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reasoning-module video captioning: train, decode, verify"};
  app.require_subcommand(1);

  SynthArgs sa;
  CLI::App* synth = app.add_subcommand("synth-gen", "generate a synthetic video-caption corpus");
  synth->add_option("--videos", sa.videos, "number of videos to generate");
  synth->add_option("--seed", sa.seed, "generation seed");
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--frames", sa.grammar.frames, "frames per video");
  synth->add_option("--regions", sa.grammar.regions, "object regions per frame (>= 2)");
  synth->add_option("--d-va", sa.grammar.d_va, "appearance feature width");
  synth->add_option("--d-vm", sa.grammar.d_vm, "motion feature width");
  synth->add_option("--d-o", sa.grammar.d_o, "object feature width");
  synth->add_option("--sigma", sa.grammar.sigma, "feature noise level (0 = noiseless)");
  synth->add_option("--min-count", sa.min_count, "vocabulary frequency threshold");

  TrainArgs ta;
  CLI::App* tr = app.add_subcommand("train", "train a captioning model");
  tr->add_option("--data", ta.data, "data directory (corpus.tsv, features/, vocab.txt)")->required();
  tr->add_option("--out", ta.out, "output directory for checkpoint and logs")->required();
  tr->add_option("--config", ta.config_file, "config file; flags override its values");
  tr->add_option("--d-h", ta.flags.d_h, "hidden width (even)");
  tr->add_option("--d-e", ta.flags.d_e, "word embedding width (0 = hidden width)");
  tr->add_option("--d-a", ta.flags.d_a, "attention width (0 = hidden width)");
  tr->add_option("--d-s", ta.flags.d_s, "selector width (0 = hidden width)");
  tr->add_option("--lr", ta.flags.lr, "learning rate");
  tr->add_option("--lr-decay-factor", ta.flags.lr_decay_factor, "divide lr by this per interval");
  tr->add_option("--lr-decay-interval", ta.flags.lr_decay_interval, "epochs between lr decays");
  tr->add_option("--batch-size", ta.flags.batch_size, "samples per optimizer step");
  tr->add_option("--epochs", ta.flags.epochs, "training epochs");
  tr->add_option("--lambda", ta.flags.lambda, "weight of the module-supervision loss");
  tr->add_option("--tau", ta.flags.tau, "selector temperature");
  tr->add_option("--clip-norm", ta.flags.clip_norm, "global gradient norm cap (<= 0 disables)");
  tr->add_option("--seed", ta.flags.seed, "seed for init, shuffling, and selector noise");
  tr->add_option("--mode", ta.flags.mode, "module fusion: hard or soft")
      ->check(CLI::IsMember({"hard", "soft"}));
  tr->add_option("--linguistic-loss", ta.linguistic, "module supervision: on or off")
      ->check(CLI::IsMember({"on", "off"}));
  tr->add_option("--min-count", ta.flags.min_count, "vocabulary frequency threshold");
  tr->add_option("--workers", ta.flags.workers, "data-parallel workers per batch");

  auto add_decode_options = [](CLI::App* c, DecodeArgs& d, bool checkpoint_required) {
    auto* ck = c->add_option("--checkpoint", d.checkpoint, "checkpoint file (.rmnc)");
    if (checkpoint_required) ck->required();
    c->add_option("--data", d.data, "data directory");
    c->add_option("--features", d.feature_files, "explicit .rmnf feature files");
    c->add_option("--vocab", d.vocab_path, "vocabulary file (default: <data>/vocab.txt)");
    c->add_option("--video", d.video, "restrict to one video id");
    c->add_option("--beam", d.beam, "beam width (1 = greedy)");
    c->add_option("--tau", d.tau, "selector temperature for trace scores");
    c->add_option("--out", d.out, "also write results to this file");
  };

  DecodeArgs ca;
  CLI::App* cap = app.add_subcommand("caption", "decode captions for videos");
  add_decode_options(cap, ca, true);

  DecodeArgs tra;
  CLI::App* trc = app.add_subcommand("trace", "decode with per-word module attribution");
  add_decode_options(trc, tra, true);
  trc->add_option("--format", tra.format, "jsonl or ansi")->check(CLI::IsMember({"jsonl", "ansi"}));

  EvalArgs ea;
  CLI::App* ev = app.add_subcommand("eval", "score decoded captions against references");
  add_decode_options(ev, ea.decode, false);
  ev->add_option("--candidates", ea.candidates, "score this caption file instead of decoding");

  bool negative_control = false;
  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference verification of all gradients");
  gc->add_flag("--negative-control", negative_control,
               "also run a deliberately broken backward rule (must fail)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return run_synth_gen(sa);
    if (tr->parsed()) return run_train(tr, ta);
    if (cap->parsed()) return run_caption(ca);
    if (trc->parsed()) return run_trace(tra);
    if (ev->parsed()) return run_eval(ea);
    if (gc->parsed()) return run_grad_check(negative_control);
  } catch (const rmn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}
