#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "data.hpp"
#include "infer.hpp"
#include "jsontext.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace rmn {

struct TrainConfig {
  // model widths (vocabulary and feature widths come from the data)
  std::size_t d_h = 512;
  std::size_t d_e = 0, d_a = 0, d_s = 0;  // 0 = follow d_h
  // optimization
  real lr = 1e-4;
  real lr_decay_factor = 10.0;
  std::size_t lr_decay_interval = 10;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  real lambda = 1.0;
  real tau = 1.0;
  real clip_norm = 5.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;
  std::string mode = "hard";  // "hard" or "soft" fusion
  bool linguistic = true;
  std::size_t min_count = 1;  // vocabulary threshold
  std::size_t workers = 1;

  void validate() const {
    if (!d_h || d_h % 2) throw ValueError("train config: d_h must be positive and even");
    if (!(lr > 0)) throw ValueError("train config: learning rate must be positive");
    if (lr_decay_factor < 1.0) throw ValueError("train config: decay factor must be at least 1");
    if (!lr_decay_interval) throw ValueError("train config: decay interval must be positive");
    if (!batch_size || !epochs) throw ValueError("train config: batch size and epochs must be positive");
    if (!(tau > 0)) throw ValueError("train config: tau must be positive");
    if (lambda < 0) throw ValueError("train config: lambda must be non-negative");
    if (mode != "hard" && mode != "soft")
      throw ValueError("train config: mode must be 'hard' or 'soft', got '" + mode + "'");
    if (!workers) throw ValueError("train config: need at least one worker");
  }

  Fusion fusion() const { return mode == "soft" ? Fusion::soft : Fusion::hard; }

  // The four ablations: S, H, S+L, H+L.
  std::string setting_name() const {
    std::string n = mode == "soft" ? "S" : "H";
    return linguistic ? n + "+L" : n;
  }
};

// Canonical serializations; key order and number formatting are fixed so the
// config hash is reproducible.
inline std::string train_config_json(const TrainConfig& c) {
  return JsonObject()
      .num("d_h", static_cast<std::uint64_t>(c.d_h))
      .num("d_e", static_cast<std::uint64_t>(c.d_e))
      .num("d_a", static_cast<std::uint64_t>(c.d_a))
      .num("d_s", static_cast<std::uint64_t>(c.d_s))
      .num("lr", c.lr)
      .num("lr_decay_factor", c.lr_decay_factor)
      .num("lr_decay_interval", static_cast<std::uint64_t>(c.lr_decay_interval))
      .num("batch_size", static_cast<std::uint64_t>(c.batch_size))
      .num("epochs", static_cast<std::uint64_t>(c.epochs))
      .num("lambda", c.lambda)
      .num("tau", c.tau)
      .num("clip_norm", c.clip_norm)
      .num("seed", c.seed)
      .str("mode", c.mode)
      .boolean("linguistic", c.linguistic)
      .num("min_count", static_cast<std::uint64_t>(c.min_count))
      .num("workers", static_cast<std::uint64_t>(c.workers))
      .done();
}

inline std::string model_config_json(const ModelConfig& m) {
  return JsonObject()
      .num("vocab", static_cast<std::uint64_t>(m.vocab))
      .num("d_h", static_cast<std::uint64_t>(m.d_h))
      .num("d_e", static_cast<std::uint64_t>(m.d_e))
      .num("d_a", static_cast<std::uint64_t>(m.d_a))
      .num("d_s", static_cast<std::uint64_t>(m.d_s))
      .num("d_va_raw", static_cast<std::uint64_t>(m.d_va_raw))
      .num("d_vm_raw", static_cast<std::uint64_t>(m.d_vm_raw))
      .num("d_o", static_cast<std::uint64_t>(m.d_o))
      .num("max_caption", static_cast<std::uint64_t>(m.max_caption))
      .done();
}

inline std::string config_hash(const TrainConfig& tc, const ModelConfig& mc) {
  return hash_hex(fnv1a64(train_config_json(tc) + "|" + model_config_json(mc)));
}

// The sidecar that pairs a weight file with the configuration that made it.
inline std::string checkpoint_sidecar_json(const TrainConfig& tc, const ModelConfig& mc) {
  return JsonObject()
      .raw("train", train_config_json(tc))
      .raw("model", model_config_json(mc))
      .str("hash", config_hash(tc, mc))
      .done();
}

inline void save_checkpoint(const std::string& path, RmnModel& model, const TrainConfig& cfg) {
  model.params().save(path);
  std::ofstream os(path + ".json", std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + ".json' for writing");
  os << checkpoint_sidecar_json(cfg, model.config()) << "\n";
}

// Model widths from the training config, data widths from the corpus.
inline ModelConfig derive_model_config(const TrainConfig& cfg, std::size_t vocab_size,
                                       const FeatureBundle& sample) {
  sample.validate();
  ModelConfig mc;
  mc.vocab = vocab_size;
  mc.d_h = cfg.d_h;
  mc.d_e = cfg.d_e;
  mc.d_a = cfg.d_a;
  mc.d_s = cfg.d_s;
  mc.d_va_raw = sample.va.shape()[1];
  mc.d_vm_raw = sample.vm.shape()[1];
  mc.d_o = sample.vo.shape()[2];
  return mc;
}

struct EpochStats {
  std::size_t epoch = 0;
  real lr = 0;
  real caption_loss = 0;     // per-sample mean of the summed sequence loss
  real linguistic_loss = 0;  // same averaging
  real total_loss = 0;
  std::array<std::size_t, 3> selection{};  // locate/relate/func step counts
  std::size_t steps = 0;                   // total decode steps this epoch
  real token_accuracy = 0;
  EvalMetrics val;
  double seconds = 0;
};

inline std::string epoch_stats_json(const EpochStats& e) {
  return JsonObject()
      .num("epoch", static_cast<std::uint64_t>(e.epoch))
      .num("lr", e.lr)
      .num("caption_loss", e.caption_loss)
      .num("linguistic_loss", e.linguistic_loss)
      .num("total_loss", e.total_loss)
      .raw("selection", JsonObject()
                            .num("locate", static_cast<std::uint64_t>(e.selection[0]))
                            .num("relate", static_cast<std::uint64_t>(e.selection[1]))
                            .num("func", static_cast<std::uint64_t>(e.selection[2]))
                            .done())
      .num("steps", static_cast<std::uint64_t>(e.steps))
      .num("token_accuracy", e.token_accuracy)
      .num("val_bleu4", e.val.bleu4)
      .num("val_rouge_l", e.val.rouge_l)
      .num("val_cider", e.val.cider)
      .num("seconds", e.seconds)
      .done();
}

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_cider = -1.0;
};

struct TrainPaths {
  std::string checkpoint;  // empty = keep weights in memory only
  std::string log;         // empty = no log file
};

namespace detail {

struct SampleOutcome {
  std::vector<Tape::LeafGrad> grads;
  real caption = 0, linguistic = 0;
  std::array<std::size_t, 3> selection{};
  std::size_t steps = 0, correct = 0;
  std::vector<StepOutput> step_outputs;
};

}  // namespace detail

// Teacher-forced training with per-epoch validation decoding. Deterministic
// for a fixed (seed, config, data): sample order, Gumbel noise, and gradient
// application order do not depend on timing, worker count included.
inline TrainResult train(RmnModel& model, const std::vector<FeatureBundle>& features,
                         const std::vector<CaptionSample>& samples, const Vocabulary& vocab,
                         const TrainConfig& cfg, const TrainPaths& paths = {},
                         const std::function<void(const StepOutput&)>& on_step = nullptr,
                         const std::function<void(const EpochStats&)>& on_epoch = nullptr) {
  cfg.validate();
  if (samples.empty()) throw DataError("train: no caption samples");
  std::unordered_map<std::string, std::size_t> feature_of;
  for (std::size_t i = 0; i < features.size(); ++i) feature_of[features[i].video_id] = i;
  for (const auto& s : samples)
    if (!feature_of.count(s.video_id))
      throw DataError("train: no features for video '" + s.video_id + "'");

  std::ofstream log;
  if (!paths.log.empty()) {
    log.open(paths.log, std::ios::binary);
    if (!log) throw IoError("cannot open '" + paths.log + "' for writing");
  }

  Adam adam(model.params().tensors());
  auto params = model.params().tensors();

  // references per video for validation decoding
  std::vector<std::string> video_ids;
  std::vector<std::vector<Sentence>> refs;
  {
    std::unordered_map<std::string, std::size_t> slot;
    for (const auto& s : samples) {
      auto [it, fresh] = slot.try_emplace(s.video_id, video_ids.size());
      if (fresh) {
        video_ids.push_back(s.video_id);
        refs.emplace_back();
      }
      refs[it->second].push_back(vocab.to_words(s.tokens));
    }
  }

  auto run_sample = [&](std::size_t sample_idx, std::size_t epoch) {
    const CaptionSample& s = samples[sample_idx];
    const FeatureBundle& fb = features[feature_of.at(s.video_id)];
    Rng noise(Rng::derive(cfg.seed, 0x6e6f0000ull + epoch, sample_idx));
    RmnModel::UnrollOptions opt;
    opt.fusion = cfg.fusion();
    opt.sample_noise = cfg.mode == "hard";
    opt.tau = cfg.tau;
    opt.lambda = cfg.lambda;
    opt.linguistic = cfg.linguistic;
    opt.rng = &noise;

    detail::SampleOutcome out;
    Tape tape;
    {
      TapeScope scope(tape);
      EncodedFeatures f = model.encode_features(fb.va, fb.vo, fb.vm);
      UnrollResult res = model.unroll_teacher_forced(f, s.tokens, s.module_labels, opt);
      out.caption = res.loss.caption.item();
      out.linguistic = res.loss.linguistic.item();
      for (std::size_t t = 0; t < res.steps.size(); ++t) {
        const StepOutput& so = res.steps[t];
        ++out.selection[so.decision.chosen];
        ++out.steps;
        if (argmax_index(so.log_probs.data()) == s.tokens[t + 1]) ++out.correct;
      }
      out.grads = tape.backward_deferred(res.loss.total);
      out.step_outputs = std::move(res.steps);
    }
    return out;
  };

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const real lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_interval);

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(Rng::derive(cfg.seed, 0x45706f63ull, epoch));
    shuffle_rng.shuffle(order);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t m = std::min(cfg.batch_size, order.size() - start);
      std::vector<detail::SampleOutcome> outcomes(m);
      if (cfg.workers <= 1 || m == 1) {
        for (std::size_t i = 0; i < m; ++i) outcomes[i] = run_sample(order[start + i], epoch);
      } else {
        // workers share the (read-only) parameters; each sample records onto
        // its own tape, and gradients are applied later in sample order so
        // the result is bit-identical to the single-worker run
        const std::size_t w = std::min(cfg.workers, m);
        std::vector<std::thread> threads;
        for (std::size_t j = 0; j < w; ++j)
          threads.emplace_back([&, j] {
            for (std::size_t i = j; i < m; i += w) outcomes[i] = run_sample(order[start + i], epoch);
          });
        for (auto& t : threads) t.join();
      }
      for (std::size_t i = 0; i < m; ++i) {
        Tape::apply_leaf_grads(outcomes[i].grads);
        stats.caption_loss += outcomes[i].caption;
        stats.linguistic_loss += outcomes[i].linguistic;
        for (std::size_t k = 0; k < 3; ++k) stats.selection[k] += outcomes[i].selection[k];
        stats.steps += outcomes[i].steps;
        correct += outcomes[i].correct;
        if (on_step)
          for (const auto& so : outcomes[i].step_outputs) on_step(so);
      }
      scale_grads(params, 1.0 / static_cast<real>(m));
      if (cfg.clip_norm > 0) clip_global_norm(params, cfg.clip_norm);
      adam.step(lr);
    }

    const real n = static_cast<real>(samples.size());
    stats.caption_loss /= n;
    stats.linguistic_loss /= n;
    stats.total_loss = stats.caption_loss + cfg.lambda * (cfg.linguistic ? stats.linguistic_loss : 0.0);
    stats.token_accuracy = stats.steps ? static_cast<real>(correct) / static_cast<real>(stats.steps) : 0.0;

    // greedy validation decode, evaluation mode (no noise)
    {
      std::vector<Sentence> cands;
      for (const auto& id : video_ids) {
        const FeatureBundle& fb = features[feature_of.at(id)];
        ModelStepper stepper(model, model.encode_features(fb.va, fb.vo, fb.vm), cfg.tau);
        cands.push_back(vocab.to_words(greedy_decode(stepper).tokens));
      }
      stats.val = evaluate_captions(cands, refs);
    }

    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log) log << epoch_stats_json(stats) << "\n" << std::flush;
    if (on_epoch) on_epoch(stats);
    result.epochs.push_back(stats);

    if (stats.val.cider > result.best_cider) {
      result.best_cider = stats.val.cider;
      result.best_epoch = epoch;
      if (!paths.checkpoint.empty()) save_checkpoint(paths.checkpoint, model, cfg);
    }
  }
  return result;
}

}  // namespace rmn
