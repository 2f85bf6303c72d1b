#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "data.hpp"
#include "modules.hpp"
#include "nn.hpp"
#include "param_store.hpp"
#include "rng.hpp"
#include "selector.hpp"
#include "tensor.hpp"

namespace rmn {

struct ModelConfig {
  std::size_t vocab = 0;     // required, includes the 4 reserved ids
  std::size_t d_h = 512;     // model width (encoder/decoder hidden)
  std::size_t d_e = 0;       // embedding width; 0 = d_h
  std::size_t d_a = 0;       // attention hidden width; 0 = d_h
  std::size_t d_s = 0;       // score-net hidden width; 0 = d_h
  std::size_t d_va_raw = 0;  // appearance feature width as ingested
  std::size_t d_vm_raw = 0;  // motion feature width as ingested
  std::size_t d_o = 2048;    // object region width, used as-is
  std::size_t max_caption = 26;

  std::size_t embed_dim() const { return d_e ? d_e : d_h; }
  std::size_t attn_dim() const { return d_a ? d_a : d_h; }
  std::size_t score_dim() const { return d_s ? d_s : d_h; }

  void validate() const {
    if (vocab < 5) throw ValueError("model config: vocabulary must cover the 4 reserved ids");
    if (!d_h || d_h % 2) throw ValueError("model config: d_h must be positive and even");
    if (!d_va_raw || !d_vm_raw || !d_o) throw ValueError("model config: feature widths must be set");
    if (!max_caption) throw ValueError("model config: max caption length must be positive");
  }
};

// How one decode step fuses the three candidates.
//   hard:    one-hot Gumbel-max forward, straight-through backward (optionally noiseless at eval)
//   soft:    normalized-score mixture, no noise (the soft ablation)
//   relaxed: noisy tempered-softmax mixture; only used by gradient checks,
//            where the hard forward's surrogate gradient is the exact
//            derivative of this path
enum class Fusion { hard, soft, relaxed };

struct StepOptions {
  Fusion fusion = Fusion::hard;
  bool sample_noise = false;  // draw Gumbel noise (training) or G = 0 (eval)
  real tau = 1.0;
  Rng* rng = nullptr;
};

struct DecoderState {
  LstmCell::State en;
  LstmCell::State de;
  CellHistory history;
  std::size_t t = 1;  // upcoming step, 1-based
};

struct StepOutput {
  Tensor log_probs;  // [vocab]
  ModuleDecision decision;
  Tensor v_t;                            // fused reasoning vector actually used
  std::array<Tensor, 3> candidates;      // projected v_l, v_r, v_f
  std::array<Tensor, 3> attention;       // per-module temporal attention weights
};

struct LossBundle {
  Tensor caption;     // scalar, on tape
  Tensor linguistic;  // scalar, on tape (zero tensor when disabled)
  Tensor total;       // caption + lambda * linguistic
  real lambda = 1.0;
};

struct UnrollResult {
  LossBundle loss;
  std::vector<StepOutput> steps;  // T+1 entries: content words plus end token
  std::size_t labeled_steps = 0;  // steps with a gold module label (= T)
};

class RmnModel {
 public:
  RmnModel(const ModelConfig& cfg, std::uint64_t seed)
      : cfg_((cfg.validate(), cfg)),
        ps_(seed),
        embed(ps_, "embed", cfg.vocab, cfg.embed_dim()),
        enc_va(ps_, "encoder/va", cfg.d_va_raw, cfg.d_h),
        enc_vm(ps_, "encoder/vm", cfg.d_vm_raw, cfg.d_h),
        vbar_proj(ps_, "encoder/vbar", 2 * cfg.d_h, cfg.d_h),
        en_lstm(ps_, "encoder/lstm", cfg.d_h + cfg.embed_dim() + cfg.d_h, cfg.d_h),
        mods(ps_, "modules", cfg.d_h, cfg.d_o, cfg.attn_dim()),
        score_nets(ps_, "selector", cfg.d_h, cfg.score_dim()),
        de_lstm(ps_, "decoder/lstm", cfg.d_h + cfg.d_h, cfg.d_h),
        head(ps_, "head", 3 * cfg.d_h, cfg.d_h, cfg.vocab) {}

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return ps_; }
  const ParameterStore& params() const { return ps_; }

  // Raw per-video features in, reasoning-ready bundle out: appearance and
  // motion pass through their encoders, the global summary v_bar is the
  // projected time-mean of both, object regions stay untouched.
  EncodedFeatures encode_features(const Tensor& va_raw, const Tensor& vo,
                                  const Tensor& vm_raw) const {
    if (va_raw.rank() != 2 || vm_raw.rank() != 2 || vo.rank() != 3)
      throw ShapeError("encode_features: expected va [N x d], vo [N x R x d_o], vm [N x d]");
    const std::size_t n = va_raw.shape()[0];
    if (vm_raw.shape()[0] != n || vo.shape()[0] != n)
      throw ShapeError("encode_features: frame counts disagree across va/vo/vm");
    if (vo.shape()[2] != cfg_.d_o)
      throw ShapeError("encode_features: object width " + std::to_string(vo.shape()[2]) +
                       " does not match configured " + std::to_string(cfg_.d_o));
    EncodedFeatures f;
    f.va = enc_va.encode(va_raw);
    f.vm = enc_vm.encode(vm_raw);
    f.vo = vo;
    f.v_bar = vbar_proj(reduce_mean(concat(f.va, f.vm, 1), 0));
    return f;
  }

  DecoderState initial_state() const {
    DecoderState s;
    s.en = en_lstm.zero_state();
    s.de = de_lstm.zero_state();
    s.history = CellHistory::seeded(cfg_.d_h);
    s.t = 1;
    return s;
  }

  // One full decode step: context encoding, the three reasoning modules,
  // module selection and fusion, the decoder cell, and the word distribution.
  // Advances `state` in place; copies of the previous state stay valid.
  StepOutput step(const EncodedFeatures& f, const Tensor& e_prev, DecoderState& state,
                  const StepOptions& opt) const {
    state.en = en_lstm.step(concat(concat(f.v_bar, e_prev, 0), state.de.h, 0), state.en);
    const Tensor& h_en = state.en.h;

    ModuleOutput lo = mods.locate(f, h_en);
    ModuleOutput re = mods.relate(f, h_en);
    ModuleOutput fu = mods.func(state.history, h_en);
    auto cand = mods.project(lo.v, re.v, fu.v);

    Tensor scores = score_nets.positive_scores(h_en, cand.v_l, cand.v_r, cand.v_f);

    StepOutput out;
    out.candidates = {cand.v_l, cand.v_r, cand.v_f};
    out.attention = {lo.time_weights, re.time_weights, fu.time_weights};

    switch (opt.fusion) {
      case Fusion::hard: {
        out.decision = select(scores, opt.tau,
                              opt.sample_noise ? opt.rng : nullptr,
                              opt.sample_noise ? SelectMode::train : SelectMode::eval);
        out.v_t = combine(out.decision, cand.v_l, cand.v_r, cand.v_f);
        break;
      }
      case Fusion::soft: {
        out.decision = select(scores, opt.tau, nullptr, SelectMode::eval);
        out.v_t = mixture(out.decision.z_backward, cand);
        break;
      }
      case Fusion::relaxed: {
        out.decision = select(scores, opt.tau,
                              opt.sample_noise ? opt.rng : nullptr,
                              opt.sample_noise ? SelectMode::train : SelectMode::eval);
        out.v_t = mixture(out.decision.z_backward, cand);
        break;
      }
    }

    state.de = de_lstm.step(concat(out.v_t, h_en, 0), state.de);
    state.history.push(state.de.c);
    state.t += 1;

    out.log_probs = log_softmax(head.logits(out.v_t, h_en, state.de.h), 0);
    return out;
  }

  // Sum (not mean) of the negative gold log-probabilities; pad positions are
  // skipped.
  static Tensor caption_loss(const std::vector<Tensor>& log_probs_seq,
                             const std::vector<std::size_t>& gold) {
    if (log_probs_seq.size() != gold.size())
      throw ShapeError("caption loss: " + std::to_string(log_probs_seq.size()) +
                       " predictions vs " + std::to_string(gold.size()) + " targets");
    Tensor loss = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < gold.size(); ++t) {
      if (gold[t] == tok::pad) continue;
      if (gold[t] >= log_probs_seq[t].size())
        throw ValueError("caption loss: target id " + std::to_string(gold[t]) + " out of range");
      loss = loss - pick(log_probs_seq[t], gold[t]);
    }
    return loss;
  }

  // Cross-entropy between the relaxed selection distribution and the gold
  // module, summed over labeled steps; evaluated from the relaxed logits so
  // a saturated softmax never produces log(0).
  static Tensor linguistic_loss(const std::vector<ModuleDecision>& decisions,
                                const std::vector<ModuleKind>& gold) {
    if (decisions.size() != gold.size())
      throw ShapeError("linguistic loss: " + std::to_string(decisions.size()) +
                       " decisions vs " + std::to_string(gold.size()) + " labels");
    Tensor loss = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < gold.size(); ++t) {
      Tensor lp = log_softmax(decisions[t].relaxed_logits, 0);
      loss = loss - pick(lp, static_cast<std::size_t>(gold[t]));
    }
    return loss;
  }

  static LossBundle total_loss(Tensor caption, Tensor linguistic, real lambda) {
    if (lambda < 0.0) throw ValueError("total loss: lambda must be non-negative");
    LossBundle b;
    b.caption = caption;
    b.linguistic = linguistic;
    b.lambda = lambda;
    b.total = caption + scale(linguistic, lambda);
    return b;
  }

  struct UnrollOptions {
    Fusion fusion = Fusion::hard;
    bool sample_noise = true;
    real tau = 1.0;
    real lambda = 1.0;
    bool linguistic = true;
    Rng* rng = nullptr;
  };

  // Teacher-forced pass over one caption: T content words plus the end token.
  // tokens = [bos, w_1..w_T, eos]; labels align with w_1..w_T.
  UnrollResult unroll_teacher_forced(const EncodedFeatures& f,
                                     const std::vector<std::size_t>& tokens,
                                     const std::vector<ModuleKind>& labels,
                                     const UnrollOptions& opt) const {
    if (tokens.size() < 2 || tokens.front() != tok::bos || tokens.back() != tok::eos)
      throw ValueError("unroll: tokens must be [bos, ..., eos]");
    const std::size_t T = tokens.size() - 2;
    if (T > cfg_.max_caption)
      throw ValueError("unroll: caption of " + std::to_string(T) + " exceeds the maximum of " +
                       std::to_string(cfg_.max_caption));
    if (labels.size() != T)
      throw ShapeError("unroll: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(T) + " content tokens");

    StepOptions sopt{opt.fusion, opt.sample_noise, opt.tau, opt.rng};
    DecoderState state = initial_state();
    UnrollResult res;
    std::vector<Tensor> lps;
    std::vector<std::size_t> targets;
    std::vector<ModuleDecision> decisions;
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
      StepOutput so = step(f, embed.lookup(tokens[t]), state, sopt);
      lps.push_back(so.log_probs);
      targets.push_back(tokens[t + 1]);
      decisions.push_back(so.decision);
      res.steps.push_back(std::move(so));
    }
    res.labeled_steps = T;

    Tensor cap = caption_loss(lps, targets);
    Tensor pos = Tensor::scalar(0.0);
    if (opt.linguistic) {
      // the end-token step carries no module label and stays out of this term
      std::vector<ModuleDecision> labeled(decisions.begin(), decisions.begin() + T);
      pos = linguistic_loss(labeled, labels);
    }
    res.loss = total_loss(cap, pos, opt.linguistic ? opt.lambda : 0.0);
    return res;
  }

  ModelConfig cfg_;
  ParameterStore ps_;
  Embedding embed;
  BiLstmEncoder enc_va, enc_vm;
  Linear vbar_proj;
  LstmCell en_lstm;
  ReasoningModules mods;
  ScoreNets score_nets;
  LstmCell de_lstm;
  MlpHead head;

 private:
  static Tensor mixture(const Tensor& z, const ReasoningModules::Candidates& cand) {
    return pick(z, 0) * cand.v_l + pick(z, 1) * cand.v_r + pick(z, 2) * cand.v_f;
  }
};

}  // namespace rmn
