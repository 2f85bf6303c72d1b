#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "data.hpp"
#include "jsontext.hpp"
#include "model.hpp"

namespace rmn {

// One generation step's explanation: which module produced the word, the
// normalized selection scores, and where the chosen module looked in time.
struct TraceStep {
  ModuleKind module = ModuleKind::Locate;
  std::array<real, 3> scores{};   // sums to 1
  std::vector<real> attention;    // chosen module's weights over its time axis
};

struct DecodeResult {
  std::vector<std::size_t> tokens;  // content tokens only, no bos/eos
  std::vector<TraceStep> trace;     // aligned with tokens
  real log_prob = 0.0;              // includes the terminating eos step when present
};

// Deterministic evaluation-mode wrapper around the model: hard selection with
// zero noise, all computation off-tape.
class ModelStepper {
 public:
  using State = DecoderState;

  struct Out {
    Tensor log_probs;
    State state;
    TraceStep trace;
  };

  ModelStepper(const RmnModel& model, EncodedFeatures feats, real tau = 1.0)
      : model_(&model), feats_(std::move(feats)), tau_(tau) {}

  State initial() const { return model_->initial_state(); }
  std::size_t vocab() const { return model_->config().vocab; }

  Out step(const State& state, std::size_t prev_token) const {
    NoGradScope ng;
    State next = state;
    StepOptions opt;
    opt.fusion = Fusion::hard;
    opt.sample_noise = false;
    opt.tau = tau_;
    StepOutput so = model_->step(feats_, model_->embed.lookup(prev_token), next, opt);
    TraceStep tr;
    tr.module = so.decision.kind();
    for (std::size_t i = 0; i < 3; ++i) tr.scores[i] = so.decision.z_backward.data()[i];
    tr.attention = so.attention[so.decision.chosen].data();
    return {so.log_probs, std::move(next), std::move(tr)};
  }

 private:
  const RmnModel* model_;
  EncodedFeatures feats_;
  real tau_;
};

namespace detail {

// pad/bos/unk never appear in generated output; eos is how a sequence ends
inline bool expandable_token(std::size_t id) {
  return id != tok::pad && id != tok::bos && id != tok::unk;
}

}  // namespace detail

// Argmax decoding: stops at eos or after max_len content tokens.
template <class Stepper>
DecodeResult greedy_decode(const Stepper& stepper, std::size_t max_len = kMaxCaptionTokens) {
  DecodeResult res;
  typename Stepper::State state = stepper.initial();
  std::size_t prev = tok::bos;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto out = stepper.step(state, prev);
    const auto& lp = out.log_probs.data();
    std::size_t best = tok::eos;
    for (std::size_t v = 0; v < lp.size(); ++v)
      if (detail::expandable_token(v) && lp[v] > lp[best]) best = v;
    res.log_prob += lp[best];
    if (best == tok::eos) return res;
    res.tokens.push_back(best);
    res.trace.push_back(out.trace);
    state = std::move(out.state);
    prev = best;
  }
  return res;  // length cap reached without eos
}

struct Hypothesis {
  std::vector<std::size_t> tokens;  // content tokens only
  std::vector<TraceStep> trace;     // aligned with tokens
  real log_prob = 0.0;
  bool finished = false;            // saw eos (or hit the length cap)
};

// Plain log-probability beam search, no length normalization. Finished
// hypotheses keep competing with active ones for the beam slots; ranking ties
// break toward the lexicographically smaller token sequence so decoding is
// fully deterministic.
template <class Stepper>
std::vector<Hypothesis> beam_decode(const Stepper& stepper, std::size_t beam,
                                    std::size_t max_len = kMaxCaptionTokens) {
  if (beam == 0) throw ValueError("beam_decode: beam width must be at least 1");

  struct Live {
    Hypothesis hyp;
    typename Stepper::State state;
    std::size_t prev = tok::bos;
  };
  auto better = [](const Hypothesis& a, const Hypothesis& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  };

  std::vector<Live> active(1);
  active[0].state = stepper.initial();
  std::vector<Hypothesis> finished;

  for (std::size_t t = 0; t < max_len && !active.empty(); ++t) {
    std::vector<Live> pool;
    for (auto& live : active) {
      auto out = stepper.step(live.state, live.prev);
      const auto& lp = out.log_probs.data();
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (!detail::expandable_token(v)) continue;
        Live next;
        next.hyp = live.hyp;
        next.hyp.log_prob += lp[v];
        if (v == tok::eos) {
          next.hyp.finished = true;
        } else {
          next.hyp.tokens.push_back(v);
          next.hyp.trace.push_back(out.trace);
          next.state = out.state;
          next.prev = v;
        }
        pool.push_back(std::move(next));
      }
    }
    // finished hypotheses from earlier steps still occupy beam slots
    for (auto& h : finished) pool.push_back({std::move(h), {}, 0});
    finished.clear();
    std::sort(pool.begin(), pool.end(),
              [&](const Live& a, const Live& b) { return better(a.hyp, b.hyp); });
    if (pool.size() > beam) pool.resize(beam);
    active.clear();
    for (auto& live : pool) {
      if (live.hyp.finished)
        finished.push_back(std::move(live.hyp));
      else
        active.push_back(std::move(live));
    }
  }
  for (auto& live : active) {
    live.hyp.finished = true;  // length cap
    finished.push_back(std::move(live.hyp));
  }
  std::sort(finished.begin(), finished.end(), better);
  if (finished.size() > beam) finished.resize(beam);
  return finished;
}

inline const char* module_color_ansi(ModuleKind k) {
  switch (k) {
    case ModuleKind::Locate: return "\x1b[38;2;0;112;192m";   // blue
    case ModuleKind::Relate: return "\x1b[38;2;255;39;39m";   // red
    case ModuleKind::Func: return "\x1b[38;2;0;176;80m";      // green
  }
  return "";
}

// One JSON record per word: module attribution, the normalized scores, and
// the strongest attention frame.
inline std::string trace_to_jsonl(const std::vector<std::size_t>& tokens,
                                  const std::vector<TraceStep>& trace, const Vocabulary& vocab) {
  if (tokens.size() != trace.size())
    throw ValueError("trace render: " + std::to_string(trace.size()) + " trace entries for " +
                     std::to_string(tokens.size()) + " tokens");
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TraceStep& t = trace[i];
    std::size_t top_frame = 0;
    for (std::size_t f = 1; f < t.attention.size(); ++f)
      if (t.attention[f] > t.attention[top_frame]) top_frame = f;
    out += JsonObject()
               .num("position", i)
               .str("word", vocab.token_of(tokens[i]))
               .str("module", module_name(t.module))
               .num("score_locate", t.scores[0])
               .num("score_relate", t.scores[1])
               .num("score_func", t.scores[2])
               .num("top_frame", top_frame)
               .done() +
           "\n";
  }
  return out;
}

// Words colored by their generating module.
inline std::string trace_to_ansi(const std::vector<std::size_t>& tokens,
                                 const std::vector<TraceStep>& trace, const Vocabulary& vocab) {
  if (tokens.size() != trace.size())
    throw ValueError("trace render: trace/token length mismatch");
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += module_color_ansi(trace[i].module);
    out += vocab.token_of(tokens[i]);
    out += "\x1b[0m";
  }
  return out;
}

}  // namespace rmn
