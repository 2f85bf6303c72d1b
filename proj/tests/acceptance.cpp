// Acceptance gate: one line per criterion, exit 0 only if every line passes.
// Covers gradients, selector statistics, hard-mode discreteness, synthetic
// overfit, the linguistic-loss effect, the ablation matrix, metric oracles,
// beam-search correctness, and bitwise training reproducibility.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rmn/data.hpp"
#include "rmn/gradsuite.hpp"
#include "rmn/infer.hpp"
#include "rmn/metrics.hpp"
#include "rmn/model.hpp"
#include "rmn/train.hpp"

using namespace rmn;

namespace {

int failures = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
  std::printf("%s  %d %-28s %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

using Clock = std::chrono::steady_clock;

double secs_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Corpus {
  std::vector<FeatureBundle> features;
  std::vector<CaptionSample> samples;
  Vocabulary vocab;
};

Corpus make_corpus(std::size_t videos, std::uint64_t seed) {
  SyntheticGrammar g;  // noise-free defaults: 5x5x5 grammar, 4 frames, 3 regions
  SynthCorpus raw = synth_generate(g, videos, seed);
  std::vector<std::string> caps;
  caps.reserve(raw.captions.size());
  for (const auto& r : raw.captions) caps.push_back(r.caption);
  Corpus c{std::move(raw.features), {}, Vocabulary::build(caps, 1)};
  c.samples.reserve(raw.captions.size());
  for (const auto& r : raw.captions) c.samples.push_back(encode_sample(r, c.vocab));
  return c;
}

// Hyperparameters that drive the 50-video noise-free corpus to full memorization
// in well under the 30-epoch budget: constant learning rate (the default decay
// schedule stalls it), moderate width, small batches.
TrainConfig overfit_config() {
  TrainConfig cfg;
  cfg.d_h = 64;
  cfg.lr = 3e-3;
  cfg.lr_decay_factor = 1.0;
  cfg.batch_size = 8;
  cfg.epochs = 30;
  cfg.seed = 5;
  cfg.mode = "hard";
  cfg.linguistic = true;
  cfg.lambda = 1.0;
  return cfg;
}

std::vector<EpochStats> run_training(RmnModel& model, const Corpus& c, const TrainConfig& cfg,
                                     const std::function<void(const StepOutput&)>& on_step = nullptr) {
  std::vector<EpochStats> stats;
  train(model, c.features, c.samples, c.vocab, cfg, {}, on_step,
        [&](const EpochStats& e) { stats.push_back(e); });
  return stats;
}

bool stats_sane(const std::vector<EpochStats>& stats) {
  for (const auto& e : stats) {
    if (!std::isfinite(e.caption_loss) || !std::isfinite(e.linguistic_loss) ||
        !std::isfinite(e.total_loss))
      return false;
    if (e.selection[0] + e.selection[1] + e.selection[2] != e.steps) return false;
  }
  return !stats.empty();
}

// --- criterion 8 fixture: a per-step transition table small enough to
// enumerate every sequence the decoder can emit ---------------------------

struct TableStepper {
  using State = std::size_t;
  std::vector<std::map<std::size_t, std::vector<real>>> table;

  State initial() const { return 0; }

  struct Out {
    Tensor log_probs;
    State state;
    TraceStep trace;
  };

  Out step(const State& s, std::size_t prev) const {
    const auto& row = table.at(s).at(prev);
    return {Tensor({row.size()}, row), s + 1, TraceStep{}};
  }
};

TableStepper make_table() {
  const real none = -1e30;
  auto row = [&](real eos, real a, real b) {
    return std::vector<real>{none, none, std::log(eos), none, std::log(a), std::log(b)};
  };
  TableStepper toy;
  toy.table.resize(3);
  toy.table[0][tok::bos] = row(0.05, 0.60, 0.35);
  toy.table[1][4] = row(0.50, 0.30, 0.20);
  toy.table[1][5] = row(0.10, 0.20, 0.70);
  toy.table[2][4] = row(0.60, 0.25, 0.15);
  toy.table[2][5] = row(0.55, 0.05, 0.40);
  return toy;
}

void enumerate_all(const TableStepper& toy, std::size_t t, std::size_t prev, real lp,
                   std::vector<std::size_t>& cur,
                   std::vector<std::pair<real, std::vector<std::size_t>>>& out) {
  const auto& row = toy.table.at(t).at(prev);
  out.push_back({lp + row[tok::eos], cur});
  for (std::size_t v : {std::size_t(4), std::size_t(5)}) {
    cur.push_back(v);
    if (t + 1 < 3)
      enumerate_all(toy, t + 1, v, lp + row[v], cur, out);
    else
      out.push_back({lp + row[v], cur});
    cur.pop_back();
  }
}

}  // namespace

int main() {
  // ---- 1: finite-difference gradient suite --------------------------------
  {
    auto t0 = Clock::now();
    std::vector<NamedCheck> checks = grad_check_suite();
    const double secs = secs_since(t0);
    bool all = !checks.empty();
    real worst = 0;
    std::string worst_name = "-";
    for (const auto& c : checks) {
      if (!c.pass()) all = false;
      if (c.result.max_rel_err > worst) {
        worst = c.result.max_rel_err;
        worst_name = c.name;
      }
    }
    report(1, "gradient suite", all && secs < 60.0,
           fmt("%zu checks, worst rel err %.2e (%s), %.1fs", checks.size(), worst,
               worst_name.c_str(), secs));
  }

  // ---- 2: selector sampling frequencies -----------------------------------
  {
    auto t0 = Clock::now();
    const Tensor scores({3}, {0.5, 0.3, 0.2});
    Rng rng(20260818);
    const std::size_t n = 100000;
    std::array<std::size_t, 3> counts{};
    {
      NoGradScope off;
      for (std::size_t i = 0; i < n; ++i)
        counts[select(scores, 1.0, &rng, SelectMode::train).chosen]++;
    }
    const double expect[3] = {0.5 * n, 0.3 * n, 0.2 * n};
    double chi2 = 0;
    for (int k = 0; k < 3; ++k) {
      const double d = static_cast<double>(counts[k]) - expect[k];
      chi2 += d * d / expect[k];
    }
    const double critical = 9.21034;  // chi-square, 2 dof, upper tail 0.01
    const double secs = secs_since(t0);
    report(2, "selector statistics", chi2 < critical && secs < 10.0,
           fmt("chi2 %.3f < %.3f over %zu draws (%zu/%zu/%zu), %.1fs", chi2, critical, n,
               counts[0], counts[1], counts[2], secs));
  }

  const Corpus big = make_corpus(50, 11);

  // ---- 3: hard-mode discreteness over a full epoch -------------------------
  {
    TrainConfig cfg;
    cfg.d_h = 32;
    cfg.lr = 1e-3;
    cfg.batch_size = 8;
    cfg.epochs = 1;
    cfg.seed = 3;
    cfg.mode = "hard";
    RmnModel model(derive_model_config(cfg, big.vocab.size(), big.features.front()), cfg.seed);
    std::size_t steps = 0, violations = 0;
    run_training(model, big, cfg, [&](const StepOutput& so) {
      ++steps;
      int matches = 0;
      for (const Tensor& cand : so.candidates)
        if (so.v_t.data() == cand.data()) ++matches;
      if (matches != 1) ++violations;
    });
    report(3, "hard-mode discreteness", steps > 0 && violations == 0,
           fmt("%zu steps, %zu fused vectors not bit-identical to exactly one candidate", steps,
               violations));
  }

  // ---- 4: synthetic overfit (joint losses, hard fusion) --------------------
  const TrainConfig hl_cfg = overfit_config();
  const ModelConfig big_mc = derive_model_config(hl_cfg, big.vocab.size(), big.features.front());
  RmnModel hl_model(big_mc, hl_cfg.seed);
  std::vector<EpochStats> hl_stats;
  {
    auto t0 = Clock::now();
    hl_stats = run_training(hl_model, big, hl_cfg);
    const double secs = secs_since(t0);
    bool reached = false;
    double acc = 0, bleu = 0;
    std::size_t at = hl_stats.size();
    for (std::size_t i = 0; i < hl_stats.size(); ++i) {
      if (!reached && hl_stats[i].token_accuracy >= 0.95 && hl_stats[i].val.bleu4 >= 0.90) {
        reached = true;
        acc = hl_stats[i].token_accuracy;
        bleu = hl_stats[i].val.bleu4;
        at = i;
      }
      if (!reached) {  // keep the best seen so a failure still says how close it got
        acc = std::max(acc, hl_stats[i].token_accuracy);
        bleu = std::max(bleu, hl_stats[i].val.bleu4);
      }
    }
    report(4, "synthetic overfit", reached && secs < 600.0,
           fmt("token acc %.3f, train BLEU-4 %.3f at epoch %zu of %zu, %.1fs", acc, bleu, at,
               hl_stats.size(), secs));
  }

  // ---- 5: linguistic-loss effect -------------------------------------------
  std::vector<EpochStats> h_stats;
  {
    // eval-mode teacher-forced agreement between chosen modules and gold tags
    std::size_t agree = 0, labeled = 0;
    {
      NoGradScope off;
      std::map<std::string, const FeatureBundle*> by_id;
      for (const auto& fb : big.features) by_id[fb.video_id] = &fb;
      RmnModel::UnrollOptions opt;
      opt.fusion = Fusion::hard;
      opt.sample_noise = false;
      opt.tau = hl_cfg.tau;
      opt.lambda = hl_cfg.lambda;
      for (const auto& s : big.samples) {
        const FeatureBundle& fb = *by_id.at(s.video_id);
        EncodedFeatures f = hl_model.encode_features(fb.va, fb.vo, fb.vm);
        UnrollResult ur = hl_model.unroll_teacher_forced(f, s.tokens, s.module_labels, opt);
        for (std::size_t t = 0; t < ur.labeled_steps; ++t) {
          ++labeled;
          if (ur.steps[t].decision.kind() == s.module_labels[t]) ++agree;
        }
      }
    }
    const double agreement = labeled ? static_cast<double>(agree) / labeled : 0.0;

    TrainConfig h_cfg = overfit_config();
    h_cfg.linguistic = false;
    RmnModel h_model(big_mc, h_cfg.seed);
    h_stats = run_training(h_model, big, h_cfg);
    const double hl_cider = hl_stats.back().val.cider;
    const double h_cider = h_stats.back().val.cider;
    const auto& hist = h_stats.back().selection;
    const int used = (hist[0] > 0) + (hist[1] > 0) + (hist[2] > 0);
    report(5, "linguistic-loss effect", agreement >= 0.95 && hl_cider >= h_cider,
           fmt("module agreement %.3f, final CIDEr joint %.2f vs caption-only %.2f, "
               "caption-only histogram locate/relate/func %zu/%zu/%zu (%d modules used)",
               agreement, hl_cider, h_cider, hist[0], hist[1], hist[2], used));
  }

  // ---- 6: ablation matrix runs to completion -------------------------------
  {
    auto short_soft = [&](bool linguistic) {
      TrainConfig cfg = overfit_config();
      cfg.mode = "soft";
      cfg.linguistic = linguistic;
      cfg.epochs = 3;  // soft fusion converges slowly; completion is what is checked
      RmnModel m(big_mc, cfg.seed);
      return run_training(m, big, cfg);
    };
    const std::vector<EpochStats> s_stats = short_soft(false);
    const std::vector<EpochStats> sl_stats = short_soft(true);
    const bool ok = stats_sane(s_stats) && stats_sane(sl_stats) && stats_sane(h_stats) &&
                    stats_sane(hl_stats);
    report(6, "ablation matrix", ok,
           fmt("S/H/S+L/H+L completed %zu/%zu/%zu/%zu epochs, losses finite, "
               "histogram counts equal step counts",
               s_stats.size(), h_stats.size(), sl_stats.size(), hl_stats.size()));
  }

  // ---- 7: metric oracles ----------------------------------------------------
  {
    auto S = [](const std::string& t) { return tokenize(t); };
    struct Case {
      const char* what;
      double got, want;
    };
    const std::vector<Case> cases{
        {"bleu corpus",
         bleu4({S("the cat sat on the mat"), S("a dog runs fast")},
               {{S("the cat sat on the mat")}, {S("the dog runs very fast")}}),
         0.6896662858},
        {"bleu multiref",
         bleu4({S("the the cat sat down")},
               {{S("the cat sat down"), S("a cat sat down on the mat")}}),
         0.6687403050},
        {"rouge", rouge_l(S("a b c d"), {S("a c d")}), 0.8798076923},
        {"rouge multiref", rouge_l(S("a b c"), {S("z z z"), S("a b q")}), 2.0 / 3.0},
        {"cider",
         cider({S("a man is running"), S("a dog is barking"), S("a bird flies")},
               {{S("a man is running"), S("a man runs")},
                {S("the dog is barking")},
                {S("a bird is flying")}}),
         4.4724152432},
    };
    double worst = 0;
    const char* worst_name = "-";
    for (const auto& c : cases) {
      const double err = std::fabs(c.got - c.want);
      if (err > worst) {
        worst = err;
        worst_name = c.what;
      }
    }
    report(7, "metric oracles", worst < 1e-6,
           fmt("%zu hand-computed values, worst |err| %.2e (%s)", cases.size(), worst,
               worst_name));
  }

  // ---- 8: beam-search oracle ------------------------------------------------
  {
    const TableStepper toy = make_table();
    std::vector<std::pair<real, std::vector<std::size_t>>> all;
    std::vector<std::size_t> cur;
    enumerate_all(toy, 0, tok::bos, 0.0, cur, all);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const auto beams = beam_decode(toy, 2, 3);
    bool exhaustive_ok = beams.size() == 2 && beams[0].tokens == all[0].second &&
                         beams[1].tokens == all[1].second &&
                         std::fabs(beams[0].log_prob - all[0].first) < 1e-12 &&
                         std::fabs(beams[1].log_prob - all[1].first) < 1e-12;

    const Corpus wide = make_corpus(100, 21);
    TrainConfig cfg8;
    cfg8.d_h = 16;
    RmnModel fresh(derive_model_config(cfg8, wide.vocab.size(), wide.features.front()), 5);
    std::size_t mismatches = 0;
    {
      NoGradScope off;
      for (const auto& fb : wide.features) {
        ModelStepper stepper(fresh, fresh.encode_features(fb.va, fb.vo, fb.vm));
        const DecodeResult greedy = greedy_decode(stepper);
        const auto beam1 = beam_decode(stepper, 1);
        if (beam1.size() != 1 || beam1.front().tokens != greedy.tokens ||
            std::fabs(beam1.front().log_prob - greedy.log_prob) > 1e-12)
          ++mismatches;
      }
    }
    report(8, "beam-search oracle", exhaustive_ok && mismatches == 0,
           fmt("width 2 equals exhaustive top-2 of %zu sequences; width 1 vs greedy: "
               "%zu/100 videos disagree",
               all.size(), mismatches));
  }

  // ---- 9: reproducibility ----------------------------------------------------
  {
    const Corpus small = make_corpus(12, 33);
    TrainConfig cfg9;
    cfg9.d_h = 16;
    cfg9.lr = 1e-2;
    cfg9.batch_size = 4;
    cfg9.epochs = 2;
    cfg9.seed = 7;
    auto run = [&]() {
      RmnModel m(derive_model_config(cfg9, small.vocab.size(), small.features.front()),
                 cfg9.seed);
      auto stats = run_training(m, small, cfg9);
      std::vector<std::vector<std::size_t>> captions;
      NoGradScope off;
      for (const auto& fb : small.features) {
        ModelStepper stepper(m, m.encode_features(fb.va, fb.vo, fb.vm), cfg9.tau);
        captions.push_back(greedy_decode(stepper).tokens);
      }
      return std::make_pair(stats, captions);
    };
    const auto [stats_a, caps_a] = run();
    const auto [stats_b, caps_b] = run();
    const double dloss = std::fabs(stats_a.front().total_loss - stats_b.front().total_loss) +
                         std::fabs(stats_a.front().caption_loss - stats_b.front().caption_loss) +
                         std::fabs(stats_a.front().linguistic_loss -
                                   stats_b.front().linguistic_loss);
    std::size_t same = 0;
    for (std::size_t i = 0; i < caps_a.size(); ++i)
      if (caps_a[i] == caps_b[i]) ++same;
    const bool ok = dloss <= 1e-6 && caps_a == caps_b;
    report(9, "reproducibility", ok,
           fmt("epoch-1 loss delta %.1e, decoded captions identical on %zu/%zu videos", dloss,
               same, caps_a.size()));
  }

  std::printf("%s: %d of 9 criteria passed\n", failures == 0 ? "ACCEPTED" : "REJECTED",
              9 - failures);
  return failures == 0 ? 0 : 1;
}
