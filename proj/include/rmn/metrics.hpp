#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "errors.hpp"

namespace rmn {

using Sentence = std::vector<std::string>;

namespace detail {

// n-grams keyed as unit-separator-joined strings
inline std::unordered_map<std::string, std::size_t> ngram_counts(const Sentence& s,
                                                                 std::size_t n) {
  std::unordered_map<std::string, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key = s[i];
    for (std::size_t j = 1; j < n; ++j) {
      key.push_back('\x1f');
      key += s[i + j];
    }
    ++counts[key];
  }
  return counts;
}

inline void require_aligned_corpus(const std::vector<Sentence>& cands,
                                   const std::vector<std::vector<Sentence>>& refs,
                                   const char* metric) {
  if (cands.empty()) throw DataError(std::string(metric) + ": empty corpus");
  if (cands.size() != refs.size())
    throw DataError(std::string(metric) + ": " + std::to_string(cands.size()) +
                    " candidates vs " + std::to_string(refs.size()) + " reference sets");
  for (const auto& r : refs)
    if (r.empty()) throw DataError(std::string(metric) + ": a video has no references");
}

}  // namespace detail

// Corpus BLEU-4: geometric mean of corpus-level clipped n-gram precisions
// times the brevity penalty (closest reference length; ties prefer the
// shorter). Zero clipped counts for n >= 2 get add-one smoothing on both
// numerator and denominator — unsmoothed corpus BLEU is undefined at zero
// counts on tiny corpora. A level with no candidate n-grams at all scores 0.
inline double bleu4(const std::vector<Sentence>& cands,
                    const std::vector<std::vector<Sentence>>& refs) {
  detail::require_aligned_corpus(cands, refs, "bleu4");
  std::size_t match[5] = {0}, total[5] = {0};
  std::size_t c_len = 0, r_len = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const Sentence& cand = cands[i];
    c_len += cand.size();
    std::size_t best_len = refs[i][0].size();
    for (const auto& r : refs[i]) {
      const auto d = [&](std::size_t l) {
        return l > cand.size() ? l - cand.size() : cand.size() - l;
      };
      if (d(r.size()) < d(best_len) || (d(r.size()) == d(best_len) && r.size() < best_len))
        best_len = r.size();
    }
    r_len += best_len;
    for (std::size_t n = 1; n <= 4; ++n) {
      auto cn = detail::ngram_counts(cand, n);
      std::unordered_map<std::string, std::size_t> best;
      for (const auto& r : refs[i])
        for (const auto& [g, c] : detail::ngram_counts(r, n))
          best[g] = std::max(best[g], c);
      for (const auto& [g, c] : cn) {
        total[n] += c;
        auto it = best.find(g);
        if (it != best.end()) match[n] += std::min(c, it->second);
      }
    }
  }
  double logsum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::size_t m = match[n], t = total[n];
    if (t == 0) return 0.0;
    if (m == 0 && n >= 2) {
      m += 1;
      t += 1;
    }
    if (m == 0) return 0.0;
    logsum += 0.25 * std::log(static_cast<double>(m) / static_cast<double>(t));
  }
  const double bp =
      c_len >= r_len ? 1.0
                     : std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c_len));
  return bp * std::exp(logsum);
}

namespace detail {

inline std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

// LCS F-measure with beta = 1.2, maximum over the references.
inline double rouge_l(const Sentence& cand, const std::vector<Sentence>& refs,
                      double beta = 1.2) {
  if (refs.empty()) throw DataError("rouge_l: no references");
  double best = 0.0;
  for (const auto& r : refs) {
    const std::size_t l = detail::lcs_length(cand, r);
    if (l == 0 || cand.empty() || r.empty()) continue;
    const double p = static_cast<double>(l) / static_cast<double>(cand.size());
    const double rec = static_cast<double>(l) / static_cast<double>(r.size());
    const double f = (1.0 + beta * beta) * p * rec / (rec + beta * beta * p);
    best = std::max(best, f);
  }
  return best;
}

inline double rouge_l_corpus(const std::vector<Sentence>& cands,
                             const std::vector<std::vector<Sentence>>& refs) {
  detail::require_aligned_corpus(cands, refs, "rouge_l");
  double sum = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) sum += rouge_l(cands[i], refs[i]);
  return sum / static_cast<double>(cands.size());
}

// Consensus score: per n in 1..4, cosine similarity between TF-IDF n-gram
// vectors of the candidate and each reference, averaged over references and
// n, then scaled by 10. IDF is log(corpus size / document frequency) with the
// frequency floored at 1; zero-norm vectors score 0 — in particular a
// single-video corpus has idf = 0 everywhere and every candidate scores 0.
inline double cider(const std::vector<Sentence>& cands,
                    const std::vector<std::vector<Sentence>>& refs) {
  detail::require_aligned_corpus(cands, refs, "cider");
  const double corpus_size = static_cast<double>(cands.size());

  std::unordered_map<std::string, std::size_t> df[5];
  for (const auto& ref_set : refs)
    for (std::size_t n = 1; n <= 4; ++n) {
      std::unordered_set<std::string> seen;
      for (const auto& r : ref_set)
        for (const auto& [g, c] : detail::ngram_counts(r, n)) seen.insert(g);
      for (const auto& g : seen) ++df[n][g];
    }

  auto tfidf = [&](const Sentence& s, std::size_t n) {
    std::unordered_map<std::string, double> vec;
    for (const auto& [g, c] : detail::ngram_counts(s, n)) {
      auto it = df[n].find(g);
      const double d = it == df[n].end() ? 1.0 : std::max<double>(1.0, it->second);
      vec[g] = static_cast<double>(c) * (std::log(corpus_size) - std::log(d));
    }
    return vec;
  };
  auto cosine = [](const std::unordered_map<std::string, double>& u,
                   const std::unordered_map<std::string, double>& v) {
    double nu = 0.0, nv = 0.0, dot = 0.0;
    for (const auto& [g, x] : u) nu += x * x;
    for (const auto& [g, x] : v) nv += x * x;
    if (nu == 0.0 || nv == 0.0) return 0.0;
    for (const auto& [g, x] : u) {
      auto it = v.find(g);
      if (it != v.end()) dot += x * it->second;
    }
    return dot / (std::sqrt(nu) * std::sqrt(nv));
  };

  double score_sum = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double s = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto vc = tfidf(cands[i], n);
      double ref_sum = 0.0;
      for (const auto& r : refs[i]) ref_sum += cosine(vc, tfidf(r, n));
      s += ref_sum / static_cast<double>(refs[i].size());
    }
    score_sum += s / 4.0;
  }
  return 10.0 * score_sum / corpus_size;
}

struct EvalMetrics {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
};

inline EvalMetrics evaluate_captions(const std::vector<Sentence>& cands,
                                     const std::vector<std::vector<Sentence>>& refs) {
  return {bleu4(cands, refs), rouge_l_corpus(cands, refs), cider(cands, refs)};
}

}  // namespace rmn
