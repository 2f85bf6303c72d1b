#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "binio.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "selector.hpp"
#include "tensor.hpp"

namespace rmn {

// Reserved vocabulary ids, frozen across every file format and trace.
namespace tok {
constexpr std::size_t pad = 0, bos = 1, eos = 2, unk = 3;
constexpr std::size_t reserved = 4;
}  // namespace tok

constexpr std::size_t kMaxCaptionTokens = 26;

// Lowercase, drop everything outside [a-z0-9 ], split on whitespace, cap the
// token count. An empty result is legal; callers decide whether to flag it.
inline std::vector<std::string> tokenize(const std::string& raw,
                                         std::size_t max_tokens = kMaxCaptionTokens) {
  std::string clean;
  clean.reserve(raw.size());
  for (unsigned char c : raw) {
    const unsigned char lc = static_cast<unsigned char>(std::tolower(c));
    if ((lc >= 'a' && lc <= 'z') || (lc >= '0' && lc <= '9') || lc == ' ')
      clean.push_back(static_cast<char>(lc));
    else if (std::isspace(lc))
      clean.push_back(' ');
  }
  std::vector<std::string> out;
  std::istringstream ss(clean);
  std::string w;
  while (out.size() < max_tokens && (ss >> w)) out.push_back(w);
  return out;
}

inline std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// Penn-Treebank-style tag -> module responsible for that word class. Total:
// unknown tags land on Func.
inline ModuleKind pos_to_module(const std::string& tag) {
  auto starts = [&](const char* p) { return tag.rfind(p, 0) == 0; };
  if (starts("NN") || starts("JJ")) return ModuleKind::Locate;
  if (starts("VB")) return ModuleKind::Relate;
  return ModuleKind::Func;
}

// token <-> id bijection over non-reserved tokens; ids 0..3 are fixed.
class Vocabulary {
 public:
  Vocabulary() : id_to_token_{"<pad>", "<bos>", "<eos>", "<unk>"} {
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) token_to_id_[id_to_token_[i]] = i;
  }

  std::size_t size() const { return id_to_token_.size(); }

  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

  std::size_t add(const std::string& token) {
    if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos)
      throw DataError("vocabulary: token may not be empty or contain whitespace");
    if (token_to_id_.count(token))
      throw DataError("vocabulary: duplicate token '" + token + "'");
    const std::size_t id = id_to_token_.size();
    id_to_token_.push_back(token);
    token_to_id_[token] = id;
    return id;
  }

  // Unknown tokens map to <unk>.
  std::size_t id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? tok::unk : it->second;
  }

  const std::string& token_of(std::size_t id) const {
    if (id >= id_to_token_.size())
      throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
    return id_to_token_[id];
  }

  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id_of(t));
    return ids;
  }

  // Content words only: reserved ids are dropped.
  std::vector<std::string> to_words(const std::vector<std::size_t>& ids) const {
    std::vector<std::string> words;
    for (std::size_t id : ids)
      if (id >= tok::reserved) words.push_back(token_of(id));
    return words;
  }

  // Ids assigned by (count desc, token asc) starting at 4, so the same corpus
  // always yields the same mapping.
  static Vocabulary build(const std::vector<std::string>& captions, std::size_t min_count) {
    if (captions.empty()) throw DataError("vocabulary: cannot build from an empty corpus");
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& c : captions)
      for (const auto& t : tokenize(c)) ++counts[t];
    std::vector<std::pair<std::string, std::size_t>> kept(counts.begin(), counts.end());
    std::erase_if(kept, [&](const auto& kv) { return kv.second < min_count; });
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [token, count] : kept) v.add(token);
    return v;
  }

  // Token per line, line number = id - 4; reserved ids stay implicit.
  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    for (std::size_t id = tok::reserved; id < id_to_token_.size(); ++id)
      os << id_to_token_[id] << '\n';
    if (!os) throw IoError("write failed on '" + path + "'");
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    Vocabulary v;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty())
        throw DataError("vocabulary '" + path + "': line " + std::to_string(i + 1) + " is empty");
      v.add(lines[i]);
    }
    return v;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::size_t> token_to_id_;
};

// One corpus line as stored on disk: the caption text plus the tags some
// offline tagger produced for it, one tag per word.
struct CorpusRecord {
  std::string video_id;
  std::string caption;
  std::string tags;  // space-separated, aligned with tokenize(caption)
};

// Tab-separated, three fields per line.
inline void save_corpus(const std::string& path, const std::vector<CorpusRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& r : records) {
    for (const std::string* f : {&r.video_id, &r.caption, &r.tags})
      if (f->find_first_of("\t\n") != std::string::npos)
        throw DataError("corpus record '" + r.video_id + "' contains a tab or newline");
    os << r.video_id << '\t' << r.caption << '\t' << r.tags << '\n';
  }
  if (!os) throw IoError("write failed on '" + path + "'");
}

inline std::vector<CorpusRecord> load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  std::vector<CorpusRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t t1 = line.find('\t');
    const std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw DataError("corpus '" + path + "': line " + std::to_string(lineno) +
                      " does not have exactly 3 tab-separated fields");
    records.push_back(
        {line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
  }
  return records;
}

// A caption ready for the decoder: [bos, content..., eos] with one module
// label per content token.
struct CaptionSample {
  std::string video_id;
  std::vector<std::size_t> tokens;
  std::vector<ModuleKind> module_labels;
};

inline CaptionSample encode_sample(const CorpusRecord& rec, const Vocabulary& vocab) {
  std::vector<std::string> words = tokenize(rec.caption, std::size_t(-1));
  if (words.empty()) throw DataError("caption for '" + rec.video_id + "' has no tokens");
  std::istringstream ts(rec.tags);
  std::vector<std::string> tags;
  std::string tag;
  while (ts >> tag) tags.push_back(tag);
  if (tags.size() != words.size())
    throw DataError("'" + rec.video_id + "': " + std::to_string(tags.size()) + " tags for " +
                    std::to_string(words.size()) + " words");
  if (words.size() > kMaxCaptionTokens) {
    words.resize(kMaxCaptionTokens);
    tags.resize(kMaxCaptionTokens);
  }
  CaptionSample s;
  s.video_id = rec.video_id;
  s.tokens.push_back(tok::bos);
  for (const auto& w : words) s.tokens.push_back(vocab.id_of(w));
  s.tokens.push_back(tok::eos);
  for (const auto& t : tags) s.module_labels.push_back(pos_to_module(t));
  return s;
}

// Raw per-video features as ingested: appearance [N x d_va], object regions
// [N x R x d_o], motion [N x d_vm].
struct FeatureBundle {
  std::string video_id;
  Tensor va, vo, vm;

  void validate() const {
    if (va.rank() != 2 || vm.rank() != 2 || vo.rank() != 3)
      throw ShapeError("features '" + video_id + "': expected va [N x d], vo [N x R x d], vm [N x d]");
    const std::size_t n = va.shape()[0];
    if (vm.shape()[0] != n || vo.shape()[0] != n)
      throw ShapeError("features '" + video_id + "': frame counts disagree (va " +
                       std::to_string(n) + ", vo " + std::to_string(vo.shape()[0]) + ", vm " +
                       std::to_string(vm.shape()[0]) + ")");
    for (const Tensor* t : {&va, &vo, &vm})
      for (std::size_t d : t->shape())
        if (d == 0) throw ShapeError("features '" + video_id + "': zero-sized dimension");
  }
};

namespace detail {

inline void write_feature_tensor(std::ostream& os, const Tensor& t) {
  binio::write_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) binio::write_u32(os, static_cast<std::uint32_t>(d));
  for (real v : t.data()) binio::write_f32(os, static_cast<float>(v));
}

inline Tensor read_feature_tensor(std::istream& is, const char* what) {
  const std::uint8_t rank = binio::read_u8(is, what);
  if (rank == 0 || rank > 4)
    throw ShapeError(std::string("feature tensor ") + what + ": rank " + std::to_string(rank) +
                     " out of range");
  Shape shape(rank);
  std::size_t total = 1;
  for (auto& d : shape) {
    d = binio::read_u32(is, what);
    if (d == 0) throw ShapeError(std::string("feature tensor ") + what + ": zero dimension");
    total *= d;
  }
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < total; ++i) t.data()[i] = binio::read_f32(is, what);
  return t;
}

}  // namespace detail

// "RMNF": magic, version u32, then va/vo/vm in that fixed order, each
// {rank u8, dims u32 x rank, row-major little-endian f32 payload}.
inline void save_features(const std::string& path, const FeatureBundle& b) {
  b.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  binio::write_bytes(os, "RMNF", 4);
  binio::write_u32(os, 1);
  detail::write_feature_tensor(os, b.va);
  detail::write_feature_tensor(os, b.vo);
  detail::write_feature_tensor(os, b.vm);
  if (!os) throw IoError("write failed on '" + path + "'");
}

inline FeatureBundle load_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  binio::expect_magic(is, "RMNF", "feature file");
  const std::uint32_t version = binio::read_u32(is, "feature version");
  if (version != 1)
    throw IoError("feature file '" + path + "': unsupported version " + std::to_string(version));
  FeatureBundle b;
  b.video_id = std::filesystem::path(path).stem().string();
  b.va = detail::read_feature_tensor(is, "va");
  b.vo = detail::read_feature_tensor(is, "vo");
  b.vm = detail::read_feature_tensor(is, "vm");
  b.validate();
  return b;
}

// Desk-scale corpus: every video is a latent (subject, verb, object) triple
// rendered through one caption template; features are class mean vectors plus
// Gaussian noise, so at sigma = 0 the latents are perfectly recoverable.
struct SyntheticGrammar {
  std::vector<std::string> subjects{"man", "woman", "dog", "cat", "bird"};
  std::vector<std::string> verbs{"running", "eating", "chasing", "holding", "watching"};
  std::vector<std::string> objects{"marathon", "sandwich", "ball", "kitten", "game"};
  std::string tmpl = "a {subj} is {verb} a {obj}";
  std::size_t frames = 4;
  std::size_t regions = 3;  // region 0 = subject, region 1 = object, rest background
  std::size_t d_va = 16;
  std::size_t d_vm = 16;
  std::size_t d_o = 16;
  real sigma = 0.0;
};

struct SynthCorpus {
  std::vector<FeatureBundle> features;
  std::vector<CorpusRecord> captions;
};

namespace detail {

inline std::string tag_for_template_word(const std::string& w) {
  if (w == "{subj}" || w == "{obj}") return "NN";
  if (w == "{verb}") return "VBG";
  if (w == "is" || w == "are" || w == "was" || w == "were") return "AUX";
  if (w == "a" || w == "an" || w == "the") return "DT";
  return "X";  // anything else is glue; X maps to Func
}

inline std::vector<real> class_mean(std::uint64_t seed, std::uint64_t family, std::size_t index,
                                    std::size_t dim) {
  Rng r(Rng::derive(seed, family, index));
  std::vector<real> m(dim);
  for (auto& v : m) v = r.uniform(-1.0, 1.0);
  return m;
}

}  // namespace detail

inline SynthCorpus synth_generate(const SyntheticGrammar& g, std::size_t n_videos,
                                  std::uint64_t seed) {
  if (g.subjects.empty() || g.verbs.empty() || g.objects.empty())
    throw DataError("synthetic grammar: every word pool must be non-empty");
  if (g.frames == 0 || g.regions < 2 || !g.d_va || !g.d_vm || !g.d_o)
    throw ValueError("synthetic grammar: need frames >= 1, regions >= 2, positive widths");
  if (g.sigma < 0) throw ValueError("synthetic grammar: noise scale must be non-negative");
  const std::vector<std::string> tmpl_words = tokenize(g.tmpl, std::size_t(-1));
  // tokenize strips {}; re-split the raw template to keep the placeholders
  std::vector<std::string> slots;
  {
    std::istringstream ss(g.tmpl);
    std::string w;
    while (ss >> w) slots.push_back(w);
  }
  auto count_slot = [&](const char* s) { return std::count(slots.begin(), slots.end(), s); };
  if (count_slot("{subj}") != 1 || count_slot("{verb}") != 1 || count_slot("{obj}") != 1)
    throw ValueError("synthetic grammar: template must use {subj}, {verb}, {obj} exactly once");
  if (slots.size() > kMaxCaptionTokens)
    throw ValueError("synthetic grammar: template longer than a caption can be");

  // stable per-class mean vectors
  enum : std::uint64_t { kSubjVa = 0x5a01, kSubjVo = 0x5a02, kObjVo = 0x5a03,
                         kVerbVm = 0x5a04, kBackVo = 0x5a05 };
  std::vector<std::vector<real>> subj_va, subj_vo, obj_vo, verb_vm;
  for (std::size_t i = 0; i < g.subjects.size(); ++i) {
    subj_va.push_back(detail::class_mean(seed, kSubjVa, i, g.d_va));
    subj_vo.push_back(detail::class_mean(seed, kSubjVo, i, g.d_o));
  }
  for (std::size_t i = 0; i < g.objects.size(); ++i)
    obj_vo.push_back(detail::class_mean(seed, kObjVo, i, g.d_o));
  for (std::size_t i = 0; i < g.verbs.size(); ++i)
    verb_vm.push_back(detail::class_mean(seed, kVerbVm, i, g.d_vm));
  const std::vector<real> back_vo = detail::class_mean(seed, kBackVo, 0, g.d_o);

  SynthCorpus out;
  for (std::size_t v = 0; v < n_videos; ++v) {
    Rng r(Rng::derive(seed, 0x76696401, v));
    const std::size_t si = r.below(g.subjects.size());
    const std::size_t vi = r.below(g.verbs.size());
    const std::size_t oi = r.below(g.objects.size());

    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "vid%04zu", v);
    FeatureBundle b;
    b.video_id = idbuf;
    b.va = Tensor({g.frames, g.d_va});
    b.vo = Tensor({g.frames, g.regions, g.d_o});
    b.vm = Tensor({g.frames, g.d_vm});
    auto fill = [&](real* dst, const std::vector<real>& mean) {
      for (std::size_t i = 0; i < mean.size(); ++i)
        dst[i] = mean[i] + (g.sigma > 0 ? g.sigma * r.normal() : 0.0);
    };
    for (std::size_t f = 0; f < g.frames; ++f) {
      fill(&b.va.data()[f * g.d_va], subj_va[si]);
      for (std::size_t reg = 0; reg < g.regions; ++reg) {
        real* dst = &b.vo.data()[(f * g.regions + reg) * g.d_o];
        fill(dst, reg == 0 ? subj_vo[si] : reg == 1 ? obj_vo[oi] : back_vo);
      }
      fill(&b.vm.data()[f * g.d_vm], verb_vm[vi]);
    }

    CorpusRecord rec;
    rec.video_id = b.video_id;
    std::string tags;
    for (std::size_t w = 0; w < slots.size(); ++w) {
      const std::string& s = slots[w];
      const std::string word =
          s == "{subj}" ? g.subjects[si] : s == "{verb}" ? g.verbs[vi] : s == "{obj}" ? g.objects[oi] : s;
      if (w) {
        rec.caption.push_back(' ');
        tags.push_back(' ');
      }
      rec.caption += word;
      tags += detail::tag_for_template_word(s);
    }
    rec.tags = tags;
    out.features.push_back(std::move(b));
    out.captions.push_back(std::move(rec));
  }
  return out;
}

}  // namespace rmn
