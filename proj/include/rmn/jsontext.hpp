#pragma once

#include <cstdint>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace rmn {

// Minimal JSON *emission* with a canonical number form, enough for log lines,
// config echoes, and trace records. Parsing is out of scope.

inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  return out;
}

inline std::string json_str(const std::string& s) { return "\"" + json_escape(s) + "\""; }

// Shortest-round-trip double; the same value always prints the same way, so
// hashes over serialized configs are stable.
inline std::string json_num(double v) {
  if (!std::isfinite(v)) return "null";  // json has no Infinity/NaN
  char buf[32];
  if (v == std::floor(v) && std::abs(v) < 9.0e15) {
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
    return buf;
  }
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    double back;
    std::sscanf(buf, "%lf", &back);
    if (back == v) break;
  }
  return buf;
}

inline std::string json_num(std::uint64_t v) { return std::to_string(v); }

// Incremental "{...}" builder; values arrive pre-serialized.
class JsonObject {
 public:
  JsonObject& raw(const std::string& key, const std::string& serialized) {
    body_ += body_.empty() ? "" : ",";
    body_ += json_str(key) + ":" + serialized;
    return *this;
  }
  JsonObject& str(const std::string& key, const std::string& v) { return raw(key, json_str(v)); }
  JsonObject& num(const std::string& key, double v) { return raw(key, json_num(v)); }
  JsonObject& num(const std::string& key, std::uint64_t v) { return raw(key, json_num(v)); }
  JsonObject& boolean(const std::string& key, bool v) { return raw(key, v ? "true" : "false"); }

  std::string done() const { return "{" + body_ + "}"; }

 private:
  std::string body_;
};

inline std::string json_array(const std::vector<std::string>& serialized) {
  std::string out = "[";
  for (std::size_t i = 0; i < serialized.size(); ++i) {
    if (i) out += ",";
    out += serialized[i];
  }
  return out + "]";
}

// FNV-1a over a canonical serialization; used to pair checkpoints with the
// configs that produced them.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rmn
