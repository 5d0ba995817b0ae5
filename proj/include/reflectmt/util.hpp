// SPDX-License-Identifier: Apache-2.0
//
// Small shared helpers: ASCII whitespace handling, UTF-8 code point
// decoding, edit distance, hashing, deterministic RNG, file and number
// formatting utilities used across the pipeline.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace reflectmt {

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

inline std::string_view trim_view(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && is_ascii_space(s[b])) ++b;
  while (e > b && is_ascii_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

// Collapses every run of ASCII whitespace to a single space and trims the
// ends. Used by the modification counter so that incidental spacing does
// not count as a textual change.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_ws = false;
  for (char c : trim_view(s)) {
    if (is_ascii_space(c)) {
      in_ws = true;
    } else {
      if (in_ws && !out.empty()) out.push_back(' ');
      in_ws = false;
      out.push_back(c);
    }
  }
  return out;
}

// Decodes UTF-8 into code points. Invalid bytes are passed through as
// their raw values so the function is total on arbitrary input.
inline std::vector<uint32_t> utf8_codepoints(std::string_view s) {
  std::vector<uint32_t> cps;
  cps.reserve(s.size());
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    uint32_t cp = c;
    size_t extra = 0;
    if (c >= 0xF0) {
      cp = c & 0x07u;
      extra = 3;
    } else if (c >= 0xE0) {
      cp = c & 0x0Fu;
      extra = 2;
    } else if (c >= 0xC0) {
      cp = c & 0x1Fu;
      extra = 1;
    }
    if (extra > 0 && i + extra < s.size() + 1) {
      bool valid = true;
      for (size_t k = 1; k <= extra && i + k < s.size(); ++k) {
        unsigned char cc = static_cast<unsigned char>(s[i + k]);
        if ((cc & 0xC0u) != 0x80u) {
          valid = false;
          break;
        }
      }
      if (valid && i + extra < s.size()) {
        for (size_t k = 1; k <= extra; ++k) {
          cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3Fu);
        }
        i += extra + 1;
        cps.push_back(cp);
        continue;
      }
    }
    cps.push_back(c);
    ++i;
  }
  return cps;
}

inline size_t utf8_length(std::string_view s) { return utf8_codepoints(s).size(); }

// Plain O(n*m) Levenshtein distance over code points.
inline size_t levenshtein(const std::vector<uint32_t>& a,
                          const std::vector<uint32_t>& b) {
  const size_t n = a.size(), m = b.size();
  if (n == 0) return m;
  if (m == 0) return n;
  std::vector<size_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = j;
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= m; ++j) {
      size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string fnv1a64_hex(std::string_view s) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(s)));
  return std::string(buf);
}

// Stable decimal rendering for CSV/JSON reports; %.10g keeps outputs
// byte-identical across runs without dragging in locale state.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return std::string(buf);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Deterministic, platform-stable RNG. std::mt19937_64 output is fixed by
// the standard; the uniform helpers below avoid std::*_distribution, whose
// results vary between standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    // splitmix64 spreads small seeds before seeding the twister
    uint64_t s = seed;
    state_.seed(splitmix64(s));
  }

  uint64_t next_u64() { return state_(); }

  // 53-bit mantissa uniform in [0, 1)
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // unbiased uniform index in [0, n) via rejection sampling
  size_t index(size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
    uint64_t mask = n - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    for (;;) {
      uint64_t v = next_u64() & mask;
      if (v < n) return static_cast<size_t>(v);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  // derive an independent stream, e.g. one per worker or stage
  Rng fork(uint64_t stream_id) {
    uint64_t s = next_u64() ^ (0xA5A5A5A5A5A5A5A5ULL + stream_id);
    return Rng(splitmix64(s));
  }

 private:
  std::mt19937_64 state_;
};

inline std::string join(const std::vector<std::string>& parts,
                        std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

}  // namespace reflectmt
