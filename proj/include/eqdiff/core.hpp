//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_CORE_HPP_
#define EQDIFF_CORE_HPP_

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace eqdiff {

enum class ErrorCode {
  invalid_input,
  invalid_config,
  parse,
  state,
  ingestion,
  internal,
  training_diverged,
  unparseable_prompt,
  corrupt_checkpoint,
  config_mismatch,
  io,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(what), code_(code) { }

  ErrorCode code() const { return code_; }

private:
  ErrorCode code_;
};

#define EQDIFF_DEFINE_ERROR(name, code)                                       \
  class name : public Error {                                                 \
  public:                                                                     \
    explicit name(const std::string &what): Error(ErrorCode::code, what) { }  \
  }

EQDIFF_DEFINE_ERROR(InvalidInput, invalid_input);
EQDIFF_DEFINE_ERROR(InvalidConfig, invalid_config);
EQDIFF_DEFINE_ERROR(ParseError, parse);
EQDIFF_DEFINE_ERROR(StateError, state);
EQDIFF_DEFINE_ERROR(IngestionError, ingestion);
EQDIFF_DEFINE_ERROR(InternalError, internal);
EQDIFF_DEFINE_ERROR(TrainingDiverged, training_diverged);
EQDIFF_DEFINE_ERROR(UnparseablePrompt, unparseable_prompt);
EQDIFF_DEFINE_ERROR(CorruptCheckpoint, corrupt_checkpoint);
EQDIFF_DEFINE_ERROR(ConfigMismatch, config_mismatch);
EQDIFF_DEFINE_ERROR(IoError, io);

#undef EQDIFF_DEFINE_ERROR

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return splitmix64(h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
}

inline std::uint64_t fnv1a64(const void *data, std::size_t size,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto *p = static_cast<const unsigned char *>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seeded random stream. fork() derives an independent stream from the root
// seed and the given labels, never from the current engine state, so forked
// streams are reproducible regardless of how much the parent has consumed.
class RandomSource {
public:
  explicit RandomSource(std::uint64_t seed): seed_(seed), engine_(seed) { }

  RandomSource fork(std::uint64_t a, std::uint64_t b = 0) const {
    return RandomSource(hash_combine(hash_combine(seed_, a), b));
  }

  std::uint64_t seed() const { return seed_; }

  double normal() { return normal_(engine_); }

  double uniform() { return uniform_(engine_); }

  double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  // Integer in [lo, hi], both inclusive.
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
  std::uniform_real_distribution<double> uniform_ { 0.0, 1.0 };
};

inline std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
  return buf;
}

// Little-endian binary encoding for checkpoint files.
class ByteWriter {
public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void u32(std::uint32_t v) { append_le(v); }

  void u64(std::uint64_t v) { append_le(v); }

  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    append_le(bits);
  }

  void f64_span(const double *data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      f64(data[i]);
  }

  void str(const std::string &s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }

  const std::string &bytes() const { return buf_; }

private:
  template <class T>
  void append_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  std::string buf_;
};

class ByteReader {
public:
  ByteReader(const char *data, std::size_t size): data_(data), size_(size) { }

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }

  std::uint32_t u32() { return read_le<std::uint32_t>(); }

  std::uint64_t u64() { return read_le<std::uint64_t>(); }

  double f64() {
    std::uint64_t bits = read_le<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  void f64_span(double *out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      out[i] = f64();
  }

  std::string str() {
    std::uint32_t n = u32();
    const char *p = take(n);
    return std::string(p, n);
  }

  std::size_t position() const { return pos_; }

  std::size_t remaining() const { return size_ - pos_; }

private:
  const char *take(std::size_t n) {
    if (pos_ + n > size_)
      throw CorruptCheckpoint("checkpoint truncated");
    const char *p = data_ + pos_;
    pos_ += n;
    return p;
  }

  template <class T>
  T read_le() {
    const char *p = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }

  const char *data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace eqdiff

#endif  // EQDIFF_CORE_HPP_
