//
// Project eqdiff - Copyright 2026 the eqdiff authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef EQDIFF_CHECKPOINT_HPP_
#define EQDIFF_CHECKPOINT_HPP_

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>

#include "eqdiff/core.hpp"
#include "eqdiff/diffuse.hpp"
#include "eqdiff/net.hpp"
#include "eqdiff/schedule.hpp"

namespace eqdiff {

// Binary container: magic, version, kind, payload, trailing FNV-1a checksum
// over everything before it. Parameters are little-endian 64-bit floats.
inline constexpr char kCheckpointMagic[8] = { 'E', 'Q', 'D', 'F',
                                              'C', 'K', 'P', 'T' };
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kKindTraining = 1;
inline constexpr std::uint32_t kKindRegressor = 2;

struct TrainingCheckpoint {
  ScheduleSpec schedule;
  NoisePredictorConfig net;
  Parameters params;
  std::optional<AdamState> adam;
  std::uint64_t epochs_done = 0;
  // Empirical atom-count distribution of the training subset; sampling
  // draws M from it.
  AtomCountHistogram histogram;
};

struct RegressorCheckpoint {
  RegressorConfig cfg;
  Parameters params;
  std::string property_key;
  double target_mean = 0.0;
  double target_std = 1.0;
};

namespace detail {

inline void write_file_with_checksum(const std::string &path,
                                     const ByteWriter &body) {
  ByteWriter footer;
  footer.u64(fnv1a64(body.bytes().data(), body.bytes().size()));
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write '" + path + "'");
  out.write(body.bytes().data(),
            static_cast<std::streamsize>(body.bytes().size()));
  out.write(footer.bytes().data(),
            static_cast<std::streamsize>(footer.bytes().size()));
  if (!out)
    throw IoError("failed writing '" + path + "'");
}

inline std::string read_file_checked(const std::string &path,
                                     std::uint32_t expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kCheckpointMagic) + 16)
    throw CorruptCheckpoint("'" + path + "': file too short");

  const std::size_t body_size = bytes.size() - 8;
  ByteReader footer(bytes.data() + body_size, 8);
  if (footer.u64() != fnv1a64(bytes.data(), body_size))
    throw CorruptCheckpoint("'" + path + "': checksum mismatch");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CorruptCheckpoint("'" + path + "': bad magic");

  ByteReader header(bytes.data() + sizeof(kCheckpointMagic), 8);
  if (header.u32() != kCheckpointVersion)
    throw CorruptCheckpoint("'" + path + "': unsupported version");
  if (header.u32() != expected_kind)
    throw ConfigMismatch("'" + path + "': wrong checkpoint kind");
  return bytes;
}

inline void write_schedule_spec(ByteWriter &w, const ScheduleSpec &spec) {
  w.u32(static_cast<std::uint32_t>(spec.kind));
  w.u32(static_cast<std::uint32_t>(spec.total_steps));
  w.f64(spec.p1);
  w.f64(spec.p2);
}

inline ScheduleSpec read_schedule_spec(ByteReader &r) {
  ScheduleSpec spec;
  spec.kind = static_cast<ScheduleKind>(r.u32());
  spec.total_steps = static_cast<int>(r.u32());
  spec.p1 = r.f64();
  spec.p2 = r.f64();
  return spec;
}

inline void write_params(ByteWriter &w, const Parameters &params) {
  w.u64(static_cast<std::uint64_t>(params.values.size()));
  w.f64_span(params.values.data(),
             static_cast<std::size_t>(params.values.size()));
}

inline Vec read_params(ByteReader &r, Eigen::Index expected) {
  const auto count = static_cast<Eigen::Index>(r.u64());
  if (count != expected)
    throw ConfigMismatch("checkpoint parameter count " +
                         std::to_string(count) + " does not match layout (" +
                         std::to_string(expected) + ")");
  Vec values(count);
  r.f64_span(values.data(), static_cast<std::size_t>(count));
  return values;
}

}  // namespace detail

inline void save_training_checkpoint(const std::string &path,
                                     const TrainingCheckpoint &ckpt) {
  ByteWriter w;
  for (char c : kCheckpointMagic)
    w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.u32(kKindTraining);

  detail::write_schedule_spec(w, ckpt.schedule);
  // Stored terminal alpha_bar lets the loader cross-check the rederived
  // sequence.
  w.f64(build_schedule(ckpt.schedule).alpha_bar(ckpt.schedule.total_steps));

  w.u32(static_cast<std::uint32_t>(ckpt.net.layers));
  w.u32(static_cast<std::uint32_t>(ckpt.net.hidden));
  w.u32(static_cast<std::uint32_t>(ckpt.net.feature_width));
  w.u32(static_cast<std::uint32_t>(ckpt.net.condition_width));
  w.u32(static_cast<std::uint32_t>(ckpt.net.time_fourier));
  w.u32(static_cast<std::uint32_t>(ckpt.net.distance_rbf));
  w.u64(ckpt.epochs_done);
  detail::write_params(w, ckpt.params);

  w.u8(ckpt.adam ? 1 : 0);
  if (ckpt.adam) {
    w.u64(static_cast<std::uint64_t>(ckpt.adam->step));
    w.f64_span(ckpt.adam->first_moment.data(),
               static_cast<std::size_t>(ckpt.adam->first_moment.size()));
    w.f64_span(ckpt.adam->second_moment.data(),
               static_cast<std::size_t>(ckpt.adam->second_moment.size()));
  }

  const auto &counts = ckpt.histogram.counts();
  const auto &probs = ckpt.histogram.probabilities();
  w.u32(static_cast<std::uint32_t>(counts.size()));
  for (std::size_t i = 0; i < counts.size(); ++i) {
    w.u32(static_cast<std::uint32_t>(counts[i]));
    w.f64(probs[i]);
  }
  detail::write_file_with_checksum(path, w);
}

inline TrainingCheckpoint load_training_checkpoint(const std::string &path) {
  std::string bytes = detail::read_file_checked(path, kKindTraining);
  ByteReader r(bytes.data() + sizeof(kCheckpointMagic) + 8,
               bytes.size() - sizeof(kCheckpointMagic) - 16);

  TrainingCheckpoint ckpt;
  ckpt.schedule = detail::read_schedule_spec(r);
  const double stored_bar = r.f64();
  const double rebuilt_bar =
      build_schedule(ckpt.schedule).alpha_bar(ckpt.schedule.total_steps);
  if (std::abs(stored_bar - rebuilt_bar) > 1e-12)
    throw CorruptCheckpoint("'" + path +
                            "': schedule cross-check failed (alpha_bar_T)");

  ckpt.net.layers = static_cast<int>(r.u32());
  ckpt.net.hidden = static_cast<int>(r.u32());
  ckpt.net.feature_width = static_cast<int>(r.u32());
  ckpt.net.condition_width = static_cast<int>(r.u32());
  ckpt.net.time_fourier = static_cast<int>(r.u32());
  ckpt.net.distance_rbf = static_cast<int>(r.u32());
  ckpt.epochs_done = r.u64();

  ckpt.params.layout = noise_predictor_layout(ckpt.net);
  ckpt.params.values = detail::read_params(r, ckpt.params.layout.total());

  if (r.u8() != 0) {
    AdamState state;
    state.step = static_cast<std::int64_t>(r.u64());
    state.first_moment = Vec(ckpt.params.values.size());
    state.second_moment = Vec(ckpt.params.values.size());
    r.f64_span(state.first_moment.data(),
               static_cast<std::size_t>(state.first_moment.size()));
    r.f64_span(state.second_moment.data(),
               static_cast<std::size_t>(state.second_moment.size()));
    ckpt.adam = std::move(state);
  }

  const auto bins = r.u32();
  if (bins > 0) {
    std::vector<int> counts;
    std::vector<double> probs;
    for (std::uint32_t i = 0; i < bins; ++i) {
      counts.push_back(static_cast<int>(r.u32()));
      probs.push_back(r.f64());
    }
    ckpt.histogram = AtomCountHistogram(std::move(counts), std::move(probs));
  }
  return ckpt;
}

inline void save_regressor_checkpoint(const std::string &path,
                                      const RegressorCheckpoint &ckpt) {
  ByteWriter w;
  for (char c : kCheckpointMagic)
    w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  w.u32(kKindRegressor);
  w.u32(static_cast<std::uint32_t>(ckpt.cfg.layers));
  w.u32(static_cast<std::uint32_t>(ckpt.cfg.hidden));
  w.u32(static_cast<std::uint32_t>(ckpt.cfg.feature_width));
  w.u32(static_cast<std::uint32_t>(ckpt.cfg.head_hidden));
  w.u32(static_cast<std::uint32_t>(ckpt.cfg.distance_rbf));
  w.str(ckpt.property_key);
  w.f64(ckpt.target_mean);
  w.f64(ckpt.target_std);
  detail::write_params(w, ckpt.params);
  detail::write_file_with_checksum(path, w);
}

inline RegressorCheckpoint load_regressor_checkpoint(const std::string &path) {
  std::string bytes = detail::read_file_checked(path, kKindRegressor);
  ByteReader r(bytes.data() + sizeof(kCheckpointMagic) + 8,
               bytes.size() - sizeof(kCheckpointMagic) - 16);

  RegressorCheckpoint ckpt;
  ckpt.cfg.layers = static_cast<int>(r.u32());
  ckpt.cfg.hidden = static_cast<int>(r.u32());
  ckpt.cfg.feature_width = static_cast<int>(r.u32());
  ckpt.cfg.head_hidden = static_cast<int>(r.u32());
  ckpt.cfg.distance_rbf = static_cast<int>(r.u32());
  ckpt.property_key = r.str();
  ckpt.target_mean = r.f64();
  ckpt.target_std = r.f64();
  ckpt.params.layout = regressor_layout(ckpt.cfg);
  ckpt.params.values = detail::read_params(r, ckpt.params.layout.total());
  return ckpt;
}

}  // namespace eqdiff

#endif  // EQDIFF_CHECKPOINT_HPP_
