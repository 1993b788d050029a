#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "octforce/common.hpp"
#include "octforce/streams.hpp"

namespace octforce::data {

using streams::SequenceSample;
using streams::Stats;

// Binary container for sequence datasets. Layout (all little-endian):
//   magic   8 bytes "OCTFORCE"
//   version u16
//   t_s     u32
//   d_c     u32
//   stride  u32   (window stride over the source scans; split needs it to
//                  reconstruct which raw A-scans each window covers)
//   n_samples u64
//   seed    u64
//   preset_name  u16 length + bytes
//   label_units  u16 length + bytes
// then per sample: [label f64][window t_s*d_c f32, row-major time-major].
struct DatasetHeader {
  static constexpr char kMagic[8] = {'O', 'C', 'T', 'F', 'O', 'R', 'C', 'E'};
  static constexpr std::uint16_t kVersion = 1;

  std::uint16_t version = kVersion;
  std::uint32_t t_s = 0;
  std::uint32_t d_c = 0;
  std::uint32_t stride = 1;
  std::uint64_t n_samples = 0;
  std::uint64_t seed = 0;
  std::string preset_name;
  std::string label_units = "mN";
};

struct SplitSpec {
  double train_frac = 0.64;
  double val_frac = 0.16;
  double test_frac = 0.20;

  void validate() const {
    if (!(train_frac > 0) || !(val_frac > 0) || !(test_frac > 0))
      throw InvalidArgument("split: fractions must be positive");
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
      throw InvalidArgument("split: fractions must sum to 1");
  }
};

namespace detail {

inline void write_header(std::ostream& os, const DatasetHeader& h) {
  io::write_bytes(os, DatasetHeader::kMagic, 8);
  io::write_raw<std::uint16_t>(os, h.version);
  io::write_raw<std::uint32_t>(os, h.t_s);
  io::write_raw<std::uint32_t>(os, h.d_c);
  io::write_raw<std::uint32_t>(os, h.stride);
  io::write_raw<std::uint64_t>(os, h.n_samples);
  io::write_raw<std::uint64_t>(os, h.seed);
  io::write_raw<std::uint16_t>(os, static_cast<std::uint16_t>(h.preset_name.size()));
  io::write_bytes(os, h.preset_name.data(), h.preset_name.size());
  io::write_raw<std::uint16_t>(os, static_cast<std::uint16_t>(h.label_units.size()));
  io::write_bytes(os, h.label_units.data(), h.label_units.size());
}

inline DatasetHeader read_header(std::istream& is, const std::string& path) {
  char magic[8];
  io::read_bytes(is, magic, 8, "magic");
  if (std::memcmp(magic, DatasetHeader::kMagic, 8) != 0)
    throw BadMagicError(path + ": not a dataset file (bad magic)");
  DatasetHeader h;
  h.version = io::read_raw<std::uint16_t>(is, "version");
  if (h.version != DatasetHeader::kVersion)
    throw VersionMismatchError(path + ": dataset version " + std::to_string(h.version) +
                               ", expected " + std::to_string(DatasetHeader::kVersion));
  h.t_s = io::read_raw<std::uint32_t>(is, "t_s");
  h.d_c = io::read_raw<std::uint32_t>(is, "d_c");
  h.stride = io::read_raw<std::uint32_t>(is, "stride");
  h.n_samples = io::read_raw<std::uint64_t>(is, "n_samples");
  h.seed = io::read_raw<std::uint64_t>(is, "seed");
  const auto name_len = io::read_raw<std::uint16_t>(is, "preset name length");
  h.preset_name.resize(name_len);
  if (name_len) io::read_bytes(is, h.preset_name.data(), name_len, "preset name");
  const auto unit_len = io::read_raw<std::uint16_t>(is, "label units length");
  h.label_units.resize(unit_len);
  if (unit_len) io::read_bytes(is, h.label_units.data(), unit_len, "label units");
  return h;
}

}  // namespace detail

// Streaming writer so stride-1 datasets never have to be materialized whole.
class DatasetWriter {
 public:
  DatasetWriter(const std::string& path, DatasetHeader header)
      : path_(path), header_(std::move(header)), os_(path, std::ios::binary) {
    if (!os_) throw DataError("cannot open for writing: " + path);
    header_.n_samples = 0;
    detail::write_header(os_, header_);
  }

  void append(const SequenceSample& s) {
    if (s.t_s != static_cast<int>(header_.t_s) || s.d_c != static_cast<int>(header_.d_c))
      throw InvalidArgument("dataset write: sample is " + std::to_string(s.t_s) + "x" +
                            std::to_string(s.d_c) + ", header says " + std::to_string(header_.t_s) +
                            "x" + std::to_string(header_.d_c));
    io::write_raw<double>(os_, s.label);
    io::write_bytes(os_, s.window.data(), s.window.size() * sizeof(float));
    ++header_.n_samples;
  }

  // Patches the sample count into the header and closes the file.
  void finalize() {
    os_.seekp(8 + 2 + 4 + 4 + 4, std::ios::beg);
    io::write_raw<std::uint64_t>(os_, header_.n_samples);
    os_.close();
    if (!os_) throw DataError("write failed: " + path_);
  }

  std::uint64_t count() const { return header_.n_samples; }

 private:
  std::string path_;
  DatasetHeader header_;
  std::ofstream os_;
};

inline void save_dataset(const std::vector<SequenceSample>& samples, DatasetHeader header,
                         const std::string& path) {
  DatasetWriter w(path, std::move(header));
  for (const auto& s : samples) w.append(s);
  w.finalize();
}

inline std::pair<DatasetHeader, std::vector<SequenceSample>> load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  DatasetHeader h = detail::read_header(is, path);

  const std::size_t window_len = static_cast<std::size_t>(h.t_s) * h.d_c;
  std::vector<SequenceSample> samples;
  samples.reserve(h.n_samples);
  for (std::uint64_t i = 0; i < h.n_samples; ++i) {
    SequenceSample s;
    s.t_s = static_cast<int>(h.t_s);
    s.d_c = static_cast<int>(h.d_c);
    s.first_scan = static_cast<std::size_t>(i) * h.stride;
    s.label = io::read_raw<double>(is, "sample label");
    s.window.resize(window_len);
    io::read_bytes(is, s.window.data(), window_len * sizeof(float), "sample window");
    samples.push_back(std::move(s));
  }
  if (is.peek() != std::ifstream::traits_type::eof())
    throw DataError(path + ": trailing bytes after " + std::to_string(h.n_samples) + " samples");
  return {std::move(h), std::move(samples)};
}

struct Splits {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> val;
  std::vector<SequenceSample> test;
};

// Cuts the time-ordered sample list into contiguous train/val/test blocks.
// Windows at the start of a later block that still cover raw scans from the
// previous block are dropped, so no A-scan contributes to two splits.
// Contiguous assignment is deliberate: windows overlap in time, and random
// assignment would leak near-duplicates across splits. The seed parameter is
// kept for alternative schemes; the contiguous scheme ignores it.
inline Splits split(const std::vector<SequenceSample>& samples, const SplitSpec& spec,
                    std::uint64_t /*seed*/ = 0) {
  spec.validate();
  const std::size_t n = samples.size();
  const auto cut1 = static_cast<std::size_t>(static_cast<double>(n) * spec.train_frac);
  const auto cut2 =
      static_cast<std::size_t>(static_cast<double>(n) * (spec.train_frac + spec.val_frac));

  auto block = [&](std::size_t lo, std::size_t hi) {
    std::vector<SequenceSample> out;
    if (lo > 0 && lo < n) {
      // last scan index used by the previous block
      const std::size_t prev_end = samples[lo - 1].first_scan +
                                   static_cast<std::size_t>(samples[lo - 1].t_s);
      while (lo < hi && samples[lo].first_scan < prev_end) ++lo;
    }
    out.assign(samples.begin() + static_cast<std::ptrdiff_t>(lo),
               samples.begin() + static_cast<std::ptrdiff_t>(hi));
    return out;
  };

  Splits s;
  s.train = block(0, cut1);
  s.val = block(cut1, cut2);
  s.test = block(cut2, n);
  if (s.train.empty() || s.val.empty() || s.test.empty())
    throw DataError("split: a split came out empty (n=" + std::to_string(n) + ")");
  return s;
}

// Single-pass (Welford) per-pixel mean/std over all scans of all windows,
// plus the label range. Std is the population form.
inline Stats stats(const std::vector<SequenceSample>& samples) {
  if (samples.empty()) throw InvalidArgument("stats: empty sample list");
  const int d_c = samples[0].d_c;
  Stats st;
  st.pixel_mean.assign(static_cast<std::size_t>(d_c), 0.0);
  st.pixel_std.assign(static_cast<std::size_t>(d_c), 0.0);
  std::vector<double> m2(static_cast<std::size_t>(d_c), 0.0);
  double count = 0;
  double label_sum = 0;
  st.label_min = samples[0].label;
  st.label_max = samples[0].label;
  for (const auto& s : samples) {
    if (s.d_c != d_c)
      throw InvalidArgument("stats: mixed d_c (" + std::to_string(s.d_c) + " vs " +
                            std::to_string(d_c) + ")");
    label_sum += s.label;
    st.label_min = std::min(st.label_min, s.label);
    st.label_max = std::max(st.label_max, s.label);
    for (int r = 0; r < s.t_s; ++r) {
      const float* row = s.window.data() + static_cast<std::size_t>(r) * d_c;
      count += 1;
      for (int j = 0; j < d_c; ++j) {
        const double x = row[j];
        const double delta = x - st.pixel_mean[static_cast<std::size_t>(j)];
        st.pixel_mean[static_cast<std::size_t>(j)] += delta / count;
        m2[static_cast<std::size_t>(j)] += delta * (x - st.pixel_mean[static_cast<std::size_t>(j)]);
      }
    }
  }
  for (int j = 0; j < d_c; ++j)
    st.pixel_std[static_cast<std::size_t>(j)] =
        std::sqrt(m2[static_cast<std::size_t>(j)] / count);
  st.label_mean = label_sum / static_cast<double>(samples.size());
  return st;
}

}  // namespace octforce::data
