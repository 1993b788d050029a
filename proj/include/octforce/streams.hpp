#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "octforce/common.hpp"

namespace octforce::streams {

// One OCT depth scan. Intensities are stored at sensor precision (f32);
// all downstream arithmetic promotes as needed.
struct AScan {
  double t = 0;  // seconds
  std::vector<float> depth;
};

struct ForceSample {
  double t = 0;  // seconds
  double f = 0;  // mN
};

using OctStream = std::vector<AScan>;
using ForceStream = std::vector<ForceSample>;

struct LabeledScan {
  double t = 0;
  std::vector<float> scan;
  double f = 0;  // mN
};

// A model input unit: t_s consecutive cropped scans (time-major) plus the
// force at the last scan. first_scan tracks the source A-scan index so
// split boundaries can drop windows that straddle a cut.
struct SequenceSample {
  int t_s = 0;
  int d_c = 0;
  std::vector<float> window;  // t_s * d_c, row-major
  double label = 0;           // mN
  double t = 0;               // timestamp of the last scan
  std::size_t first_scan = 0;
};

// Per-depth-pixel statistics plus label range, computed on the training
// split only and carried with a trained model.
struct Stats {
  std::vector<double> pixel_mean;
  std::vector<double> pixel_std;
  double label_min = 0;
  double label_max = 0;
  double label_mean = 0;
};

struct NormStats {
  std::vector<double> pixel_mean;
  std::vector<double> pixel_std;
  double label_scale = 1.0;  // labels divided by this when scale_labels
  bool scale_labels = true;

  static NormStats from_stats(const Stats& s, bool scale_labels) {
    NormStats n;
    n.pixel_mean = s.pixel_mean;
    n.pixel_std = s.pixel_std;
    n.scale_labels = scale_labels;
    const double m = std::abs(s.label_max) > std::abs(s.label_min) ? std::abs(s.label_max)
                                                                   : std::abs(s.label_min);
    n.label_scale = (scale_labels && m > 0) ? m : 1.0;
    return n;
  }

  double normalize_label(double f) const { return scale_labels ? f / label_scale : f; }
  double denormalize_label(double f) const { return scale_labels ? f * label_scale : f; }
};

namespace detail {

inline void check_sorted(const char* what, const std::vector<double>& ts) {
  for (std::size_t i = 1; i < ts.size(); ++i)
    if (ts[i] < ts[i - 1])
      throw InvalidArgument(std::string("match_streams: ") + what +
                            " timestamps not sorted at index " + std::to_string(i));
}

}  // namespace detail

// Pairs every A-scan with the force sample of minimal |dt|, ties broken
// toward the earlier sample. Output preserves A-scan order, one entry per
// scan. Both streams must be non-empty and sorted.
inline std::vector<LabeledScan> match_streams(const OctStream& oct, const ForceStream& force) {
  if (oct.empty()) throw InvalidArgument("match_streams: empty OCT stream");
  if (force.empty()) throw InvalidArgument("match_streams: empty force stream");
  {
    std::vector<double> ts;
    ts.reserve(oct.size());
    for (const auto& s : oct) ts.push_back(s.t);
    detail::check_sorted("OCT", ts);
    ts.clear();
    for (const auto& s : force) ts.push_back(s.t);
    detail::check_sorted("force", ts);
  }
  std::vector<LabeledScan> out;
  out.reserve(oct.size());
  std::size_t j = 0;
  for (const auto& scan : oct) {
    while (j + 1 < force.size() &&
           std::abs(force[j + 1].t - scan.t) < std::abs(force[j].t - scan.t))
      ++j;
    out.push_back(LabeledScan{scan.t, scan.depth, force[j].f});
  }
  return out;
}

// Keeps the first d_c samples; everything beyond the deepest structure the
// model needs is dropped.
inline AScan crop_scan(const AScan& scan, int d_c) {
  if (d_c < 1 || static_cast<std::size_t>(d_c) > scan.depth.size())
    throw InvalidArgument("crop_scan: crop size " + std::to_string(d_c) +
                          " out of range for scan of length " + std::to_string(scan.depth.size()));
  AScan out;
  out.t = scan.t;
  out.depth.assign(scan.depth.begin(), scan.depth.begin() + d_c);
  return out;
}

inline std::vector<LabeledScan> crop_scans(std::vector<LabeledScan> scans, int d_c) {
  for (auto& s : scans) {
    if (d_c < 1 || static_cast<std::size_t>(d_c) > s.scan.size())
      throw InvalidArgument("crop_scan: crop size " + std::to_string(d_c) +
                            " out of range for scan of length " + std::to_string(s.scan.size()));
    s.scan.resize(static_cast<std::size_t>(d_c));
  }
  return scans;
}

// One window of t_s consecutive scans beginning at `start`; the label and
// timestamp come from the last scan.
inline SequenceSample window_at(const std::vector<LabeledScan>& scans, std::size_t start,
                                int t_s) {
  if (t_s < 1) throw InvalidArgument("window_at: t_s must be >= 1");
  if (start + static_cast<std::size_t>(t_s) > scans.size())
    throw InvalidArgument("window_at: window [" + std::to_string(start) + ", +" +
                          std::to_string(t_s) + ") exceeds " + std::to_string(scans.size()) +
                          " scans");
  const int d_c = static_cast<int>(scans[start].scan.size());
  SequenceSample s;
  s.t_s = t_s;
  s.d_c = d_c;
  s.first_scan = start;
  s.window.resize(static_cast<std::size_t>(t_s) * d_c);
  for (int r = 0; r < t_s; ++r) {
    const auto& row = scans[start + static_cast<std::size_t>(r)].scan;
    if (static_cast<int>(row.size()) != d_c)
      throw InvalidArgument("window_at: scan length " + std::to_string(row.size()) +
                            " differs from window row length " + std::to_string(d_c));
    std::copy(row.begin(), row.end(), s.window.begin() + static_cast<std::size_t>(r) * d_c);
  }
  const auto& last = scans[start + static_cast<std::size_t>(t_s) - 1];
  s.label = last.f;
  s.t = last.t;
  return s;
}

// Sliding windows of t_s consecutive scans; the label is the force of the
// last scan. Fewer than t_s scans yields an empty list, not an error.
inline std::vector<SequenceSample> make_windows(const std::vector<LabeledScan>& scans, int t_s,
                                                int stride) {
  if (t_s < 1) throw InvalidArgument("make_windows: t_s must be >= 1");
  if (stride < 1) throw InvalidArgument("make_windows: stride must be >= 1");
  std::vector<SequenceSample> out;
  if (scans.size() < static_cast<std::size_t>(t_s)) return out;
  out.reserve((scans.size() - static_cast<std::size_t>(t_s)) / static_cast<std::size_t>(stride) +
              1);
  for (std::size_t start = 0; start + static_cast<std::size_t>(t_s) <= scans.size();
       start += static_cast<std::size_t>(stride))
    out.push_back(window_at(scans, start, t_s));
  return out;
}

// Per-pixel standardization with the training-set statistics; pixels with
// zero variance pass through untouched. Labels divide by the training max
// when label scaling is on.
inline void normalize(std::vector<SequenceSample>& samples, const NormStats& norm) {
  for (auto& s : samples) {
    if (static_cast<std::size_t>(s.d_c) != norm.pixel_mean.size())
      throw InvalidArgument("normalize: sample d_c " + std::to_string(s.d_c) +
                            " != stats width " + std::to_string(norm.pixel_mean.size()));
    for (int r = 0; r < s.t_s; ++r) {
      float* row = s.window.data() + static_cast<std::size_t>(r) * s.d_c;
      for (int j = 0; j < s.d_c; ++j) {
        const double sd = norm.pixel_std[static_cast<std::size_t>(j)];
        if (sd > 0)
          row[j] = static_cast<float>((row[j] - norm.pixel_mean[static_cast<std::size_t>(j)]) / sd);
      }
    }
    s.label = norm.normalize_label(s.label);
  }
}

}  // namespace octforce::streams
