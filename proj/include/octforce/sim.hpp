#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "octforce/common.hpp"
#include "octforce/streams.hpp"

namespace octforce::sim {

using streams::AScan;
using streams::ForceSample;
using streams::ForceStream;
using streams::OctStream;

inline constexpr double kAScanRateHz = 5500.0;
inline constexpr double kForceRateHz = 500.0;

// Fraction of the rupture force that remains right after a rupture event
// (membrane gives way, residual cutting force stays).
inline constexpr double kPostRuptureFraction = 0.25;

// Residual force on the shielded base sensor when noise is enabled, mN.
inline constexpr double kShieldResidualMn = 0.5;

// Sub-stream ids for derive_seed(master, id).
enum : std::uint64_t {
  kStreamRamp = 0,
  kStreamPhases = 1,
  kStreamScanNoise = 2,
  kStreamShieldNoise = 3,
};

// ---------------------------------------------------------------------------
// Parameter sets
// ---------------------------------------------------------------------------

// Kelvin-Voigt element with a linearly stiffening spring:
//   c * d(delta)/dt + k0 * (1 + alpha*delta) * delta = F
// delta in micrometers, forces in millinewtons.
struct NeedlePreset {
  std::string name;
  double k0 = 0;                  // mN per um
  double alpha = 0;               // 1/um
  double c = 0;                   // mN*s per um
  double f_max = 0;               // mN
  double layer_thickness_um = 0;  // um

  // Positive root of k0*(1+alpha*d)*d = F, written to avoid cancellation.
  double steady_state_um(double force_mn) const {
    if (force_mn <= 0) return 0;
    if (alpha <= 0) return force_mn / k0;
    return 2.0 * force_mn / (k0 + std::sqrt(k0 * k0 + 4.0 * k0 * alpha * force_mn));
  }

  void validate() const {
    if (!(k0 > 0)) throw InvalidArgument("preset '" + name + "': k0 must be > 0");
    if (!(c >= 0)) throw InvalidArgument("preset '" + name + "': c must be >= 0");
    if (!(alpha >= 0)) throw InvalidArgument("preset '" + name + "': alpha must be >= 0");
    if (!(f_max > 0)) throw InvalidArgument("preset '" + name + "': f_max must be > 0");
    if (!(layer_thickness_um > 0))
      throw InvalidArgument("preset '" + name + "': layer_thickness_um must be > 0");
    if (steady_state_um(f_max) > layer_thickness_um)
      throw InvalidArgument("preset '" + name + "': steady-state deformation at f_max (" +
                            std::to_string(steady_state_um(f_max)) + " um) exceeds layer thickness");
  }

  static NeedlePreset by_name(const std::string& name);
  static NeedlePreset from_file(const std::string& path);
  static std::vector<std::string> builtin_names() { return {"needle1", "needle2", "needle3"}; }
};

struct OpticalParams {
  int depth_px = 512;
  double px_per_um = 0.1;
  double tip_base_idx = 60.0;   // cone-tip lower surface at zero force
  double epoxy_top_idx = 10.0;  // fixed epoxy upper surface
  double peak_amp = 0.9;
  double peak_width_px = 2.0;
  double speckle_sigma = 0.25;
  double noise_floor = 0.02;

  double max_deformation_px() const { return tip_base_idx - epoxy_top_idx; }

  void validate() const {
    if (depth_px < 2) throw InvalidArgument("optics: depth_px must be >= 2");
    if (!(px_per_um > 0)) throw InvalidArgument("optics: px_per_um must be > 0");
    if (!(0 < epoxy_top_idx && epoxy_top_idx < tip_base_idx && tip_base_idx < depth_px))
      throw InvalidArgument("optics: need 0 < epoxy_top_idx < tip_base_idx < depth_px");
    if (!(peak_amp >= 0) || !(peak_width_px > 0) || !(speckle_sigma >= 0) || !(noise_floor >= 0))
      throw InvalidArgument("optics: amplitudes and noise parameters must be >= 0");
  }
};

struct DeformState {
  double delta_um = 0;
  double t_last = 0;
};

struct TissueSegment {
  double length_mm = 0;
  double stiffness_mn_per_mm = 0;
  std::optional<double> rupture_force_mn;
};

struct InsertionProfile {
  std::vector<TissueSegment> segments;
  double friction_per_mm = 0;  // mN per mm inserted
  double velocity_mm_s = 5.0;

  double total_length_mm() const {
    double d = 0;
    for (const auto& s : segments) d += s.length_mm;
    return d;
  }

  void validate() const {
    if (segments.empty()) throw InvalidArgument("insertion profile: no segments");
    for (const auto& s : segments) {
      if (!(s.length_mm > 0)) throw InvalidArgument("insertion profile: segment length must be > 0");
      if (!(s.stiffness_mn_per_mm >= 0))
        throw InvalidArgument("insertion profile: stiffness must be >= 0");
      if (s.rupture_force_mn && !(*s.rupture_force_mn > 0))
        throw InvalidArgument("insertion profile: rupture force must be > 0");
    }
    if (!(friction_per_mm >= 0)) throw InvalidArgument("insertion profile: friction must be >= 0");
    if (!(velocity_mm_s > 0)) throw InvalidArgument("insertion profile: velocity must be > 0");
  }

  static InsertionProfile demo();
  static InsertionProfile from_file(const std::string& path);
};

// ---------------------------------------------------------------------------
// Deformation dynamics
// ---------------------------------------------------------------------------

// One implicit-Euler step of c*ddelta + k0*(1+alpha*delta)*delta = F.
// The update solves a quadratic in the new deformation; with q >= 0 the
// conjugate form below has no cancellation. Returns the new deformation in
// micrometers (pixel conversion happens at the optics layer).
inline double deform_step(DeformState& state, double force_mn, double dt_s,
                          const NeedlePreset& preset) {
  if (!std::isfinite(force_mn) || !std::isfinite(dt_s))
    throw InvalidArgument("deform_step: non-finite force or dt");
  if (!(dt_s > 0)) throw InvalidArgument("deform_step: dt must be > 0");
  if (force_mn < 0 || force_mn > preset.f_max)
    throw InvalidArgument("deform_step: force " + std::to_string(force_mn) +
                          " mN outside [0, " + std::to_string(preset.f_max) + "]");
  const double r = preset.c / dt_s;
  const double q = r * state.delta_um + force_mn;
  const double a = preset.k0 + r;
  double next;
  if (preset.alpha > 0) {
    const double ka = preset.k0 * preset.alpha;
    next = 2.0 * q / (a + std::sqrt(a * a + 4.0 * ka * q));
  } else {
    next = q / a;
  }
  next = std::clamp(next, 0.0, preset.layer_thickness_um);
  state.delta_um = next;
  state.t_last += dt_s;
  return next;
}

// ---------------------------------------------------------------------------
// A-scan rendering
// ---------------------------------------------------------------------------

// Renders one depth scan: a fixed Gaussian peak at the epoxy upper surface,
// a moving peak at the tip lower surface, multiplicative log-normal speckle
// on the structural signal, an additive noise floor everywhere, and no
// structure beyond the tip surface (infrared light does not penetrate the
// metal tip). Deterministic in (deformation, optics, seed).
inline AScan render_ascan(double deformation_px, const OpticalParams& optics, std::uint64_t seed,
                          double t = 0) {
  optics.validate();
  if (!std::isfinite(deformation_px) || deformation_px < 0 ||
      deformation_px > optics.max_deformation_px())
    throw InvalidArgument("render_ascan: deformation " + std::to_string(deformation_px) +
                          " px outside [0, " + std::to_string(optics.max_deformation_px()) + "]");
  const double tip_pos = optics.tip_base_idx - deformation_px;
  const double w = optics.peak_width_px;
  const double support = 4.0 * w;           // beyond this a peak contributes exactly 0
  const double cutoff = tip_pos + 3.0 * w;  // structural support ends just past the tip surface

  AScan out;
  out.t = t;
  out.depth.resize(static_cast<std::size_t>(optics.depth_px));
  std::vector<double> structural(out.depth.size(), 0.0);
  auto add_peak = [&](double center) {
    const int lo = std::max(0, static_cast<int>(std::ceil(center - support)));
    const int hi = std::min(optics.depth_px - 1, static_cast<int>(std::floor(center + support)));
    for (int i = lo; i <= hi; ++i) {
      const double u = (static_cast<double>(i) - center) / w;
      structural[static_cast<std::size_t>(i)] += optics.peak_amp * std::exp(-0.5 * u * u);
    }
  };
  add_peak(optics.epoxy_top_idx);
  add_peak(tip_pos);
  for (int i = 0; i < optics.depth_px; ++i)
    if (static_cast<double>(i) > cutoff) structural[static_cast<std::size_t>(i)] = 0.0;

  Rng rng(seed);
  if (optics.speckle_sigma > 0) {
    const double s = optics.speckle_sigma;
    for (auto& v : structural)
      if (v != 0.0) v *= std::exp(s * rng.normal() - 0.5 * s * s);
  }
  for (int i = 0; i < optics.depth_px; ++i) {
    double v = structural[static_cast<std::size_t>(i)];
    if (optics.noise_floor > 0) v += optics.noise_floor * rng.normal();
    out.depth[static_cast<std::size_t>(i)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Force trajectories
// ---------------------------------------------------------------------------

namespace detail {

// Piecewise-linear trajectory with a walking cursor for monotone queries.
struct PiecewiseLinear {
  std::vector<double> t;
  std::vector<double> f;

  double eval(double tq, std::size_t& cursor) const {
    while (cursor + 2 < t.size() && t[cursor + 1] <= tq) ++cursor;
    const double t0 = t[cursor], t1 = t[cursor + 1];
    const double u = t1 > t0 ? std::clamp((tq - t0) / (t1 - t0), 0.0, 1.0) : 0.0;
    return f[cursor] + u * (f[cursor + 1] - f[cursor]);
  }
};

// Random piecewise ramps: targets uniform in [0, f_max], ramp durations
// uniform in [50 ms, 1 s], one segment in ten holds the current force.
inline PiecewiseLinear calibration_ramps(const NeedlePreset& preset, double duration_s, Rng& rng) {
  PiecewiseLinear pl;
  pl.t.push_back(0.0);
  pl.f.push_back(0.0);
  double t = 0, f = 0;
  while (t <= duration_s + 1.0) {
    const bool hold = rng.uniform() < 0.1;
    const double seg = rng.uniform(0.05, 1.0);
    if (!hold) f = rng.uniform(0.0, preset.f_max);
    t += seg;
    pl.t.push_back(t);
    pl.f.push_back(f);
  }
  return pl;
}

}  // namespace detail

struct CalibrationResult {
  OctStream oct;
  ForceStream force;
};

// Desk-scale stand-in for driving the needle against a metal plate: the
// commanded force deforms the epoxy layer through the Kelvin-Voigt dynamics,
// A-scans image the deformation at 5500 Hz, and the base sensor samples the
// same force at 500 Hz. The two streams share one clock with independent
// phase offsets.
inline CalibrationResult simulate_calibration(const NeedlePreset& preset,
                                              const OpticalParams& optics, double duration_s,
                                              std::uint64_t seed) {
  preset.validate();
  optics.validate();
  if (!(duration_s > 0)) throw InvalidArgument("simulate_calibration: duration must be > 0");

  Rng ramp_rng(derive_seed(seed, kStreamRamp));
  const detail::PiecewiseLinear ramps = detail::calibration_ramps(preset, duration_s, ramp_rng);

  Rng phase_rng(derive_seed(seed, kStreamPhases));
  const double scan_period = 1.0 / kAScanRateHz;
  const double force_period = 1.0 / kForceRateHz;
  const double phase_a = (1.0 - phase_rng.uniform()) * scan_period;   // (0, period]
  const double phase_f = (1.0 - phase_rng.uniform()) * force_period;  // (0, period]

  CalibrationResult res;
  const std::uint64_t scan_noise_master = derive_seed(seed, kStreamScanNoise);

  res.force.reserve(static_cast<std::size_t>(duration_s * kForceRateHz) + 2);
  std::size_t cur_f = 0;
  for (std::size_t n = 0;; ++n) {
    const double t = phase_f + static_cast<double>(n) * force_period;
    if (t >= duration_s) break;
    res.force.push_back(ForceSample{t, ramps.eval(t, cur_f)});
  }

  res.oct.reserve(static_cast<std::size_t>(duration_s * kAScanRateHz) + 2);
  DeformState state;
  std::size_t cur_a = 0;
  double t_prev = 0.0;
  for (std::size_t m = 0;; ++m) {
    const double t = phase_a + static_cast<double>(m) * scan_period;
    if (t >= duration_s) break;
    const double force = ramps.eval(t, cur_a);
    deform_step(state, force, t - t_prev, preset);
    t_prev = t;
    const double d_px = state.delta_um * optics.px_per_um;
    res.oct.push_back(render_ascan(d_px, optics, derive_seed(scan_noise_master, m), t));
  }
  return res;
}

struct InsertionResult {
  OctStream oct;
  ForceStream base_force;  // what the sensor at the needle base reads
  ForceStream tip_truth;   // the frictionless tip force
};

namespace detail {

// Per-segment tip-force law: linear loading from the entry force at the
// tissue stiffness, one instantaneous drop when the rupture force is hit.
struct SegmentPlan {
  double d0;  // depth where segment starts, mm
  double d1;
  double f_entry;
  double stiffness;
  double rupture_depth;  // +inf when no rupture fires
  double post;           // force right after the rupture
};

inline std::vector<SegmentPlan> plan_segments(const InsertionProfile& profile) {
  std::vector<SegmentPlan> plans;
  double d = 0, f = 0;
  for (const auto& seg : profile.segments) {
    SegmentPlan p;
    p.d0 = d;
    p.d1 = d + seg.length_mm;
    p.f_entry = f;
    p.stiffness = seg.stiffness_mn_per_mm;
    p.rupture_depth = std::numeric_limits<double>::infinity();
    p.post = 0;
    if (seg.rupture_force_mn && p.stiffness > 0 && *seg.rupture_force_mn > f) {
      const double dr = p.d0 + (*seg.rupture_force_mn - f) / p.stiffness;
      if (dr < p.d1) {
        p.rupture_depth = dr;
        p.post = kPostRuptureFraction * *seg.rupture_force_mn;
      }
    }
    const double end_force = p.rupture_depth < p.d1
                                 ? p.post + p.stiffness * (p.d1 - p.rupture_depth)
                                 : p.f_entry + p.stiffness * (p.d1 - p.d0);
    f = end_force;
    d = p.d1;
    plans.push_back(p);
  }
  return plans;
}

inline double tip_force_at(const std::vector<SegmentPlan>& plans, double depth_mm) {
  const SegmentPlan* p = &plans.back();
  for (const auto& cand : plans)
    if (depth_mm < cand.d1) {
      p = &cand;
      break;
    }
  if (depth_mm >= p->rupture_depth) return p->post + p->stiffness * (depth_mm - p->rupture_depth);
  return p->f_entry + p->stiffness * (depth_mm - p->d0);
}

inline double max_tip_force(const std::vector<SegmentPlan>& plans) {
  double m = 0;
  for (const auto& p : plans) {
    if (p.rupture_depth < p.d1) {
      m = std::max(m, p.f_entry + p.stiffness * (p.rupture_depth - p.d0));
      m = std::max(m, p.post + p.stiffness * (p.d1 - p.rupture_depth));
    } else {
      m = std::max(m, p.f_entry + p.stiffness * (p.d1 - p.d0));
    }
  }
  return m;
}

}  // namespace detail

// Constant-velocity insertion. The epoxy layer sees the tip force only; the
// base sensor additionally sees shaft friction proportional to the inserted
// depth unless the shielding tube decouples it, in which case only a small
// residual remains (zero when the noise model is disabled).
inline InsertionResult simulate_insertion(const NeedlePreset& preset, const OpticalParams& optics,
                                          const InsertionProfile& profile, bool shielded,
                                          std::uint64_t seed) {
  preset.validate();
  optics.validate();
  profile.validate();
  const auto plans = detail::plan_segments(profile);
  const double peak = detail::max_tip_force(plans);
  if (peak > preset.f_max)
    throw InvalidArgument("simulate_insertion: profile peak tip force " + std::to_string(peak) +
                          " mN exceeds preset f_max " + std::to_string(preset.f_max));

  const double duration_s = profile.total_length_mm() / profile.velocity_mm_s;
  Rng phase_rng(derive_seed(seed, kStreamPhases));
  const double scan_period = 1.0 / kAScanRateHz;
  const double force_period = 1.0 / kForceRateHz;
  const double phase_a = (1.0 - phase_rng.uniform()) * scan_period;
  const double phase_f = (1.0 - phase_rng.uniform()) * force_period;

  InsertionResult res;
  Rng shield_rng(derive_seed(seed, kStreamShieldNoise));
  const double residual_sigma = optics.noise_floor > 0 ? kShieldResidualMn : 0.0;
  for (std::size_t n = 0;; ++n) {
    const double t = phase_f + static_cast<double>(n) * force_period;
    if (t >= duration_s) break;
    const double depth = profile.velocity_mm_s * t;
    const double tip = detail::tip_force_at(plans, depth);
    double base;
    if (shielded) {
      base = tip + residual_sigma * shield_rng.normal();
    } else {
      base = tip + profile.friction_per_mm * depth;
    }
    res.tip_truth.push_back(ForceSample{t, tip});
    res.base_force.push_back(ForceSample{t, base});
  }

  const std::uint64_t scan_noise_master = derive_seed(seed, kStreamScanNoise);
  DeformState state;
  double t_prev = 0.0;
  for (std::size_t m = 0;; ++m) {
    const double t = phase_a + static_cast<double>(m) * scan_period;
    if (t >= duration_s) break;
    const double tip = detail::tip_force_at(plans, profile.velocity_mm_s * t);
    deform_step(state, tip, t - t_prev, preset);
    t_prev = t;
    const double d_px = state.delta_um * optics.px_per_um;
    res.oct.push_back(render_ascan(d_px, optics, derive_seed(scan_noise_master, m), t));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Preset / profile construction
// ---------------------------------------------------------------------------

namespace detail {

// Three stiffness grades sharing one optical geometry: k0 is set so the
// steady-state deformation at f_max is 80% of the 500 um layer, alpha is a
// fixed mild stiffening, and c gives a ~20 ms relaxation time.
inline NeedlePreset make_builtin(const std::string& name, double f_max) {
  NeedlePreset p;
  p.name = name;
  p.f_max = f_max;
  p.layer_thickness_um = 500.0;
  p.alpha = 0.002;
  const double target = 0.8 * p.layer_thickness_um;
  p.k0 = f_max / (target * (1.0 + p.alpha * target));
  p.c = p.k0 * 0.020;
  return p;
}

inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace detail

inline NeedlePreset NeedlePreset::by_name(const std::string& name) {
  if (name == "needle1") return detail::make_builtin(name, 379.0);
  if (name == "needle2") return detail::make_builtin(name, 974.0);
  if (name == "needle3") return detail::make_builtin(name, 3202.0);
  throw InvalidArgument("unknown preset '" + name + "' (builtin: needle1, needle2, needle3)");
}

inline NeedlePreset NeedlePreset::from_file(const std::string& path) {
  auto kv = detail::parse_kv_file(path);
  NeedlePreset p;
  auto take = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(path + ": missing preset key '" + key + "'");
    const double v = std::stod(it->second);
    kv.erase(it);
    return v;
  };
  auto it = kv.find("name");
  p.name = it != kv.end() ? it->second : path;
  if (it != kv.end()) kv.erase(it);
  p.k0 = take("k0");
  p.alpha = take("alpha");
  p.c = take("c");
  p.f_max = take("f_max");
  p.layer_thickness_um = take("layer_thickness_um");
  if (!kv.empty()) throw DataError(path + ": unknown preset key '" + kv.begin()->first + "'");
  p.validate();
  return p;
}

inline InsertionProfile InsertionProfile::demo() {
  InsertionProfile p;
  p.velocity_mm_s = 5.0;
  p.friction_per_mm = 8.0;
  p.segments = {
      TissueSegment{10.0, 30.0, 280.0},
      TissueSegment{15.0, 25.0, 420.0},
      TissueSegment{15.0, 12.0, std::nullopt},
  };
  return p;
}

inline InsertionProfile InsertionProfile::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  InsertionProfile p;
  p.segments.clear();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    const auto eq = key.find('=');
    std::string value;
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
      std::string rest;
      if (ls >> rest) value += rest;
    } else if (!(ls >> value)) {
      throw DataError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    if (key == "velocity_mm_s") {
      p.velocity_mm_s = std::stod(value);
    } else if (key == "friction_per_mm") {
      p.friction_per_mm = std::stod(value);
    } else if (key == "segment") {
      std::istringstream vs(value);
      std::string a, b, c;
      if (!std::getline(vs, a, ',') || !std::getline(vs, b, ',') || !std::getline(vs, c))
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": segment needs length_mm,stiffness,rupture|none");
      TissueSegment seg;
      seg.length_mm = std::stod(a);
      seg.stiffness_mn_per_mm = std::stod(b);
      if (c != "none") seg.rupture_force_mn = std::stod(c);
      p.segments.push_back(seg);
    } else {
      throw DataError(path + ":" + std::to_string(lineno) + ": unknown profile key '" + key + "'");
    }
  }
  p.validate();
  return p;
}

}  // namespace octforce::sim
