#include "qkd/sync.hpp"

#include <fftw3.h>

#include <bit>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace qkd::sync {

using link::DetectionEvent;
using link::DetectorId;

namespace {

int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b, r = a % b;
  return r != 0 && ((r < 0) != (b < 0)) ? q - 1 : q;
}

int64_t floor_mod(int64_t a, int64_t b) { return a - floor_div(a, b) * b; }

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  return v[mid];
}

// Acklam's inverse normal CDF approximation; plenty for the trim correction.
double inv_norm_cdf(double p) {
  static const double a[] = {-39.69683028665376, 220.9460984245205,
                             -275.9285104469687, 138.3577518672690,
                             -30.66479806614716, 2.506628277459239};
  static const double b[] = {-54.47609879822406, 161.5858368580409,
                             -155.6989798598866, 66.80131188771972,
                             -13.28068155288572};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838, -2.549732539343734,
                             4.374664141464968, 2.938163982698783};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996, 3.754408661907416};
  const double plow = 0.02425;
  if (p <= 0.0 || p >= 1.0) return std::numeric_limits<double>::quiet_NaN();
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double q = p - 0.5, r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// RMS of the kept fraction of a Gaussian underestimates sigma; divide it out.
double trim_consistency(double trim_fraction) {
  double h = 1.0 - trim_fraction;
  if (h >= 1.0) return 1.0;
  double q = inv_norm_cdf((1.0 + h) / 2.0);
  double phi = std::exp(-0.5 * q * q) / std::sqrt(2.0 * M_PI);
  double c2 = 1.0 - 2.0 * q * phi / h;
  return std::sqrt(std::max(c2, 1e-6));
}

struct RealFft {
  explicit RealFft(size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  size_t n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

// Cross-correlator against a fixed code: c(lag) = sum_b x[b] code[(b+lag)%L].
class Correlator {
 public:
  explicit Correlator(std::span<const double> code) : n_(code.size()) {
    size_t nc = n_ / 2 + 1;
    buf_ = fftw_alloc_real(n_);
    spec_ = fftw_alloc_complex(nc);
    code_spec_ = fftw_alloc_complex(nc);
    fwd_ = fftw_plan_dft_r2c_1d(static_cast<int>(n_), buf_, spec_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(static_cast<int>(n_), spec_, buf_, FFTW_ESTIMATE);
    std::copy(code.begin(), code.end(), buf_);
    fftw_execute_dft_r2c(fwd_, buf_, code_spec_);
  }
  ~Correlator() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(buf_);
    fftw_free(spec_);
    fftw_free(code_spec_);
  }
  Correlator(const Correlator&) = delete;
  Correlator& operator=(const Correlator&) = delete;

  // Inputs and outputs are integer-valued; round away FFT noise.
  void correlate(std::span<const double> x, std::vector<double>& out) {
    std::copy(x.begin(), x.end(), buf_);
    fftw_execute_dft_r2c(fwd_, buf_, spec_);
    size_t nc = n_ / 2 + 1;
    for (size_t k = 0; k < nc; ++k) {
      double re = spec_[k][0], im = spec_[k][1];
      double cre = code_spec_[k][0], cim = code_spec_[k][1];
      // conj(X) * K
      spec_[k][0] = re * cre + im * cim;
      spec_[k][1] = re * cim - im * cre;
    }
    fftw_execute_dft_c2r(inv_, spec_, buf_);
    out.resize(n_);
    double scale = 1.0 / static_cast<double>(n_);
    for (size_t i = 0; i < n_; ++i) out[i] = std::round(buf_[i] * scale);
  }

 private:
  size_t n_;
  double* buf_;
  fftw_complex* spec_;
  fftw_complex* code_spec_;
  fftw_plan fwd_, inv_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Code configuration

void SyncCodeConfig::validate() const {
  if (code_length < 1) throw std::invalid_argument("code_length must be >= 1");
  if (random_bits_per_code_bit < 0)
    throw std::invalid_argument("random_bits_per_code_bit must be >= 0");
  if (static_cast<int64_t>(code.size()) != code_length)
    throw std::invalid_argument("code size does not match code_length");
  for (int8_t c : code)
    if (c != 1 && c != -1)
      throw std::invalid_argument("code entries must be +1 or -1");
}

double SyncCodeConfig::max_off_peak_autocorrelation() const {
  std::vector<double> x(code.begin(), code.end());
  Correlator corr(x);
  std::vector<double> c;
  corr.correlate(x, c);
  double worst = 0.0;
  for (size_t i = 1; i < c.size(); ++i) worst = std::max(worst, std::abs(c[i]));
  return worst;
}

SyncCodeConfig SyncCodeConfig::random_code(int64_t length,
                                           int random_bits_per_code_bit,
                                           uint64_t seed) {
  if (length < 1) throw std::invalid_argument("code_length must be >= 1");
  SyncCodeConfig cfg;
  cfg.code_length = length;
  cfg.random_bits_per_code_bit = random_bits_per_code_bit;
  double bound = 5.0 * std::sqrt(static_cast<double>(length));
  for (int attempt = 0; attempt < 32; ++attempt) {
    CounterRng rng(substream(seed, static_cast<uint64_t>(attempt)));
    cfg.code.resize(static_cast<size_t>(length));
    for (auto& c : cfg.code) c = (rng.next() & 1) ? int8_t{1} : int8_t{-1};
    if (length < 4 || cfg.max_off_peak_autocorrelation() <= bound) return cfg;
  }
  throw std::runtime_error("failed to draw a code meeting the sidelobe bound");
}

SyncCodeConfig SyncCodeConfig::mls_code(int order, int random_bits_per_code_bit) {
  // Primitive polynomial tap masks (bit i set = feedback from stage i+1).
  static const std::pair<int, uint32_t> taps[] = {
      {3, 0b110},          {4, 0b1100},         {5, 0b10100},
      {6, 0b110000},       {7, 0b1100000},      {8, 0b10111000},
      {9, 0b100010000},    {10, 0b1001000000},  {11, 0b10100000000},
      {12, 0b111000001000}, {15, 0b110000000000000},
      {16, 0b1101000000001000},
  };
  uint32_t mask = 0;
  for (auto [o, m] : taps)
    if (o == order) mask = m;
  if (mask == 0) throw std::invalid_argument("unsupported m-sequence order");
  SyncCodeConfig cfg;
  cfg.code_length = (int64_t{1} << order) - 1;
  cfg.random_bits_per_code_bit = random_bits_per_code_bit;
  cfg.code.reserve(static_cast<size_t>(cfg.code_length));
  const uint32_t state_mask = (uint32_t{1} << order) - 1;
  uint32_t state = 1;
  for (int64_t i = 0; i < cfg.code_length; ++i) {
    cfg.code.push_back((state & 1) ? int8_t{1} : int8_t{-1});
    uint32_t fb = std::popcount(state & mask) & 1u;
    state = ((state << 1) | fb) & state_mask;
  }
  return cfg;
}

const char* to_string(SyncStatus status) {
  switch (status) {
    case SyncStatus::locked: return "locked";
    case SyncStatus::no_lock: return "no_lock";
    case SyncStatus::ambiguous: return "ambiguous";
    case SyncStatus::failed: return "failed";
    case SyncStatus::insufficient: return "insufficient";
  }
  return "unknown";
}

std::string SyncSolution::to_json() const {
  nlohmann::ordered_json j;
  j["status"] = to_string(status);
  j["tau_b_s"] = tau_b_s;
  j["offset_slots"] = offset_slots;
  j["t0_estimate_s"] = t0_estimate_s;
  j["correlation_peak"] = correlation_peak;
  j["correlation_noise_sigma"] = correlation_noise_sigma;
  j["residual_sigma_s"] = residual_sigma_s;
  j["frames_used"] = frames_used;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Stage 1: FFT period estimate

PeriodEstimate recover_period_fft(std::span<const DetectionEvent> events,
                                  const SyncOptions& opts) {
  PeriodEstimate est;
  if (events.size() < static_cast<size_t>(opts.min_events)) return est;

  const double dt = opts.nominal_period_s / 4.0;
  const size_t ns = static_cast<size_t>(opts.fft_samples);
  const double window_span = dt * static_cast<double>(ns);
  const double t_first = events.front().time_s(opts.resolution_s);

  RealFft fft(ns);
  std::vector<double> avg(ns / 2 + 1, 0.0);
  size_t idx = 0;
  int used = 0;
  for (int w = 0; w < opts.fft_windows && idx < events.size(); ++w) {
    std::fill(fft.in_, fft.in_ + ns, 0.0);
    const double t_lo = t_first + window_span * w;
    const double t_hi = t_lo + window_span;
    size_t in_window = 0;
    while (idx < events.size()) {
      double t = events[idx].time_s(opts.resolution_s);
      if (t >= t_hi) break;
      if (t >= t_lo) {
        size_t bin = static_cast<size_t>((t - t_lo) / dt);
        if (bin < ns) {
          fft.in_[bin] += 1.0;
          ++in_window;
        }
      }
      ++idx;
    }
    if (in_window == 0) continue;
    fftw_execute(fft.plan_);
    for (size_t k = 0; k < avg.size(); ++k)
      avg[k] += std::hypot(fft.out_[k][0], fft.out_[k][1]);
    ++used;
  }
  if (used == 0) return est;
  est.windows_used = used;

  // The pulse rate sits at fs/4; search a narrow band around it.
  const size_t k_nom = ns / 4;
  const size_t half = std::max<size_t>(
      4, static_cast<size_t>(static_cast<double>(k_nom) * opts.fft_search_halfwidth));
  const size_t k_lo = k_nom > half ? k_nom - half : 1;
  const size_t k_hi = std::min(k_nom + half, ns / 2 - 1);

  size_t k_peak = k_lo;
  for (size_t k = k_lo; k <= k_hi; ++k)
    if (avg[k] > avg[k_peak]) k_peak = k;

  std::vector<double> noise;
  noise.reserve(k_hi - k_lo + 1);
  for (size_t k = k_lo; k <= k_hi; ++k) {
    if (k + 3 >= k_peak && k <= k_peak + 3) continue;
    noise.push_back(avg[k]);
  }
  double med = median_of(noise);
  std::vector<double> dev;
  dev.reserve(noise.size());
  for (double v : noise) dev.push_back(std::abs(v - med));
  double sigma = 1.4826 * median_of(dev) + 1e-12;
  est.peak_to_noise = (avg[k_peak] - med) / sigma;
  if (est.peak_to_noise < opts.fft_peak_threshold) {
    est.status = SyncStatus::no_lock;
    return est;
  }

  // Quadratic interpolation over the three bins around the peak.
  double alpha = avg[k_peak - 1], beta = avg[k_peak], gamma = avg[k_peak + 1];
  double denom = alpha - 2.0 * beta + gamma;
  double shift = denom != 0.0 ? 0.5 * (alpha - gamma) / denom : 0.0;
  shift = std::clamp(shift, -0.5, 0.5);
  double fs = 4.0 / opts.nominal_period_s;
  double f = (static_cast<double>(k_peak) + shift) * fs / static_cast<double>(ns);
  est.tau0_s = 1.0 / f;
  est.status = SyncStatus::locked;
  return est;
}

// ---------------------------------------------------------------------------
// Stage 2: least-trimmed-squares refinement
//
// Window growth keeps slot prediction errors far below half a period: start
// from a short chained window, fit, then extend assignments from the fitted
// grid. Chaining is only ever used inside the initial window; every later
// assignment is round((t - anchor)/tau) from the current fit, so isolated
// dark counts cannot shift the grid.

namespace {

struct FitAccum {
  double tau = 0, anchor = 0;
  bool ok = false;
};

FitAccum fit_line(const std::vector<double>& t, const std::vector<int64_t>& n,
                  const std::vector<uint8_t>& use, size_t limit) {
  double sum_n = 0, sum_t = 0;
  size_t cnt = 0;
  for (size_t i = 0; i < limit; ++i) {
    if (!use[i]) continue;
    sum_n += static_cast<double>(n[i]);
    sum_t += t[i];
    ++cnt;
  }
  FitAccum f;
  if (cnt < 2) return f;
  double mean_n = sum_n / static_cast<double>(cnt);
  double mean_t = sum_t / static_cast<double>(cnt);
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < limit; ++i) {
    if (!use[i]) continue;
    double dn = static_cast<double>(n[i]) - mean_n;
    sxx += dn * dn;
    sxy += dn * (t[i] - mean_t);
  }
  if (sxx <= 0.0) return f;
  f.tau = sxy / sxx;
  f.anchor = mean_t - f.tau * mean_n;
  f.ok = f.tau > 0.0;
  return f;
}

}  // namespace

PeriodFit refine_period_lts(std::span<const DetectionEvent> events,
                            double tau0_s, const SyncOptions& opts) {
  PeriodFit fit;
  size_t n_total = std::min(events.size(), opts.max_fit_events);
  if (n_total < 8 || tau0_s <= 0.0) return fit;

  std::vector<double> t(n_total);
  for (size_t i = 0; i < n_total; ++i)
    t[i] = events[i].time_s(opts.resolution_s);
  if (opts.max_fit_span_s > 0.0) {
    double limit = t.front() + opts.max_fit_span_s;
    size_t keep = n_total;
    while (keep > 0 && t[keep - 1] > limit) --keep;
    if (keep < 8) return fit;
    n_total = keep;
    t.resize(n_total);
  }

  std::vector<int64_t> slots(n_total, 0);
  std::vector<uint8_t> inlier(n_total, 1);

  size_t window = std::min<size_t>(n_total, 256);
  for (size_t i = 1; i < window; ++i)
    slots[i] = slots[i - 1] +
               static_cast<int64_t>(std::llround((t[i] - t[i - 1]) / tau0_s));

  double tau = tau0_s, anchor = t[0];
  std::vector<double> absres;
  int iterations = 0;
  while (true) {
    bool stable = false;
    for (int it = 0; it < opts.max_iterations && !stable; ++it) {
      ++iterations;
      FitAccum f = fit_line(t, slots, inlier, window);
      if (!f.ok) {
        fit.status = SyncStatus::no_lock;
        return fit;
      }
      tau = f.tau;
      anchor = f.anchor;

      absres.clear();
      absres.reserve(window);
      for (size_t i = 0; i < window; ++i)
        absres.push_back(std::abs(t[i] - (anchor + static_cast<double>(slots[i]) * tau)));
      size_t keep = std::max<size_t>(
          4, static_cast<size_t>(std::ceil((1.0 - opts.trim_fraction) *
                                           static_cast<double>(window))));
      keep = std::min(keep, window);
      std::vector<double> sorted = absres;
      std::nth_element(sorted.begin(), sorted.begin() + (keep - 1), sorted.end());
      double cut = sorted[keep - 1];

      // Convergence is judged on the slot assignments alone: the trimmed set
      // may chatter between near-tied residuals without affecting the grid.
      stable = it > 0;
      for (size_t i = 0; i < window; ++i) {
        inlier[i] = absres[i] <= cut ? 1 : 0;
        int64_t s = static_cast<int64_t>(std::llround((t[i] - anchor) / tau));
        if (s != slots[i]) {
          slots[i] = s;
          stable = false;
        }
      }
    }
    if (!stable) {
      fit.status = SyncStatus::no_lock;
      return fit;
    }
    if (window == n_total) break;
    size_t grown = std::min(n_total, window * 8);
    for (size_t i = window; i < grown; ++i) {
      slots[i] = static_cast<int64_t>(std::llround((t[i] - anchor) / tau));
      inlier[i] = 1;
    }
    window = grown;
  }

  // Grid-consistency gate: a converged fit whose inliers sit far off the
  // grid is a mis-lock, not a lock.
  double ss = 0.0;
  size_t cnt = 0;
  for (size_t i = 0; i < n_total; ++i) {
    if (!inlier[i]) continue;
    double r = t[i] - (anchor + static_cast<double>(slots[i]) * tau);
    if (std::abs(r) > 0.25 * tau) {
      fit.status = SyncStatus::no_lock;
      return fit;
    }
    ss += r * r;
    ++cnt;
  }
  if (cnt < 4) {
    fit.status = SyncStatus::no_lock;
    return fit;
  }

  fit.status = SyncStatus::locked;
  fit.tau_s = tau;
  fit.anchor_s = anchor;
  fit.residual_sigma_s =
      std::sqrt(ss / static_cast<double>(cnt)) / trim_consistency(opts.trim_fraction);
  fit.iterations = iterations;
  fit.slots = std::move(slots);
  fit.inlier = std::move(inlier);
  return fit;
}

// ---------------------------------------------------------------------------
// Stage 3: offset recovery

std::vector<double> circular_cross_correlation(std::span<const double> x,
                                               std::span<const double> y) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument("correlation inputs must match in size");
  Correlator corr(y);
  std::vector<double> out;
  corr.correlate(x, out);
  return out;
}

SyncSolution recover_offset(std::span<const DetectionEvent> events,
                            const PeriodFit& fit, const SyncCodeConfig& code,
                            const SyncOptions& opts) {
  SyncSolution sol;
  sol.residual_sigma_s = fit.residual_sigma_s;
  if (fit.status != SyncStatus::locked) {
    sol.status = fit.status;
    return sol;
  }
  code.validate();
  const int64_t L = code.code_length;
  const int64_t P = code.random_bits_per_code_bit + 1;
  const int64_t nf = code.frame_length();
  sol.tau_b_s = fit.tau_s;

  // Per-event relative slots from the fitted grid (covers events beyond the
  // fit cap as well).
  const size_t n = events.size();
  std::vector<int64_t> slot(n);
  std::vector<uint8_t> on_grid(n);
  int64_t max_slot = std::numeric_limits<int64_t>::min();
  for (size_t i = 0; i < n; ++i) {
    double t = events[i].time_s(opts.resolution_s);
    slot[i] = static_cast<int64_t>(std::llround((t - fit.anchor_s) / fit.tau_s));
    double res = t - (fit.anchor_s + static_cast<double>(slot[i]) * fit.tau_s);
    on_grid[i] = std::abs(res) <= 0.25 * fit.tau_s ? 1 : 0;
    max_slot = std::max(max_slot, slot[i]);
  }
  int64_t min_slot = *std::min_element(slot.begin(), slot.end());
  int64_t frames_avail =
      floor_div(max_slot - min_slot, nf) + 1;
  if (frames_avail < 1) {
    sol.status = SyncStatus::insufficient;
    return sol;
  }
  frames_avail = std::min<int64_t>(frames_avail, opts.max_frames);

  // Single-click slot values: +1 / -1 for a lone Z detection, 0 otherwise.
  // Events are time-ordered, so equal slots are adjacent.
  struct Instance {
    int64_t slot;
    int8_t value;
  };
  std::vector<Instance> instances;
  instances.reserve(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i + 1;
    while (j < n && slot[j] == slot[i]) ++j;
    if (j - i == 1) {
      int8_t v = 0;
      if (events[i].detector == DetectorId::Z0) v = 1;
      else if (events[i].detector == DetectorId::Z1) v = -1;
      if (v != 0) instances.push_back({slot[i], v});
    }
    i = j;
  }

  std::vector<double> folded(static_cast<size_t>(nf), 0.0);
  std::vector<double> code_d(code.code.begin(), code.code.end());
  Correlator corr(code_d);
  std::vector<double> row(static_cast<size_t>(L));
  std::vector<double> c;

  // Candidate offsets must reproduce the code on the sync-slot instances they
  // imply. A false correlation peak (the extreme-value tail over P*L bins at
  // low signal) gives ~50% agreement and is rejected here.
  auto verify = [&](int64_t delta_mod) {
    int64_t matches = 0, total = 0;
    for (const Instance& ins : instances) {
      int64_t abs_slot = ins.slot + delta_mod;
      if (floor_mod(abs_slot, P) != 0) continue;
      int64_t cp = floor_mod(floor_div(abs_slot, P), L);
      ++total;
      if ((ins.value > 0) == (code.code[static_cast<size_t>(cp)] > 0)) ++matches;
    }
    if (total < 10) return false;
    return static_cast<double>(matches) >=
           0.5 * static_cast<double>(total) +
               3.0 * std::sqrt(0.25 * static_cast<double>(total)) &&
           static_cast<double>(matches) >= 0.7 * static_cast<double>(total);
  };

  // Accumulate whole frames (relative to min_slot's frame) one at a time and
  // re-test significance after each. Ambiguity or failed verification are not
  // terminal while frames remain.
  int64_t frame_base = floor_div(min_slot, nf);
  double best_peak = 0, best_noise = 0;
  int64_t best_row = -1, best_lag = -1;
  bool locked = false, ambiguous = false;
  int frames_used = 0;

  for (int64_t f = 0; f < frames_avail && !locked; ++f) {
    int64_t lo = (frame_base + f) * nf, hi = lo + nf;
    for (const Instance& ins : instances) {
      if (ins.slot >= lo && ins.slot < hi)
        folded[static_cast<size_t>(floor_mod(ins.slot, nf))] += ins.value;
    }
    frames_used = static_cast<int>(f + 1);
    ambiguous = false;

    // Reshape into (M+1) x L rows and correlate each against the code.
    double peak = -std::numeric_limits<double>::infinity();
    int64_t peak_row = -1, peak_lag = -1;
    std::vector<double> all_values;
    all_values.reserve(static_cast<size_t>(P) * static_cast<size_t>(L));
    std::vector<std::vector<double>> row_corr(static_cast<size_t>(P));
    for (int64_t r = 0; r < P; ++r) {
      for (int64_t b = 0; b < L; ++b)
        row[static_cast<size_t>(b)] = folded[static_cast<size_t>(b * P + r)];
      corr.correlate(row, c);
      row_corr[static_cast<size_t>(r)] = c;
      for (int64_t lag = 0; lag < L; ++lag) {
        double v = c[static_cast<size_t>(lag)];
        all_values.push_back(v);
        if (v > peak) {
          peak = v;
          peak_row = r;
          peak_lag = lag;
        }
      }
    }
    double med = median_of(all_values);
    std::vector<double> dev;
    dev.reserve(all_values.size());
    for (double v : all_values) dev.push_back(std::abs(v - med));
    double noise = 1.4826 * median_of(dev) + 1e-9;
    double peak_net = peak - med;
    if (peak_net < opts.correlation_threshold * noise) continue;

    // Second significant peak within 3 dB (power) marks the test ambiguous.
    double second = -std::numeric_limits<double>::infinity();
    for (int64_t r = 0; r < P; ++r) {
      const auto& rc = row_corr[static_cast<size_t>(r)];
      for (int64_t lag = 0; lag < L; ++lag) {
        if (r == peak_row && std::abs(lag - peak_lag) <= 1) continue;
        second = std::max(second, rc[static_cast<size_t>(lag)]);
      }
    }
    double second_net = second - med;
    if (second_net >= opts.correlation_threshold * noise &&
        2.0 * second_net * second_net >= peak_net * peak_net) {
      ambiguous = true;
      best_peak = peak_net;
      best_noise = noise;
      continue;
    }
    if (!verify(floor_mod(P * peak_lag - peak_row, nf))) continue;
    locked = true;
    best_peak = peak_net;
    best_noise = noise;
    best_row = peak_row;
    best_lag = peak_lag;
  }

  sol.correlation_peak = best_peak;
  sol.correlation_noise_sigma = best_noise;
  sol.frames_used = frames_used;
  if (!locked) {
    sol.status = ambiguous ? SyncStatus::ambiguous : SyncStatus::failed;
    return sol;
  }

  // Winning (row, lag) fixes the offset modulo one frame.
  int64_t delta0 = floor_mod(P * best_lag - best_row, nf);

  // Lift to the absolute offset: the smallest candidate for which detections
  // before slot 0 are (near) absent. Grid-consistent events are used so dark
  // counts cannot bias the count.
  std::vector<int64_t> grid_slots;
  grid_slots.reserve(n);
  for (size_t k = 0; k < n; ++k)
    if (on_grid[k]) grid_slots.push_back(slot[k]);
  std::sort(grid_slots.begin(), grid_slots.end());
  size_t allow = std::max<size_t>(2, grid_slots.size() / 1000);

  int64_t delta = delta0;
  if (!grid_slots.empty()) {
    int64_t m_lo = floor_div(-(grid_slots.front()) - delta0, nf) - 1;
    for (int64_t m = m_lo;; ++m) {
      int64_t cand = delta0 + m * nf;
      int64_t cutoff = -cand;  // slots below this map to negative absolutes
      size_t below = static_cast<size_t>(
          std::lower_bound(grid_slots.begin(), grid_slots.end(), cutoff) -
          grid_slots.begin());
      if (below <= allow) {
        delta = cand;
        break;
      }
    }
  }

  sol.status = SyncStatus::locked;
  sol.offset_slots = slot.front() + delta;
  sol.t0_estimate_s = fit.anchor_s - static_cast<double>(delta) * fit.tau_s;
  return sol;
}

AdmissibilityResult admissibility_check(int64_t code_length, double eta,
                                        int max_frames) {
  if (code_length < 1) throw std::invalid_argument("code_length must be >= 1");
  if (!(eta > 0.0 && eta <= 1.0))
    throw std::invalid_argument("eta must lie in (0, 1]");
  double le = static_cast<double>(code_length) * eta;
  if (std::sqrt(le) >= 10.0) return {Admissibility::ok, 1};
  int k = static_cast<int>(std::ceil(100.0 / le));
  if (k > max_frames) return {Admissibility::reject, k};
  return {Admissibility::repeat, k};
}

SyncSolution acquire(std::span<const DetectionEvent> events,
                     const SyncCodeConfig& code, const SyncOptions& opts) {
  PeriodEstimate est = recover_period_fft(events, opts);
  if (est.status != SyncStatus::locked) {
    SyncSolution sol;
    sol.status = est.status;
    return sol;
  }
  PeriodFit fit = refine_period_lts(events, est.tau0_s, opts);
  return recover_offset(events, fit, code, opts);
}

}  // namespace qkd::sync
