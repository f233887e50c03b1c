#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace baqprop {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;
using CMat = Eigen::MatrixXcd;
using RMat = Eigen::MatrixXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kNormTol = 1e-9;

// Uniform grid of d points on [a,b]; basis index j holds the value a + j*dphi.
struct QuditSpec {
  int d = 7;
  double a = -3.0;
  double b = 3.0;

  static QuditSpec qubit() { return {2, 0.0, 1.0}; }

  void validate() const {
    if (d < 2) throw std::invalid_argument("QuditSpec: d must be >= 2");
    if (!(b > a) || !std::isfinite(a) || !std::isfinite(b))
      throw std::invalid_argument("QuditSpec: need finite a < b");
  }
  double spacing() const { return (b - a) / (d - 1); }
  double value(int j) const { return a + j * spacing(); }
  // (d-1)/(b-a): position units -> index units
  double conversion() const { return (d - 1) / (b - a); }
  // calibrated momentum per folded DFT index
  double momentum_scale() const { return 2.0 * kPi * (d - 1) / (d * (b - a)); }
  int nearest_index(double x) const {
    long j = std::lround((x - a) / spacing());
    if (j < 0) j = 0;
    if (j > d - 1) j = d - 1;
    return static_cast<int>(j);
  }
  bool operator==(const QuditSpec&) const = default;
};

inline std::vector<double> position_values(const QuditSpec& spec) {
  spec.validate();
  std::vector<double> v(spec.d);
  for (int j = 0; j < spec.d; ++j) v[j] = spec.value(j);
  return v;
}

enum class RegKind { qudit, qubit };

struct Register {
  std::string name;
  RegKind kind = RegKind::qudit;
  QuditSpec spec;
  // A pinned register carries one classical value and occupies a single slot.
  std::optional<double> pinned;

  int dim() const { return pinned ? 1 : spec.d; }
  double value(int j) const { return pinned ? *pinned : spec.value(j); }
};

inline Register qudit_register(std::string name, QuditSpec spec = {}) {
  spec.validate();
  return {std::move(name), RegKind::qudit, spec, std::nullopt};
}
inline Register qubit_register(std::string name) {
  return {std::move(name), RegKind::qubit, QuditSpec::qubit(), std::nullopt};
}

// Row-major register layout: the last register has stride 1.
class Layout {
 public:
  Layout() = default;
  explicit Layout(std::vector<Register> regs) : regs_(std::move(regs)) { rebuild(); }

  int add(Register r) {
    regs_.push_back(std::move(r));
    rebuild();
    return static_cast<int>(regs_.size()) - 1;
  }
  int size() const { return static_cast<int>(regs_.size()); }
  const Register& reg(int r) const { return regs_.at(static_cast<std::size_t>(r)); }
  Register& reg_mut(int r) { return regs_.at(static_cast<std::size_t>(r)); }
  std::size_t dim(int r) const { return dims_.at(static_cast<std::size_t>(r)); }
  std::size_t stride(int r) const { return strides_.at(static_cast<std::size_t>(r)); }
  std::size_t total() const { return total_; }
  int find(const std::string& name) const {
    for (int r = 0; r < size(); ++r)
      if (regs_[r].name == name) return r;
    throw std::out_of_range("Layout: no register named " + name);
  }
  void check(int r) const {
    if (r < 0 || r >= size()) throw std::out_of_range("register index out of range");
  }
  int digit(std::size_t idx, int r) const {
    return static_cast<int>((idx / strides_[r]) % dims_[r]);
  }
  std::vector<int> decompose(std::size_t idx) const {
    std::vector<int> out(regs_.size());
    for (int r = 0; r < size(); ++r) out[r] = digit(idx, r);
    return out;
  }
  std::size_t compose(const std::vector<int>& digits) const {
    std::size_t idx = 0;
    for (int r = 0; r < size(); ++r) idx += static_cast<std::size_t>(digits[r]) * strides_[r];
    return idx;
  }
  // Pins register r to one grid value; the amplitude vector shrinks accordingly.
  Layout pinned(int r, double value) const {
    Layout out = *this;
    out.regs_[r].pinned = value;
    out.rebuild();
    return out;
  }

 private:
  void rebuild() {
    dims_.assign(regs_.size(), 1);
    strides_.assign(regs_.size(), 1);
    total_ = 1;
    for (int r = size() - 1; r >= 0; --r) {
      dims_[r] = static_cast<std::size_t>(regs_[r].dim());
      strides_[r] = total_;
      total_ *= dims_[r];
    }
  }

  std::vector<Register> regs_;
  std::vector<std::size_t> dims_;
  std::vector<std::size_t> strides_;
  std::size_t total_ = 1;
};

struct WaveState {
  Layout layout;
  CVec amp;

  WaveState() = default;
  explicit WaveState(Layout l) : layout(std::move(l)), amp(layout.total(), cplx(0.0)) {
    amp[0] = 1.0;
  }
  WaveState(Layout l, CVec a) : layout(std::move(l)), amp(std::move(a)) {
    if (amp.size() != layout.total()) throw std::invalid_argument("WaveState: size mismatch");
  }

  double norm() const {
    double s = 0.0;
    for (const auto& z : amp) s += std::norm(z);
    return std::sqrt(s);
  }
  void normalize() {
    double n = norm();
    if (n == 0.0) throw std::runtime_error("WaveState: zero vector");
    for (auto& z : amp) z /= n;
  }
};

// Tensor product of per-register factors, in layout order.
inline WaveState product_state(const Layout& layout, const std::vector<CVec>& factors) {
  if (static_cast<int>(factors.size()) != layout.size())
    throw std::invalid_argument("product_state: one factor per register");
  CVec amp{cplx(1.0)};
  for (int r = 0; r < layout.size(); ++r) {
    if (factors[r].size() != layout.dim(r)) throw std::invalid_argument("product_state: factor size");
    CVec next(amp.size() * factors[r].size());
    for (std::size_t i = 0; i < amp.size(); ++i)
      for (std::size_t j = 0; j < factors[r].size(); ++j) next[i * factors[r].size() + j] = amp[i] * factors[r][j];
    amp.swap(next);
  }
  return WaveState(layout, std::move(amp));
}

inline CVec basis_vector(std::size_t d, std::size_t j) {
  CVec v(d, cplx(0.0));
  v.at(j) = 1.0;
  return v;
}

inline double fidelity(const CVec& x, const CVec& y) {
  cplx s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::conj(x[i]) * y[i];
  return std::norm(s);
}

// ---- single-register linear maps ----

template <class F>
void for_each_fiber(const Layout& layout, int r, F&& f) {
  const std::size_t stride = layout.stride(r);
  const std::size_t block = stride * layout.dim(r);
  for (std::size_t outer = 0; outer < layout.total(); outer += block)
    for (std::size_t inner = 0; inner < stride; ++inner) f(outer + inner, stride);
}

inline void apply_matrix(WaveState& s, int r, const CMat& m) {
  s.layout.check(r);
  const auto d = static_cast<Eigen::Index>(s.layout.dim(r));
  if (m.rows() != d || m.cols() != d) throw std::invalid_argument("apply_matrix: dimension");
  std::vector<cplx> in(static_cast<std::size_t>(d));
  for_each_fiber(s.layout, r, [&](std::size_t base, std::size_t stride) {
    for (Eigen::Index j = 0; j < d; ++j) in[j] = s.amp[base + j * stride];
    for (Eigen::Index i = 0; i < d; ++i) {
      cplx acc = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) acc += m(i, j) * in[j];
      s.amp[base + i * stride] = acc;
    }
  });
}

inline void apply_diagonal(WaveState& s, int r, const CVec& diag) {
  s.layout.check(r);
  if (diag.size() != s.layout.dim(r)) throw std::invalid_argument("apply_diagonal: dimension");
  const std::size_t d = diag.size();
  for_each_fiber(s.layout, r, [&](std::size_t base, std::size_t stride) {
    for (std::size_t j = 0; j < d; ++j) s.amp[base + j * stride] *= diag[j];
  });
}

// F|j> = d^{-1/2} sum_k w^{-jk}|k>, w = e^{2 pi i/d}; entry (k, j).
inline CMat dft_matrix(int d) {
  CMat f(d, d);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  for (int k = 0; k < d; ++k)
    for (int j = 0; j < d; ++j) f(k, j) = std::polar(s, -2.0 * kPi * ((static_cast<long>(j) * k) % d) / d);
  return f;
}

inline void fourier(WaveState& s, int r, bool inverse = false) {
  s.layout.check(r);
  if (s.layout.reg(r).pinned) throw std::invalid_argument("fourier: pinned register");
  CMat f = dft_matrix(static_cast<int>(s.layout.dim(r)));
  apply_matrix(s, r, inverse ? CMat(f.adjoint()) : f);
}

// ---- Delta kernel ----

inline cplx delta_kernel_sum(double gamma, int d) {
  cplx acc = 0.0;
  for (int j = 0; j < d; ++j) acc += std::polar(1.0, 2.0 * kPi * gamma * j / d);
  return acc / static_cast<double>(d);
}

inline cplx delta_kernel(double gamma, int d) {
  if (d < 2) throw std::invalid_argument("delta_kernel: d >= 2");
  const double x = gamma / d;
  const double frac = x - std::round(x);
  const cplx phase = std::polar(1.0, kPi * (d - 1) * gamma / d);
  // removable singularity at gamma = 0 mod d
  if (std::abs(frac) < 1e-12) return cplx(1.0, 0.0);
  return phase * (std::sin(kPi * gamma) / std::sin(kPi * gamma / d)) / static_cast<double>(d);
}

// Z^alpha = sum_j w^{-alpha j}|j><j| on the unfolded branch j in {0..d-1}.
inline CVec fractional_phase_diag(int d, double alpha) {
  CVec out(d);
  for (int j = 0; j < d; ++j) out[j] = std::polar(1.0, -2.0 * kPi * alpha * j / d);
  return out;
}

inline CMat fractional_shift_matrix(int d, double alpha) {
  CMat f = dft_matrix(d);
  CVec z = fractional_phase_diag(d, alpha);
  CMat zd = CMat::Zero(d, d);
  for (int k = 0; k < d; ++k) zd(k, k) = z[k];
  return f.adjoint() * zd * f;
}

inline void fractional_phase(WaveState& s, int r, double alpha) {
  apply_diagonal(s, r, fractional_phase_diag(static_cast<int>(s.layout.dim(r)), alpha));
}

inline void fractional_shift(WaveState& s, int r, double alpha) {
  apply_matrix(s, r, fractional_shift_matrix(static_cast<int>(s.layout.dim(r)), alpha));
}

// ---- momentum ----

inline int fold_index(int k, int d) { return ((k + d / 2) % d) - d / 2; }

struct MomentumReadout {
  int raw_k = 0;
  int folded_k = 0;
  double calibrated = 0.0;
};

inline MomentumReadout read_momentum(const QuditSpec& spec, int raw_k) {
  if (raw_k < 0 || raw_k >= spec.d) throw std::out_of_range("read_momentum: raw index");
  const int f = fold_index(raw_k, spec.d);
  return {raw_k, f, spec.momentum_scale() * f};
}

// F^dag diag(g(c f_k)) F for a function of the calibrated folded momentum.
template <class G>
CMat momentum_function_matrix(const QuditSpec& spec, G&& g) {
  CMat f = dft_matrix(spec.d);
  CMat diag = CMat::Zero(spec.d, spec.d);
  for (int k = 0; k < spec.d; ++k) diag(k, k) = g(read_momentum(spec, k).calibrated);
  return f.adjoint() * diag * f;
}

inline CMat momentum_matrix(const QuditSpec& spec) {
  return momentum_function_matrix(spec, [](double p) { return cplx(p, 0.0); });
}

// e^{-i alpha Pi}: band-limited translation by alpha (position units).
inline CMat translation_matrix(const QuditSpec& spec, double alpha) {
  return momentum_function_matrix(spec, [&](double p) { return std::polar(1.0, -alpha * p); });
}

// e^{-i gamma Pi^2}
inline CMat kinetic_matrix(const QuditSpec& spec, double gamma) {
  return momentum_function_matrix(spec, [&](double p) { return std::polar(1.0, -gamma * p * p); });
}

inline double expect_hermitian(const WaveState& s, int r, const CMat& m) {
  s.layout.check(r);
  const auto d = static_cast<Eigen::Index>(s.layout.dim(r));
  std::vector<cplx> in(static_cast<std::size_t>(d));
  double acc = 0.0;
  for_each_fiber(s.layout, r, [&](std::size_t base, std::size_t stride) {
    for (Eigen::Index j = 0; j < d; ++j) in[j] = s.amp[base + j * stride];
    cplx part = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      cplx row = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) row += m(i, j) * in[j];
      part += std::conj(in[i]) * row;
    }
    acc += part.real();
  });
  return acc;
}

inline std::vector<double> measure_momentum_expectation(const WaveState& s, const std::vector<int>& regs);

// Marginal distribution of register r in the computational basis.
inline std::vector<double> marginal(const WaveState& s, int r) {
  s.layout.check(r);
  std::vector<double> p(s.layout.dim(r), 0.0);
  for_each_fiber(s.layout, r, [&](std::size_t base, std::size_t stride) {
    for (std::size_t j = 0; j < p.size(); ++j) p[j] += std::norm(s.amp[base + j * stride]);
  });
  return p;
}

// Momentum distribution of register r indexed by raw DFT index k.
inline std::vector<double> momentum_marginal(const WaveState& s, int r) {
  WaveState t = s;
  fourier(t, r);
  return marginal(t, r);
}

// Fires when >= 5% of the momentum mass sits on the two extreme folded bins.
inline bool momentum_overflow(const WaveState& s, int r, double threshold = 0.05) {
  const auto p = momentum_marginal(s, r);
  const int d = static_cast<int>(p.size());
  const int lo = -(d / 2);
  const int hi = (d % 2 == 1) ? d / 2 : d / 2 - 1;
  double mass = 0.0;
  for (int k = 0; k < d; ++k) {
    int f = fold_index(k, d);
    if (f == lo || f == hi) mass += p[k];
  }
  return mass >= threshold;
}

// Shot mode: sample every listed register's momentum jointly, return sample means.
template <class Rng>
std::vector<double> sample_momentum_mean(const WaveState& s, const std::vector<int>& regs, long shots, Rng& rng) {
  if (shots <= 0) throw std::invalid_argument("shot mode needs shots > 0");
  WaveState t = s;
  for (int r : regs) fourier(t, r);
  std::vector<double> w(t.amp.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::norm(t.amp[i]);
  std::discrete_distribution<std::size_t> dist(w.begin(), w.end());
  std::vector<double> mean(regs.size(), 0.0);
  for (long n = 0; n < shots; ++n) {
    std::size_t idx = dist(rng);
    for (std::size_t q = 0; q < regs.size(); ++q)
      mean[q] += read_momentum(t.layout.reg(regs[q]).spec, t.layout.digit(idx, regs[q])).calibrated;
  }
  for (auto& m : mean) m /= static_cast<double>(shots);
  return mean;
}

inline double expect_position(const WaveState& s, int r) {
  const auto p = marginal(s, r);
  double m = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) m += p[j] * s.layout.reg(r).value(static_cast<int>(j));
  return m;
}

inline double position_variance(const WaveState& s, int r) {
  const auto p = marginal(s, r);
  const double m = expect_position(s, r);
  double v = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    double x = s.layout.reg(r).value(static_cast<int>(j)) - m;
    v += p[j] * x * x;
  }
  return v;
}

// ---- Gaussian pointers ----

struct GaussianPointer {
  double phi0 = 0.0;
  double pi0 = 0.0;
  double sigma0 = 1.0;
};

// Warning condition: 3 sigma exceeds half the interval.
inline bool pointer_escapes(const QuditSpec& spec, const GaussianPointer& p) {
  return 3.0 * p.sigma0 > 0.5 * (spec.b - spec.a);
}

inline CVec gaussian_amplitudes(const QuditSpec& spec, const GaussianPointer& p) {
  spec.validate();
  if (!(p.sigma0 > 0.0)) throw std::invalid_argument("pointer sigma0 must be > 0");
  CVec v(spec.d);
  double lmax = -1e300;
  std::vector<double> logm(spec.d);
  for (int j = 0; j < spec.d; ++j) {
    const double x = spec.value(j) - p.phi0;
    logm[j] = -x * x / (4.0 * p.sigma0 * p.sigma0);
    lmax = std::max(lmax, logm[j]);
  }
  double n = 0.0;
  for (int j = 0; j < spec.d; ++j) {
    v[j] = std::polar(std::exp(logm[j] - lmax), p.pi0 * spec.value(j));
    n += std::norm(v[j]);
  }
  n = std::sqrt(n);
  for (auto& z : v) z /= n;
  return v;
}

inline WaveState prepare_gaussian(const QuditSpec& spec, const GaussianPointer& p) {
  Layout l({qudit_register("phi", spec)});
  return WaveState(l, gaussian_amplitudes(spec, p));
}

// ---- reduced states ----

// Reduced density matrix of one register (upper triangle accumulated, then mirrored).
inline CMat reduced_density(const WaveState& s, int r) {
  s.layout.check(r);
  const auto d = static_cast<Eigen::Index>(s.layout.dim(r));
  CMat rho = CMat::Zero(d, d);
  std::vector<cplx> f(static_cast<std::size_t>(d));
  for_each_fiber(s.layout, r, [&](std::size_t base, std::size_t stride) {
    for (Eigen::Index i = 0; i < d; ++i) f[i] = s.amp[base + i * stride];
    for (Eigen::Index i = 0; i < d; ++i) {
      const cplx ai = f[i];
      for (Eigen::Index j = i; j < d; ++j) rho(i, j) += ai * std::conj(f[j]);
    }
  });
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < i; ++j) rho(i, j) = std::conj(rho(j, i));
  return rho;
}

inline std::vector<double> measure_momentum_expectation(const WaveState& s, const std::vector<int>& regs) {
  std::vector<double> out;
  out.reserve(regs.size());
  for (int r : regs) {
    if (s.layout.reg(r).kind != RegKind::qudit || s.layout.reg(r).pinned)
      throw std::invalid_argument("momentum readout needs a qudit register");
    const CMat rho = reduced_density(s, r);
    out.push_back((rho * momentum_matrix(s.layout.reg(r).spec)).trace().real());
  }
  return out;
}

// ---- Wigner functions ----

// Odd-d discrete Wigner function, rows q (position index), columns p.
// Scaled so the entries sum to one.
inline RMat wigner_discrete_rho(const CMat& rho) {
  const int d = static_cast<int>(rho.rows());
  if (d % 2 == 0) throw std::invalid_argument("discrete Wigner needs odd d");
  const int half = (d + 1) / 2;
  std::vector<cplx> w(d);
  for (int k = 0; k < d; ++k) w[k] = std::polar(1.0, 2.0 * kPi * k / d);
  auto wp = [&](long e) { return w[((e % d) + d) % d]; };
  // chi(q', p') = tr[D^dag(q',p') rho], D = Z^p X^q / sqrt d
  CMat chi(d, d);
  for (int q = 0; q < d; ++q)
    for (int p = 0; p < d; ++p) {
      cplx acc = 0.0;
      for (int j = 0; j < d; ++j) acc += wp(static_cast<long>(p) * (j + q)) * rho((j + q) % d, j);
      chi(q, p) = acc / std::sqrt(static_cast<double>(d));
    }
  RMat out(d, d);
  const double norm = 1.0 / (d * std::sqrt(static_cast<double>(d)));
  for (int q = 0; q < d; ++q)
    for (int p = 0; p < d; ++p) {
      cplx acc = 0.0;
      for (int qq = 0; qq < d; ++qq)
        for (int pp = 0; pp < d; ++pp)
          acc += chi(qq, pp) * wp(-(static_cast<long>(qq) * p + static_cast<long>(pp) * q +
                                    static_cast<long>(half) * pp * qq));
      out(q, p) = (acc * norm).real();
    }
  return out;
}

// Largest imaginary part seen before discarding (diagnostic for Hermiticity).
inline double wigner_discrete_max_imag(const CMat& rho) {
  const int d = static_cast<int>(rho.rows());
  const int half = (d + 1) / 2;
  auto wp = [&](long e) { return std::polar(1.0, 2.0 * kPi * static_cast<double>(((e % d) + d) % d) / d); };
  double worst = 0.0;
  for (int q = 0; q < d; ++q)
    for (int p = 0; p < d; ++p) {
      cplx acc = 0.0;
      for (int qq = 0; qq < d; ++qq)
        for (int pp = 0; pp < d; ++pp) {
          cplx chi = 0.0;
          for (int j = 0; j < d; ++j) chi += wp(static_cast<long>(pp) * (j + qq)) * rho((j + qq) % d, j);
          acc += chi * wp(-(static_cast<long>(qq) * p + static_cast<long>(pp) * q + static_cast<long>(half) * pp * qq));
        }
      worst = std::max(worst, std::abs(acc.imag()) / (d * static_cast<double>(d)));
    }
  return worst;
}

inline RMat wigner_discrete(const WaveState& s, int r) {
  if (s.layout.reg(r).kind != RegKind::qudit) throw std::invalid_argument("wigner_discrete: qudit register");
  return wigner_discrete_rho(reduced_density(s, r));
}

// Analytic Wigner function of a Gaussian pointer.
inline RMat wigner_gaussian(const GaussianPointer& p, const std::vector<double>& xs, const std::vector<double>& ps) {
  RMat out(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(ps.size()));
  const double s2 = p.sigma0 * p.sigma0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < ps.size(); ++j) {
      const double dx = xs[i] - p.phi0, dp = ps[j] - p.pi0;
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          std::exp(-dx * dx / (2.0 * s2) - 2.0 * s2 * dp * dp) / kPi;
    }
  return out;
}

// Continuous Wigner function of a grid-sampled wavefunction, evaluated at grid
// positions: W(x_j, p) = (1/pi) sum_m psi*(x_{j+m}) psi(x_{j-m}) e^{2 i p m dx}, with the
// amplitudes read as psi(x_j) sqrt(dx).
inline RMat wigner_continuous(const WaveState& s, int r, const std::vector<double>& ps) {
  const CMat rho = reduced_density(s, r);
  const QuditSpec& spec = s.layout.reg(r).spec;
  const int d = spec.d;
  const double dx = spec.spacing();
  RMat out(d, static_cast<Eigen::Index>(ps.size()));
  for (int j = 0; j < d; ++j)
    for (std::size_t k = 0; k < ps.size(); ++k) {
      cplx acc = 0.0;
      for (int m = -d; m <= d; ++m) {
        const int lo = j - m, hi = j + m;
        if (lo < 0 || hi < 0 || lo >= d || hi >= d) continue;
        acc += rho(lo, hi) * std::polar(1.0, 2.0 * ps[k] * m * dx);
      }
      out(j, static_cast<Eigen::Index>(k)) = acc.real() / kPi;
    }
  return out;
}

// CSV: header row of column grid values, then one row per row grid value.
inline void write_grid_csv(const std::string& path, const std::vector<double>& rows,
                           const std::vector<double>& cols, const RMat& grid) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f.precision(17);
  f << "q\\p";
  for (double c : cols) f << ',' << c;
  f << '\n';
  for (Eigen::Index i = 0; i < grid.rows(); ++i) {
    f << rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < grid.cols(); ++j) f << ',' << grid(i, j);
    f << '\n';
  }
}

}  // namespace baqprop
