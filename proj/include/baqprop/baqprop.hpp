#pragma once

#include "baqprop/circuit.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace baqprop {

enum class LossKind { diagonal_grid_function, projector_onto_state, hermitian_matrix, pauli_z_polynomial };

// Term coeff * prod_q Z_q; qubit positions index into LossSpec::targets.
struct PauliZTerm {
  double coeff = 0.0;
  std::vector<int> qubits;
};

struct LossSpec {
  LossKind kind = LossKind::diagonal_grid_function;
  std::vector<int> targets;
  double sign = 1.0;
  std::vector<double> table;  // diagonal_grid_function, joint grid of targets
  CVec psi;                   // projector_onto_state
  CMat matrix;                // hermitian_matrix
  std::vector<PauliZTerm> terms;

  void validate(const Layout& l) const {
    if (targets.empty()) throw std::invalid_argument("loss needs target registers");
    std::size_t dim = 1;
    for (int r : targets) dim *= l.dim(r);
    switch (kind) {
      case LossKind::diagonal_grid_function:
        if (table.size() != dim) throw std::invalid_argument("loss table size");
        for (double x : table)
          if (!std::isfinite(x)) throw std::invalid_argument("loss table: non-finite value");
        break;
      case LossKind::projector_onto_state: {
        if (psi.size() != dim) throw std::invalid_argument("projector state size");
        double n = 0.0;
        for (const auto& z : psi) n += std::norm(z);
        if (std::abs(n - 1.0) > kNormTol) throw std::invalid_argument("projector state not normalized");
        break;
      }
      case LossKind::hermitian_matrix:
        if (static_cast<std::size_t>(matrix.rows()) != dim) throw std::invalid_argument("loss matrix size");
        check_hermitian(matrix);
        break;
      case LossKind::pauli_z_polynomial:
        for (int r : targets)
          if (l.dim(r) != 2) throw std::invalid_argument("Pauli-Z loss needs qubit targets");
        for (const auto& t : terms)
          for (int q : t.qubits)
            if (q < 0 || q >= static_cast<int>(targets.size())) throw std::invalid_argument("Pauli-Z qubit index");
        break;
    }
  }
};

inline LossSpec diagonal_loss(std::vector<int> targets, std::vector<double> table) {
  LossSpec l;
  l.kind = LossKind::diagonal_grid_function;
  l.targets = std::move(targets);
  l.table = std::move(table);
  return l;
}

// -|psi><psi|
inline LossSpec negative_projector_loss(std::vector<int> targets, CVec psi) {
  LossSpec l;
  l.kind = LossKind::projector_onto_state;
  l.targets = std::move(targets);
  l.psi = std::move(psi);
  l.sign = -1.0;
  return l;
}

inline LossSpec hermitian_loss(std::vector<int> targets, CMat h) {
  LossSpec l;
  l.kind = LossKind::hermitian_matrix;
  l.targets = std::move(targets);
  l.matrix = std::move(h);
  return l;
}

inline LossSpec pauli_z_loss(std::vector<int> targets, std::vector<PauliZTerm> terms) {
  LossSpec l;
  l.kind = LossKind::pauli_z_polynomial;
  l.targets = std::move(targets);
  l.terms = std::move(terms);
  return l;
}

// Diagonal of a Pauli-Z polynomial over the joint qubit grid (first target most significant).
inline std::vector<double> pauli_z_diagonal(std::size_t n_qubits, const std::vector<PauliZTerm>& terms) {
  std::vector<double> diag(std::size_t{1} << n_qubits, 0.0);
  for (std::size_t x = 0; x < diag.size(); ++x)
    for (const auto& t : terms) {
      double v = t.coeff;
      for (int q : t.qubits)
        if ((x >> (n_qubits - 1 - static_cast<std::size_t>(q))) & 1u) v = -v;
      diag[x] += v;
    }
  return diag;
}

// Diagonal of sign * L when L is diagonal; empty otherwise.
inline std::vector<double> loss_diagonal(const LossSpec& loss) {
  std::vector<double> d;
  if (loss.kind == LossKind::diagonal_grid_function)
    d = loss.table;
  else if (loss.kind == LossKind::pauli_z_polynomial)
    d = pauli_z_diagonal(loss.targets.size(), loss.terms);
  for (auto& x : d) x *= loss.sign;
  return d;
}

// e^{-i eta sign L} on the loss targets.
inline void apply_loss_exponential(WaveState& s, const LossSpec& loss, double eta) {
  if (!std::isfinite(eta)) throw std::invalid_argument("eta must be finite");
  loss.validate(s.layout);
  switch (loss.kind) {
    case LossKind::diagonal_grid_function:
    case LossKind::pauli_z_polynomial:
      apply_diagonal_phase(s, loss.targets, loss_diagonal(loss), eta);
      return;
    case LossKind::projector_onto_state: {
      const auto off = joint_offsets(s.layout, loss.targets);
      const cplx k = std::polar(1.0, -eta * loss.sign) - 1.0;
      for (std::size_t base : rest_bases(s.layout, loss.targets)) {
        cplx ov = 0.0;
        for (std::size_t i = 0; i < off.size(); ++i) ov += std::conj(loss.psi[i]) * s.amp[base + off[i]];
        ov *= k;
        for (std::size_t i = 0; i < off.size(); ++i) s.amp[base + off[i]] += ov * loss.psi[i];
      }
      return;
    }
    case LossKind::hermitian_matrix: {
      const CMat u = expi_hermitian(loss.matrix, eta * loss.sign);
      apply_fixed_unitary(s, loss.targets, u);
      return;
    }
  }
}

// <sign L> in state s.
inline double loss_expectation(const WaveState& s, const LossSpec& loss) {
  loss.validate(s.layout);
  const auto off = joint_offsets(s.layout, loss.targets);
  const auto bases = rest_bases(s.layout, loss.targets);
  double acc = 0.0;
  if (auto diag = loss_diagonal(loss); !diag.empty()) {
    for (std::size_t base : bases)
      for (std::size_t i = 0; i < off.size(); ++i) acc += diag[i] * std::norm(s.amp[base + off[i]]);
    return acc;
  }
  for (std::size_t base : bases) {
    if (loss.kind == LossKind::projector_onto_state) {
      cplx ov = 0.0;
      for (std::size_t i = 0; i < off.size(); ++i) ov += std::conj(loss.psi[i]) * s.amp[base + off[i]];
      acc += std::norm(ov);
    } else {
      Eigen::VectorXcd v(static_cast<Eigen::Index>(off.size()));
      for (std::size_t i = 0; i < off.size(); ++i) v[static_cast<Eigen::Index>(i)] = s.amp[base + off[i]];
      acc += v.dot(loss.matrix * v).real();
    }
  }
  return loss.sign * acc;
}

// Tr(rho_A^2) for the subsystem `regs` of a pure state.
inline double subsystem_purity(const WaveState& s, const std::vector<int>& regs) {
  const auto off = joint_offsets(s.layout, regs);
  const auto bases = rest_bases(s.layout, regs);
  CMat m(static_cast<Eigen::Index>(off.size()), static_cast<Eigen::Index>(bases.size()));
  for (std::size_t b = 0; b < bases.size(); ++b)
    for (std::size_t i = 0; i < off.size(); ++i)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = s.amp[bases[b] + off[i]];
  CMat rho = m.rows() <= m.cols() ? CMat(m * m.adjoint()) : CMat(m.adjoint() * m);
  return rho.cwiseAbs2().sum();
}

struct QFBResult {
  WaveState post_state;
  std::vector<double> momentum_before;
  std::vector<double> momentum_after;
  std::vector<double> effective_gradient;
  double compute_purity = 1.0;
  double wrap_probability = 0.0;
};

inline nlohmann::json to_json(const QFBResult& r) {
  return {{"momentum_before", r.momentum_before},
          {"momentum_after", r.momentum_after},
          {"effective_gradient", r.effective_gradient},
          {"compute_purity", r.compute_purity},
          {"wrap_probability", r.wrap_probability}};
}

inline void check_loss_on_compute(const FeedforwardProgram& p, const LossSpec& loss) {
  for (int r : loss.targets)
    if (std::find(p.compute.begin(), p.compute.end(), r) == p.compute.end())
      throw std::invalid_argument("loss targets must be compute registers");
}

// U^dagger e^{-i eta L} U, no measurements.
inline double qfb_apply(WaveState& s, const FeedforwardProgram& p, const LossSpec& loss, double eta) {
  if (!std::isfinite(eta)) throw std::invalid_argument("eta must be finite");
  check_loss_on_compute(p, loss);
  double wrap = apply_program(s, p);
  apply_loss_exponential(s, loss, eta);
  wrap = std::max(wrap, apply_program(s, p.adjoint()));
  return wrap;
}

inline QFBResult qfb_run(const FeedforwardProgram& p, const LossSpec& loss, double eta, const WaveState& state) {
  if (!std::isfinite(eta)) throw std::invalid_argument("eta must be finite");
  if (state.layout.total() != p.layout.total() || state.layout.size() != p.layout.size())
    throw std::invalid_argument("state layout does not match program");
  QFBResult r;
  r.post_state = state;
  r.momentum_before = measure_momentum_expectation(state, p.params);
  r.wrap_probability = qfb_apply(r.post_state, p, loss, eta);
  r.momentum_after = measure_momentum_expectation(r.post_state, p.params);
  for (std::size_t i = 0; i < p.params.size(); ++i)
    r.effective_gradient.push_back(eta == 0.0 ? 0.0 : (r.momentum_before[i] - r.momentum_after[i]) / eta);
  r.compute_purity = p.compute.empty() ? 1.0 : subsystem_purity(r.post_state, p.compute);
  return r;
}

// ---- effective phase ----

// Layout holding only the parameter registers, in program.params order.
inline Layout params_layout(const FeedforwardProgram& p) {
  Layout l;
  for (int r : p.params) {
    Register reg = p.layout.reg(r);
    reg.pinned.reset();
    l.add(reg);
  }
  return l;
}

inline std::size_t param_grid_size(const FeedforwardProgram& p) {
  std::size_t n = 1;
  for (int r : p.params) n *= p.layout.dim(r);
  return n;
}

// Per-parameter digits of a flat parameter-grid index (row-major over p.params).
inline std::vector<int> param_digits(const FeedforwardProgram& p, std::size_t flat) {
  std::vector<int> out(p.params.size());
  for (std::size_t i = p.params.size(); i-- > 0;) {
    const auto d = p.layout.dim(p.params[i]);
    out[i] = static_cast<int>(flat % d);
    flat /= d;
  }
  return out;
}

// Compute-only state with every parameter pinned to its grid value.
inline WaveState pinned_branch(const FeedforwardProgram& p, const std::vector<int>& digits, const CVec& xi) {
  Layout l = p.layout;
  for (std::size_t i = 0; i < p.params.size(); ++i)
    l = l.pinned(p.params[i], p.layout.reg(p.params[i]).value(digits[i]));
  return WaveState(l, xi);
}

// Pinned-branch state for continuous parameter values (used for metrics at pointer means).
inline WaveState pinned_branch_values(const FeedforwardProgram& p, const std::vector<double>& values, const CVec& xi) {
  Layout l = p.layout;
  for (std::size_t i = 0; i < p.params.size(); ++i) l = l.pinned(p.params[i], values[i]);
  return WaveState(l, xi);
}

inline std::size_t compute_dim(const FeedforwardProgram& p) {
  std::size_t n = 1;
  for (int r : p.compute) n *= p.layout.dim(r);
  return n;
}

inline std::optional<std::size_t> basis_index(const CVec& xi) {
  std::optional<std::size_t> hit;
  for (std::size_t i = 0; i < xi.size(); ++i) {
    if (xi[i] == cplx(0.0)) continue;
    if (hit || std::abs(std::abs(xi[i]) - 1.0) > 1e-12) return std::nullopt;
    hit = i;
  }
  return hit;
}

inline constexpr std::size_t kDefaultGridBudget = std::size_t{1} << 27;

// L(Phi) = <xi| U^dagger(Phi) sign L U(Phi) |xi> at every parameter grid point.
inline std::vector<double> effective_phase_grid(const FeedforwardProgram& p, const LossSpec& loss, const CVec& xi,
                                                std::size_t budget = kDefaultGridBudget) {
  check_loss_on_compute(p, loss);
  if (p.params.size() + p.compute.size() != static_cast<std::size_t>(p.layout.size()))
    throw std::invalid_argument("program registers must be params or compute");
  if (xi.size() != compute_dim(p)) throw std::invalid_argument("input state size");
  const std::size_t n = param_grid_size(p);
  if (n > budget) throw std::length_error("parameter grid exceeds memory budget");
  std::vector<double> out(n);
  const auto basis = basis_index(xi);
  if (p.classical_embedding() && basis) {
    const auto diag = loss_diagonal(loss);
    if (!diag.empty()) {
      // Basis tracking: the compute register never leaves the basis.
      Layout cl;
      for (int r : p.compute) cl.add(p.layout.reg(r));
      const auto cdig = cl.decompose(*basis);
      std::vector<int> digits(p.layout.size());
      for (std::size_t f = 0; f < n; ++f) {
        const auto pd = param_digits(p, f);
        for (std::size_t i = 0; i < p.params.size(); ++i) digits[p.params[i]] = pd[i];
        for (std::size_t i = 0; i < p.compute.size(); ++i) digits[p.compute[i]] = cdig[i];
        trace_digits(p.layout, p, digits);
        std::size_t li = 0;
        for (int r : loss.targets) li = li * p.layout.dim(r) + static_cast<std::size_t>(digits[r]);
        out[f] = diag[li];
      }
      return out;
    }
  }
  for (std::size_t f = 0; f < n; ++f) {
    WaveState s = pinned_branch(p, param_digits(p, f), xi);
    apply_program(s, p);
    out[f] = loss_expectation(s, loss);
  }
  return out;
}

// Fast path: the classical-embedding QFB as a diagonal phase on a params-only state.
inline void qfb_fast(WaveState& params_state, const std::vector<double>& phase, double eta) {
  std::vector<int> regs(static_cast<std::size_t>(params_state.layout.size()));
  for (int r = 0; r < params_state.layout.size(); ++r) regs[r] = r;
  apply_diagonal_phase(params_state, regs, phase, eta);
}

// ---- eta scaling ----

struct EtaScalingReport {
  std::vector<double> etas;
  std::vector<std::vector<double>> gradients;
  std::vector<double> extrapolated;
  double exponent = 0.0;         // of |shift(eta) + eta*g0| vs eta
  double slope_variation = 0.0;  // (max - min)/|mean| of shift/eta, worst component
  bool zero_member_ok = true;
};

inline nlohmann::json to_json(const EtaScalingReport& r) {
  return {{"etas", r.etas},
          {"gradients", r.gradients},
          {"extrapolated", r.extrapolated},
          {"exponent", r.exponent},
          {"slope_variation", r.slope_variation},
          {"zero_member_ok", r.zero_member_ok}};
}

inline WaveState joint_pointer_state(const FeedforwardProgram& p, const std::vector<GaussianPointer>& ptrs,
                                     const CVec& xi) {
  if (ptrs.size() != p.params.size()) throw std::invalid_argument("one pointer per parameter");
  WaveState s(p.layout);
  std::fill(s.amp.begin(), s.amp.end(), cplx(0.0));
  const auto coff = joint_offsets(p.layout, p.compute);
  const auto poff = joint_offsets(p.layout, p.params);
  CVec pamp{cplx(1.0)};
  for (std::size_t i = 0; i < p.params.size(); ++i) {
    const CVec f = gaussian_amplitudes(p.layout.reg(p.params[i]).spec, ptrs[i]);
    CVec next(pamp.size() * f.size());
    for (std::size_t a = 0; a < pamp.size(); ++a)
      for (std::size_t b = 0; b < f.size(); ++b) next[a * f.size() + b] = pamp[a] * f[b];
    pamp.swap(next);
  }
  for (std::size_t a = 0; a < poff.size(); ++a)
    for (std::size_t c = 0; c < coff.size(); ++c) s.amp[poff[a] + coff[c]] = pamp[a] * xi[c];
  return s;
}

inline EtaScalingReport verify_eta_scaling(const FeedforwardProgram& p, const LossSpec& loss,
                                           const std::vector<GaussianPointer>& ptrs, const CVec& xi,
                                           std::vector<double> etas) {
  EtaScalingReport rep;
  std::vector<double> pos;
  const WaveState s0 = joint_pointer_state(p, ptrs, xi);
  for (double e : etas) {
    if (e == 0.0) {
      auto r = qfb_run(p, loss, 0.0, s0);
      for (std::size_t i = 0; i < r.momentum_before.size(); ++i)
        if (std::abs(r.momentum_after[i] - r.momentum_before[i]) > 1e-12) rep.zero_member_ok = false;
    } else {
      pos.push_back(e);
    }
  }
  std::sort(pos.begin(), pos.end());
  if (pos.size() < 3) throw std::invalid_argument("eta scaling needs >= 3 nonzero etas");
  const double ratio = pos[1] / pos[0];
  for (std::size_t i = 1; i < pos.size(); ++i)
    if (std::abs(pos[i] / pos[i - 1] - ratio) > 1e-9 * ratio || ratio <= 1.0)
      throw std::invalid_argument("etas must form a geometric progression");
  rep.etas = pos;
  for (double e : pos) rep.gradients.push_back(qfb_run(p, loss, e, s0).effective_gradient);
  const std::size_t np = p.params.size();
  // Richardson on the two smallest etas, assuming a linear leading error in g(eta).
  rep.extrapolated.resize(np);
  for (std::size_t c = 0; c < np; ++c)
    rep.extrapolated[c] = (ratio * rep.gradients[0][c] - rep.gradients[1][c]) / (ratio - 1.0);
  double worst_exp = std::numeric_limits<double>::infinity();
  bool any_fit = false;
  for (std::size_t c = 0; c < np; ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, mean = 0.0;
    for (auto& g : rep.gradients) {
      lo = std::min(lo, g[c]);
      hi = std::max(hi, g[c]);
      mean += g[c] / static_cast<double>(rep.gradients.size());
    }
    if (std::abs(mean) > 1e-12) rep.slope_variation = std::max(rep.slope_variation, (hi - lo) / std::abs(mean));
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const double rem = pos[i] * std::abs(rep.gradients[i][c] - rep.extrapolated[c]);
      if (rem > 1e-14) {
        lx.push_back(std::log(pos[i]));
        ly.push_back(std::log(rem));
      }
    }
    if (lx.size() < 2) continue;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      mx += lx[i] / lx.size();
      my += ly[i] / ly.size();
    }
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    worst_exp = std::min(worst_exp, sxy / sxx);
    any_fit = true;
  }
  rep.exponent = any_fit ? worst_exp : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace baqprop
