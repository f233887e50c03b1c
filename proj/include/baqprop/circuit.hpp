#pragma once

#include "baqprop/hilbert.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace baqprop {

enum class GateKind { adder, multiplier_adder, diagonal_phase, phase_estimation, exp_swap, fixed_unitary, param_exponential };

inline const char* to_string(GateKind k) {
  switch (k) {
    case GateKind::adder: return "adder";
    case GateKind::multiplier_adder: return "multiplier_adder";
    case GateKind::diagonal_phase: return "diagonal_phase";
    case GateKind::phase_estimation: return "phase_estimation";
    case GateKind::exp_swap: return "exp_swap";
    case GateKind::fixed_unitary: return "fixed_unitary";
    case GateKind::param_exponential: return "param_exponential";
  }
  return "?";
}

inline GateKind gate_kind_from_string(const std::string& s) {
  for (auto k : {GateKind::adder, GateKind::multiplier_adder, GateKind::diagonal_phase, GateKind::phase_estimation,
                 GateKind::exp_swap, GateKind::fixed_unitary, GateKind::param_exponential})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown gate kind " + s);
}

enum class Activation { none, relu };

// One gate. `scale` is the signed strength that the adjoint negates:
//   adder             dst += scale * act(src)
//   multiplier_adder  dst += scale * act(src1) * src2   (rounded to the dst grid)
//   diagonal_phase    e^{-i scale f(targets)}, f tabulated over the joint target grid
//   phase_estimation  w^{-scale * ctrl * Pi_d(pointer)}
//   exp_swap          e^{-i scale S}
//   param_exponential e^{-i scale * param * h} on the targets
//   fixed_unitary     matrix on the joint target space (scale unused)
struct GateOp {
  GateKind kind = GateKind::adder;
  std::vector<int> controls;
  std::vector<int> targets;
  double scale = 1.0;
  Activation activation = Activation::none;
  std::vector<double> table;
  CMat matrix;

  bool operator==(const GateOp& o) const {
    return kind == o.kind && controls == o.controls && targets == o.targets && scale == o.scale &&
           activation == o.activation && table == o.table && matrix.rows() == o.matrix.rows() &&
           matrix.cols() == o.matrix.cols() && (matrix.size() == 0 || matrix == o.matrix);
  }

  GateOp adjoint() const {
    GateOp g = *this;
    if (kind == GateKind::fixed_unitary)
      g.matrix = matrix.adjoint();
    else
      g.scale = -scale;
    return g;
  }

  bool basis_permuting() const { return kind == GateKind::adder || kind == GateKind::multiplier_adder; }
};

inline GateOp adder(int src, int dst, double scale = 1.0, Activation act = Activation::none) {
  GateOp g;
  g.kind = GateKind::adder;
  g.controls = {src};
  g.targets = {dst};
  g.scale = scale;
  g.activation = act;
  return g;
}

inline GateOp multiplier_adder(int src1, int src2, int dst, double scale = 1.0, Activation act = Activation::none) {
  GateOp g;
  g.kind = GateKind::multiplier_adder;
  g.controls = {src1, src2};
  g.targets = {dst};
  g.scale = scale;
  g.activation = act;
  return g;
}

inline GateOp diagonal_phase_gate(std::vector<int> targets, std::vector<double> table, double scale = 1.0) {
  GateOp g;
  g.kind = GateKind::diagonal_phase;
  g.targets = std::move(targets);
  g.table = std::move(table);
  g.scale = scale;
  return g;
}

inline GateOp phase_estimation_gate(int ctrl, int pointer, double scale = 1.0) {
  GateOp g;
  g.kind = GateKind::phase_estimation;
  g.controls = {ctrl};
  g.targets = {pointer};
  g.scale = scale;
  return g;
}

inline GateOp exp_swap_gate(int a, int b, double eta) {
  GateOp g;
  g.kind = GateKind::exp_swap;
  g.targets = {a, b};
  g.scale = eta;
  return g;
}

inline GateOp fixed_unitary_gate(std::vector<int> targets, CMat u) {
  GateOp g;
  g.kind = GateKind::fixed_unitary;
  g.targets = std::move(targets);
  g.matrix = std::move(u);
  return g;
}

inline GateOp param_exponential_gate(int param, std::vector<int> targets, CMat h, double scale = 1.0) {
  GateOp g;
  g.kind = GateKind::param_exponential;
  g.controls = {param};
  g.targets = std::move(targets);
  g.matrix = std::move(h);
  g.scale = scale;
  return g;
}

// ---- joint-register helpers ----

// Offsets of every joint index of `regs` (row-major over regs as listed).
inline std::vector<std::size_t> joint_offsets(const Layout& l, const std::vector<int>& regs) {
  std::vector<std::size_t> off{0};
  for (int r : regs) {
    l.check(r);
    std::vector<std::size_t> next;
    next.reserve(off.size() * l.dim(r));
    for (std::size_t o : off)
      for (std::size_t j = 0; j < l.dim(r); ++j) next.push_back(o + j * l.stride(r));
    off.swap(next);
  }
  return off;
}

// Base indices with every register in `regs` at digit 0.
inline std::vector<std::size_t> rest_bases(const Layout& l, const std::vector<int>& regs) {
  std::vector<int> rest;
  for (int r = 0; r < l.size(); ++r)
    if (std::find(regs.begin(), regs.end(), r) == regs.end()) rest.push_back(r);
  return joint_offsets(l, rest);
}

inline void check_distinct(const std::vector<int>& a, const std::vector<int>& b) {
  for (int x : a)
    if (std::find(b.begin(), b.end(), x) != b.end())
      throw std::invalid_argument("control and target registers overlap");
}

// Applies mat_for(base) on the joint space of `targets` for every rest base.
template <class MatFor>
void apply_joint(WaveState& s, const std::vector<int>& targets, MatFor&& mat_for) {
  const auto off = joint_offsets(s.layout, targets);
  const auto bases = rest_bases(s.layout, targets);
  const auto n = static_cast<Eigen::Index>(off.size());
  Eigen::VectorXcd in(n);
  for (std::size_t base : bases) {
    const CMat& m = mat_for(base);
    for (Eigen::Index j = 0; j < n; ++j) in[j] = s.amp[base + off[j]];
    Eigen::VectorXcd out = m * in;
    for (Eigen::Index j = 0; j < n; ++j) s.amp[base + off[j]] = out[j];
  }
}

inline double activate(Activation a, double x) { return a == Activation::relu ? (x > 0.0 ? x : 0.0) : x; }

// Result of a permuting gate: probability mass that wrapped around the target interval.
struct GateReport {
  double wrap_probability = 0.0;
  bool overflow() const { return wrap_probability >= 0.05; }
};

inline long round_shift(double shift_value, double spacing) {
  return std::lround(shift_value / spacing);
}

// dst += scale * act(value(src1)) [* value(src2)], modular on the dst grid.
inline GateReport apply_permuting(WaveState& s, const GateOp& g) {
  const Layout& l = s.layout;
  check_distinct(g.controls, g.targets);
  const int dst = g.targets.at(0);
  const Register& rd = l.reg(dst);
  if (rd.pinned) throw std::invalid_argument("adder target cannot be pinned");
  const long d = rd.spec.d;
  const double dx = rd.spec.spacing();
  const std::size_t dstride = l.stride(dst);
  CVec out(s.amp.size(), cplx(0.0));
  GateReport rep;
  for (std::size_t idx = 0; idx < s.amp.size(); ++idx) {
    const cplx z = s.amp[idx];
    if (z == cplx(0.0)) continue;
    double v = activate(g.activation, l.reg(g.controls[0]).value(l.digit(idx, g.controls[0])));
    if (g.kind == GateKind::multiplier_adder) v *= l.reg(g.controls[1]).value(l.digit(idx, g.controls[1]));
    const long shift = round_shift(g.scale * v, dx);
    const long j = l.digit(idx, dst);
    long nj = j + shift;
    if (nj < 0 || nj >= d) rep.wrap_probability += std::norm(z);
    nj = ((nj % d) + d) % d;
    out[idx + static_cast<std::size_t>(nj - j) * dstride] += z;
  }
  s.amp.swap(out);
  return rep;
}

inline GateReport apply_adder(WaveState& s, int src, int dst, double scale = 1.0) {
  const Register& a = s.layout.reg(src);
  const Register& b = s.layout.reg(dst);
  if (!a.pinned && std::abs(a.spec.spacing() - b.spec.spacing()) > 1e-12)
    throw std::invalid_argument("apply_adder: mismatched grid spacing");
  return apply_permuting(s, adder(src, dst, scale));
}

inline GateReport apply_multiplier_adder(WaveState& s, int src1, int src2, int dst, double scale = 1.0) {
  return apply_permuting(s, multiplier_adder(src1, src2, dst, scale));
}

inline void apply_diagonal_phase(WaveState& s, const std::vector<int>& regs, const std::vector<double>& f,
                                 double eta) {
  const auto off = joint_offsets(s.layout, regs);
  if (f.size() != off.size()) throw std::invalid_argument("diagonal phase table size");
  for (double x : f)
    if (!std::isfinite(x)) throw std::invalid_argument("diagonal phase: non-finite value");
  std::vector<cplx> ph(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) ph[i] = std::polar(1.0, -eta * f[i]);
  for (std::size_t base : rest_bases(s.layout, regs))
    for (std::size_t i = 0; i < off.size(); ++i) s.amp[base + off[i]] *= ph[i];
}

// w^{-scale * ctrl * Pi_d}: shifts the pointer by scale*ctrl*(d-1)/(b-a) index units.
inline void apply_phase_estimation(WaveState& s, int ctrl, int pointer, double scale = 1.0) {
  check_distinct({ctrl}, {pointer});
  const Layout& l = s.layout;
  const QuditSpec& ps = l.reg(pointer).spec;
  const int dc = static_cast<int>(l.dim(ctrl));
  std::vector<CMat> shifts(static_cast<std::size_t>(dc));
  for (int c = 0; c < dc; ++c)
    shifts[c] = fractional_shift_matrix(ps.d, scale * l.reg(ctrl).value(c) * ps.conversion());
  apply_joint(s, {pointer}, [&](std::size_t base) -> const CMat& { return shifts[l.digit(base, ctrl)]; });
}

inline CMat swap_matrix(int d) {
  CMat sw = CMat::Zero(d * d, d * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) sw(j * d + i, i * d + j) = 1.0;
  return sw;
}

inline void apply_exp_swap(WaveState& s, int a, int b, double eta) {
  if (s.layout.dim(a) != s.layout.dim(b)) throw std::invalid_argument("exp_swap: dimension mismatch");
  const int d = static_cast<int>(s.layout.dim(a));
  CMat u = std::cos(eta) * CMat::Identity(d * d, d * d) - cplx(0.0, std::sin(eta)) * swap_matrix(d);
  apply_joint(s, {a, b}, [&](std::size_t) -> const CMat& { return u; });
}

inline void check_hermitian(const CMat& h, double tol = 1e-9) {
  if (h.rows() != h.cols() || (h - h.adjoint()).cwiseAbs().maxCoeff() > tol)
    throw std::invalid_argument("generator is not Hermitian");
}

// e^{-i t h} for Hermitian h.
inline CMat expi_hermitian(const CMat& h, double t) {
  Eigen::SelfAdjointEigenSolver<CMat> es(h);
  const auto& v = es.eigenvectors();
  const auto& w = es.eigenvalues();
  CMat d = CMat::Zero(h.rows(), h.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) d(i, i) = std::polar(1.0, -t * w[i]);
  return v * d * v.adjoint();
}

inline bool is_diagonal(const CMat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (i != j && m(i, j) != cplx(0.0)) return false;
  return true;
}

inline void apply_param_exponential(WaveState& s, int param, const std::vector<int>& targets, const CMat& h,
                                    double scale = 1.0) {
  check_distinct({param}, targets);
  check_hermitian(h);
  const Layout& l = s.layout;
  const auto off = joint_offsets(l, targets);
  if (static_cast<std::size_t>(h.rows()) != off.size()) throw std::invalid_argument("generator dimension");
  const int dp = static_cast<int>(l.dim(param));
  if (is_diagonal(h)) {
    std::vector<std::vector<cplx>> ph(static_cast<std::size_t>(dp));
    for (int p = 0; p < dp; ++p) {
      const double t = scale * l.reg(param).value(p);
      for (Eigen::Index i = 0; i < h.rows(); ++i) ph[p].push_back(std::polar(1.0, -t * h(i, i).real()));
    }
    for (std::size_t base : rest_bases(l, targets)) {
      const auto& row = ph[l.digit(base, param)];
      for (std::size_t i = 0; i < off.size(); ++i) s.amp[base + off[i]] *= row[i];
    }
    return;
  }
  std::vector<CMat> us(static_cast<std::size_t>(dp));
  for (int p = 0; p < dp; ++p) us[p] = expi_hermitian(h, scale * l.reg(param).value(p));
  apply_joint(s, targets, [&](std::size_t base) -> const CMat& { return us[l.digit(base, param)]; });
}

inline void apply_fixed_unitary(WaveState& s, const std::vector<int>& targets, const CMat& u) {
  apply_joint(s, targets, [&](std::size_t) -> const CMat& { return u; });
}

inline GateReport apply_gate(WaveState& s, const GateOp& g) {
  switch (g.kind) {
    case GateKind::adder:
    case GateKind::multiplier_adder: return apply_permuting(s, g);
    case GateKind::diagonal_phase: apply_diagonal_phase(s, g.targets, g.table, g.scale); break;
    case GateKind::phase_estimation: apply_phase_estimation(s, g.controls.at(0), g.targets.at(0), g.scale); break;
    case GateKind::exp_swap: apply_exp_swap(s, g.targets.at(0), g.targets.at(1), g.scale); break;
    case GateKind::fixed_unitary: apply_fixed_unitary(s, g.targets, g.matrix); break;
    case GateKind::param_exponential:
      apply_param_exponential(s, g.controls.at(0), g.targets, g.matrix, g.scale);
      break;
  }
  return {};
}

// ---- programs ----

struct FeedforwardProgram {
  Layout layout;
  std::vector<int> params;
  std::vector<int> compute;
  std::vector<GateOp> gates;

  FeedforwardProgram adjoint() const {
    FeedforwardProgram p = *this;
    p.gates.clear();
    for (auto it = gates.rbegin(); it != gates.rend(); ++it) p.gates.push_back(it->adjoint());
    return p;
  }

  bool classical_embedding() const {
    return std::all_of(gates.begin(), gates.end(), [](const GateOp& g) { return g.basis_permuting(); });
  }
};

// Runs every gate; returns the largest wraparound probability seen.
inline double apply_program(WaveState& s, const FeedforwardProgram& p) {
  double worst = 0.0;
  for (const auto& g : p.gates) worst = std::max(worst, apply_gate(s, g).wrap_probability);
  return worst;
}

// Basis-index trace of a permuting program: digits are updated in place.
inline void trace_digits(const Layout& l, const FeedforwardProgram& p, std::vector<int>& digits) {
  for (const auto& g : p.gates) {
    if (!g.basis_permuting()) throw std::invalid_argument("trace_digits: non-permuting gate");
    double v = activate(g.activation, l.reg(g.controls[0]).value(digits[g.controls[0]]));
    if (g.kind == GateKind::multiplier_adder) v *= l.reg(g.controls[1]).value(digits[g.controls[1]]);
    const int dst = g.targets[0];
    const long d = l.reg(dst).spec.d;
    long nj = digits[dst] + round_shift(g.scale * v, l.reg(dst).spec.spacing());
    digits[dst] = static_cast<int>(((nj % d) + d) % d);
  }
}

// ---- JSON ----

inline nlohmann::json matrix_to_json(const CMat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back({m(i, j).real(), m(i, j).imag()});
    rows.push_back(row);
  }
  return rows;
}

inline CMat matrix_from_json(const nlohmann::json& j) {
  if (j.empty()) return CMat();
  CMat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.at(0).size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto& e = j.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c));
      m(r, c) = cplx(e.at(0).get<double>(), e.at(1).get<double>());
    }
  return m;
}

inline nlohmann::json to_json(const GateOp& g) {
  nlohmann::json j;
  j["kind"] = to_string(g.kind);
  j["controls"] = g.controls;
  j["targets"] = g.targets;
  j["scale"] = g.scale;
  j["activation"] = g.activation == Activation::relu ? "relu" : "none";
  if (!g.table.empty()) j["table"] = g.table;
  if (g.matrix.size() > 0) j["matrix"] = matrix_to_json(g.matrix);
  return j;
}

inline GateOp gate_from_json(const nlohmann::json& j) {
  GateOp g;
  g.kind = gate_kind_from_string(j.at("kind").get<std::string>());
  g.controls = j.at("controls").get<std::vector<int>>();
  g.targets = j.at("targets").get<std::vector<int>>();
  g.scale = j.at("scale").get<double>();
  g.activation = j.at("activation").get<std::string>() == "relu" ? Activation::relu : Activation::none;
  if (j.contains("table")) g.table = j.at("table").get<std::vector<double>>();
  if (j.contains("matrix")) g.matrix = matrix_from_json(j.at("matrix"));
  return g;
}

inline nlohmann::json to_json(const FeedforwardProgram& p) {
  nlohmann::json regs = nlohmann::json::array();
  for (int r = 0; r < p.layout.size(); ++r) {
    const Register& reg = p.layout.reg(r);
    regs.push_back({{"name", reg.name},
                    {"kind", reg.kind == RegKind::qubit ? "qubit" : "qudit"},
                    {"d", reg.spec.d},
                    {"a", reg.spec.a},
                    {"b", reg.spec.b}});
  }
  nlohmann::json gates = nlohmann::json::array();
  for (const auto& g : p.gates) gates.push_back(to_json(g));
  return {{"registers", regs}, {"params", p.params}, {"compute", p.compute}, {"gates", gates}};
}

inline FeedforwardProgram program_from_json(const nlohmann::json& j) {
  FeedforwardProgram p;
  for (const auto& r : j.at("registers")) {
    Register reg;
    reg.name = r.at("name").get<std::string>();
    reg.kind = r.at("kind").get<std::string>() == "qubit" ? RegKind::qubit : RegKind::qudit;
    reg.spec = {r.at("d").get<int>(), r.at("a").get<double>(), r.at("b").get<double>()};
    reg.spec.validate();
    p.layout.add(reg);
  }
  p.params = j.at("params").get<std::vector<int>>();
  p.compute = j.at("compute").get<std::vector<int>>();
  for (const auto& g : j.at("gates")) p.gates.push_back(gate_from_json(g));
  return p;
}

inline bool same_program(const FeedforwardProgram& a, const FeedforwardProgram& b) {
  if (a.params != b.params || a.compute != b.compute || a.gates != b.gates) return false;
  if (a.layout.size() != b.layout.size()) return false;
  for (int r = 0; r < a.layout.size(); ++r) {
    const auto &x = a.layout.reg(r), &y = b.layout.reg(r);
    if (x.name != y.name || x.kind != y.kind || !(x.spec == y.spec)) return false;
  }
  return true;
}

// ---- common generators ----

inline CMat pauli_x() {
  CMat m = CMat::Zero(2, 2);
  m(0, 1) = m(1, 0) = 1.0;
  return m;
}
inline CMat pauli_y() {
  CMat m = CMat::Zero(2, 2);
  m(0, 1) = cplx(0, -1);
  m(1, 0) = cplx(0, 1);
  return m;
}
inline CMat pauli_z() {
  CMat m = CMat::Zero(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = -1.0;
  return m;
}
inline CMat hadamard() {
  CMat m(2, 2);
  const double s = 1.0 / std::sqrt(2.0);
  m << s, s, s, -s;
  return m;
}

// Single-qubit operator `op` on qubit q of an n-qubit block (qubit 0 most significant).
inline CMat embed_qubit_op(const CMat& op, int q, int n) {
  CMat out = CMat::Identity(1, 1);
  for (int k = 0; k < n; ++k) {
    CMat f = (k == q) ? op : CMat(CMat::Identity(2, 2));
    CMat next(out.rows() * 2, out.cols() * 2);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j) next.block(i * 2, j * 2, 2, 2) = out(i, j) * f;
    out = next;
  }
  return out;
}

}  // namespace baqprop
