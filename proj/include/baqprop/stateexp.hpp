#pragma once

#include "baqprop/optim.hpp"

#include <json.hpp>

#include <random>
#include <vector>

namespace baqprop {

struct ExpStateBudget {
  double eta = 0.0;
  int n_copies = 1;
  double delta = 0.0;

  static ExpStateBudget make(double eta, int n) {
    if (n < 1) throw std::invalid_argument("n_copies must be >= 1");
    return {eta, n, eta / n};
  }
};

inline std::size_t joint_dim(const Layout& l, const std::vector<int>& regs) {
  std::size_t n = 1;
  for (int r : regs) n *= l.dim(r);
  return n;
}

// I + (e^{-i eta} - 1)|psi><psi| on the joint space of `targets`.
inline CMat projector_exponential(const CVec& psi, double eta) {
  const auto n = static_cast<Eigen::Index>(psi.size());
  Eigen::VectorXcd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = psi[static_cast<std::size_t>(i)];
  return CMat::Identity(n, n) + (std::polar(1.0, -eta) - 1.0) * v * v.adjoint();
}

inline WaveState exponentiate_exact(WaveState s, const std::vector<int>& targets, const CVec& psi, double eta) {
  if (psi.size() != joint_dim(s.layout, targets)) throw std::invalid_argument("exponentiate_exact: dimension mismatch");
  const CMat u = projector_exponential(psi, eta);
  apply_joint(s, targets, [&](std::size_t) -> const CMat& { return u; });
  return s;
}

inline CMat mixture_density(const std::vector<CVec>& states) {
  if (states.empty()) throw std::invalid_argument("empty state list");
  const auto n = static_cast<Eigen::Index>(states[0].size());
  CMat rho = CMat::Zero(n, n);
  for (const auto& c : states) {
    if (static_cast<Eigen::Index>(c.size()) != n) throw std::invalid_argument("copies differ in dimension");
    Eigen::Map<const Eigen::VectorXcd> v(c.data(), n);
    rho += v * v.adjoint();
  }
  return rho / static_cast<double>(states.size());
}

// Embeds an operator on `targets` into the full space of the layout.
inline CMat lift(const Layout& l, const std::vector<int>& targets, const CMat& k) {
  const auto off = joint_offsets(l, targets);
  const auto bases = rest_bases(l, targets);
  const auto total = static_cast<Eigen::Index>(l.total());
  CMat out = CMat::Zero(total, total);
  for (std::size_t b : bases)
    for (std::size_t i = 0; i < off.size(); ++i)
      for (std::size_t j = 0; j < off.size(); ++j)
        out(static_cast<Eigen::Index>(b + off[i]), static_cast<Eigen::Index>(b + off[j])) =
            k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return out;
}

inline CMat density_of(const WaveState& s) {
  Eigen::Map<const Eigen::VectorXcd> v(s.amp.data(), static_cast<Eigen::Index>(s.amp.size()));
  return v * v.adjoint();
}

inline double trace_distance(const CMat& a, const CMat& b) {
  Eigen::SelfAdjointEigenSolver<CMat> es(a - b);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

// Kraus operators of one exp-swap step with copy c, scratch register traced out:
// K_m = cos(delta) c_m I - i sin(delta) |c><m|.
inline std::vector<CMat> exp_swap_kraus(const CVec& c, double delta) {
  const auto n = static_cast<Eigen::Index>(c.size());
  std::vector<CMat> ks;
  for (Eigen::Index m = 0; m < n; ++m) {
    CMat k = std::cos(delta) * c[static_cast<std::size_t>(m)] * CMat::Identity(n, n);
    for (Eigen::Index t = 0; t < n; ++t) k(t, m) += cplx(0.0, -std::sin(delta)) * c[static_cast<std::size_t>(t)];
    ks.push_back(std::move(k));
  }
  return ks;
}

struct BatchedReport {
  double eta = 0.0;
  int n = 0;
  double trace_distance = 0.0;
};

inline nlohmann::json to_json(const BatchedReport& r) {
  return {{"eta", r.eta}, {"n", r.n}, {"trace_distance", r.trace_distance}};
}

struct BatchedResult {
  CMat rho;              // channel output on the full space
  WaveState trajectory;  // one sampled run of the scratch-register protocol
  BatchedReport report;
};

// One exp-swap step per copy at delta = eta / n. The density output is exact;
// `trajectory` measures the scratch register after each step and re-prepares it.
template <class Rng>
BatchedResult exponentiate_batched(const WaveState& s, const std::vector<int>& targets, const std::vector<CVec>& copies,
                                   double eta, Rng& rng) {
  const auto budget = ExpStateBudget::make(eta, static_cast<int>(copies.size()));
  const std::size_t dt = joint_dim(s.layout, targets);
  for (const auto& c : copies)
    if (c.size() != dt) throw std::invalid_argument("exponentiate_batched: dimension mismatch");

  CMat rho = density_of(s);
  for (const auto& c : copies) {
    CMat next = CMat::Zero(rho.rows(), rho.cols());
    for (const auto& k : exp_swap_kraus(c, budget.delta)) {
      const CMat kk = lift(s.layout, targets, k);
      next += kk * rho * kk.adjoint();
    }
    rho = std::move(next);
  }

  const int d = static_cast<int>(dt);
  const CMat e = std::cos(budget.delta) * CMat::Identity(d * d, d * d) - cplx(0.0, std::sin(budget.delta)) * swap_matrix(d);
  Register scratch = qudit_register("scratch", QuditSpec{std::max(d, 2), 0.0, static_cast<double>(std::max(d, 2) - 1)});
  WaveState traj = s;
  for (const auto& c : copies) {
    WaveState joint = append_registers(traj, {scratch}, c);
    auto regs = targets;
    regs.push_back(joint.layout.size() - 1);
    apply_joint(joint, regs, [&](std::size_t) -> const CMat& { return e; });
    std::vector<ComputeBlock> blk{{{joint.layout.size() - 1}, basis_vector(dt, 0)}};
    traj = trace_out_blocks(joint, blk, rng);
  }

  const WaveState exact = [&] {
    WaveState x = s;
    const CMat u = expi_hermitian(mixture_density(copies), eta);
    apply_joint(x, targets, [&](std::size_t) -> const CMat& { return u; });
    return x;
  }();
  BatchedReport rep{eta, budget.n_copies, trace_distance(rho, density_of(exact))};
  return {std::move(rho), std::move(traj), rep};
}

struct MixtureResult {
  WaveState state;
  double error = 0.0;  // operator-norm distance to e^{-i eta rho_mix} on the target space
};

// (prod_j e^{-i (eta/(m N)) |psi_j><psi_j|})^N.
inline MixtureResult sequential_mixture_exponential(WaveState s, const std::vector<int>& targets,
                                                    const std::vector<CVec>& states, double eta, int sweeps) {
  if (sweeps < 1) throw std::invalid_argument("sweeps must be >= 1");
  const std::size_t dt = joint_dim(s.layout, targets);
  for (const auto& c : states)
    if (c.size() != dt) throw std::invalid_argument("sequential_mixture_exponential: dimension mismatch");
  const double step = eta / static_cast<double>(states.size()) / sweeps;
  const auto n = static_cast<Eigen::Index>(dt);
  CMat sweep = CMat::Identity(n, n);
  for (const auto& c : states) sweep = projector_exponential(c, step) * sweep;
  CMat u = CMat::Identity(n, n);
  for (int k = 0; k < sweeps; ++k) u = sweep * u;
  apply_joint(s, targets, [&](std::size_t) -> const CMat& { return u; });
  const CMat exact = expi_hermitian(mixture_density(states), eta);
  const double err = Eigen::JacobiSVD<CMat>(u - exact).singularValues()[0];
  return {std::move(s), err};
}

}  // namespace baqprop
