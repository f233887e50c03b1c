#pragma once

#include "baqprop/baqprop.hpp"

#include <json.hpp>

#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace baqprop {

using ojson = nlohmann::ordered_json;

// ---- register bookkeeping ----

// s (x) xi on freshly appended registers (appended last, in order).
inline WaveState append_registers(const WaveState& s, const std::vector<Register>& regs, const CVec& xi) {
  Layout l = s.layout;
  std::size_t n = 1;
  for (const auto& r : regs) {
    l.add(r);
    n *= static_cast<std::size_t>(r.dim());
  }
  if (xi.size() != n) throw std::invalid_argument("append_registers: state size");
  CVec amp(s.amp.size() * n);
  for (std::size_t i = 0; i < s.amp.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) amp[i * n + j] = s.amp[i] * xi[j];
  return WaveState(std::move(l), std::move(amp));
}

// <bra| on `regs`; the registers are removed. The result is not normalized.
inline WaveState contract(const WaveState& s, const std::vector<int>& regs, const CVec& bra) {
  const auto off = joint_offsets(s.layout, regs);
  if (bra.size() != off.size()) throw std::invalid_argument("contract: bra size");
  Layout l;
  for (int r = 0; r < s.layout.size(); ++r)
    if (std::find(regs.begin(), regs.end(), r) == regs.end()) l.add(s.layout.reg(r));
  const auto bases = rest_bases(s.layout, regs);
  CVec amp(bases.size());
  for (std::size_t b = 0; b < bases.size(); ++b) {
    cplx acc = 0.0;
    for (std::size_t i = 0; i < off.size(); ++i) acc += std::conj(bra[i]) * s.amp[bases[b] + off[i]];
    amp[b] = acc;
  }
  return WaveState(std::move(l), std::move(amp));
}

// Orthonormal basis (columns) whose first column is xi.
inline CMat adapted_basis(const CVec& xi) {
  const auto n = static_cast<Eigen::Index>(xi.size());
  CMat m = CMat::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i) m(i, 0) = xi[static_cast<std::size_t>(i)];
  Eigen::HouseholderQR<CMat> qr(m);
  CMat q = qr.householderQ();
  // Restore the exact phase of xi in the first column.
  const cplx ph = q(0, 0) != cplx(0.0) ? m(0, 0) / q(0, 0) : cplx(0.0);
  if (std::abs(ph) > 0.5)
    q.col(0) *= ph;
  else {
    for (Eigen::Index i = 0; i < n; ++i) q(i, 0) = xi[static_cast<std::size_t>(i)];
  }
  return q;
}

// Compute registers appended by a kick, with the input state they started in.
struct ComputeBlock {
  std::vector<int> regs;
  CVec xi;
};

// Removes every block by a projective measurement in a basis containing its xi
// (one quantum trajectory of the partial trace). Blocks must sit after the parameters.
template <class Rng>
WaveState trace_out_blocks(WaveState s, std::vector<ComputeBlock> blocks, Rng& rng) {
  // Highest register indices first so earlier indices stay valid.
  std::sort(blocks.begin(), blocks.end(), [](const ComputeBlock& a, const ComputeBlock& b) {
    return *std::max_element(a.regs.begin(), a.regs.end()) > *std::max_element(b.regs.begin(), b.regs.end());
  });
  for (const auto& blk : blocks) {
    const CMat basis = adapted_basis(blk.xi);
    std::vector<double> w(static_cast<std::size_t>(basis.cols()));
    std::vector<WaveState> branches;
    for (Eigen::Index k = 0; k < basis.cols(); ++k) {
      CVec bra(static_cast<std::size_t>(basis.rows()));
      for (Eigen::Index i = 0; i < basis.rows(); ++i) bra[static_cast<std::size_t>(i)] = basis(i, k);
      branches.push_back(contract(s, blk.regs, bra));
      double n = 0.0;
      for (const auto& z : branches.back().amp) n += std::norm(z);
      w[static_cast<std::size_t>(k)] = n;
    }
    double total = 0.0;
    for (double x : w) total += x;
    const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = 0;
    double acc = 0.0;
    for (; pick + 1 < w.size(); ++pick) {
      acc += w[pick];
      if (u < acc && w[pick] > 0.0) break;
    }
    while (w[pick] == 0.0 && pick > 0) --pick;
    s = std::move(branches[pick]);
    s.normalize();
  }
  return s;
}

// ---- kicks ----

// One datum's phase kick on the parameter registers `params` of s at rate eta.
// A kick may append compute registers; it reports them in `blocks`.
struct Kick {
  std::function<double(WaveState& s, const std::vector<int>& params, double eta, std::vector<ComputeBlock>& blocks)>
      apply;
};

// Diagonal potential over the joint parameter grid (row-major over params).
inline Kick diagonal_kick(std::shared_ptr<const std::vector<double>> table) {
  return {[table](WaveState& s, const std::vector<int>& params, double eta, std::vector<ComputeBlock>&) {
    apply_diagonal_phase(s, params, *table, eta);
    return 0.0;
  }};
}

// Program with registers renumbered by `map` (old index -> new index).
inline FeedforwardProgram remap(const FeedforwardProgram& p, const std::vector<int>& map, const Layout& layout) {
  FeedforwardProgram q;
  q.layout = layout;
  for (int r : p.params) q.params.push_back(map.at(static_cast<std::size_t>(r)));
  for (int r : p.compute) q.compute.push_back(map.at(static_cast<std::size_t>(r)));
  for (auto g : p.gates) {
    for (auto& c : g.controls) c = map.at(static_cast<std::size_t>(c));
    for (auto& t : g.targets) t = map.at(static_cast<std::size_t>(t));
    q.gates.push_back(std::move(g));
  }
  return q;
}

inline LossSpec remap(LossSpec l, const std::vector<int>& map) {
  for (auto& t : l.targets) t = map.at(static_cast<std::size_t>(t));
  return l;
}

// Full-circuit QFB with fresh compute registers prepared in xi (program.compute order).
inline Kick qfb_kick(FeedforwardProgram prog, LossSpec loss, CVec xi) {
  return {[prog = std::move(prog), loss = std::move(loss), xi = std::move(xi)](
              WaveState& s, const std::vector<int>& params, double eta, std::vector<ComputeBlock>& blocks) {
    if (params.size() != prog.params.size()) throw std::invalid_argument("qfb_kick: parameter count");
    std::vector<Register> regs;
    for (int r : prog.compute) regs.push_back(prog.layout.reg(r));
    const int first = s.layout.size();
    s = append_registers(s, regs, xi);
    std::vector<int> map(static_cast<std::size_t>(prog.layout.size()), -1);
    for (std::size_t i = 0; i < params.size(); ++i) map[static_cast<std::size_t>(prog.params[i])] = params[i];
    ComputeBlock blk;
    for (std::size_t i = 0; i < prog.compute.size(); ++i) {
      map[static_cast<std::size_t>(prog.compute[i])] = first + static_cast<int>(i);
      blk.regs.push_back(first + static_cast<int>(i));
    }
    blk.xi = xi;
    blocks.push_back(blk);
    const auto q = remap(prog, map, s.layout);
    return qfb_apply(s, q, remap(loss, map), eta);
  }};
}

// Per-datum kicks at eta/|batch|, in order.
inline double sequential_minibatch_kick(WaveState& s, const std::vector<int>& params, const std::vector<Kick>& batch,
                                        double eta, std::vector<ComputeBlock>& blocks) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double wrap = 0.0;
  const double rate = eta / static_cast<double>(batch.size());
  for (const auto& k : batch) wrap = std::max(wrap, k.apply(s, params, rate, blocks));
  return wrap;
}

// e^{-i eta lambda Phi^2} on each listed register.
inline void weight_decay_kick(WaveState& s, const std::vector<int>& regs, double lambda, double eta) {
  for (int r : regs) {
    const auto xs = position_values(s.layout.reg(r).spec);
    CVec ph(xs.size());
    for (std::size_t j = 0; j < xs.size(); ++j) ph[j] = std::polar(1.0, -eta * lambda * xs[j] * xs[j]);
    apply_diagonal(s, r, ph);
  }
}

// e^{-i gamma Pi^2}. Odd d uses the symmetric circulant kernel of F^dag diag F.
inline void apply_kinetic(WaveState& s, int r, double gamma) {
  const QuditSpec& spec = s.layout.reg(r).spec;
  const int d = spec.d;
  if (d % 2 == 0) {
    apply_matrix(s, r, kinetic_matrix(spec, gamma));
    return;
  }
  const CMat k = kinetic_matrix(spec, gamma);
  const int h = d / 2;
  std::vector<cplx> kappa(static_cast<std::size_t>(h + 1));
  for (int m = 0; m <= h; ++m) kappa[m] = k(m, 0);
  std::vector<cplx> f(static_cast<std::size_t>(d));
  for_each_fiber(s.layout, r, [&](std::size_t base, std::size_t stride) {
    for (int j = 0; j < d; ++j) f[j] = s.amp[base + j * stride];
    for (int i = 0; i < d; ++i) {
      cplx acc = kappa[0] * f[i];
      for (int m = 1; m <= h; ++m) {
        int lo = i - m, hi = i + m;
        if (lo < 0) lo += d;
        if (hi >= d) hi -= d;
        acc += kappa[m] * (f[lo] + f[hi]);
      }
      s.amp[base + i * stride] = acc;
    }
  });
}

// ---- schedules and traces ----

enum class BatchPlan { full, sequential, stochastic };

struct Schedule {
  std::function<double(int)> eta = [](int) { return 0.1; };
  std::function<double(int)> gamma = [](int) { return 0.1; };
  std::function<double(int)> sigma = [](int) { return 1.0; };
  BatchPlan plan = BatchPlan::full;
  int minibatch = 1;
  double weight_decay = 0.0;
  bool momentum_discard = false;
  long shots = 0;  // > 0: momentum means from this many samples
};

struct TraceRecord {
  int iter = 0;
  double eta = 0.0, gamma = 0.0, sigma = 0.0;
  std::vector<double> grad, phi0, pi0;
  double metric = 0.0;
  ojson extra = ojson::object();
};

inline ojson to_json(const TraceRecord& r) {
  ojson j;
  j["iter"] = r.iter;
  j["eta"] = r.eta;
  j["gamma"] = r.gamma;
  j["sigma"] = r.sigma;
  j["grad"] = r.grad;
  j["phi0"] = r.phi0;
  j["pi0"] = r.pi0;
  j["metric"] = r.metric;
  for (auto it = r.extra.begin(); it != r.extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

using TrainingTrace = std::vector<TraceRecord>;

// ---- MoMGrad ----

struct MomGradState {
  std::vector<QuditSpec> specs;
  std::vector<GaussianPointer> ptrs;
  int iter = 0;
};

inline Layout pointer_layout(const std::vector<QuditSpec>& specs) {
  Layout l;
  for (std::size_t i = 0; i < specs.size(); ++i) l.add(qudit_register("p" + std::to_string(i), specs[i]));
  return l;
}

inline WaveState pointer_state(const MomGradState& st) {
  std::vector<CVec> f;
  for (std::size_t i = 0; i < st.specs.size(); ++i) f.push_back(gaussian_amplitudes(st.specs[i], st.ptrs[i]));
  return product_state(pointer_layout(st.specs), f);
}

struct StepInfo {
  std::vector<double> grad;
  bool clamped = false;
  bool overflow = false;
  double wrap_probability = 0.0;
};

// Momentum mass on the two extreme folded bins, from a reduced density matrix.
inline double edge_mass(const QuditSpec& spec, const CMat& rho) {
  const CMat f = dft_matrix(spec.d);
  const CMat m = f * rho * f.adjoint();
  const int lo = -(spec.d / 2), hi = spec.d % 2 == 1 ? spec.d / 2 : spec.d / 2 - 1;
  double mass = 0.0;
  for (int k = 0; k < spec.d; ++k) {
    const int fk = fold_index(k, spec.d);
    if (fk == lo || fk == hi) mass += m(k, k).real();
  }
  return mass;
}

struct MomentumStats {
  std::vector<double> mean_pi, mean_phi, edge;
};

inline MomentumStats momentum_stats(const WaveState& s, const std::vector<int>& regs) {
  MomentumStats out;
  for (int r : regs) {
    const QuditSpec& spec = s.layout.reg(r).spec;
    const CMat rho = reduced_density(s, r);
    out.mean_pi.push_back((rho * momentum_matrix(spec)).trace().real());
    double m = 0.0;
    for (int j = 0; j < spec.d; ++j) m += rho(j, j).real() * spec.value(j);
    out.mean_phi.push_back(m);
    out.edge.push_back(edge_mass(spec, rho));
  }
  return out;
}

// One MoMGrad iteration. `post` (optional) sees the kicked joint state.
inline StepInfo momgrad_step(MomGradState& st, const std::vector<Kick>& batch, const Schedule& sch,
                             const std::function<void(const WaveState&)>& post = {},
                             std::mt19937_64* shot_rng = nullptr) {
  if (batch.empty()) throw std::invalid_argument("momgrad_step: empty batch");
  if (sch.shots > 0 && !shot_rng) throw std::invalid_argument("momgrad_step: shot mode needs an rng");
  const int k = st.iter;
  const double eta = sch.eta(k), gamma = sch.gamma(k), sigma = sch.sigma(k);
  if (!std::isfinite(eta) || !std::isfinite(gamma) || !(sigma > 0.0)) throw std::invalid_argument("bad schedule");
  if (sch.momentum_discard)
    for (auto& p : st.ptrs) p.pi0 = 0.0;
  for (auto& p : st.ptrs) p.sigma0 = sigma;
  WaveState s = pointer_state(st);
  std::vector<int> params(st.specs.size());
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = static_cast<int>(i);
  // Product state: per-register momenta from the single-register factors.
  std::vector<double> before;
  for (std::size_t i = 0; i < st.specs.size(); ++i)
    before.push_back(measure_momentum_expectation(prepare_gaussian(st.specs[i], st.ptrs[i]), {0})[0]);
  std::vector<ComputeBlock> blocks;
  StepInfo info;
  info.wrap_probability = sequential_minibatch_kick(s, params, batch, eta, blocks);
  if (sch.weight_decay != 0.0) weight_decay_kick(s, params, sch.weight_decay, eta);
  if (post) post(s);
  auto stats = momentum_stats(s, params);
  if (sch.shots > 0) stats.mean_pi = sample_momentum_mean(s, params, sch.shots, *shot_rng);
  for (std::size_t i = 0; i < params.size(); ++i) {
    // No kick at eta = 0; skip the readout so roundoff cannot move the pointer.
    const double shift = eta == 0.0 ? 0.0 : stats.mean_pi[i] - before[i];
    info.grad.push_back(eta == 0.0 ? 0.0 : -shift / eta);
    if (stats.edge[i] >= 0.05) info.overflow = true;
    auto& p = st.ptrs[i];
    p.pi0 += shift;
    p.phi0 += gamma * p.pi0;
    const QuditSpec& sp = st.specs[i];
    if (p.phi0 < sp.a || p.phi0 > sp.b) {
      p.phi0 = std::clamp(p.phi0, sp.a, sp.b);
      info.clamped = true;
    }
  }
  ++st.iter;
  return info;
}

// ---- QDD ----

struct QddState {
  WaveState state;  // parameter registers only
  int iter = 0;
};

struct QddInfo {
  std::vector<double> grad;
  MomentumStats after_pulse;
  bool overflow = false;
  double wrap_probability = 0.0;
};

// Kick (batched), trace out compute along one trajectory, kinetic pulse.
// `before` are the momenta of the incoming state when the caller already has them.
template <class Rng>
QddInfo qdd_step(QddState& st, const std::vector<Kick>& batch, double eta, double gamma, Rng& traj,
                 double weight_decay = 0.0, const std::vector<double>* before = nullptr,
                 const std::function<void(const WaveState&)>& post = {}) {
  if (batch.empty()) throw std::invalid_argument("qdd_step: empty batch");
  const int np = st.state.layout.size();
  std::vector<int> params(static_cast<std::size_t>(np));
  for (int i = 0; i < np; ++i) params[i] = i;
  std::vector<double> b0 = before ? *before : measure_momentum_expectation(st.state, params);
  std::vector<ComputeBlock> blocks;
  QddInfo info;
  WaveState s = st.state;
  info.wrap_probability = sequential_minibatch_kick(s, params, batch, eta, blocks);
  if (weight_decay != 0.0) weight_decay_kick(s, params, weight_decay, eta);
  if (post) post(s);
  const auto kicked = momentum_stats(s, params);
  for (int i = 0; i < np; ++i) {
    info.grad.push_back(eta == 0.0 ? 0.0 : (b0[i] - kicked.mean_pi[i]) / eta);
    if (kicked.edge[i] >= 0.05) info.overflow = true;
  }
  if (!blocks.empty()) s = trace_out_blocks(std::move(s), blocks, traj);
  for (int r : params) apply_kinetic(s, r, gamma);
  st.state = std::move(s);
  info.after_pulse = momentum_stats(st.state, params);
  ++st.iter;
  return info;
}

// ---- CAMP ----

struct CampResult {
  WaveState server;
  double replica_null_probability = 0.0;
};

inline int null_index(const QuditSpec& spec) {
  const int j = spec.nearest_index(0.0);
  if (std::abs(spec.value(j)) > 1e-12) throw std::invalid_argument("replica grid has no null eigenstate");
  return j;
}

// TENT fan-out, per-replica kicks, inverse TENT; replicas are then projected onto |0>.
// Datum j is kicked on replica j mod replica_count.
inline CampResult camp_kick(const WaveState& server, const std::vector<Kick>& batch, double eta, int replica_count) {
  if (replica_count < 1) throw std::invalid_argument("replica_count >= 1");
  if (batch.empty()) throw std::invalid_argument("camp_kick: empty batch");
  const int np = server.layout.size();
  WaveState s = server;
  std::vector<std::vector<int>> replica(static_cast<std::size_t>(replica_count));
  for (int c = 0; c < replica_count; ++c)
    for (int r = 0; r < np; ++r) {
      Register reg = server.layout.reg(r);
      reg.name += "#" + std::to_string(c + 1);
      s = append_registers(s, {reg}, basis_vector(reg.spec.d, static_cast<std::size_t>(null_index(reg.spec))));
      replica[c].push_back(s.layout.size() - 1);
    }
  for (int c = 0; c < replica_count; ++c)
    for (int r = 0; r < np; ++r) apply_permuting(s, adder(r, replica[c][r]));
  std::vector<ComputeBlock> blocks;
  const double rate = eta / static_cast<double>(batch.size());
  for (std::size_t j = 0; j < batch.size(); ++j) batch[j].apply(s, replica[j % replica_count], rate, blocks);
  for (int c = replica_count - 1; c >= 0; --c)
    for (int r = np - 1; r >= 0; --r) apply_permuting(s, adder(r, replica[c][r], -1.0));
  std::vector<int> all;
  CVec bra{cplx(1.0)};
  for (const auto& rep : replica)
    for (int r : rep) {
      all.push_back(r);
      const auto& spec = s.layout.reg(r).spec;
      const CVec e = basis_vector(spec.d, static_cast<std::size_t>(null_index(spec)));
      CVec next(bra.size() * e.size());
      for (std::size_t a = 0; a < bra.size(); ++a)
        for (std::size_t b = 0; b < e.size(); ++b) next[a * e.size() + b] = bra[a] * e[b];
      bra.swap(next);
    }
  CampResult res;
  res.server = contract(s, all, bra);
  double n = 0.0;
  for (const auto& z : res.server.amp) n += std::norm(z);
  res.replica_null_probability = n;
  if (n > 0.0) res.server.normalize();
  return res;
}

// ---- Nelder-Mead ----

struct NelderMeadOptions {
  int max_iters = 200;
  int max_evals = 100000;
  double initial_step = 0.5;
  double xtol = 1e-10;
  double ftol = 1e-12;
};

struct NelderMeadResult {
  std::vector<double> x;
  double f = 0.0;
  int iters = 0;
  int evals = 0;
  std::string stop;
  std::vector<double> best_per_iter;
  std::vector<std::vector<double>> x_per_iter;
};

inline NelderMeadResult nelder_mead(const std::function<double(const std::vector<double>&)>& obj,
                                    const std::vector<double>& init, const NelderMeadOptions& opt = {}) {
  const std::size_t n = init.size();
  NelderMeadResult res;
  std::vector<std::vector<double>> pts{init};
  for (std::size_t i = 0; i < n; ++i) {
    auto p = init;
    p[i] += opt.initial_step;
    pts.push_back(p);
  }
  std::vector<double> fs;
  auto eval = [&](const std::vector<double>& x) {
    ++res.evals;
    return obj(x);
  };
  for (auto& p : pts) fs.push_back(eval(p));
  std::vector<std::size_t> order(n + 1);
  auto sort = [&] {
    for (std::size_t i = 0; i <= n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
  };
  auto lerp = [&](const std::vector<double>& c, const std::vector<double>& w, double t) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = c[i] + t * (w[i] - c[i]);
    return out;
  };
  res.stop = "max_iterations";
  for (res.iters = 0; res.iters < opt.max_iters;) {
    sort();
    const std::size_t best = order[0], worst = order[n], second = order[n - 1];
    double diam = 0.0;
    for (std::size_t i = 1; i <= n; ++i)
      for (std::size_t c = 0; c < n; ++c) diam = std::max(diam, std::abs(pts[order[i]][c] - pts[best][c]));
    if (fs[worst] - fs[best] <= opt.ftol && diam <= opt.xtol) {
      res.stop = "converged";
      break;
    }
    if (res.evals >= opt.max_evals) {
      res.stop = "max_evaluations";
      break;
    }
    std::vector<double> cen(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < n; ++c) cen[c] += pts[order[i]][c] / static_cast<double>(n);
    const auto xr = lerp(cen, pts[worst], -1.0);
    const double fr = eval(xr);
    if (fr < fs[best]) {
      const auto xe = lerp(cen, pts[worst], -2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        fs[worst] = fe;
      } else {
        pts[worst] = xr;
        fs[worst] = fr;
      }
    } else if (fr < fs[second]) {
      pts[worst] = xr;
      fs[worst] = fr;
    } else {
      const bool outside = fr < fs[worst];
      const auto xc = outside ? lerp(cen, xr, 0.5) : lerp(cen, pts[worst], 0.5);
      const double fc = eval(xc);
      if (fc < (outside ? fr : fs[worst])) {
        pts[worst] = xc;
        fs[worst] = fc;
      } else {
        for (std::size_t i = 1; i <= n; ++i) {
          pts[order[i]] = lerp(pts[best], pts[order[i]], 0.5);
          fs[order[i]] = eval(pts[order[i]]);
        }
      }
    }
    ++res.iters;
    sort();
    res.best_per_iter.push_back(fs[order[0]]);
    res.x_per_iter.push_back(pts[order[0]]);
  }
  sort();
  res.x = pts[order[0]];
  res.f = fs[order[0]];
  return res;
}

}  // namespace baqprop
