// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include "demix/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace demix {
namespace losses {

namespace {

// Projection onto the K-shift subspace of s, P = S(S^T S + ridge)^-1 S^T,
// with S[i,k] = s[i-k] (lags 0..K-1, zeros before the start).
struct ShiftProjector {
  int K;
  std::vector<double> s;
  Eigen::LLT<Eigen::MatrixXd> llt;

  ShiftProjector(const std::vector<double>& ref, int taps)
      : K(taps), s(ref) {
    const int64_t I = static_cast<int64_t>(s.size());
    if (K < 1 || I < K) throw std::invalid_argument("ci_sdr: bad K");
    double se = 0.0;
    for (double v : s) se += v * v;
    if (se == 0.0) throw std::invalid_argument("ci_sdr: zero reference");
    // autocorrelation, then exact finite-length corrections near the end
    std::vector<double> c(K, 0.0);
    for (int d = 0; d < K; ++d)
      for (int64_t j = 0; j + d < I; ++j) c[d] += s[j] * s[j + d];
    Eigen::MatrixXd R(K, K);
    for (int a = 0; a < K; ++a)
      for (int b = 0; b <= a; ++b) {
        const int d = a - b;
        const int m = a;  // max(a,b)
        double v = c[d];
        for (int64_t j = I - m; j + d < I; ++j)
          if (j >= 0) v -= s[j] * s[j + d];
        R(a, b) = v;
        R(b, a) = v;
      }
    // K=1 is a plain scalar projection; the ridge would bias it measurably
    const double ridge = K == 1 ? 0.0 : 1e-9 * R.trace() / double(K);
    for (int a = 0; a < K; ++a) R(a, a) += ridge;
    llt.compute(R);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("ci_sdr: normal equations not SPD");
  }

  Eigen::VectorXd st_apply(const std::vector<double>& v) const {  // S^T v
    const int64_t I = static_cast<int64_t>(s.size());
    Eigen::VectorXd u = Eigen::VectorXd::Zero(K);
    for (int k = 0; k < K; ++k) {
      double acc = 0.0;
      for (int64_t j = 0; j + k < I; ++j) acc += s[j] * v[j + k];
      u[k] = acc;
    }
    return u;
  }

  std::vector<double> s_apply(const Eigen::VectorXd& a) const {  // S a
    const int64_t I = static_cast<int64_t>(s.size());
    std::vector<double> e(I, 0.0);
    for (int k = 0; k < K; ++k) {
      const double ak = a[k];
      if (ak == 0.0) continue;
      for (int64_t j = 0; j + k < I; ++j) e[j + k] += ak * s[j];
    }
    return e;
  }

  std::vector<double> project(const std::vector<double>& v) const {
    return s_apply(llt.solve(st_apply(v)));
  }
};

struct CiSdrParts {
  std::vector<double> proj;  // e = P shat
  double num = 0.0, den = 0.0;
  double loss_db = 0.0;
  bool clamped = false;
};

CiSdrParts ci_sdr_parts(const ShiftProjector& P,
                        const std::vector<double>& est) {
  if (est.size() != P.s.size())
    throw std::invalid_argument("ci_sdr: length mismatch");
  CiSdrParts parts;
  parts.proj = P.project(est);
  for (size_t i = 0; i < est.size(); ++i) {
    const double e = parts.proj[i];
    parts.num += e * e;
    const double d = e - est[i];
    parts.den += d * d;
  }
  const double floor = parts.num * std::pow(10.0, -kDbClamp / 10.0);
  if (parts.den <= floor || parts.num == 0.0) {
    parts.clamped = true;
    parts.loss_db = -kDbClamp;
  } else {
    parts.loss_db = -10.0 * std::log10(parts.num / parts.den);
    if (parts.loss_db < -kDbClamp) {
      parts.loss_db = -kDbClamp;
      parts.clamped = true;
    } else if (parts.loss_db > kDbClamp) {
      parts.loss_db = kDbClamp;
      parts.clamped = true;
    }
  }
  return parts;
}

}  // namespace

Var ci_sdr_loss_v(const Var& est, const std::vector<double>& ref, int K) {
  const Tensor& ev = est.value();
  if (ev.is_complex() || ev.ndim() != 1)
    throw std::invalid_argument("ci_sdr_loss_v: expects real 1-d estimate");
  auto P = std::make_shared<ShiftProjector>(ref, K);
  std::vector<double> e(ev.re);
  auto parts = std::make_shared<CiSdrParts>(ci_sdr_parts(*P, e));
  Tensor out = Tensor::scalar(parts->loss_db);
  Tape* tp = ops::tape_of({&est});
  if (!tp) return Var(std::move(out));
  const int ai = est.id();
  auto eh = est.holder();
  return tp->emit(
      std::move(out), {ai},
      [=](const Tensor& g, const AccumFn& acc) {
        Tensor ge = Tensor::zeros(eh->shape, Dtype::Real);
        if (!parts->clamped) {
          // d(-10 log10(num/den)) = -10/ln10 (dnum/num - dden/den)
          // dnum = 2 P e; dden = 2 (P - I)(e - shat)
          const int64_t I = eh->numel();
          std::vector<double> resid(I);
          for (int64_t i = 0; i < I; ++i)
            resid[i] = parts->proj[i] - eh->re[i];
          auto p_e = P->project(parts->proj);
          auto p_r = P->project(resid);
          const double c = -10.0 / std::log(10.0) * g.re[0];
          for (int64_t i = 0; i < I; ++i)
            ge.re[i] = c * (2.0 * p_e[i] / parts->num -
                            2.0 * (p_r[i] - resid[i]) / parts->den);
        }
        acc(ai, ge);
      },
      "ci_sdr_loss");
}

double ci_sdr_loss(const std::vector<double>& est,
                   const std::vector<double>& ref, int K) {
  ShiftProjector P(ref, K);
  return ci_sdr_parts(P, est).loss_db;
}

double ci_sdr(const std::vector<double>& est, const std::vector<double>& ref,
              int K) {
  return -ci_sdr_loss(est, ref, K);
}

double si_sdr(const std::vector<double>& est, const std::vector<double>& ref) {
  return -ci_sdr_loss(est, ref, 1);
}

double si_sir(const std::vector<double>& est,
              const std::vector<std::vector<double>>& refs, int target_index) {
  if (target_index < 0 || target_index >= static_cast<int>(refs.size()))
    throw std::invalid_argument("si_sir: bad target index");
  auto proj_energy = [&](const std::vector<double>& r) {
    double rr = 0.0, er = 0.0;
    for (size_t i = 0; i < est.size(); ++i) {
      rr += r[i] * r[i];
      er += est[i] * r[i];
    }
    if (rr < 1e-300) throw std::invalid_argument("si_sir: degenerate reference");
    return er * er / rr;
  };
  const double target = proj_energy(refs[target_index]);
  double interf = 0.0;
  for (int n = 0; n < static_cast<int>(refs.size()); ++n)
    if (n != target_index) interf += proj_energy(refs[n]);
  if (interf < 1e-300) return kDbClamp;
  if (target < 1e-300) return -kDbClamp;
  const double db = 10.0 * std::log10(target / interf);
  return std::clamp(db, -kDbClamp, kDbClamp);
}

PitResult pit_loss(const std::vector<std::vector<double>>& ests,
                   const std::vector<std::vector<double>>& refs,
                   const std::function<double(const std::vector<double>&,
                                              const std::vector<double>&)>&
                       base_loss) {
  const int N = static_cast<int>(ests.size());
  if (N != static_cast<int>(refs.size()) || N < 1 || N > 4)
    throw std::invalid_argument("pit_loss: need 1..4 matched sources");
  std::vector<std::vector<double>> table(N, std::vector<double>(N));
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) table[i][j] = base_loss(ests[i], refs[j]);
  std::vector<int> perm(N), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_loss = 0.0;
  do {
    double l = 0.0;
    for (int i = 0; i < N; ++i) l += table[i][perm[i]];
    l /= double(N);
    if (best.empty() || l < best_loss) {
      best_loss = l;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best_loss, best};
}

PitVarResult pit_loss_v(const std::vector<Var>& ests,
                        const std::vector<std::vector<double>>& refs, int K) {
  const int N = static_cast<int>(ests.size());
  if (N != static_cast<int>(refs.size()) || N < 1 || N > 4)
    throw std::invalid_argument("pit_loss_v: need 1..4 matched sources");
  std::vector<std::vector<Var>> table(N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      table[i].push_back(ci_sdr_loss_v(ests[i], refs[j], K));
  std::vector<int> perm(N), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_loss = 0.0;
  do {
    double l = 0.0;
    for (int i = 0; i < N; ++i) l += table[i][perm[i]].value().re[0];
    l /= double(N);
    if (best.empty() || l < best_loss) {
      best_loss = l;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  Var sum = table[0][best[0]];
  for (int i = 1; i < N; ++i) sum = ops::add(sum, table[i][best[i]]);
  return {ops::scale(sum, 1.0 / double(N)), best};
}

}  // namespace losses
}  // namespace demix
