// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include "demix/tiss.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace demix {
namespace tiss {

namespace op = demix::ops;

namespace {

double mean_real(const Tensor& t) {
  double s = 0.0;
  for (double v : t.re) s += v;
  return t.numel() ? s / double(t.numel()) : 0.0;
}

// constant [F,T] slice k of the stacked input, plus conj and |.|^2 views
Tensor slice_stacked(const Tensor& x, int k) {
  const int F = x.dim(1), T = x.dim(2);
  Tensor s = Tensor::zeros({F, T}, Dtype::Complex);
  const int64_t base = int64_t(k) * F * T;
  std::copy(x.re.begin() + base, x.re.begin() + base + int64_t(F) * T,
            s.re.begin());
  std::copy(x.im.begin() + base, x.im.begin() + base + int64_t(F) * T,
            s.im.begin());
  return s;
}

Tensor conj_t(const Tensor& z) {
  Tensor c = z;
  for (double& v : c.im) v = -v;
  return c;
}

Tensor abs2_t(const Tensor& z) {
  Tensor a = Tensor::zeros(z.shape, Dtype::Real);
  for (int64_t i = 0; i < z.numel(); ++i)
    a.re[i] = z.re[i] * z.re[i] + z.im[i] * z.im[i];
  return a;
}

void check_square(const std::vector<Var>& rows, const std::vector<Var>& outs,
                  const std::vector<Var>& weights) {
  const int N = static_cast<int>(rows.size());
  if (N == 0 || outs.size() != rows.size() || weights.size() != rows.size())
    throw std::invalid_argument("tiss: rows/outs/weights count mismatch");
  const int F = rows[0].value().dim(0);
  const int K = rows[0].value().dim(1);
  if (K < N) throw std::invalid_argument("tiss: stacked dim below channels");
  for (const Var& r : rows)
    if (r.value().ndim() != 2 || r.value().dim(0) != F ||
        r.value().dim(1) != K || !r.value().is_complex())
      throw std::invalid_argument("tiss: bad filter row shape");
  for (const Var& y : outs)
    if (y.value().ndim() != 2 || y.value().dim(0) != F ||
        !y.value().is_complex())
      throw std::invalid_argument("tiss: bad output shape");
  const int T = outs[0].value().dim(1);
  for (const Var& u : weights)
    if (u.value().ndim() != 2 || u.value().dim(0) != F ||
        u.value().dim(1) != T || u.value().is_complex())
      throw std::invalid_argument("tiss: bad weight shape");
}

// Hadamard bound on |det W|, with a floor so a zero row still reads as
// singular under the relative test.
double det_floor(const Eigen::MatrixXcd& W) {
  double p = 1.0;
  for (Eigen::Index n = 0; n < W.rows(); ++n) p *= W.row(n).norm();
  return 1e-12 * std::max(p, 1e-300);
}

}  // namespace

UnifiedFilter init_filter(int N, int L, int F) {
  if (N < 1 || L < 0 || F < 1)
    throw std::invalid_argument("init_filter: bad dimensions");
  UnifiedFilter p;
  p.N = N;
  p.L = L;
  p.F = F;
  const int K = N * (L + 1);
  for (int n = 0; n < N; ++n) {
    Tensor row = Tensor::zeros({F, K}, Dtype::Complex);
    for (int f = 0; f < F; ++f) row.re[row.off2(f, n)] = 1.0;
    p.rows.push_back(std::move(row));
  }
  return p;
}

Var mix_row(const Var& row, const Tensor& xstack) {
  const Tensor& r = row.value();
  if (r.ndim() != 2 || !r.is_complex() || xstack.ndim() != 3 ||
      !xstack.is_complex() || xstack.dim(0) != r.dim(1) ||
      xstack.dim(1) != r.dim(0))
    throw std::invalid_argument("mix_row: shape mismatch");
  const int F = r.dim(0), K = r.dim(1), T = xstack.dim(2);
  Tensor y = Tensor::zeros({F, T}, Dtype::Complex);
  for (int f = 0; f < F; ++f)
    for (int k = 0; k < K; ++k) {
      const cd w = r.at(r.off2(f, k));
      if (w == cd(0.0, 0.0)) continue;
      const int64_t xb = xstack.off3(k, f, 0);
      const int64_t yb = y.off2(f, 0);
      for (int t = 0; t < T; ++t) {
        const cd xv(xstack.re[xb + t], xstack.im[xb + t]);
        const cd p = w * xv;
        y.re[yb + t] += p.real();
        y.im[yb + t] += p.imag();
      }
    }
  Tape* tp = op::tape_of({&row});
  if (!tp) return Var(std::move(y));
  const int ri = row.id();
  auto xs = std::make_shared<const Tensor>(xstack);
  return tp->emit(
      std::move(y), {ri},
      [=](const Tensor& g, const AccumFn& acc) {
        Tensor gr = Tensor::zeros({F, K}, Dtype::Complex);
        for (int f = 0; f < F; ++f)
          for (int k = 0; k < K; ++k) {
            cd s(0.0, 0.0);
            const int64_t xb = xs->off3(k, f, 0);
            const int64_t gb = g.off2(f, 0);
            for (int t = 0; t < T; ++t)
              s += cd(g.re[gb + t], g.im[gb + t]) *
                   std::conj(cd(xs->re[xb + t], xs->im[xb + t]));
            gr.set(gr.off2(f, k), s);
          }
        acc(ri, gr);
      },
      "mix_row");
}

std::vector<Var> apply(const std::vector<Var>& rows, const StackedInput& x) {
  std::vector<Var> outs;
  outs.reserve(rows.size());
  for (const Var& r : rows) outs.push_back(mix_row(r, x.data));
  return outs;
}

std::vector<Var> rows_as_vars(const UnifiedFilter& p, Tape* tape) {
  std::vector<Var> v;
  v.reserve(p.rows.size());
  for (const Tensor& r : p.rows)
    v.push_back(tape ? tape->leaf(r) : Var(r));
  return v;
}

UnifiedFilter snapshot(const std::vector<Var>& rows, int L) {
  UnifiedFilter p;
  p.N = static_cast<int>(rows.size());
  p.L = L;
  p.F = rows.empty() ? 0 : rows[0].value().dim(0);
  for (const Var& r : rows) p.rows.push_back(r.value());
  return p;
}

double compute_cost(const std::vector<Var>& rows, const std::vector<Var>& outs,
                    const std::vector<Var>& weights) {
  check_square(rows, outs, weights);
  const int N = static_cast<int>(rows.size());
  const int F = rows[0].value().dim(0);
  const int T = outs[0].value().dim(1);
  double cost = 0.0;
  Eigen::MatrixXcd W(N, N);
  for (int f = 0; f < F; ++f) {
    for (int n = 0; n < N; ++n) {
      const Tensor& r = rows[n].value();
      for (int k = 0; k < N; ++k) W(n, k) = r.at(r.off2(f, k));
    }
    const cd det = W.determinant();
    // scale-relative test: Hadamard bounds |det| by the row-norm product,
    // so this flags rank deficiency but not a uniformly rescaled W
    if (std::abs(det) < det_floor(W))
      throw std::domain_error("compute_cost: singular demixing matrix");
    cost -= 2.0 * std::log(std::abs(det));
  }
  for (int n = 0; n < N; ++n) {
    const Tensor& u = weights[n].value();
    const Tensor& y = outs[n].value();
    double s = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i)
      s += u.re[i] * (y.re[i] * y.re[i] + y.im[i] * y.im[i]);
    cost += s / double(T);
  }
  return cost;
}

void iss_sweep(std::vector<Var>& rows, std::vector<Var>& outs,
               const StackedInput& x, const std::vector<Var>& weights) {
  check_square(rows, outs, weights);
  const int N = static_cast<int>(rows.size());
  const int K = rows[0].value().dim(1);
  const int T = outs[0].value().dim(1);
  if (x.data.dim(0) != K)
    throw std::invalid_argument("iss_sweep: stacked input dim mismatch");

  // spatial updates: rank-1 subtraction of source n from every output
  for (int n = 0; n < N; ++n) {
    const Var yn = outs[n];
    const Var pn = rows[n];
    const Var a2 = op::abs2(yn);
    std::vector<Var> v(N);
    for (int m = 0; m < N; ++m) {
      if (m == n) {
        Var d = op::scale(op::sum_cols(op::mul(weights[n], a2)),
                          1.0 / double(T));
        const double eps = kDivFloorRel * std::max(mean_real(d.value()), 0.0);
        Var r = op::rsqrt_f(d, eps > 0.0 ? eps : 1e-300);
        Var one = op::constant(Tensor::full({d.value().dim(0)}, 1.0));
        v[m] = op::real_to_complex(op::sub(one, r));
      } else {
        Var num = op::sum_cols(
            op::mul_rc(weights[m], op::mul(outs[m], op::conj(yn))));
        Var den = op::sum_cols(op::mul(weights[m], a2));
        const double eps =
            kDivFloorRel * std::max(mean_real(den.value()), 0.0);
        v[m] = op::div_cr(num, den, eps > 0.0 ? eps : 1e-300);
      }
    }
    for (int m = 0; m < N; ++m) {
      outs[m] = op::sub(outs[m], op::scale_rows(yn, v[m]));
      rows[m] = op::sub(rows[m], op::scale_rows(pn, v[m]));
    }
  }

  // tap updates: subtract the delayed input column n from every output,
  // touching only column n of each filter row
  for (int n = N; n < K; ++n) {
    const Tensor xn = slice_stacked(x.data, n);
    const Var xn_v(xn);
    const Var cxn(conj_t(xn));
    const Var a2(abs2_t(xn));
    std::vector<Var> v(N);
    for (int m = 0; m < N; ++m) {
      Var num =
          op::sum_cols(op::mul_rc(weights[m], op::mul(outs[m], cxn)));
      Var den = op::sum_cols(op::mul(weights[m], a2));
      const double eps = kDivFloorRel * std::max(mean_real(den.value()), 0.0);
      v[m] = op::div_cr(num, den, eps > 0.0 ? eps : 1e-300);
    }
    for (int m = 0; m < N; ++m) {
      outs[m] = op::sub(outs[m], op::scale_rows(xn_v, v[m]));
      rows[m] = op::sub_col(rows[m], v[m], n);
    }
  }
}

Var projection_back(const std::vector<Var>& outs, const std::vector<Var>& rows,
                    int ref_channel) {
  const int N = static_cast<int>(outs.size());
  if (N == 0 || rows.size() != outs.size())
    throw std::invalid_argument("projection_back: rows/outs mismatch");
  if (ref_channel < 0 || ref_channel >= N)
    throw std::invalid_argument("projection_back: bad reference channel");
  const int F = outs[0].value().dim(0);
  const int T = outs[0].value().dim(1);

  // per-frequency inverse of the demixing block, saved for the backward pass
  auto inv = std::make_shared<std::vector<Eigen::MatrixXcd>>();
  inv->reserve(F);
  Eigen::MatrixXcd W(N, N);
  for (int f = 0; f < F; ++f) {
    for (int n = 0; n < N; ++n) {
      const Tensor& r = rows[n].value();
      for (int k = 0; k < N; ++k) W(n, k) = r.at(r.off2(f, k));
    }
    Eigen::PartialPivLU<Eigen::MatrixXcd> lu(W);
    if (std::abs(lu.determinant()) < det_floor(W))
      throw std::domain_error("projection_back: singular demixing matrix");
    inv->push_back(lu.inverse());
  }

  Tensor out = Tensor::zeros({N, F, T}, Dtype::Complex);
  for (int n = 0; n < N; ++n) {
    const Tensor& y = outs[n].value();
    for (int f = 0; f < F; ++f) {
      const cd a = (*inv)[f](ref_channel, n);
      const int64_t ob = out.off3(n, f, 0);
      const int64_t yb = y.off2(f, 0);
      for (int t = 0; t < T; ++t) {
        const cd p = a * cd(y.re[yb + t], y.im[yb + t]);
        out.re[ob + t] = p.real();
        out.im[ob + t] = p.imag();
      }
    }
  }

  std::vector<const Var*> all;
  for (const Var& v : outs) all.push_back(&v);
  for (const Var& v : rows) all.push_back(&v);
  Tape* tp = nullptr;
  for (const Var* v : all) {
    if (!v->taped()) continue;
    if (tp && tp != v->tape())
      throw std::logic_error("projection_back: mixed tapes");
    tp = v->tape();
  }
  if (!tp) return Var(std::move(out));
  for (const Var* v : all)
    if (!v->taped())
      throw std::logic_error("projection_back: mixed taped/constant inputs");

  std::vector<int> parents;
  std::vector<std::shared_ptr<const Tensor>> yh, rh;
  for (const Var& v : outs) {
    parents.push_back(v.id());
    yh.push_back(v.holder());
  }
  for (const Var& v : rows) {
    parents.push_back(v.id());
    rh.push_back(v.holder());
  }
  std::vector<int> ids = parents;
  const int ref = ref_channel;
  return tp->emit(
      std::move(out), std::move(parents),
      [=](const Tensor& g, const AccumFn& acc) {
        const int Kdim = rh[0]->dim(1);
        // adjoint of the per-frequency scale a_{n,f} = (W_f^-1)[ref, n]
        std::vector<Tensor> gy(N), gr(N);
        for (int n = 0; n < N; ++n) {
          gy[n] = Tensor::zeros({F, T}, Dtype::Complex);
          gr[n] = Tensor::zeros({F, Kdim}, Dtype::Complex);
        }
        Eigen::VectorXcd ga(N);
        for (int f = 0; f < F; ++f) {
          const Eigen::MatrixXcd& A = (*inv)[f];
          for (int n = 0; n < N; ++n) {
            const cd a = A(ref, n);
            const Tensor& y = *yh[n];
            const int64_t gb = g.off3(n, f, 0);
            const int64_t yb = y.off2(f, 0);
            cd s(0.0, 0.0);
            for (int t = 0; t < T; ++t) {
              const cd gv(g.re[gb + t], g.im[gb + t]);
              gy[n].re[yb + t] += (std::conj(a) * gv).real();
              gy[n].im[yb + t] += (std::conj(a) * gv).imag();
              s += std::conj(cd(y.re[yb + t], y.im[yb + t])) * gv;
            }
            ga(n) = s;
          }
          // dA(ref,n)/dW(j,k) = -A(ref,j) A(k,n), holomorphic
          for (int j = 0; j < N; ++j)
            for (int k = 0; k < N; ++k) {
              cd s(0.0, 0.0);
              for (int n = 0; n < N; ++n)
                s += std::conj(A(k, n)) * ga(n);
              const cd gw = -std::conj(A(ref, j)) * s;
              gr[j].re[gr[j].off2(f, k)] += gw.real();
              gr[j].im[gr[j].off2(f, k)] += gw.imag();
            }
        }
        for (int n = 0; n < N; ++n) acc(ids[n], gy[n]);
        for (int n = 0; n < N; ++n) acc(ids[N + n], gr[n]);
      },
      "projection_back");
}

Waveform separate(const Waveform& x, const WeightFn& weights, int iterations,
                  int delay, int taps, int window, int hop) {
  if (x.num_channels() < 2)
    throw std::invalid_argument("separate: need at least two channels");
  const int N = x.num_channels();
  const int64_t I = x.num_samples();
  Tensor X = stft::analyze(x, window, hop);
  StackedInput xs = stack_delayed(X, delay, taps);
  const int F = X.dim(1);
  UnifiedFilter p0 = init_filter(N, taps, F);
  std::vector<Var> rows = rows_as_vars(p0, nullptr);
  std::vector<Var> outs = tiss::apply(rows, xs);
  for (int j = 0; j < iterations; ++j) {
    std::vector<Var> u = weights(outs);
    iss_sweep(rows, outs, xs, u);
  }
  Var projected = projection_back(outs, rows, 0);
  Waveform out;
  out.sample_rate = x.sample_rate;
  const Tensor& P = projected.value();
  const int T = P.dim(2);
  for (int n = 0; n < N; ++n) {
    Tensor S = Tensor::zeros({F, T}, Dtype::Complex);
    const int64_t base = int64_t(n) * F * T;
    std::copy(P.re.begin() + base, P.re.begin() + base + int64_t(F) * T,
              S.re.begin());
    std::copy(P.im.begin() + base, P.im.begin() + base + int64_t(F) * T,
              S.im.begin());
    out.channels.push_back(stft::synthesize(S, window, hop, I));
  }
  return out;
}

}  // namespace tiss
}  // namespace demix
