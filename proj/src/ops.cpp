// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include "demix/ops.hpp"

#include <algorithm>
#include <cmath>

namespace demix {
namespace ops {

namespace {

void check_same(const Var& a, const Var& b, const char* op) {
  if (a.value().shape != b.value().shape || a.value().dtype != b.value().dtype)
    throw std::invalid_argument(std::string(op) + ": shape/dtype mismatch " +
                                shape_str(a.value().shape) + " vs " +
                                shape_str(b.value().shape));
}

std::vector<int> collect_parents(std::initializer_list<const Var*> vars) {
  std::vector<int> p;
  for (const Var* v : vars)
    if (v->taped()) p.push_back(v->id());
  return p;
}

}  // namespace

Tape* tape_of(std::initializer_list<const Var*> vars) {
  Tape* t = nullptr;
  for (const Var* v : vars) {
    if (!v->taped()) continue;
    if (t && t != v->tape())
      throw std::logic_error("ops: inputs recorded on different tapes");
    t = v->tape();
  }
  return t;
}

Var constant(Tensor t) { return Var(std::move(t)); }

Var add(const Var& a, const Var& b) {
  check_same(a, b, "add");
  Tensor out = a.value();
  out += b.value();
  Tape* tp = tape_of({&a, &b});
  if (!tp) return Var(std::move(out));
  bool at = a.taped(), bt = b.taped();
  int ai = a.id(), bi = b.id();
  return tp->emit(std::move(out), collect_parents({&a, &b}),
                  [=](const Tensor& g, const AccumFn& acc) {
                    if (at) acc(ai, g);
                    if (bt) acc(bi, g);
                  },
                  "add");
}

Var sub(const Var& a, const Var& b) {
  check_same(a, b, "sub");
  Tensor out = a.value();
  for (size_t i = 0; i < out.re.size(); ++i) out.re[i] -= b.value().re[i];
  for (size_t i = 0; i < out.im.size(); ++i) out.im[i] -= b.value().im[i];
  Tape* tp = tape_of({&a, &b});
  if (!tp) return Var(std::move(out));
  bool at = a.taped(), bt = b.taped();
  int ai = a.id(), bi = b.id();
  return tp->emit(std::move(out), collect_parents({&a, &b}),
                  [=](const Tensor& g, const AccumFn& acc) {
                    if (at) acc(ai, g);
                    if (bt) {
                      Tensor ng = g;
                      ng *= -1.0;
                      acc(bi, ng);
                    }
                  },
                  "sub");
}

Var neg(const Var& a) {
  Tensor out = a.value();
  out *= -1.0;
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor ng = g;
                    ng *= -1.0;
                    acc(ai, ng);
                  },
                  "neg");
}

Var mul(const Var& a, const Var& b) {
  check_same(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = Tensor::zeros(av.shape, av.dtype);
  const int64_t n = av.numel();
  if (av.is_complex()) {
    for (int64_t i = 0; i < n; ++i) out.set(i, av.at(i) * bv.at(i));
  } else {
    for (int64_t i = 0; i < n; ++i) out.re[i] = av.re[i] * bv.re[i];
  }
  Tape* tp = tape_of({&a, &b});
  if (!tp) return Var(std::move(out));
  bool at = a.taped(), bt = b.taped();
  int ai = a.id(), bi = b.id();
  auto ah = a.holder(), bh = b.holder();
  return tp->emit(
      std::move(out), collect_parents({&a, &b}),
      [=](const Tensor& g, const AccumFn& acc) {
        auto side = [&](const Tensor& other, int id) {
          Tensor gg = Tensor::zeros(g.shape, g.dtype);
          if (g.is_complex()) {
            for (int64_t i = 0; i < g.numel(); ++i)
              gg.set(i, std::conj(other.at(i)) * g.at(i));
          } else {
            for (int64_t i = 0; i < g.numel(); ++i)
              gg.re[i] = other.re[i] * g.re[i];
          }
          acc(id, gg);
        };
        if (at) side(*bh, ai);
        if (bt) side(*ah, bi);
      },
      "mul");
}

Var mul_rc(const Var& r, const Var& c) {
  const Tensor& rv = r.value();
  const Tensor& cv = c.value();
  if (rv.is_complex() || !cv.is_complex() || rv.shape != cv.shape)
    throw std::invalid_argument("mul_rc: expects real, complex of same shape");
  Tensor out = Tensor::zeros(cv.shape, Dtype::Complex);
  const int64_t n = cv.numel();
  for (int64_t i = 0; i < n; ++i) {
    out.re[i] = rv.re[i] * cv.re[i];
    out.im[i] = rv.re[i] * cv.im[i];
  }
  Tape* tp = tape_of({&r, &c});
  if (!tp) return Var(std::move(out));
  bool rt = r.taped(), ct = c.taped();
  int ri = r.id(), ci = c.id();
  auto rh = r.holder(), ch = c.holder();
  return tp->emit(
      std::move(out), collect_parents({&r, &c}),
      [=](const Tensor& g, const AccumFn& acc) {
        const int64_t m = g.numel();
        if (rt) {
          Tensor gr = Tensor::zeros(rh->shape, Dtype::Real);
          for (int64_t i = 0; i < m; ++i)
            gr.re[i] = ch->re[i] * g.re[i] + ch->im[i] * g.im[i];
          acc(ri, gr);
        }
        if (ct) {
          Tensor gc = Tensor::zeros(ch->shape, Dtype::Complex);
          for (int64_t i = 0; i < m; ++i) {
            gc.re[i] = rh->re[i] * g.re[i];
            gc.im[i] = rh->re[i] * g.im[i];
          }
          acc(ci, gc);
        }
      },
      "mul_rc");
}

Var conj(const Var& a) {
  if (!a.value().is_complex())
    throw std::invalid_argument("conj: expects complex");
  Tensor out = a.value();
  for (double& v : out.im) v = -v;
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = g;
                    for (double& v : gg.im) v = -v;
                    acc(ai, gg);
                  },
                  "conj");
}

Var abs2(const Var& a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::zeros(av.shape, Dtype::Real);
  const int64_t n = av.numel();
  if (av.is_complex()) {
    for (int64_t i = 0; i < n; ++i)
      out.re[i] = av.re[i] * av.re[i] + av.im[i] * av.im[i];
  } else {
    for (int64_t i = 0; i < n; ++i) out.re[i] = av.re[i] * av.re[i];
  }
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  auto ah = a.holder();
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = Tensor::zeros(ah->shape, ah->dtype);
                    for (int64_t i = 0; i < gg.numel(); ++i) {
                      gg.re[i] = 2.0 * ah->re[i] * g.re[i];
                      if (!gg.im.empty()) gg.im[i] = 2.0 * ah->im[i] * g.re[i];
                    }
                    acc(ai, gg);
                  },
                  "abs2");
}

namespace {

// Shared scaffold for real elementwise unary ops: y = f(x), g_x = df(x,y)*g.
Var real_unary(const Var& a, const char* name,
               const std::function<double(double)>& f,
               const std::function<double(double, double)>& df) {
  const Tensor& av = a.value();
  if (av.is_complex())
    throw std::invalid_argument(std::string(name) + ": expects real");
  Tensor out = Tensor::zeros(av.shape, Dtype::Real);
  for (int64_t i = 0; i < av.numel(); ++i) out.re[i] = f(av.re[i]);
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  auto ah = a.holder();
  auto oh = std::make_shared<Tensor>(out);
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = Tensor::zeros(ah->shape, Dtype::Real);
                    for (int64_t i = 0; i < gg.numel(); ++i)
                      gg.re[i] = df(ah->re[i], oh->re[i]) * g.re[i];
                    acc(ai, gg);
                  },
                  name);
}

}  // namespace

Var sqrt_f(const Var& a, double floor) {
  return real_unary(
      a, "sqrt",
      [=](double x) { return std::sqrt(std::max(x, floor)); },
      [=](double x, double y) { return x > floor ? 0.5 / y : 0.0; });
}

Var rsqrt_f(const Var& a, double floor) {
  return real_unary(
      a, "rsqrt",
      [=](double x) { return 1.0 / std::sqrt(std::max(x, floor)); },
      [=](double x, double y) { return x > floor ? -0.5 * y * y * y : 0.0; });
}

Var reciprocal_f(const Var& a, double floor) {
  return real_unary(
      a, "reciprocal",
      [=](double x) { return 1.0 / std::max(x, floor); },
      [=](double x, double y) { return x > floor ? -y * y : 0.0; });
}

Var clamp_min(const Var& a, double c) {
  return real_unary(
      a, "clamp_min", [=](double x) { return std::max(x, c); },
      [=](double x, double) { return x > c ? 1.0 : 0.0; });
}

Var log1p_v(const Var& a) {
  return real_unary(
      a, "log1p", [](double x) { return std::log1p(x); },
      [](double x, double) { return 1.0 / (1.0 + x); });
}

Var sigmoid(const Var& a) {
  return real_unary(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var div_cr(const Var& num, const Var& den, double floor) {
  const Tensor& nv = num.value();
  const Tensor& dv = den.value();
  if (!nv.is_complex() || dv.is_complex() || nv.shape != dv.shape)
    throw std::invalid_argument("div_cr: expects complex / real, same shape");
  Tensor out = Tensor::zeros(nv.shape, Dtype::Complex);
  const int64_t n = nv.numel();
  for (int64_t i = 0; i < n; ++i) {
    double d = std::max(dv.re[i], floor);
    out.re[i] = nv.re[i] / d;
    out.im[i] = nv.im[i] / d;
  }
  Tape* tp = tape_of({&num, &den});
  if (!tp) return Var(std::move(out));
  bool nt = num.taped(), dt = den.taped();
  int ni = num.id(), di = den.id();
  auto nh = num.holder(), dh = den.holder();
  return tp->emit(
      std::move(out), collect_parents({&num, &den}),
      [=](const Tensor& g, const AccumFn& acc) {
        const int64_t m = g.numel();
        if (nt) {
          Tensor gn = Tensor::zeros(nh->shape, Dtype::Complex);
          for (int64_t i = 0; i < m; ++i) {
            double d = std::max(dh->re[i], floor);
            gn.re[i] = g.re[i] / d;
            gn.im[i] = g.im[i] / d;
          }
          acc(ni, gn);
        }
        if (dt) {
          Tensor gd = Tensor::zeros(dh->shape, Dtype::Real);
          for (int64_t i = 0; i < m; ++i) {
            double d = std::max(dh->re[i], floor);
            if (dh->re[i] > floor)
              gd.re[i] = -(g.re[i] * nh->re[i] + g.im[i] * nh->im[i]) / (d * d);
          }
          acc(di, gd);
        }
      },
      "div_cr");
}

Var div_rr(const Var& num, const Var& den, double floor) {
  const Tensor& nv = num.value();
  const Tensor& dv = den.value();
  if (nv.is_complex() || dv.is_complex() || nv.shape != dv.shape)
    throw std::invalid_argument("div_rr: expects real / real, same shape");
  Tensor out = Tensor::zeros(nv.shape, Dtype::Real);
  for (int64_t i = 0; i < nv.numel(); ++i)
    out.re[i] = nv.re[i] / std::max(dv.re[i], floor);
  Tape* tp = tape_of({&num, &den});
  if (!tp) return Var(std::move(out));
  bool nt = num.taped(), dt = den.taped();
  int ni = num.id(), di = den.id();
  auto nh = num.holder(), dh = den.holder();
  return tp->emit(
      std::move(out), collect_parents({&num, &den}),
      [=](const Tensor& g, const AccumFn& acc) {
        const int64_t m = g.numel();
        if (nt) {
          Tensor gn = Tensor::zeros(nh->shape, Dtype::Real);
          for (int64_t i = 0; i < m; ++i)
            gn.re[i] = g.re[i] / std::max(dh->re[i], floor);
          acc(ni, gn);
        }
        if (dt) {
          Tensor gd = Tensor::zeros(dh->shape, Dtype::Real);
          for (int64_t i = 0; i < m; ++i) {
            double d = std::max(dh->re[i], floor);
            if (dh->re[i] > floor) gd.re[i] = -g.re[i] * nh->re[i] / (d * d);
          }
          acc(di, gd);
        }
      },
      "div_rr");
}

Var real_part(const Var& a) {
  const Tensor& av = a.value();
  if (!av.is_complex()) throw std::invalid_argument("real_part: expects complex");
  Tensor out = Tensor::zeros(av.shape, Dtype::Real);
  out.re = av.re;
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  auto ah = a.holder();
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = Tensor::zeros(ah->shape, Dtype::Complex);
                    gg.re = g.re;
                    acc(ai, gg);
                  },
                  "real_part");
}

Var imag_part(const Var& a) {
  const Tensor& av = a.value();
  if (!av.is_complex()) throw std::invalid_argument("imag_part: expects complex");
  Tensor out = Tensor::zeros(av.shape, Dtype::Real);
  out.re = av.im;
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  auto ah = a.holder();
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = Tensor::zeros(ah->shape, Dtype::Complex);
                    gg.im = g.re;
                    acc(ai, gg);
                  },
                  "imag_part");
}

Var make_complex(const Var& re, const Var& im) {
  check_same(re, im, "make_complex");
  if (re.value().is_complex())
    throw std::invalid_argument("make_complex: expects real inputs");
  Tensor out = Tensor::zeros(re.value().shape, Dtype::Complex);
  out.re = re.value().re;
  out.im = im.value().re;
  Tape* tp = tape_of({&re, &im});
  if (!tp) return Var(std::move(out));
  bool rt = re.taped(), it = im.taped();
  int ri = re.id(), ii = im.id();
  auto sh = re.value().shape;
  return tp->emit(std::move(out), collect_parents({&re, &im}),
                  [=](const Tensor& g, const AccumFn& acc) {
                    if (rt) {
                      Tensor gr = Tensor::zeros(sh, Dtype::Real);
                      gr.re = g.re;
                      acc(ri, gr);
                    }
                    if (it) {
                      Tensor gi = Tensor::zeros(sh, Dtype::Real);
                      gi.re = g.im;
                      acc(ii, gi);
                    }
                  },
                  "make_complex");
}

Var real_to_complex(const Var& r) {
  if (r.value().is_complex())
    throw std::invalid_argument("real_to_complex: expects real");
  Tensor out = Tensor::zeros(r.value().shape, Dtype::Complex);
  out.re = r.value().re;
  Tape* tp = tape_of({&r});
  if (!tp) return Var(std::move(out));
  int ri = r.id();
  auto sh = r.value().shape;
  return tp->emit(std::move(out), {ri},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gr = Tensor::zeros(sh, Dtype::Real);
                    gr.re = g.re;
                    acc(ri, gr);
                  },
                  "real_to_complex");
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  out *= s;
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = g;
                    gg *= s;
                    acc(ai, gg);
                  },
                  "scale");
}

Var mul_scalar(const Var& a, const Var& s) {
  const Tensor& sv = s.value();
  if (sv.is_complex() || sv.numel() != 1)
    throw std::invalid_argument("mul_scalar: scale must be a real [1] tensor");
  const double s0 = sv.re[0];
  Tensor out = a.value();
  out *= s0;
  Tape* tp = tape_of({&a, &s});
  if (!tp) return Var(std::move(out));
  int ai = a.id(), si = s.id();
  Tensor av = a.value();
  return tp->emit(std::move(out), {ai, si},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor ga = g;
                    ga *= s0;
                    acc(ai, ga);
                    Tensor gs = Tensor::zeros({1}, Dtype::Real);
                    double sum = 0.0;
                    if (av.is_complex())
                      for (int64_t i = 0; i < av.numel(); ++i)
                        sum += av.re[i] * g.re[i] + av.im[i] * g.im[i];
                    else
                      for (int64_t i = 0; i < av.numel(); ++i)
                        sum += av.re[i] * g.re[i];
                    gs.re[0] = sum;
                    acc(si, gs);
                  },
                  "mul_scalar");
}

Var reshape(const Var& a, std::vector<int> shape) {
  const Tensor& av = a.value();
  Tensor out = av;
  out.shape = shape;
  if (out.numel() != av.numel())
    throw std::invalid_argument("reshape: element count mismatch " +
                                shape_str(av.shape) + " -> " +
                                shape_str(shape));
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  auto sh = av.shape;
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = g;
                    gg.shape = sh;
                    acc(ai, gg);
                  },
                  "reshape");
}

Var sum_all(const Var& a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::zeros({1}, av.dtype);
  for (double v : av.re) out.re[0] += v;
  if (av.is_complex())
    for (double v : av.im) out.im[0] += v;
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  auto sh = av.shape;
  auto dt = av.dtype;
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = Tensor::zeros(sh, dt);
                    std::fill(gg.re.begin(), gg.re.end(), g.re[0]);
                    if (!gg.im.empty())
                      std::fill(gg.im.begin(), gg.im.end(), g.im[0]);
                    acc(ai, gg);
                  },
                  "sum_all");
}

Var mean_all(const Var& a) {
  return scale(sum_all(a), 1.0 / double(a.value().numel()));
}

Var sum_cols(const Var& a) {
  const Tensor& av = a.value();
  if (av.ndim() != 2) throw std::invalid_argument("sum_cols: expects 2-d");
  const int rows = av.dim(0), cols = av.dim(1);
  Tensor out = Tensor::zeros({rows}, av.dtype);
  for (int i = 0; i < rows; ++i) {
    double sr = 0.0, si = 0.0;
    for (int j = 0; j < cols; ++j) {
      sr += av.re[av.off2(i, j)];
      if (av.is_complex()) si += av.im[av.off2(i, j)];
    }
    out.re[i] = sr;
    if (av.is_complex()) out.im[i] = si;
  }
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  auto sh = av.shape;
  auto dt = av.dtype;
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = Tensor::zeros(sh, dt);
                    for (int i = 0; i < sh[0]; ++i)
                      for (int j = 0; j < sh[1]; ++j) {
                        gg.re[gg.off2(i, j)] = g.re[i];
                        if (!gg.im.empty()) gg.im[gg.off2(i, j)] = g.im[i];
                      }
                    acc(ai, gg);
                  },
                  "sum_cols");
}

Var scale_rows(const Var& x, const Var& v) {
  const Tensor& xv = x.value();
  const Tensor& vv = v.value();
  if (!xv.is_complex() || !vv.is_complex() || vv.ndim() != 1 ||
      xv.dim(0) != vv.dim(0))
    throw std::invalid_argument("scale_rows: expects complex x[A,...], v[A]");
  const int rows = xv.dim(0);
  const int64_t inner = xv.numel() / rows;
  Tensor out = Tensor::zeros(xv.shape, Dtype::Complex);
  for (int i = 0; i < rows; ++i) {
    const cd s = vv.at(i);
    for (int64_t j = 0; j < inner; ++j) {
      const int64_t k = i * inner + j;
      out.re[k] = s.real() * xv.re[k] - s.imag() * xv.im[k];
      out.im[k] = s.real() * xv.im[k] + s.imag() * xv.re[k];
    }
  }
  Tape* tp = tape_of({&x, &v});
  if (!tp) return Var(std::move(out));
  bool xt = x.taped(), vt = v.taped();
  int xi = x.id(), vi = v.id();
  auto xh = x.holder(), vh = v.holder();
  return tp->emit(
      std::move(out), collect_parents({&x, &v}),
      [=](const Tensor& g, const AccumFn& acc) {
        const int r = xh->dim(0);
        const int64_t in = xh->numel() / r;
        if (xt) {
          Tensor gx = Tensor::zeros(xh->shape, Dtype::Complex);
          for (int i = 0; i < r; ++i) {
            const cd s = std::conj(vh->at(i));
            for (int64_t j = 0; j < in; ++j) {
              const int64_t k = i * in + j;
              const cd gv = s * cd(g.re[k], g.im[k]);
              gx.re[k] = gv.real();
              gx.im[k] = gv.imag();
            }
          }
          acc(xi, gx);
        }
        if (vt) {
          Tensor gv = Tensor::zeros(vh->shape, Dtype::Complex);
          for (int i = 0; i < r; ++i) {
            cd s = 0.0;
            for (int64_t j = 0; j < in; ++j) {
              const int64_t k = i * in + j;
              s += std::conj(xh->at(k)) * cd(g.re[k], g.im[k]);
            }
            gv.set(i, s);
          }
          acc(vi, gv);
        }
      },
      "scale_rows");
}

Var sub_col(const Var& m, const Var& v, int col) {
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  if (mv.ndim() != 2 || vv.ndim() != 1 || mv.dim(0) != vv.dim(0) ||
      !mv.is_complex() || !vv.is_complex() || col < 0 || col >= mv.dim(1))
    throw std::invalid_argument("sub_col: bad arguments");
  Tensor out = mv;
  for (int i = 0; i < mv.dim(0); ++i) {
    out.re[out.off2(i, col)] -= vv.re[i];
    out.im[out.off2(i, col)] -= vv.im[i];
  }
  Tape* tp = tape_of({&m, &v});
  if (!tp) return Var(std::move(out));
  bool mt = m.taped(), vt = v.taped();
  int mi = m.id(), vi = v.id();
  auto sh = mv.shape;
  return tp->emit(std::move(out), collect_parents({&m, &v}),
                  [=](const Tensor& g, const AccumFn& acc) {
                    if (mt) acc(mi, g);
                    if (vt) {
                      Tensor gv = Tensor::zeros({sh[0]}, Dtype::Complex);
                      for (int i = 0; i < sh[0]; ++i) {
                        gv.re[i] = -g.re[g.off2(i, col)];
                        gv.im[i] = -g.im[g.off2(i, col)];
                      }
                      acc(vi, gv);
                    }
                  },
                  "sub_col");
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0) ||
      av.dtype != bv.dtype)
    throw std::invalid_argument("matmul: bad shapes " + shape_str(av.shape) +
                                " x " + shape_str(bv.shape));
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  const bool cx = av.is_complex();
  Tensor out = Tensor::zeros({m, n}, av.dtype);
  for (int i = 0; i < m; ++i)
    for (int l = 0; l < k; ++l) {
      const cd x = av.at(av.off2(i, l));
      for (int j = 0; j < n; ++j) {
        const cd y = x * bv.at(bv.off2(l, j));
        out.re[out.off2(i, j)] += y.real();
        if (cx) out.im[out.off2(i, j)] += y.imag();
      }
    }
  Tape* tp = tape_of({&a, &b});
  if (!tp) return Var(std::move(out));
  bool at = a.taped(), bt = b.taped();
  int ai = a.id(), bi = b.id();
  auto ah = a.holder(), bh = b.holder();
  return tp->emit(
      std::move(out), collect_parents({&a, &b}),
      [=](const Tensor& g, const AccumFn& acc) {
        // gA = g * B^H, gB = A^H * g (reduces to transposes for real)
        if (at) {
          Tensor ga = Tensor::zeros(ah->shape, ah->dtype);
          for (int i = 0; i < m; ++i)
            for (int l = 0; l < k; ++l) {
              cd s = 0.0;
              for (int j = 0; j < n; ++j)
                s += g.at(g.off2(i, j)) * std::conj(bh->at(bh->off2(l, j)));
              ga.set(ga.off2(i, l), cx ? s : cd(s.real(), 0.0));
            }
          acc(ai, ga);
        }
        if (bt) {
          Tensor gb = Tensor::zeros(bh->shape, bh->dtype);
          for (int l = 0; l < k; ++l)
            for (int j = 0; j < n; ++j) {
              cd s = 0.0;
              for (int i = 0; i < m; ++i)
                s += std::conj(ah->at(ah->off2(i, l))) * g.at(g.off2(i, j));
              gb.set(gb.off2(l, j), cx ? s : cd(s.real(), 0.0));
            }
          acc(bi, gb);
        }
      },
      "matmul");
}

Var concat0(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat0: empty");
  std::vector<int> sh = parts[0].value().shape;
  Dtype dt = parts[0].value().dtype;
  int total = 0;
  for (const Var& p : parts) {
    if (p.value().ndim() != static_cast<int>(sh.size()) ||
        p.value().dtype != dt)
      throw std::invalid_argument("concat0: mismatched parts");
    total += p.value().dim(0);
  }
  sh[0] = total;
  Tensor out = Tensor::zeros(sh, dt);
  int64_t off = 0;
  std::vector<int64_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Tensor& pv = p.value();
    std::copy(pv.re.begin(), pv.re.end(), out.re.begin() + off);
    if (dt == Dtype::Complex)
      std::copy(pv.im.begin(), pv.im.end(), out.im.begin() + off);
    off += pv.numel();
  }
  std::vector<const Var*> ptrs;
  for (const Var& p : parts) ptrs.push_back(&p);
  Tape* tp = nullptr;
  for (const Var* p : ptrs)
    if (p->taped()) {
      if (tp && tp != p->tape())
        throw std::logic_error("concat0: inputs on different tapes");
      tp = p->tape();
    }
  if (!tp) return Var(std::move(out));
  std::vector<int> parents;
  std::vector<std::tuple<int, int64_t, std::vector<int>>> routed;  // id, off, shape
  for (size_t i = 0; i < parts.size(); ++i)
    if (parts[i].taped()) {
      parents.push_back(parts[i].id());
      routed.emplace_back(parts[i].id(), offsets[i], parts[i].value().shape);
    }
  return tp->emit(std::move(out), parents,
                  [=](const Tensor& g, const AccumFn& acc) {
                    for (const auto& [id, o, psh] : routed) {
                      Tensor gp = Tensor::zeros(psh, dt);
                      std::copy(g.re.begin() + o, g.re.begin() + o + gp.numel(),
                                gp.re.begin());
                      if (dt == Dtype::Complex)
                        std::copy(g.im.begin() + o,
                                  g.im.begin() + o + gp.numel(),
                                  gp.im.begin());
                      acc(id, gp);
                    }
                  },
                  "concat0");
}

Var slice0(const Var& a, int begin, int end) {
  const Tensor& av = a.value();
  if (begin < 0 || end > av.dim(0) || begin >= end)
    throw std::invalid_argument("slice0: bad range");
  std::vector<int> sh = av.shape;
  sh[0] = end - begin;
  const int64_t inner = av.numel() / av.dim(0);
  Tensor out = Tensor::zeros(sh, av.dtype);
  std::copy(av.re.begin() + begin * inner, av.re.begin() + end * inner,
            out.re.begin());
  if (av.is_complex())
    std::copy(av.im.begin() + begin * inner, av.im.begin() + end * inner,
              out.im.begin());
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  auto fullsh = av.shape;
  auto dt = av.dtype;
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = Tensor::zeros(fullsh, dt);
                    std::copy(g.re.begin(), g.re.end(),
                              gg.re.begin() + begin * inner);
                    if (dt == Dtype::Complex)
                      std::copy(g.im.begin(), g.im.end(),
                                gg.im.begin() + begin * inner);
                    acc(ai, gg);
                  },
                  "slice0");
}

Var dropout(const Var& a, double p, std::mt19937_64& rng, bool train) {
  if (!train || p <= 0.0) return a;
  const Tensor& av = a.value();
  if (av.is_complex()) throw std::invalid_argument("dropout: expects real");
  auto mask = std::make_shared<std::vector<double>>(av.numel());
  std::bernoulli_distribution keep(1.0 - p);
  const double inv = 1.0 / (1.0 - p);
  Tensor out = Tensor::zeros(av.shape, Dtype::Real);
  for (int64_t i = 0; i < av.numel(); ++i) {
    (*mask)[i] = keep(rng) ? inv : 0.0;
    out.re[i] = av.re[i] * (*mask)[i];
  }
  Tape* tp = tape_of({&a});
  if (!tp) return Var(std::move(out));
  int ai = a.id();
  auto sh = av.shape;
  return tp->emit(std::move(out), {ai},
                  [=](const Tensor& g, const AccumFn& acc) {
                    Tensor gg = Tensor::zeros(sh, Dtype::Real);
                    for (int64_t i = 0; i < gg.numel(); ++i)
                      gg.re[i] = g.re[i] * (*mask)[i];
                    acc(ai, gg);
                  },
                  "dropout");
}

Var conv2d(const Var& x, const Var& w, const Var& b, int sh, int sw, int ph,
           int pw) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.ndim() != 3 || wv.ndim() != 4 || bv.ndim() != 1 ||
      wv.dim(1) != xv.dim(0) || bv.dim(0) != wv.dim(0))
    throw std::invalid_argument("conv2d: bad shapes");
  const int ci = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const int co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const int ho = (h + 2 * ph - kh) / sh + 1;
  const int wo = (wd + 2 * pw - kw) / sw + 1;
  if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d: empty output");
  Tensor out = Tensor::zeros({co, ho, wo}, Dtype::Real);
  for (int o = 0; o < co; ++o) {
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        double s = bv.re[o];
        for (int c = 0; c < ci; ++c)
          for (int a2 = 0; a2 < kh; ++a2) {
            const int hi = i * sh - ph + a2;
            if (hi < 0 || hi >= h) continue;
            for (int b2 = 0; b2 < kw; ++b2) {
              const int wi = j * sw - pw + b2;
              if (wi < 0 || wi >= wd) continue;
              s += xv.re[xv.off3(c, hi, wi)] * wv.re[wv.off3(o, c, a2) * kw + b2];
            }
          }
        out.re[out.off3(o, i, j)] = s;
      }
  }
  Tape* tp = tape_of({&x, &w, &b});
  if (!tp) return Var(std::move(out));
  bool xt = x.taped(), wt = w.taped(), bt = b.taped();
  int xi = x.id(), wi_ = w.id(), bi = b.id();
  auto xh = x.holder(), wh = w.holder();
  return tp->emit(
      std::move(out), collect_parents({&x, &w, &b}),
      [=](const Tensor& g, const AccumFn& acc) {
        if (bt) {
          Tensor gb = Tensor::zeros({co}, Dtype::Real);
          for (int o = 0; o < co; ++o)
            for (int i = 0; i < ho; ++i)
              for (int j = 0; j < wo; ++j) gb.re[o] += g.re[g.off3(o, i, j)];
          acc(bi, gb);
        }
        if (wt) {
          Tensor gw = Tensor::zeros(wh->shape, Dtype::Real);
          for (int o = 0; o < co; ++o)
            for (int i = 0; i < ho; ++i)
              for (int j = 0; j < wo; ++j) {
                const double gv = g.re[g.off3(o, i, j)];
                if (gv == 0.0) continue;
                for (int c = 0; c < ci; ++c)
                  for (int a2 = 0; a2 < kh; ++a2) {
                    const int hi = i * sh - ph + a2;
                    if (hi < 0 || hi >= h) continue;
                    for (int b2 = 0; b2 < kw; ++b2) {
                      const int wi2 = j * sw - pw + b2;
                      if (wi2 < 0 || wi2 >= wd) continue;
                      gw.re[gw.off3(o, c, a2) * kw + b2] +=
                          gv * xh->re[xh->off3(c, hi, wi2)];
                    }
                  }
              }
          acc(wi_, gw);
        }
        if (xt) {
          Tensor gx = Tensor::zeros(xh->shape, Dtype::Real);
          for (int o = 0; o < co; ++o)
            for (int i = 0; i < ho; ++i)
              for (int j = 0; j < wo; ++j) {
                const double gv = g.re[g.off3(o, i, j)];
                if (gv == 0.0) continue;
                for (int c = 0; c < ci; ++c)
                  for (int a2 = 0; a2 < kh; ++a2) {
                    const int hi = i * sh - ph + a2;
                    if (hi < 0 || hi >= h) continue;
                    for (int b2 = 0; b2 < kw; ++b2) {
                      const int wi2 = j * sw - pw + b2;
                      if (wi2 < 0 || wi2 >= wd) continue;
                      gx.re[gx.off3(c, hi, wi2)] +=
                          gv * wh->re[wh->off3(o, c, a2) * kw + b2];
                    }
                  }
              }
          acc(xi, gx);
        }
      },
      "conv2d");
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int sh, int sw,
                     int ph, int pw, int oph, int opw) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.ndim() != 3 || wv.ndim() != 4 || bv.ndim() != 1 ||
      wv.dim(0) != xv.dim(0) || bv.dim(0) != wv.dim(1))
    throw std::invalid_argument("conv_transpose2d: bad shapes");
  const int ci = xv.dim(0), h = xv.dim(1), wd = xv.dim(2);
  const int co = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3);
  const int ho = (h - 1) * sh - 2 * ph + kh + oph;
  const int wo = (wd - 1) * sw - 2 * pw + kw + opw;
  if (ho < 1 || wo < 1)
    throw std::invalid_argument("conv_transpose2d: empty output");
  Tensor out = Tensor::zeros({co, ho, wo}, Dtype::Real);
  for (int o = 0; o < co; ++o)
    for (int64_t i = 0; i < int64_t(ho) * wo; ++i) out.re[o * ho * wo + i] = bv.re[o];
  for (int c = 0; c < ci; ++c)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < wd; ++j) {
        const double xvv = xv.re[xv.off3(c, i, j)];
        if (xvv == 0.0) continue;
        for (int o = 0; o < co; ++o)
          for (int a2 = 0; a2 < kh; ++a2) {
            const int hi = i * sh - ph + a2;
            if (hi < 0 || hi >= ho) continue;
            for (int b2 = 0; b2 < kw; ++b2) {
              const int wi = j * sw - pw + b2;
              if (wi < 0 || wi >= wo) continue;
              out.re[out.off3(o, hi, wi)] +=
                  xvv * wv.re[wv.off3(c, o, a2) * kw + b2];
            }
          }
      }
  Tape* tp = tape_of({&x, &w, &b});
  if (!tp) return Var(std::move(out));
  bool xt = x.taped(), wt = w.taped(), bt = b.taped();
  int xi = x.id(), wi_ = w.id(), bi = b.id();
  auto xh = x.holder(), wh = w.holder();
  return tp->emit(
      std::move(out), collect_parents({&x, &w, &b}),
      [=](const Tensor& g, const AccumFn& acc) {
        if (bt) {
          Tensor gb = Tensor::zeros({co}, Dtype::Real);
          for (int o = 0; o < co; ++o)
            for (int64_t i = 0; i < int64_t(ho) * wo; ++i)
              gb.re[o] += g.re[o * ho * wo + i];
          acc(bi, gb);
        }
        if (wt) {
          Tensor gw = Tensor::zeros(wh->shape, Dtype::Real);
          for (int c = 0; c < ci; ++c)
            for (int i = 0; i < h; ++i)
              for (int j = 0; j < wd; ++j) {
                const double xvv = xh->re[xh->off3(c, i, j)];
                if (xvv == 0.0) continue;
                for (int o = 0; o < co; ++o)
                  for (int a2 = 0; a2 < kh; ++a2) {
                    const int hi = i * sh - ph + a2;
                    if (hi < 0 || hi >= ho) continue;
                    for (int b2 = 0; b2 < kw; ++b2) {
                      const int wi2 = j * sw - pw + b2;
                      if (wi2 < 0 || wi2 >= wo) continue;
                      gw.re[gw.off3(c, o, a2) * kw + b2] +=
                          xvv * g.re[g.off3(o, hi, wi2)];
                    }
                  }
              }
          acc(wi_, gw);
        }
        if (xt) {
          Tensor gx = Tensor::zeros(xh->shape, Dtype::Real);
          for (int c = 0; c < ci; ++c)
            for (int i = 0; i < h; ++i)
              for (int j = 0; j < wd; ++j) {
                double s = 0.0;
                for (int o = 0; o < co; ++o)
                  for (int a2 = 0; a2 < kh; ++a2) {
                    const int hi = i * sh - ph + a2;
                    if (hi < 0 || hi >= ho) continue;
                    for (int b2 = 0; b2 < kw; ++b2) {
                      const int wi2 = j * sw - pw + b2;
                      if (wi2 < 0 || wi2 >= wo) continue;
                      s += g.re[g.off3(o, hi, wi2)] *
                           wh->re[wh->off3(c, o, a2) * kw + b2];
                    }
                  }
                gx.re[gx.off3(c, i, j)] = s;
              }
          acc(xi, gx);
        }
      },
      "conv_transpose2d");
}

}  // namespace ops

std::vector<Tensor> leaf_gradients(
    const std::function<Var(Tape&, const std::vector<Var>&)>& fn,
    const std::vector<Tensor>& leaves, size_t* tape_nodes) {
  Tape tape;
  std::vector<Var> vars;
  std::vector<int> ids;
  for (const Tensor& t : leaves) {
    Var v = tape.leaf(t);
    ids.push_back(v.id());
    vars.push_back(std::move(v));
  }
  Var out = fn(tape, vars);
  if (out.value().numel() != 1 || out.value().is_complex())
    throw std::invalid_argument("leaf_gradients: fn must return a real scalar");
  if (tape_nodes) *tape_nodes = tape.size();
  auto adj = tape.backward({{out.id(), Tensor::scalar(1.0)}});
  std::vector<Tensor> grads;
  for (size_t i = 0; i < leaves.size(); ++i) {
    Tensor g = adj[ids[i]];
    if (g.shape.empty()) g = Tensor::zeros(leaves[i].shape, leaves[i].dtype);
    grads.push_back(std::move(g));
  }
  return grads;
}

GradCheckReport grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& fn,
    const std::vector<Tensor>& leaves, double tolerance, double step) {
  auto eval = [&](const std::vector<Tensor>& ls) {
    Tape t;
    std::vector<Var> vars;
    for (const Tensor& x : ls) vars.push_back(ops::constant(x));
    return fn(t, vars).value().re[0];
  };
  auto grads = leaf_gradients(fn, leaves);
  GradCheckReport rep;
  std::vector<Tensor> work = leaves;
  for (size_t li = 0; li < leaves.size(); ++li) {
    // max |fd - bp| relative to the leaf gradient's max magnitude
    double max_diff = 0.0, max_mag = 0.0;
    for (int part = 0; part < 2; ++part) {
      auto& buf = part == 0 ? work[li].re : work[li].im;
      const auto& gbuf = part == 0 ? grads[li].re : grads[li].im;
      for (size_t i = 0; i < buf.size(); ++i) {
        const double orig = buf[i];
        const double h = step * std::max(1.0, std::abs(orig));
        buf[i] = orig + h;
        const double fp = eval(work);
        buf[i] = orig - h;
        const double fm = eval(work);
        buf[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double bp = gbuf.empty() ? 0.0 : gbuf[i];
        max_diff = std::max(max_diff, std::abs(fd - bp));
        max_mag = std::max({max_mag, std::abs(fd), std::abs(bp)});
      }
    }
    const double worst = max_diff / std::max(max_mag, 1e-8);
    rep.max_rel_err.push_back(worst);
    rep.worst = std::max(rep.worst, worst);
  }
  rep.pass = rep.worst <= tolerance;
  return rep;
}

}  // namespace demix
