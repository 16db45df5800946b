// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <random>
#include <vector>

#include "demix/tape.hpp"

namespace demix {
namespace ops {

// Complex-leaf gradient convention, used throughout: the stored gradient is
// g = dL/dRe(z) + i dL/dIm(z), i.e. the steepest-descent direction for a
// real loss L, equal to 2 dL/dz-bar in Wirtinger form. The chain rule in
// this convention for w = f(z) reads
//   g_z += conj(dw/dz) * g_w + (dw/dz-bar) * conj(g_w).

// Returns the common tape of the taped inputs (nullptr when all constant).
Tape* tape_of(std::initializer_list<const Var*> vars);

Var constant(Tensor t);

// elementwise, shapes must match
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var neg(const Var& a);
Var mul(const Var& a, const Var& b);          // real*real or complex*complex
Var mul_rc(const Var& r, const Var& c);       // real weights times complex
Var conj(const Var& a);
Var abs2(const Var& a);                       // |z|^2, complex->real (or x^2)
Var sqrt_f(const Var& a, double floor);       // sqrt(max(x, floor)), real
Var rsqrt_f(const Var& a, double floor);      // max(x, floor)^(-1/2), real
Var reciprocal_f(const Var& a, double floor); // 1/max(x, floor), real
Var div_cr(const Var& num, const Var& den, double floor);  // complex / real
Var div_rr(const Var& num, const Var& den, double floor);  // real / real
Var clamp_min(const Var& a, double c);        // real
Var log1p_v(const Var& a);                    // real, x >= 0 expected
Var sigmoid(const Var& a);                    // real
Var real_part(const Var& a);                  // complex -> real
Var imag_part(const Var& a);                  // complex -> real
Var make_complex(const Var& re, const Var& im);
Var real_to_complex(const Var& r);
Var scale(const Var& a, double s);
Var mul_scalar(const Var& a, const Var& s);  // s real [1], broadcast multiply
Var reshape(const Var& a, std::vector<int> shape);

// reductions / structure
Var sum_all(const Var& a);                    // -> [1]
Var mean_all(const Var& a);                   // -> [1]
Var sum_cols(const Var& a);                   // [A,B] -> [A]
Var scale_rows(const Var& x, const Var& v);   // x[A,...] * v[A], complex
Var sub_col(const Var& m, const Var& v, int col);  // m[F,K] minus v[F] in col
Var matmul(const Var& a, const Var& b);       // [m,k]x[k,n]
Var concat0(const std::vector<Var>& parts);
Var slice0(const Var& a, int begin, int end);

// network layers (real)
Var dropout(const Var& a, double p, std::mt19937_64& rng, bool train);
// x[Cin,H,W], w[Cout,Cin,kh,kw], b[Cout]
Var conv2d(const Var& x, const Var& w, const Var& b, int sh, int sw, int ph,
           int pw);
// x[Cin,H,W], w[Cin,Cout,kh,kw], b[Cout]; output H = (H-1)*sh-2ph+kh+oph
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int sh, int sw,
                     int ph, int pw, int oph, int opw);

}  // namespace ops

// Finite-difference verification of the backward sweep. `fn` must map the
// given leaves to a real scalar Var using tape-recordable ops only.
struct GradCheckReport {
  std::vector<double> max_rel_err;  // per leaf
  double worst = 0.0;
  bool pass = false;
};

GradCheckReport grad_check(
    const std::function<Var(Tape&, const std::vector<Var>&)>& fn,
    const std::vector<Tensor>& leaves, double tolerance, double step = 1e-6);

// Backward gradients of `fn` at `leaves` (seed 1 at the scalar output).
std::vector<Tensor> leaf_gradients(
    const std::function<Var(Tape&, const std::vector<Var>&)>& fn,
    const std::vector<Tensor>& leaves, size_t* tape_nodes = nullptr);

}  // namespace demix
