// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <functional>
#include <vector>

#include "demix/ops.hpp"
#include "demix/signal.hpp"
#include "demix/stft.hpp"

namespace demix {
namespace tiss {

constexpr int kDefaultDelay = 1;
constexpr int kDefaultTaps = 5;
constexpr int kTrainIterations = 20;
constexpr int kTestIterations2ch = 50;
// relative denominator floor for silent bands
constexpr double kDivFloorRel = 1e-8;

// Unified dereverberation+separation filter, one N x N(L+1) matrix per
// frequency, stored row-wise: rows[n] has shape [F, N(L+1)]. The left NxN
// block is the demixing matrix W.
struct UnifiedFilter {
  int N = 0, L = 0, F = 0;
  std::vector<Tensor> rows;

  int stacked_dim() const { return N * (L + 1); }
};

// P = [I, 0]; applying it returns the unprocessed input channels.
UnifiedFilter init_filter(int N, int L, int F);

// y_n[f,t] = sum_k row[f,k] * x[k,f,t]; the stacked input stays constant.
Var mix_row(const Var& row, const Tensor& xstack);
std::vector<Var> apply(const std::vector<Var>& rows, const StackedInput& x);

std::vector<Var> rows_as_vars(const UnifiedFilter& p, Tape* tape);
UnifiedFilter snapshot(const std::vector<Var>& rows, int L);

// Eq-style joint cost: sum_f [ -2 log|det W_f| + (1/T) sum_{t,n} u |y|^2 ].
// Throws std::domain_error when any W block is singular (|det| < 1e-12).
double compute_cost(const std::vector<Var>& rows, const std::vector<Var>& outs,
                    const std::vector<Var>& weights);

// One full T-ISS sweep: spatial rows n=1..N, then tap columns up to N(L+1),
// rank-1 updates on P with the outputs maintained incrementally. Entirely
// tape-recordable; `weights` are the per-source u maps, real [F,T].
void iss_sweep(std::vector<Var>& rows, std::vector<Var>& outs,
               const StackedInput& x, const std::vector<Var>& weights);

// Rescales each source by the ref-channel column of W^-1 per frequency,
// resolving the scale/phase ambiguity. Returns [N,F,T].
Var projection_back(const std::vector<Var>& outs, const std::vector<Var>& rows,
                    int ref_channel);

// Produces per-source weight maps u (real [F,T]) from the current outputs.
using WeightFn = std::function<std::vector<Var>(const std::vector<Var>& outs)>;

// Full untaped pipeline: STFT, stack, J iterations of {u <- model(Y);
// iss_sweep}, projection back, iSTFT.
Waveform separate(const Waveform& x, const WeightFn& weights, int iterations,
                  int delay, int taps, int window, int hop);

}  // namespace tiss
}  // namespace demix
