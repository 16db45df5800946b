// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <vector>

#include "demix/ops.hpp"

namespace demix {
namespace losses {

constexpr int kCiSdrTaps = 512;
constexpr double kDbClamp = 60.0;  // metrics clamp to [-60, 60] dB

// Filter-invariant SDR loss in -dB (lower is better). The reference may pass
// through a K-tap filter fitted by ridge-regularized least squares; K=1
// reduces to the SI-SDR loss. Differentiable in est; the projection onto the
// K-shift subspace of ref is a constant linear operator of ref only.
Var ci_sdr_loss_v(const Var& est, const std::vector<double>& ref, int K);

double ci_sdr_loss(const std::vector<double>& est,
                   const std::vector<double>& ref, int K);

// Metric forms, positive-good dB.
double si_sdr(const std::vector<double>& est, const std::vector<double>& ref);
double ci_sdr(const std::vector<double>& est, const std::vector<double>& ref,
              int K = kCiSdrTaps);

// Scale-invariant signal-to-interference ratio: energy of the projection of
// est onto the target's span against the summed projections onto the
// interferers' spans.
double si_sir(const std::vector<double>& est,
              const std::vector<std::vector<double>>& refs, int target_index);

// Permutation-invariant wrapper, exhaustive over N! assignments (N <= 4).
struct PitResult {
  double loss = 0.0;
  std::vector<int> permutation;  // permutation[n] = reference index for est n
};

PitResult pit_loss(const std::vector<std::vector<double>>& ests,
                   const std::vector<std::vector<double>>& refs,
                   const std::function<double(const std::vector<double>&,
                                              const std::vector<double>&)>&
                       base_loss);

// Taped variant: ests are Vars, base loss is ci_sdr_loss_v with given K.
struct PitVarResult {
  Var loss;
  std::vector<int> permutation;
};

PitVarResult pit_loss_v(const std::vector<Var>& ests,
                        const std::vector<std::vector<double>>& refs, int K);

}  // namespace losses
}  // namespace demix
