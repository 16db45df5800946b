// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "demix/srcmodel.hpp"
#include "demix/tiss.hpp"

namespace demix {
namespace gradengine {

// Filter snapshots P^(0..J) from an untaped forward pass; the only state the
// checkpointing backward mode needs besides the stacked input.
struct CheckpointStore {
  std::vector<tiss::UnifiedFilter> filters;
  int iterations = 0;
  uint64_t input_hash = 0;
};

// Complex values held for the J post-iteration snapshots: F * (L+1) * M^2 * J.
int64_t checkpoint_size(int F, int L, int M, int J);

struct ForwardResult {
  CheckpointStore store;
  std::vector<Tensor> outputs;  // final incremental Y^(J), per source [F,T]
  double fwd_ms = 0.0;
};

// J iterations of {u <- model(Y); iss_sweep} with no tape recording.
// The model rng is reseeded per iteration from `seed`, so a replay of
// iteration j reproduces its dropout draws exactly.
ForwardResult forward_collect(const StackedInput& x,
                              srcmodel::SourceModel& model, int iterations,
                              uint64_t seed, bool train);

// Loss tail: everything downstream of the final iteration (projection back,
// synthesis, loss); must return a real scalar built from taped ops.
using TailFn = std::function<Var(const std::vector<Var>& rows,
                                 const std::vector<Var>& outs)>;

struct GradReport {
  double loss = 0.0;
  std::vector<Tensor> param_grads;  // aligned with model.parameters()
  size_t peak_nodes = 0;
  size_t checkpoint_bytes = 0;
  double fwd_ms = 0.0;
  double bwd_ms = 0.0;
};

// Reference mode: one tape across all iterations plus the tail.
GradReport bp_backward(const StackedInput& x, srcmodel::SourceModel& model,
                       int iterations, uint64_t seed, bool train,
                       const TailFn& tail);

// Checkpointing mode: differentiate the tail once at (P^(J), Y^(J)), then for
// j = J..1 rebuild Y^(j-1) = P^(j-1) x, replay iteration j on a fresh tape,
// and pull the adjoint back one iteration, accumulating the model gradient.
GradReport dmc_backward(const ForwardResult& fwd, const StackedInput& x,
                        srcmodel::SourceModel& model, uint64_t seed, bool train,
                        const TailFn& tail);

// forward_collect + dmc_backward
GradReport dmc_gradient(const StackedInput& x, srcmodel::SourceModel& model,
                        int iterations, uint64_t seed, bool train,
                        const TailFn& tail);

struct BenchRow {
  std::string mode;  // "bp" or "dmc"
  int J = 0, F = 0, T = 0, N = 0, L = 0;
  size_t peak_nodes = 0, checkpoint_bytes = 0;
  double fwd_ms = 0.0, bwd_ms = 0.0;
};

std::vector<BenchRow> bench(const StackedInput& x,
                            srcmodel::SourceModel& model,
                            const std::vector<int>& iteration_counts,
                            uint64_t seed, const TailFn& tail);

// columns: mode,J,F,T,N,L,peak_nodes,checkpoint_bytes,fwd_ms,bwd_ms
void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& os);

}  // namespace gradengine
}  // namespace demix
