// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include "demix/gradengine.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace demix {
namespace gradengine {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::mt19937_64 iteration_rng(uint64_t seed, int j) {
  return std::mt19937_64(seed ^ (0x9e3779b97f4a7c15ull * uint64_t(j + 1)));
}

void hash_doubles(uint64_t& h, const std::vector<double>& v) {
  for (double x : v) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, sizeof(bits));
    for (int s = 0; s < 64; s += 8) {
      h ^= (bits >> s) & 0xff;
      h *= 0x100000001b3ull;
    }
  }
}

uint64_t input_hash(const StackedInput& x, srcmodel::SourceModel& model,
                    int iterations, uint64_t seed) {
  uint64_t h = 0xcbf29ce484222325ull;
  hash_doubles(h, x.data.re);
  hash_doubles(h, x.data.im);
  for (auto& [name, t] : model.parameters()) {
    hash_doubles(h, t->re);
    hash_doubles(h, t->im);
  }
  h ^= uint64_t(iterations) * 0x9e3779b97f4a7c15ull;
  h ^= seed;
  return h;
}

std::vector<Tensor> zero_param_grads(srcmodel::SourceModel& model) {
  std::vector<Tensor> g;
  for (auto& [name, t] : model.parameters())
    g.push_back(Tensor::zeros(t->shape, t->dtype));
  return g;
}

void accumulate_param_grads(std::vector<Tensor>& grads,
                            const std::vector<int>& ids,
                            const std::vector<Tensor>& adjoints) {
  if (ids.empty()) return;
  if (ids.size() != grads.size())
    throw std::logic_error("gradengine: parameter leaf count mismatch");
  for (size_t i = 0; i < ids.size(); ++i)
    if (adjoints[ids[i]].numel() > 0) grads[i] += adjoints[ids[i]];
}

int sources_of(const StackedInput& x) {
  return x.channels;
}

}  // namespace

int64_t checkpoint_size(int F, int L, int M, int J) {
  return int64_t(F) * (L + 1) * M * M * J;
}

ForwardResult forward_collect(const StackedInput& x,
                              srcmodel::SourceModel& model, int iterations,
                              uint64_t seed, bool train) {
  if (iterations < 0)
    throw std::invalid_argument("forward_collect: negative iteration count");
  const auto t0 = Clock::now();
  const int N = sources_of(x);
  const int F = x.data.dim(1);
  ForwardResult fw;
  fw.store.iterations = iterations;
  fw.store.input_hash = input_hash(x, model, iterations, seed);
  tiss::UnifiedFilter p = tiss::init_filter(N, x.taps, F);
  std::vector<Var> rows = tiss::rows_as_vars(p, nullptr);
  std::vector<Var> outs = tiss::apply(rows, x);
  fw.store.filters.push_back(p);
  for (int j = 1; j <= iterations; ++j) {
    std::mt19937_64 rng = iteration_rng(seed, j);
    std::vector<Var> u = model.weights(outs, rng, train);
    tiss::iss_sweep(rows, outs, x, u);
    fw.store.filters.push_back(tiss::snapshot(rows, x.taps));
  }
  for (const Var& y : outs) fw.outputs.push_back(y.value());
  fw.fwd_ms = ms_since(t0);
  return fw;
}

GradReport bp_backward(const StackedInput& x, srcmodel::SourceModel& model,
                       int iterations, uint64_t seed, bool train,
                       const TailFn& tail) {
  if (iterations < 0)
    throw std::invalid_argument("bp_backward: negative iteration count");
  const auto t0 = Clock::now();
  const int N = sources_of(x);
  const int F = x.data.dim(1);
  Tape tape;
  std::vector<Var> rows =
      tiss::rows_as_vars(tiss::init_filter(N, x.taps, F), &tape);
  std::vector<Var> outs = tiss::apply(rows, x);
  std::vector<std::vector<int>> param_ids;
  for (int j = 1; j <= iterations; ++j) {
    std::mt19937_64 rng = iteration_rng(seed, j);
    std::vector<Var> u = model.weights(outs, rng, train);
    param_ids.push_back(model.last_param_ids());
    tiss::iss_sweep(rows, outs, x, u);
  }
  Var loss = tail(rows, outs);
  if (loss.value().is_complex() || loss.value().numel() != 1)
    throw std::invalid_argument("bp_backward: tail must return a real scalar");
  GradReport rep;
  rep.loss = loss.value().re[0];
  rep.fwd_ms = ms_since(t0);
  const auto t1 = Clock::now();
  auto adj = tape.backward({{loss.id(), Tensor::scalar(1.0)}});
  rep.param_grads = zero_param_grads(model);
  for (const auto& ids : param_ids)
    accumulate_param_grads(rep.param_grads, ids, adj);
  rep.peak_nodes = tape.size();
  rep.bwd_ms = ms_since(t1);
  return rep;
}

GradReport dmc_backward(const ForwardResult& fwd, const StackedInput& x,
                        srcmodel::SourceModel& model, uint64_t seed, bool train,
                        const TailFn& tail) {
  const CheckpointStore& store = fwd.store;
  const int J = store.iterations;
  if (static_cast<int>(store.filters.size()) != J + 1)
    throw std::invalid_argument("dmc_backward: malformed checkpoint store");
  if (store.input_hash != input_hash(x, model, J, seed))
    throw std::invalid_argument(
        "dmc_backward: checkpoint store does not match input/model/seed");
  const auto t1 = Clock::now();
  const int N = sources_of(x);

  GradReport rep;
  rep.param_grads = zero_param_grads(model);
  rep.checkpoint_bytes = 0;
  for (int j = 1; j <= J; ++j)
    for (const Tensor& r : store.filters[j].rows)
      rep.checkpoint_bytes += r.bytes();

  // tail at the final iterate, leaves (P^(J), Y^(J))
  std::vector<Tensor> g_rows(N), g_outs(N);
  bool have_outs_seed = true;
  {
    Tape tape;
    std::vector<Var> rows = tiss::rows_as_vars(store.filters[J], &tape);
    std::vector<Var> outs;
    for (int n = 0; n < N; ++n) outs.push_back(tape.leaf(fwd.outputs[n]));
    Var loss = tail(rows, outs);
    if (loss.value().is_complex() || loss.value().numel() != 1)
      throw std::invalid_argument(
          "dmc_backward: tail must return a real scalar");
    rep.loss = loss.value().re[0];
    auto adj = tape.backward({{loss.id(), Tensor::scalar(1.0)}});
    for (int n = 0; n < N; ++n) {
      g_rows[n] = adj[rows[n].id()].numel()
                      ? adj[rows[n].id()]
                      : Tensor::zeros(rows[n].value().shape, Dtype::Complex);
      g_outs[n] = adj[outs[n].id()].numel()
                      ? adj[outs[n].id()]
                      : Tensor::zeros(outs[n].value().shape, Dtype::Complex);
    }
    rep.peak_nodes = tape.size();
  }

  for (int j = J; j >= 1; --j) {
    Tape tape;
    const std::vector<Var> leaf_rows =
        tiss::rows_as_vars(store.filters[j - 1], &tape);
    std::vector<Var> rows = leaf_rows;
    std::vector<Var> outs = tiss::apply(rows, x);
    std::mt19937_64 rng = iteration_rng(seed, j);
    std::vector<Var> u = model.weights(outs, rng, train);
    const std::vector<int> ids = model.last_param_ids();
    tiss::iss_sweep(rows, outs, x, u);

    // replay must land on the stored iterate, else the model is not
    // deterministic under the per-iteration seeding
    double ref = 1e-300, diff = 0.0;
    for (int n = 0; n < N; ++n) {
      const Tensor& a = rows[n].value();
      const Tensor& b = store.filters[j].rows[n];
      for (int64_t i = 0; i < a.numel(); ++i) {
        diff = std::max(diff, std::abs(a.at(i) - b.at(i)));
        ref = std::max(ref, std::abs(b.at(i)));
      }
    }
    if (diff / ref > 1e-6)
      throw std::logic_error(
          "dmc_backward: replayed iteration diverged from checkpoint");

    std::vector<std::pair<int, Tensor>> seeds;
    for (int n = 0; n < N; ++n) seeds.emplace_back(rows[n].id(), g_rows[n]);
    if (have_outs_seed)
      for (int n = 0; n < N; ++n) seeds.emplace_back(outs[n].id(), g_outs[n]);
    auto adj = tape.backward(seeds);
    accumulate_param_grads(rep.param_grads, ids, adj);
    rep.peak_nodes = std::max(rep.peak_nodes, tape.size());
    have_outs_seed = false;
    for (int n = 0; n < N; ++n) {
      const Tensor& a = adj[leaf_rows[n].id()];
      g_rows[n] = a.numel()
                      ? a
                      : Tensor::zeros(store.filters[j - 1].rows[n].shape,
                                      Dtype::Complex);
    }
  }
  rep.bwd_ms = ms_since(t1);
  rep.fwd_ms = fwd.fwd_ms;
  return rep;
}

GradReport dmc_gradient(const StackedInput& x, srcmodel::SourceModel& model,
                        int iterations, uint64_t seed, bool train,
                        const TailFn& tail) {
  ForwardResult fwd = forward_collect(x, model, iterations, seed, train);
  return dmc_backward(fwd, x, model, seed, train, tail);
}

std::vector<BenchRow> bench(const StackedInput& x,
                            srcmodel::SourceModel& model,
                            const std::vector<int>& iteration_counts,
                            uint64_t seed, const TailFn& tail) {
  std::vector<BenchRow> rows;
  for (int J : iteration_counts) {
    BenchRow base;
    base.J = J;
    base.N = x.channels;
    base.L = x.taps;
    base.F = x.data.dim(1);
    base.T = x.data.dim(2);

    GradReport bp = bp_backward(x, model, J, seed, false, tail);
    BenchRow b = base;
    b.mode = "bp";
    b.peak_nodes = bp.peak_nodes;
    b.checkpoint_bytes = 0;
    b.fwd_ms = bp.fwd_ms;
    b.bwd_ms = bp.bwd_ms;
    rows.push_back(b);

    GradReport dm = dmc_gradient(x, model, J, seed, false, tail);
    BenchRow d = base;
    d.mode = "dmc";
    d.peak_nodes = dm.peak_nodes;
    d.checkpoint_bytes = dm.checkpoint_bytes;
    d.fwd_ms = dm.fwd_ms;
    d.bwd_ms = dm.bwd_ms;
    rows.push_back(d);
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, std::ostream& os) {
  os << "mode,J,F,T,N,L,peak_nodes,checkpoint_bytes,fwd_ms,bwd_ms\n";
  for (const BenchRow& r : rows)
    os << r.mode << ',' << r.J << ',' << r.F << ',' << r.T << ',' << r.N << ','
       << r.L << ',' << r.peak_nodes << ',' << r.checkpoint_bytes << ','
       << r.fwd_ms << ',' << r.bwd_ms << '\n';
}

}  // namespace gradengine
}  // namespace demix
