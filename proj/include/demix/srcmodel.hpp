// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "demix/tiss.hpp"

namespace demix {
namespace srcmodel {

// Produces the per-source weight maps u (real [F,T]) that drive the ISS
// updates. Stateful models reset per utterance.
class SourceModel {
 public:
  virtual ~SourceModel() = default;
  virtual void reset(int sources, int F, int T, uint64_t seed) = 0;
  virtual std::vector<Var> weights(const std::vector<Var>& outs,
                                   std::mt19937_64& rng, bool train) = 0;
  // trainable parameters; empty for parameter-free models
  virtual std::vector<std::pair<std::string, Tensor*>> parameters() {
    return {};
  }
  // tape leaf ids of the parameters from the most recent taped weights() call
  virtual const std::vector<int>& last_param_ids() const {
    static const std::vector<int> none;
    return none;
  }
};

// Itakura-Saito NMF source model: per source a rank-K factorization
// V = B H of the output power spectrogram, refined by `inner_updates`
// multiplicative updates per call; u = 1/V. Runs on values only, so it
// records nothing on any tape.
class NmfModel : public SourceModel {
 public:
  static constexpr int kDefaultRank = 2;
  static constexpr int kInnerUpdates = 2;

  explicit NmfModel(int rank = kDefaultRank, int inner_updates = kInnerUpdates)
      : rank_(rank), inner_updates_(inner_updates) {}

  void reset(int sources, int F, int T, uint64_t seed) override;
  std::vector<Var> weights(const std::vector<Var>& outs, std::mt19937_64& rng,
                           bool train) override;

  // Itakura-Saito divergence of the current factorization against P.
  double divergence(int source, const Tensor& power) const;
  const Tensor& basis(int source) const { return basis_[source]; }
  const Tensor& activation(int source) const { return act_[source]; }

 private:
  int rank_, inner_updates_;
  std::vector<Tensor> basis_;  // per source [F,K]
  std::vector<Tensor> act_;    // per source [K,T]
};

struct GluConfig {
  int width = 8;        // hidden channels
  int blocks = 6;       // GLU residual blocks
  int down_stride = 4;  // frequency downsampling factor
  int down_kernel = 5;  // frequency kernel of the resampling convs
  int kernel = 3;       // block kernel (square)
  double dropout = 0.3;
};

// Gated-convolution mask network, parameters shared across sources. Per
// source: log1p magnitude in, mask m in [kMaskFloor, 1] out; the ISS
// weights are u = 1 / max((m |y|)^2, eps) with eps relative to the
// mixture power.
class GluMaskNet : public SourceModel {
 public:
  // lower mask bound, keeps long iteration runs away from singular filters
  static constexpr double kMaskFloor = 0.05;

  GluMaskNet(GluConfig config, uint64_t init_seed);

  void reset(int, int, int, uint64_t) override {}
  std::vector<Var> weights(const std::vector<Var>& outs, std::mt19937_64& rng,
                           bool train) override;
  std::vector<std::pair<std::string, Tensor*>> parameters() override;
  const std::vector<int>& last_param_ids() const override {
    return last_param_ids_;
  }

  // the mask alone, for inspection and tests
  Var mask(const Var& y, const std::vector<Var>& params, std::mt19937_64& rng,
           bool train) const;

  const GluConfig& config() const { return config_; }
  void save(const std::string& path) const;
  static GluMaskNet load(const std::string& path);

 private:
  GluConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
  std::vector<int> last_param_ids_;
};

// Versioned binary checkpoint: magic, JSON header describing the tensor
// table, then raw little-endian float64 payloads.
void save_checkpoint(const std::string& path, const std::string& kind,
                     const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

struct Checkpoint {
  std::string kind;
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& find(const std::string& name) const;
};

Checkpoint load_checkpoint(const std::string& path);

// Adapter for the untaped separation pipeline.
tiss::WeightFn model_weight_fn(SourceModel& model, std::mt19937_64& rng,
                               bool train);

}  // namespace srcmodel
}  // namespace demix
