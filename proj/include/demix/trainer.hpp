// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#pragma once

#include <string>
#include <vector>

#include "demix/gradengine.hpp"
#include "demix/losses.hpp"
#include "demix/signal.hpp"

namespace demix {
namespace trainer {

struct TrainConfig {
  int batch_size = 8;
  double signal_s = 7.0;  // inputs cropped to this length
  int iterations = 20;    // J during training
  int delay = 1;
  int taps = 5;
  int window = 1024;
  int hop = 256;
  std::string loss = "ci-sdr";    // "ci-sdr" or "si-sdr"
  std::string grad_mode = "dmc";  // "dmc" or "bp"
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip = 5.0;  // global gradient-norm clip
  uint64_t seed = 0;
  int epochs = 1;
  int max_steps = 0;  // 0 = run all epochs
  bool resume = false;
  std::string train_manifest;
  std::string valid_manifest;
  std::string checkpoint_path = "model.ckpt";
  std::string log_path;
  int glu_width = 8;
  int glu_blocks = 6;
  double glu_dropout = 0.3;

  int loss_taps() const { return loss == "si-sdr" ? 1 : losses::kCiSdrTaps; }
  void validate() const;
};

// key = value lines; '#' starts a comment; unknown keys are errors
TrainConfig parse_config_file(const std::string& path);
TrainConfig parse_config_lines(const std::vector<std::string>& lines);

// Adam with bias correction over the model parameter list.
struct Adam {
  double lr, beta1, beta2, eps;
  int64_t t = 0;
  std::vector<Tensor> m, v;

  void init(const std::vector<std::pair<std::string, Tensor*>>& params);
  void step(const std::vector<std::pair<std::string, Tensor*>>& params,
            const std::vector<Tensor>& grads);
};

// Scales the gradient set to global norm <= clip; returns the pre-clip norm.
double clip_gradients(std::vector<Tensor>& grads, double clip);
bool grads_finite(double loss, const std::vector<Tensor>& grads);

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  size_t peak_nodes = 0;
  double wall_ms = 0.0;
  bool skipped = false;  // non-finite loss/gradient; lr halved
};

struct TrainResult {
  std::vector<StepRecord> log;
  int steps = 0;
  double final_lr = 0.0;
  double best_valid_loss = 0.0;  // +inf when no validation set
};

TrainResult train(const TrainConfig& config, srcmodel::GluMaskNet& net);

struct EvalOptions {
  int window = stft::kDefaultWindow;
  int hop = stft::kDefaultHop;
  int delay = tiss::kDefaultDelay;
  int taps = tiss::kDefaultTaps;
  int iterations = 0;  // 0: 50/75/100 for 2/3/4 channels
  int ci_taps = losses::kCiSdrTaps;
  int ref_channel = 0;
};

int default_test_iterations(int channels);

struct EvalRow {
  std::string id;
  double si_sdr = 0.0, ci_sdr = 0.0, si_sir = 0.0;  // source means, aligned
  double obs_si_sdr = 0.0, obs_ci_sdr = 0.0;        // mixture at the ref mic
};

struct EvalSummary {
  std::vector<EvalRow> rows;
  double median_si_sdr = 0.0, median_ci_sdr = 0.0, median_si_sir = 0.0;
  double median_obs_si_sdr = 0.0, median_obs_ci_sdr = 0.0;
};

EvalSummary evaluate(srcmodel::SourceModel& model,
                     const std::string& manifest_path, int channels,
                     const EvalOptions& options);

double median(std::vector<double> values);

}  // namespace trainer
}  // namespace demix
