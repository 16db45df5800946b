// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include "demix/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "demix/wav.hpp"

namespace demix {
namespace trainer {

namespace op = demix::ops;
namespace ge = demix::gradengine;
namespace sm = demix::srcmodel;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9e3779b97f4a7c15ull * (b + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Sample {
  Waveform mixture;
  std::vector<std::vector<double>> refs;  // reference images, one per source
  uint64_t seed = 0;
  std::string id;
};

Sample load_sample(const ManifestEntry& entry, int64_t max_samples) {
  Sample s;
  s.id = entry.id;
  s.seed = entry.seed;
  s.mixture = read_wav(entry.mixture_path);
  int64_t len = s.mixture.num_samples();
  if (max_samples > 0) len = std::min(len, max_samples);
  for (auto& c : s.mixture.channels) c.resize(size_t(len));
  for (const std::string& p : entry.reference_paths) {
    Waveform r = read_wav(p);
    if (r.num_samples() < len)
      throw std::runtime_error("trainer: reference shorter than mixture: " + p);
    r.channels[0].resize(size_t(len));
    s.refs.push_back(std::move(r.channels[0]));
  }
  return s;
}

// loss tail shared by training, validation, and the gradient engine: projection
// back to the reference channel, iSTFT per source, PIT loss in the time domain
ge::TailFn make_tail(int F, int frames, int window, int hop, int64_t length,
                     std::vector<std::vector<double>> refs, int loss_taps) {
  const int N = static_cast<int>(refs.size());
  return [=, refs = std::move(refs)](const std::vector<Var>& rows,
                                     const std::vector<Var>& outs) {
    Var proj = tiss::projection_back(outs, rows, 0);
    std::vector<Var> sigs;
    for (int n = 0; n < N; ++n) {
      Var s = op::reshape(op::slice0(proj, n, n + 1), {F, frames});
      sigs.push_back(stft::synthesize_v(s, window, hop, length));
    }
    return losses::pit_loss_v(sigs, refs, loss_taps).loss;
  };
}

struct Prepared {
  StackedInput stacked;
  ge::TailFn tail;
};

Prepared prepare(const Sample& s, const TrainConfig& cfg) {
  if (s.mixture.num_samples() < cfg.window)
    throw std::runtime_error("trainer: sample shorter than one window: " +
                             s.id);
  Tensor X = stft::analyze(s.mixture, cfg.window, cfg.hop);
  Prepared p;
  p.stacked = stack_delayed(X, cfg.delay, cfg.taps);
  p.tail = make_tail(X.dim(1), X.dim(2), cfg.window, cfg.hop,
                     s.mixture.num_samples(), s.refs, cfg.loss_taps());
  return p;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1 || epochs < 1 || iterations < 1)
    throw std::invalid_argument("config: batch_size/epochs/iterations >= 1");
  if (signal_s <= 0.0 || delay < 1 || taps < 0)
    throw std::invalid_argument("config: bad signal_s/delay/taps");
  if (window < 2 || window % 2 != 0 || hop < 1 || window % hop != 0)
    throw std::invalid_argument("config: window even, hop dividing window");
  if (loss != "ci-sdr" && loss != "si-sdr")
    throw std::invalid_argument("config: loss must be ci-sdr or si-sdr");
  if (grad_mode != "dmc" && grad_mode != "bp")
    throw std::invalid_argument("config: grad_mode must be dmc or bp");
  if (lr <= 0.0 || clip <= 0.0)
    throw std::invalid_argument("config: lr and clip must be positive");
  if (glu_width < 1 || glu_blocks < 1 || glu_dropout < 0.0 ||
      glu_dropout >= 1.0)
    throw std::invalid_argument("config: bad glu settings");
  if (train_manifest.empty())
    throw std::invalid_argument("config: train_manifest is required");
}

TrainConfig parse_config_lines(const std::vector<std::string>& lines) {
  TrainConfig c;
  int lineno = 0;
  for (const std::string& raw : lines) {
    ++lineno;
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "batch_size") c.batch_size = std::stoi(val);
      else if (key == "signal_s") c.signal_s = std::stod(val);
      else if (key == "iterations") c.iterations = std::stoi(val);
      else if (key == "delay") c.delay = std::stoi(val);
      else if (key == "taps") c.taps = std::stoi(val);
      else if (key == "window") c.window = std::stoi(val);
      else if (key == "hop") c.hop = std::stoi(val);
      else if (key == "loss") c.loss = val;
      else if (key == "grad_mode") c.grad_mode = val;
      else if (key == "lr") c.lr = std::stod(val);
      else if (key == "beta1") c.beta1 = std::stod(val);
      else if (key == "beta2") c.beta2 = std::stod(val);
      else if (key == "adam_eps") c.adam_eps = std::stod(val);
      else if (key == "clip") c.clip = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "epochs") c.epochs = std::stoi(val);
      else if (key == "max_steps") c.max_steps = std::stoi(val);
      else if (key == "resume") c.resume = (val == "true" || val == "1");
      else if (key == "train_manifest") c.train_manifest = val;
      else if (key == "valid_manifest") c.valid_manifest = val;
      else if (key == "checkpoint_path") c.checkpoint_path = val;
      else if (key == "log_path") c.log_path = val;
      else if (key == "glu_width") c.glu_width = std::stoi(val);
      else if (key == "glu_blocks") c.glu_blocks = std::stoi(val);
      else if (key == "glu_dropout") c.glu_dropout = std::stod(val);
      else
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": bad value for '" + key + "'");
    }
  }
  return c;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return parse_config_lines(lines);
}

void Adam::init(const std::vector<std::pair<std::string, Tensor*>>& params) {
  t = 0;
  m.clear();
  v.clear();
  for (auto& [name, p] : params) {
    m.push_back(Tensor::zeros(p->shape, p->dtype));
    v.push_back(Tensor::zeros(p->shape, Dtype::Real));
  }
}

void Adam::step(const std::vector<std::pair<std::string, Tensor*>>& params,
                const std::vector<Tensor>& grads) {
  if (params.size() != m.size() || grads.size() != m.size())
    throw std::invalid_argument("Adam::step: parameter count mismatch");
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, double(t));
  const double bc2 = 1.0 - std::pow(beta2, double(t));
  for (size_t i = 0; i < m.size(); ++i) {
    Tensor& p = *params[i].second;
    const Tensor& g = grads[i];
    const int64_t n = p.numel();
    for (int64_t j = 0; j < n; ++j) {
      const double gr = g.re[j];
      const double gi = p.is_complex() ? g.im[j] : 0.0;
      m[i].re[j] = beta1 * m[i].re[j] + (1 - beta1) * gr;
      if (p.is_complex())
        m[i].im[j] = beta1 * m[i].im[j] + (1 - beta1) * gi;
      const double g2 = gr * gr + gi * gi;
      v[i].re[j] = beta2 * v[i].re[j] + (1 - beta2) * g2;
      const double denom = std::sqrt(v[i].re[j] / bc2) + eps;
      p.re[j] -= lr * (m[i].re[j] / bc1) / denom;
      if (p.is_complex()) p.im[j] -= lr * (m[i].im[j] / bc1) / denom;
    }
  }
}

double clip_gradients(std::vector<Tensor>& grads, double clip) {
  double norm2 = 0.0;
  for (const Tensor& g : grads) norm2 += g.norm2();
  const double norm = std::sqrt(norm2);
  if (norm > clip && norm > 0.0) {
    const double s = clip / norm;
    for (Tensor& g : grads) g *= s;
  }
  return norm;
}

bool grads_finite(double loss, const std::vector<Tensor>& grads) {
  if (!std::isfinite(loss)) return false;
  for (const Tensor& g : grads)
    if (!g.all_finite()) return false;
  return true;
}

namespace {

double validation_loss(const TrainConfig& cfg, sm::GluMaskNet& net,
                       const std::vector<ManifestEntry>& entries,
                       int64_t max_samples) {
  double total = 0.0;
  for (size_t i = 0; i < entries.size(); ++i) {
    Sample s = load_sample(entries[i], max_samples);
    Prepared p = prepare(s, cfg);
    auto fw = ge::forward_collect(p.stacked, net, cfg.iterations,
                                  mix64(cfg.seed, 0xa110ull + i), false);
    auto rows =
        tiss::rows_as_vars(fw.store.filters[cfg.iterations], nullptr);
    std::vector<Var> outs;
    for (const Tensor& y : fw.outputs) outs.push_back(Var(y));
    total += p.tail(rows, outs).value().re[0];
  }
  return total / double(entries.size());
}

void save_state(const std::string& path, sm::GluMaskNet& net,
                const Adam& adam, int step, double lr) {
  json meta = {{"step", step}, {"lr", lr}, {"adam_t", adam.t}};
  std::vector<std::pair<std::string, Tensor>> tensors;
  auto params = net.parameters();
  for (auto& [name, p] : params) tensors.emplace_back("param." + name, *p);
  for (size_t i = 0; i < adam.m.size(); ++i) {
    tensors.emplace_back("adam.m." + params[i].first, adam.m[i]);
    tensors.emplace_back("adam.v." + params[i].first, adam.v[i]);
  }
  sm::save_checkpoint(path, "train_state", meta.dump(), tensors);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, sm::GluMaskNet& net) {
  cfg.validate();
  auto entries = read_manifest(cfg.train_manifest);
  if (entries.empty())
    throw std::runtime_error("trainer: empty training manifest");
  std::vector<ManifestEntry> valid;
  if (!cfg.valid_manifest.empty()) valid = read_manifest(cfg.valid_manifest);

  const Waveform probe = read_wav(entries[0].mixture_path);
  const int64_t max_samples =
      int64_t(cfg.signal_s * double(probe.sample_rate));

  Adam adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, 0, {}, {}};
  auto params = net.parameters();
  adam.init(params);
  double lr = cfg.lr;
  int start_step = 0;

  const std::string state_path = cfg.checkpoint_path + ".state";
  if (cfg.resume && std::ifstream(state_path).good()) {
    sm::Checkpoint ck = sm::load_checkpoint(state_path);
    if (ck.kind != "train_state")
      throw std::runtime_error("trainer: bad state checkpoint kind");
    json meta = json::parse(ck.config_json);
    start_step = meta.at("step").get<int>();
    lr = meta.at("lr").get<double>();
    adam.t = meta.at("adam_t").get<int64_t>();
    for (size_t i = 0; i < params.size(); ++i) {
      *params[i].second = ck.find("param." + params[i].first);
      adam.m[i] = ck.find("adam.m." + params[i].first);
      adam.v[i] = ck.find("adam.v." + params[i].first);
    }
  }

  std::ofstream log_os;
  if (!cfg.log_path.empty()) {
    log_os.open(cfg.log_path, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!log_os)
      throw std::runtime_error("trainer: cannot open log " + cfg.log_path);
  }

  TrainResult result;
  result.best_valid_loss = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;

  const int n = static_cast<int>(entries.size());
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  int step = 0;
  bool done = false;

  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix64(cfg.seed, 0x5afeull ^ uint64_t(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (int b = 0; b < steps_per_epoch && !done; ++b, ++step) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) {
        done = true;
        break;
      }
      if (step < start_step) continue;  // resumed: replay the schedule only
      const auto t0 = Clock::now();
      const int begin = b * cfg.batch_size;
      const int end = std::min(n, begin + cfg.batch_size);
      std::vector<Tensor> grads;
      double loss = 0.0;
      size_t peak = 0;
      int used = 0;
      for (int i = begin; i < end; ++i) {
        ge::GradReport rep;
        try {
          Sample s = load_sample(entries[order[i]], max_samples);
          Prepared p = prepare(s, cfg);
          const uint64_t es = mix64(cfg.seed, uint64_t(step) * 1000 + i);
          rep = cfg.grad_mode == "bp"
                    ? ge::bp_backward(p.stacked, net, cfg.iterations, es,
                                      true, p.tail)
                    : ge::dmc_gradient(p.stacked, net, cfg.iterations, es,
                                       true, p.tail);
        } catch (const std::runtime_error&) {
          continue;  // data error: skip the element
        }
        if (grads.empty()) {
          grads = rep.param_grads;
        } else {
          for (size_t g = 0; g < grads.size(); ++g)
            grads[g] += rep.param_grads[g];
        }
        loss += rep.loss;
        peak = std::max(peak, rep.peak_nodes);
        ++used;
      }
      if (used == 0)
        throw std::runtime_error("trainer: every sample in a batch failed");
      loss /= double(used);
      for (Tensor& g : grads) g *= 1.0 / double(used);

      StepRecord rec;
      rec.step = step;
      rec.loss = loss;
      rec.lr = lr;
      rec.peak_nodes = peak;
      rec.grad_norm = clip_gradients(grads, cfg.clip);
      if (!grads_finite(loss, grads)) {
        rec.skipped = true;
        lr *= 0.5;
      } else {
        adam.lr = lr;
        adam.step(params, grads);
      }
      rec.wall_ms =
          std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
      result.log.push_back(rec);
      if (log_os) {
        json j = {{"step", rec.step},         {"loss", rec.loss},
                  {"grad_norm", rec.grad_norm}, {"lr", rec.lr},
                  {"peak_nodes", rec.peak_nodes}, {"wall_ms", rec.wall_ms},
                  {"skipped", rec.skipped}};
        log_os << j.dump() << "\n";
      }
    }

    if (!valid.empty() && step > start_step) {
      const double vl = validation_loss(cfg, net, valid, max_samples);
      if (vl < result.best_valid_loss) {
        result.best_valid_loss = vl;
        best_params.clear();
        for (auto& [name, p] : params) best_params.push_back(*p);
      }
    }
  }

  result.steps = step;
  result.final_lr = lr;
  save_state(state_path, net, adam, step, lr);
  if (!best_params.empty()) {
    // checkpoint the best validation parameters, leave the net at the final
    std::vector<Tensor> current;
    for (auto& [name, p] : params) current.push_back(*p);
    for (size_t i = 0; i < params.size(); ++i)
      *params[i].second = best_params[i];
    net.save(cfg.checkpoint_path);
    for (size_t i = 0; i < params.size(); ++i)
      *params[i].second = current[i];
  } else {
    net.save(cfg.checkpoint_path);
  }
  return result;
}

int default_test_iterations(int channels) {
  if (channels <= 2) return 50;
  if (channels == 3) return 75;
  return 100;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2]
               : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

EvalSummary evaluate(sm::SourceModel& model, const std::string& manifest_path,
                     int channels, const EvalOptions& opt) {
  auto entries = read_manifest(manifest_path);
  if (entries.empty()) throw std::runtime_error("evaluate: empty manifest");
  const int J =
      opt.iterations > 0 ? opt.iterations : default_test_iterations(channels);
  EvalSummary summary;
  for (const auto& entry : entries) {
    Waveform mix = read_wav(entry.mixture_path);
    if (mix.num_channels() != channels)
      throw std::runtime_error("evaluate: sample '" + entry.id + "' has " +
                               std::to_string(mix.num_channels()) +
                               " channels, expected " +
                               std::to_string(channels));
    std::vector<std::vector<double>> refs;
    for (const std::string& p : entry.reference_paths)
      refs.push_back(read_wav(p).channels[0]);
    const int N = static_cast<int>(refs.size());

    const int F = stft::num_bins(opt.window);
    const int T = stft::num_frames(mix.num_samples(), opt.window, opt.hop);
    model.reset(N, F, T, entry.seed);
    std::mt19937_64 rng(mix64(entry.seed, 0xe7a1ull));
    Waveform sep =
        tiss::separate(mix, sm::model_weight_fn(model, rng, false), J,
                       opt.delay, opt.taps, opt.window, opt.hop);

    auto base = [&](const std::vector<double>& e,
                    const std::vector<double>& r) {
      return losses::ci_sdr_loss(e, r, opt.ci_taps);
    };
    auto pit = losses::pit_loss(sep.channels, refs, base);

    EvalRow row;
    row.id = entry.id;
    for (int i = 0; i < N; ++i) {
      const auto& est = sep.channels[i];
      const auto& ref = refs[pit.permutation[i]];
      row.si_sdr += losses::si_sdr(est, ref) / N;
      row.ci_sdr += losses::ci_sdr(est, ref, opt.ci_taps) / N;
      row.si_sir += losses::si_sir(est, refs, pit.permutation[i]) / N;
      const auto& obs = mix.channels[opt.ref_channel];
      row.obs_si_sdr += losses::si_sdr(obs, refs[i]) / N;
      row.obs_ci_sdr += losses::ci_sdr(obs, refs[i], opt.ci_taps) / N;
    }
    summary.rows.push_back(row);
  }
  std::vector<double> a, b, c, d, e;
  for (const auto& r : summary.rows) {
    a.push_back(r.si_sdr);
    b.push_back(r.ci_sdr);
    c.push_back(r.si_sir);
    d.push_back(r.obs_si_sdr);
    e.push_back(r.obs_ci_sdr);
  }
  summary.median_si_sdr = median(a);
  summary.median_ci_sdr = median(b);
  summary.median_si_sir = median(c);
  summary.median_obs_si_sdr = median(d);
  summary.median_obs_ci_sdr = median(e);
  return summary;
}

}  // namespace trainer
}  // namespace demix
