// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// demix: joint dereverberation and separation CLI.
//   simulate  build a synthetic mixture dataset and manifest
//   train     train the GLU mask network end to end through the iterations
//   separate  separate one mixture WAV with a trained or baseline model
//   evaluate  score a model on a manifest (SI-SDR / CI-SDR / SI-SIR)
//   gradcheck compare checkpointed (dmc) against full-unroll (bp) gradients
//   bench     memory/time report for both gradient modes over J

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "demix/gradengine.hpp"
#include "demix/trainer.hpp"
#include "demix/wav.hpp"

namespace fs = std::filesystem;
namespace ge = demix::gradengine;
namespace sm = demix::srcmodel;
namespace tr = demix::trainer;
using demix::SimConfig;
using demix::StackedInput;
using demix::Tensor;
using demix::Var;
using demix::Waveform;

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// simulator config: same key = value format as the training config
SimConfig parse_sim_config(const std::string& path, int64_t& count,
                           std::string& out_dir) {
  SimConfig c;
  std::ifstream is(path);
  if (!is) throw std::runtime_error("simulate: cannot open config " + path);
  std::string line;
  int ln = 0;
  while (std::getline(is, line)) {
    ++ln;
    line = line.substr(0, line.find('#'));
    if (trim(line).empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("simulate config line " + std::to_string(ln) +
                                  ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "channels") c.channels = std::stoi(val);
      else if (key == "sample_rate") c.sample_rate = std::stoi(val);
      else if (key == "duration_s") c.duration_s = std::stod(val);
      else if (key == "t60_min") c.t60_min = std::stod(val);
      else if (key == "t60_max") c.t60_max = std::stod(val);
      else if (key == "gain_min_db") c.gain_min_db = std::stod(val);
      else if (key == "gain_max_db") c.gain_max_db = std::stod(val);
      else if (key == "snr_min_db") c.snr_min_db = std::stod(val);
      else if (key == "snr_max_db") c.snr_max_db = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "corpus_dir") c.corpus_dir = val;
      else if (key == "count") count = std::stoll(val);
      else if (key == "out_dir") out_dir = val;
      else
        throw std::invalid_argument("unknown key '" + key + "'");
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("simulate config line " + std::to_string(ln) +
                                  ": " + e.what());
    }
  }
  return c;
}

std::unique_ptr<sm::SourceModel> make_model(const std::string& kind,
                                            const std::string& checkpoint) {
  if (kind == "nmf") return std::make_unique<sm::NmfModel>();
  if (kind == "glu") {
    if (checkpoint.empty())
      throw std::runtime_error("model 'glu' requires --checkpoint");
    return std::make_unique<sm::GluMaskNet>(sm::GluMaskNet::load(checkpoint));
  }
  throw std::runtime_error("unknown model kind '" + kind + "'");
}

struct GradcheckCase {
  StackedInput stacked;
  ge::TailFn tail;
};

GradcheckCase gradcheck_case(int channels, int taps, int window, int hop,
                             double duration, uint64_t seed, int loss_taps) {
  SimConfig sim;
  sim.channels = channels;
  sim.duration_s = duration;
  sim.t60_min = 0.05;
  sim.t60_max = std::min(0.25, duration * 0.6);
  sim.seed = seed;
  demix::MixtureSample s = demix::simulate(sim, 0);
  Tensor X = demix::stft::analyze(s.mixture, window, hop);
  GradcheckCase c;
  c.stacked = demix::stack_delayed(X, 1, taps);
  const int F = X.dim(1), frames = X.dim(2);
  const int64_t length = s.mixture.num_samples();
  std::vector<std::vector<double>> refs;
  for (const Waveform& r : s.references) refs.push_back(r.channels[0]);
  const int N = channels;
  c.tail = [=](const std::vector<Var>& rows, const std::vector<Var>& outs) {
    Var proj = demix::tiss::projection_back(outs, rows, 0);
    std::vector<Var> sigs;
    for (int n = 0; n < N; ++n) {
      Var sp = demix::ops::reshape(demix::ops::slice0(proj, n, n + 1),
                                   {F, frames});
      sigs.push_back(demix::stft::synthesize_v(sp, window, hop, length));
    }
    return demix::losses::pit_loss_v(sigs, refs, loss_taps).loss;
  };
  return c;
}

double grad_rel_error(const std::vector<Tensor>& a,
                      const std::vector<Tensor>& b) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    Tensor d = a[i];
    d *= -1.0;
    d += b[i];
    num += d.norm2();
    den += b[i].norm2();
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

int cmd_simulate(const std::string& config, const std::string& out_manifest,
                 int64_t count_override, const std::string& dir_override) {
  int64_t count = 8;
  std::string out_dir;
  SimConfig cfg = config.empty() ? SimConfig{}
                                 : parse_sim_config(config, count, out_dir);
  if (count_override > 0) count = count_override;
  if (!dir_override.empty()) out_dir = dir_override;
  if (out_dir.empty())
    out_dir = fs::path(out_manifest).parent_path().string();
  if (out_dir.empty()) out_dir = ".";
  fs::create_directories(out_dir);
  auto entries = demix::build_dataset(cfg, count, out_dir);
  demix::write_manifest(entries, out_manifest);
  std::cout << "wrote " << entries.size() << " samples to " << out_dir
            << "\nmanifest: " << out_manifest << "\n";
  return 0;
}

int cmd_train(const std::string& config) {
  tr::TrainConfig cfg = tr::parse_config_file(config);
  cfg.validate();
  sm::GluConfig g;
  g.width = cfg.glu_width;
  g.blocks = cfg.glu_blocks;
  g.dropout = cfg.glu_dropout;
  sm::GluMaskNet net(g, cfg.seed);
  tr::TrainResult res = tr::train(cfg, net);
  std::cout << "trained " << res.steps << " steps, final lr " << res.final_lr;
  if (std::isfinite(res.best_valid_loss))
    std::cout << ", best validation loss " << res.best_valid_loss;
  std::cout << "\ncheckpoint: " << cfg.checkpoint_path << "\n";
  return 0;
}

int cmd_separate(const std::string& checkpoint, const std::string& in,
                 const std::string& out_dir, const std::string& model_kind,
                 int iterations, int window, int hop, int delay, int taps,
                 uint64_t seed) {
  Waveform mix = demix::read_wav(in);
  const int N = mix.num_channels();
  const int J =
      iterations > 0 ? iterations : tr::default_test_iterations(N);
  auto model = make_model(model_kind, checkpoint);
  const int F = demix::stft::num_bins(window);
  const int T = demix::stft::num_frames(mix.num_samples(), window, hop);
  model->reset(N, F, T, seed);
  std::mt19937_64 rng(seed);
  Waveform sep = demix::tiss::separate(
      mix, sm::model_weight_fn(*model, rng, false), J, delay, taps, window,
      hop);
  fs::create_directories(out_dir);
  const std::string stem = fs::path(in).stem().string();
  for (int n = 0; n < sep.num_channels(); ++n) {
    Waveform w;
    w.sample_rate = sep.sample_rate;
    w.channels.push_back(sep.channels[n]);
    const std::string path =
        out_dir + "/" + stem + "_src" + std::to_string(n) + ".wav";
    demix::write_wav(path, w);
    std::cout << path << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& manifest,
                 int channels, const std::string& model_kind,
                 const tr::EvalOptions& opt) {
  auto model = make_model(model_kind, checkpoint);
  tr::EvalSummary s = tr::evaluate(*model, manifest, channels, opt);
  std::printf("%-16s %9s %9s %9s %9s %9s\n", "id", "si_sdr", "ci_sdr",
              "si_sir", "obs_sisdr", "obs_cisdr");
  for (const tr::EvalRow& r : s.rows)
    std::printf("%-16s %9.3f %9.3f %9.3f %9.3f %9.3f\n", r.id.c_str(),
                r.si_sdr, r.ci_sdr, r.si_sir, r.obs_si_sdr, r.obs_ci_sdr);
  std::printf("%-16s %9.3f %9.3f %9.3f %9.3f %9.3f\n", "median",
              s.median_si_sdr, s.median_ci_sdr, s.median_si_sir,
              s.median_obs_si_sdr, s.median_obs_ci_sdr);
  return 0;
}

int cmd_gradcheck(bool full) {
  // the checkpointed gradient must match the full-unroll gradient closely
  const double tol = 5e-4;
  struct Spec {
    int channels, taps, window, iterations;
    double duration;
  };
  std::vector<Spec> specs = {{2, 2, 128, 5, 0.15}};
  if (full) {
    specs.push_back({2, 0, 128, 10, 0.20});
    specs.push_back({2, 5, 256, 5, 0.25});
    specs.push_back({3, 1, 128, 5, 0.15});
  }
  double worst = 0.0;
  bool ok = true;
  int idx = 0;
  for (const Spec& sp : specs) {
    GradcheckCase c = gradcheck_case(sp.channels, sp.taps, sp.window,
                                     sp.window / 4, sp.duration, 90 + idx, 1);
    sm::GluConfig g;
    g.width = 4;
    g.blocks = 2;
    g.dropout = full ? 0.3 : 0.0;
    sm::GluMaskNet net(g, 7 + idx);
    const uint64_t seed = 17 + idx;
    ge::GradReport bp =
        ge::bp_backward(c.stacked, net, sp.iterations, seed, true, c.tail);
    ge::GradReport dm =
        ge::dmc_gradient(c.stacked, net, sp.iterations, seed, true, c.tail);
    const double rel = grad_rel_error(dm.param_grads, bp.param_grads);
    worst = std::max(worst, rel);
    const bool pass = rel <= tol && std::abs(dm.loss - bp.loss) <= 1e-9;
    ok = ok && pass;
    std::printf(
        "case %d: N=%d L=%d win=%d J=%d  loss=%.6f  rel_grad_err=%.3e  %s\n",
        idx, sp.channels, sp.taps, sp.window, sp.iterations, bp.loss, rel,
        pass ? "ok" : "FAIL");
    ++idx;
  }
  std::printf("worst relative gradient error: %.3e (tolerance %.1e)\n", worst,
              tol);
  return ok ? 0 : 1;
}

int cmd_bench(const std::string& j_list, int channels, int taps, int window,
              double duration, const std::string& out_csv) {
  std::vector<int> js;
  std::stringstream ss(j_list);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!trim(tok).empty()) js.push_back(std::stoi(trim(tok)));
  if (js.empty()) throw std::runtime_error("bench: empty --j list");
  GradcheckCase c =
      gradcheck_case(channels, taps, window, window / 4, duration, 1234, 1);
  sm::GluConfig g;
  g.width = 4;
  g.blocks = 2;
  g.dropout = 0.0;
  sm::GluMaskNet net(g, 3);
  auto rows = ge::bench(c.stacked, net, js, 99, c.tail);
  if (out_csv.empty()) {
    ge::write_bench_csv(rows, std::cout);
  } else {
    std::ofstream os(out_csv);
    ge::write_bench_csv(rows, os);
    std::cout << "wrote " << out_csv << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"demix: joint dereverberation and source separation"};
  app.require_subcommand(1);

  std::string config, out_manifest, checkpoint, in_wav, out_dir, manifest;
  std::string model_kind = "glu", j_list = "1,5,10,20", out_csv, sim_dir;
  int channels = 2, window = 1024, hop = 256, delay = 1, taps = 5;
  int iterations = 0, ci_taps = demix::losses::kCiSdrTaps;
  int64_t count = 0;
  uint64_t seed = 0;
  double duration = 0.3;
  bool full = false;

  auto* sim = app.add_subcommand("simulate", "build a synthetic dataset");
  sim->add_option("--config", config, "simulator key = value config");
  sim->add_option("--out-manifest", out_manifest, "manifest path")->required();
  sim->add_option("--count", count, "number of samples (overrides config)");
  sim->add_option("--out-dir", sim_dir, "WAV directory (overrides config)");

  auto* trn = app.add_subcommand("train", "train the GLU mask network");
  trn->add_option("--config", config, "training key = value config")
      ->required();

  auto* sep = app.add_subcommand("separate", "separate one mixture WAV");
  sep->add_option("--checkpoint", checkpoint, "model checkpoint");
  sep->add_option("--in", in_wav, "multichannel mixture WAV")->required();
  sep->add_option("--out-dir", out_dir, "output directory")->required();
  sep->add_option("--model", model_kind, "glu or nmf");
  sep->add_option("--iterations", iterations, "T-ISS iterations (0 = auto)");
  sep->add_option("--window", window, "STFT window");
  sep->add_option("--hop", hop, "STFT hop");
  sep->add_option("--delay", delay, "tap delay D");
  sep->add_option("--taps", taps, "tap count L");
  sep->add_option("--seed", seed, "model seed");

  auto* ev = app.add_subcommand("evaluate", "score a model on a manifest");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint");
  ev->add_option("--manifest", manifest, "dataset manifest")->required();
  ev->add_option("--channels", channels, "expected channel count")->required();
  ev->add_option("--model", model_kind, "glu or nmf");
  ev->add_option("--iterations", iterations, "T-ISS iterations (0 = auto)");
  ev->add_option("--window", window, "STFT window");
  ev->add_option("--hop", hop, "STFT hop");
  ev->add_option("--delay", delay, "tap delay D");
  ev->add_option("--taps", taps, "tap count L");
  ev->add_option("--ci-taps", ci_taps, "CI-SDR filter taps");

  auto* gc = app.add_subcommand("gradcheck", "compare dmc and bp gradients");
  gc->add_flag("--full", full, "more cases, with dropout and 3 channels");

  auto* bn = app.add_subcommand("bench", "memory/time benchmark");
  bn->add_option("--j", j_list, "comma-separated iteration counts");
  bn->add_option("--channels", channels, "channel count");
  bn->add_option("--taps", taps, "tap count L");
  bn->add_option("--window", window, "STFT window");
  bn->add_option("--duration", duration, "signal length in seconds");
  bn->add_option("--out", out_csv, "CSV path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(config, out_manifest, count, sim_dir);
    if (trn->parsed()) return cmd_train(config);
    if (sep->parsed())
      return cmd_separate(checkpoint, in_wav, out_dir, model_kind, iterations,
                          window, hop, delay, taps, seed);
    if (ev->parsed()) {
      tr::EvalOptions opt;
      opt.window = window;
      opt.hop = hop;
      opt.delay = delay;
      opt.taps = taps;
      opt.iterations = iterations;
      opt.ci_taps = ci_taps;
      return cmd_evaluate(checkpoint, manifest, channels, model_kind, opt);
    }
    if (gc->parsed()) return cmd_gradcheck(full);
    if (bn->parsed())
      return cmd_bench(j_list, channels, taps, window, duration, out_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
