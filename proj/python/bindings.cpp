// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "demix/trainer.hpp"
#include "demix/wav.hpp"

namespace py = pybind11;
using namespace demix;
namespace sm = demix::srcmodel;
namespace tr = demix::trainer;

namespace {

std::vector<double> to_vec(const py::array_t<double, py::array::c_style>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
  return {a.data(), a.data() + a.shape(0)};
}

Waveform to_waveform(const py::array_t<double, py::array::c_style>& a,
                     int sample_rate) {
  if (a.ndim() != 2)
    throw std::invalid_argument("expected a [channels, samples] array");
  Waveform w;
  w.sample_rate = sample_rate;
  const auto* p = a.data();
  for (py::ssize_t c = 0; c < a.shape(0); ++c)
    w.channels.emplace_back(p + c * a.shape(1), p + (c + 1) * a.shape(1));
  return w;
}

py::array_t<double> from_channels(
    const std::vector<std::vector<double>>& chans) {
  const py::ssize_t n = py::ssize_t(chans.size());
  const py::ssize_t len = chans.empty() ? 0 : py::ssize_t(chans[0].size());
  py::array_t<double> out({n, len});
  auto* p = out.mutable_data();
  for (py::ssize_t c = 0; c < n; ++c)
    std::copy(chans[c].begin(), chans[c].end(), p + c * len);
  return out;
}

py::array_t<std::complex<double>> from_spec(const Tensor& spec) {
  if (spec.shape.size() != 2)
    throw std::invalid_argument("expected a [F, T] spectrogram");
  py::array_t<std::complex<double>> out(
      {py::ssize_t(spec.dim(0)), py::ssize_t(spec.dim(1))});
  auto* p = out.mutable_data();
  for (int64_t i = 0; i < spec.numel(); ++i)
    p[i] = std::complex<double>(spec.re[i], spec.im[i]);
  return out;
}

std::unique_ptr<sm::SourceModel> model_from(const std::string& model,
                                            const std::string& checkpoint) {
  if (model == "nmf") return std::make_unique<sm::NmfModel>();
  if (model == "glu")
    return std::make_unique<sm::GluMaskNet>(sm::GluMaskNet::load(checkpoint));
  throw std::invalid_argument("model must be 'nmf' or 'glu'");
}

}  // namespace

PYBIND11_MODULE(_demix, m) {
  m.doc() = "joint dereverberation and source separation (ILRMA-T-ISS)";

  m.def(
      "simulate",
      [](int channels, int sample_rate, double duration_s, double t60_min,
         double t60_max, double snr_min_db, double snr_max_db, uint64_t seed,
         int64_t index) {
        SimConfig cfg;
        cfg.channels = channels;
        cfg.sample_rate = sample_rate;
        cfg.duration_s = duration_s;
        cfg.t60_min = t60_min;
        cfg.t60_max = t60_max;
        cfg.snr_min_db = snr_min_db;
        cfg.snr_max_db = snr_max_db;
        cfg.seed = seed;
        MixtureSample s = simulate(cfg, index);
        std::vector<std::vector<double>> refs;
        for (const Waveform& r : s.references) refs.push_back(r.channels[0]);
        py::dict d;
        d["id"] = s.id;
        d["mixture"] = from_channels(s.mixture.channels);
        d["references"] = from_channels(refs);
        d["sample_rate"] = s.mixture.sample_rate;
        d["t60_s"] = s.t60_s;
        d["snr_db"] = s.snr_db;
        d["gains_db"] = s.gains_db;
        return d;
      },
      py::arg("channels") = 2, py::arg("sample_rate") = 16000,
      py::arg("duration_s") = 2.0, py::arg("t60_min") = 0.2,
      py::arg("t60_max") = 0.6, py::arg("snr_min_db") = 30.0,
      py::arg("snr_max_db") = 50.0, py::arg("seed") = 0, py::arg("index") = 0,
      "Generate one synthetic reverberant mixture with reference sources.");

  m.def(
      "separate",
      [](py::array_t<double, py::array::c_style> mixture, int sample_rate,
         const std::string& model, const std::string& checkpoint,
         int iterations, int delay, int taps, int window, int hop,
         uint64_t seed) {
        Waveform mix = to_waveform(mixture, sample_rate);
        const int N = mix.num_channels();
        const int J = iterations > 0 ? iterations
                                     : tr::default_test_iterations(N);
        auto src = model_from(model, checkpoint);
        src->reset(N, stft::num_bins(window),
                   stft::num_frames(mix.num_samples(), window, hop), seed);
        std::mt19937_64 rng(seed);
        Waveform out = tiss::separate(
            mix, sm::model_weight_fn(*src, rng, false), J, delay, taps,
            window, hop);
        return from_channels(out.channels);
      },
      py::arg("mixture"), py::arg("sample_rate") = 16000,
      py::arg("model") = "nmf", py::arg("checkpoint") = "",
      py::arg("iterations") = 0, py::arg("delay") = 1, py::arg("taps") = 5,
      py::arg("window") = 1024, py::arg("hop") = 256, py::arg("seed") = 0,
      "Separate an [M, samples] mixture; returns [N, samples] sources.");

  m.def(
      "stft",
      [](py::array_t<double, py::array::c_style> x, int window, int hop) {
        return from_spec(stft::analyze(to_vec(x), window, hop));
      },
      py::arg("x"), py::arg("window") = 1024, py::arg("hop") = 256,
      "STFT of a 1-d signal; returns a complex [F, T] array.");

  m.def(
      "istft",
      [](py::array_t<std::complex<double>, py::array::c_style> spec,
         int window, int hop, int64_t length) {
        if (spec.ndim() != 2)
          throw std::invalid_argument("expected a [F, T] array");
        Tensor t = Tensor::zeros(
            {int(spec.shape(0)), int(spec.shape(1))}, Dtype::Complex);
        const auto* p = spec.data();
        for (int64_t i = 0; i < t.numel(); ++i) {
          t.re[i] = p[i].real();
          t.im[i] = p[i].imag();
        }
        auto y = stft::synthesize(t, window, hop, length);
        py::array_t<double> out({py::ssize_t(y.size())});
        std::copy(y.begin(), y.end(), out.mutable_data());
        return out;
      },
      py::arg("spec"), py::arg("window") = 1024, py::arg("hop") = 256,
      py::arg("length"),
      "Inverse STFT back to a signal of the given length.");

  m.def(
      "si_sdr",
      [](py::array_t<double, py::array::c_style> est,
         py::array_t<double, py::array::c_style> ref) {
        return -losses::ci_sdr_loss(to_vec(est), to_vec(ref), 1);
      },
      py::arg("est"), py::arg("ref"),
      "Scale-invariant SDR in dB (higher is better).");

  m.def(
      "ci_sdr",
      [](py::array_t<double, py::array::c_style> est,
         py::array_t<double, py::array::c_style> ref, int taps) {
        return -losses::ci_sdr_loss(to_vec(est), to_vec(ref), taps);
      },
      py::arg("est"), py::arg("ref"), py::arg("taps") = 512,
      "Convolutive-invariant SDR in dB with a K-tap reference filter.");

  m.def(
      "evaluate",
      [](const std::string& manifest, int channels, const std::string& model,
         const std::string& checkpoint, int iterations, int window, int hop,
         int delay, int taps, int ci_taps) {
        auto src = model_from(model, checkpoint);
        tr::EvalOptions opt;
        opt.window = window;
        opt.hop = hop;
        opt.delay = delay;
        opt.taps = taps;
        opt.iterations = iterations;
        opt.ci_taps = ci_taps;
        tr::EvalSummary s = tr::evaluate(*src, manifest, channels, opt);
        py::list rows;
        for (const tr::EvalRow& r : s.rows) {
          py::dict d;
          d["id"] = r.id;
          d["si_sdr"] = r.si_sdr;
          d["ci_sdr"] = r.ci_sdr;
          d["si_sir"] = r.si_sir;
          d["obs_si_sdr"] = r.obs_si_sdr;
          d["obs_ci_sdr"] = r.obs_ci_sdr;
          rows.append(d);
        }
        py::dict out;
        out["rows"] = rows;
        out["median_si_sdr"] = s.median_si_sdr;
        out["median_ci_sdr"] = s.median_ci_sdr;
        out["median_si_sir"] = s.median_si_sir;
        out["median_obs_si_sdr"] = s.median_obs_si_sdr;
        out["median_obs_ci_sdr"] = s.median_obs_ci_sdr;
        return out;
      },
      py::arg("manifest"), py::arg("channels") = 2, py::arg("model") = "nmf",
      py::arg("checkpoint") = "", py::arg("iterations") = 0,
      py::arg("window") = 1024, py::arg("hop") = 256, py::arg("delay") = 1,
      py::arg("taps") = 5, py::arg("ci_taps") = 512,
      "Score a model over a dataset manifest; returns rows and medians.");

  m.def(
      "train",
      [](const std::string& config_path) {
        tr::TrainConfig cfg = tr::parse_config_file(config_path);
        cfg.validate();
        sm::GluConfig g;
        g.width = cfg.glu_width;
        g.blocks = cfg.glu_blocks;
        g.dropout = cfg.glu_dropout;
        sm::GluMaskNet net(g, cfg.seed);
        tr::TrainResult res = tr::train(cfg, net);
        py::dict d;
        d["steps"] = res.steps;
        d["final_lr"] = res.final_lr;
        d["best_valid_loss"] = res.best_valid_loss;
        std::vector<double> losses;
        for (const auto& r : res.log) losses.push_back(r.loss);
        d["losses"] = losses;
        d["checkpoint"] = cfg.checkpoint_path;
        return d;
      },
      py::arg("config_path"),
      "Train the GLU mask network from a key = value config file.");
}
