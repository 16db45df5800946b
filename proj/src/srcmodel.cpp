// License: Apache-2.0 (http://www.apache.org/licenses/LICENSE-2.0)
#include "demix/srcmodel.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace demix {
namespace srcmodel {

namespace op = demix::ops;
using nlohmann::json;

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

Tensor power_of(const Tensor& y) {
  Tensor p = Tensor::zeros(y.shape, Dtype::Real);
  for (int64_t i = 0; i < y.numel(); ++i)
    p.re[i] = y.re[i] * y.re[i] + y.im[i] * y.im[i];
  return p;
}

}  // namespace

void NmfModel::reset(int sources, int F, int T, uint64_t seed) {
  basis_.clear();
  act_.clear();
  for (int n = 0; n < sources; ++n) {
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + uint64_t(n) + 1);
    std::uniform_real_distribution<double> d(0.5, 1.5);
    Tensor b = Tensor::zeros({F, rank_}, Dtype::Real);
    Tensor h = Tensor::zeros({rank_, T}, Dtype::Real);
    for (double& v : b.re) v = d(rng);
    for (double& v : h.re) v = d(rng);
    basis_.push_back(std::move(b));
    act_.push_back(std::move(h));
  }
}

std::vector<Var> NmfModel::weights(const std::vector<Var>& outs,
                                   std::mt19937_64&, bool) {
  const int N = static_cast<int>(outs.size());
  if (static_cast<int>(basis_.size()) != N)
    throw std::logic_error("NmfModel: reset() not called for this utterance");
  std::vector<Var> u;
  for (int n = 0; n < N; ++n) {
    const Tensor& yv = outs[n].value();
    const int F = yv.dim(0), T = yv.dim(1);
    if (basis_[n].dim(0) != F || act_[n].dim(1) != T)
      throw std::logic_error("NmfModel: shape changed since reset()");
    Tensor P = power_of(yv);
    const double floor = 1e-9 * (mean_of(P.re) + 1e-300);
    Tensor& B = basis_[n];
    Tensor& H = act_[n];
    auto model_at = [&](int f, int t) {
      double v = 0.0;
      for (int k = 0; k < rank_; ++k)
        v += B.re[B.off2(f, k)] * H.re[H.off2(k, t)];
      return std::max(v, floor);
    };
    for (int it = 0; it < inner_updates_; ++it) {
      // B <- B * ((P/V^2) H^T) / ((1/V) H^T)
      Tensor V = Tensor::zeros({F, T}, Dtype::Real);
      for (int f = 0; f < F; ++f)
        for (int t = 0; t < T; ++t) V.re[V.off2(f, t)] = model_at(f, t);
      for (int f = 0; f < F; ++f)
        for (int k = 0; k < rank_; ++k) {
          double num = 0.0, den = 0.0;
          for (int t = 0; t < T; ++t) {
            const double v = V.re[V.off2(f, t)];
            const double h = H.re[H.off2(k, t)];
            num += h * P.re[P.off2(f, t)] / (v * v);
            den += h / v;
          }
          B.re[B.off2(f, k)] *= num / std::max(den, 1e-300);
        }
      // H <- H * (B^T (P/V^2)) / (B^T (1/V))
      for (int f = 0; f < F; ++f)
        for (int t = 0; t < T; ++t) V.re[V.off2(f, t)] = model_at(f, t);
      for (int k = 0; k < rank_; ++k)
        for (int t = 0; t < T; ++t) {
          double num = 0.0, den = 0.0;
          for (int f = 0; f < F; ++f) {
            const double v = V.re[V.off2(f, t)];
            const double b = B.re[B.off2(f, k)];
            num += b * P.re[P.off2(f, t)] / (v * v);
            den += b / v;
          }
          H.re[H.off2(k, t)] *= num / std::max(den, 1e-300);
        }
    }
    Tensor w = Tensor::zeros({F, T}, Dtype::Real);
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < T; ++t) w.re[w.off2(f, t)] = 1.0 / model_at(f, t);
    u.push_back(op::constant(std::move(w)));
  }
  return u;
}

double NmfModel::divergence(int source, const Tensor& power) const {
  const Tensor& B = basis_[source];
  const Tensor& H = act_[source];
  const int F = B.dim(0), T = H.dim(1);
  const double floor = 1e-9 * (mean_of(power.re) + 1e-300);
  double d = 0.0;
  for (int f = 0; f < F; ++f)
    for (int t = 0; t < T; ++t) {
      double v = 0.0;
      for (int k = 0; k < rank_; ++k)
        v += B.re[B.off2(f, k)] * H.re[H.off2(k, t)];
      v = std::max(v, floor);
      const double p = std::max(power.re[power.off2(f, t)], floor);
      d += p / v - std::log(p / v) - 1.0;
    }
  return d;
}

GluMaskNet::GluMaskNet(GluConfig config, uint64_t init_seed)
    : config_(config) {
  if (config_.width < 1 || config_.blocks < 1 || config_.down_stride < 1 ||
      config_.down_kernel < 1 || config_.kernel < 1 ||
      config_.dropout < 0.0 || config_.dropout >= 1.0)
    throw std::invalid_argument("GluMaskNet: bad config");
  std::mt19937_64 rng(init_seed * 0x9e3779b97f4a7c15ull + 17);
  const int C = config_.width;
  auto conv_init = [&](const std::string& name, std::vector<int> shape) {
    int fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    names_.push_back(name);
    params_.push_back(randn(rng, shape, Dtype::Real,
                            std::sqrt(1.0 / double(fan_in))));
    names_.push_back(name.substr(0, name.size() - 1) + "b");
    params_.push_back(Tensor::zeros({shape[0]}, Dtype::Real));
  };
  conv_init("down.w", {2 * C, 1, config_.down_kernel, 3});
  for (int i = 0; i < config_.blocks; ++i)
    conv_init("block" + std::to_string(i) + ".w",
              {2 * C, C, config_.kernel, config_.kernel});
  // transpose conv weight layout is [Cin, Cout, kh, kw]
  names_.push_back("up.w");
  params_.push_back(randn(rng, {C, 1, config_.down_kernel, 3}, Dtype::Real,
                          std::sqrt(1.0 / double(C * config_.down_kernel * 3))));
  names_.push_back("up.b");
  params_.push_back(Tensor::zeros({1}, Dtype::Real));
}

Var GluMaskNet::mask(const Var& y, const std::vector<Var>& p,
                     std::mt19937_64& rng, bool train) const {
  const int F = y.value().dim(0), T = y.value().dim(1);
  const int C = config_.width;
  const int kd = config_.down_kernel, ds = config_.down_stride;
  const int pd = kd / 2, pk = config_.kernel / 2;
  const int F2 = (F + 2 * pd - kd) / ds + 1;
  const int oph = F - ((F2 - 1) * ds - 2 * pd + kd);
  if (F2 < 1 || oph < 0 || oph >= ds)
    throw std::invalid_argument("GluMaskNet: incompatible bin count " +
                                std::to_string(F));
  auto glu = [&](const Var& h, const Var& w, const Var& b, int sh, int ph) {
    Var c = op::conv2d(h, w, b, sh, 1, ph, 1);
    Var a = op::slice0(c, 0, C);
    Var g = op::slice0(c, C, 2 * C);
    return op::mul(a, op::sigmoid(g));
  };
  // scale-normalized input: the ISS rescaling shrinks |y| across iterations,
  // so the net sees log1p(|y| / rms(y)) and stays scale invariant
  Var inv_rms = op::rsqrt_f(op::mean_all(op::abs2(y)), 1e-300);
  Var mag = op::mul_scalar(op::sqrt_f(op::abs2(y), 1e-300), inv_rms);
  Var h = glu(op::reshape(op::log1p_v(mag), {1, F, T}), p[0], p[1], ds, pd);
  for (int i = 0; i < config_.blocks; ++i) {
    h = op::add(h, glu(h, p[2 + 2 * i], p[3 + 2 * i], 1, pk));
    if (i == config_.blocks / 2 - 1 && config_.dropout > 0.0)
      h = op::dropout(h, config_.dropout, rng, train);
  }
  const size_t up = params_.size() - 2;
  Var m = op::conv_transpose2d(h, p[up], p[up + 1], ds, 1, pd, 1, oph, 0);
  // floored mask: keeps every source weight finite so long iteration runs
  // cannot drive a source to zero and make the demixing matrix singular
  Var sig = op::sigmoid(op::reshape(m, {F, T}));
  return op::add(op::scale(sig, 1.0 - kMaskFloor),
                 op::constant(Tensor::full({F, T}, kMaskFloor)));
}

std::vector<Var> GluMaskNet::weights(const std::vector<Var>& outs,
                                     std::mt19937_64& rng, bool train) {
  std::vector<const Var*> ptrs;
  for (const Var& v : outs) ptrs.push_back(&v);
  Tape* tp = nullptr;
  for (const Var* v : ptrs)
    if (v->taped()) tp = v->tape();
  last_param_ids_.clear();
  std::vector<Var> p;
  for (size_t i = 0; i < params_.size(); ++i) {
    if (tp) {
      Var v = tp->leaf(params_[i]);
      last_param_ids_.push_back(v.id());
      p.push_back(v);
    } else {
      p.push_back(Var(params_[i]));
    }
  }
  double mix_power = 0.0;
  for (const Var& y : outs) mix_power += mean_of(power_of(y.value()).re);
  mix_power /= double(outs.size());
  const double eps = 1e-6 * mix_power + 1e-300;
  std::vector<Var> u;
  for (const Var& y : outs) {
    Var m = mask(y, p, rng, train);
    Var s = op::mul(m, op::sqrt_f(op::abs2(y), 1e-12));
    u.push_back(op::reciprocal_f(op::mul(s, s), eps));
  }
  return u;
}

std::vector<std::pair<std::string, Tensor*>> GluMaskNet::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (size_t i = 0; i < params_.size(); ++i)
    out.emplace_back(names_[i], &params_[i]);
  return out;
}

void GluMaskNet::save(const std::string& path) const {
  json cfg = {{"width", config_.width},
              {"blocks", config_.blocks},
              {"down_stride", config_.down_stride},
              {"down_kernel", config_.down_kernel},
              {"kernel", config_.kernel},
              {"dropout", config_.dropout}};
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (size_t i = 0; i < params_.size(); ++i)
    tensors.emplace_back(names_[i], params_[i]);
  save_checkpoint(path, "glu", cfg.dump(), tensors);
}

GluMaskNet GluMaskNet::load(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "glu")
    throw std::runtime_error("GluMaskNet::load: checkpoint kind is '" +
                             ck.kind + "'");
  json cfg = json::parse(ck.config_json);
  GluConfig c;
  c.width = cfg.at("width").get<int>();
  c.blocks = cfg.at("blocks").get<int>();
  c.down_stride = cfg.at("down_stride").get<int>();
  c.down_kernel = cfg.at("down_kernel").get<int>();
  c.kernel = cfg.at("kernel").get<int>();
  c.dropout = cfg.at("dropout").get<double>();
  GluMaskNet net(c, 0);
  for (size_t i = 0; i < net.params_.size(); ++i) {
    const Tensor& t = ck.find(net.names_[i]);
    if (t.shape != net.params_[i].shape || t.dtype != net.params_[i].dtype)
      throw std::runtime_error("GluMaskNet::load: tensor '" + net.names_[i] +
                               "' has shape " + shape_str(t.shape));
    net.params_[i] = t;
  }
  return net;
}

namespace {

constexpr char kMagic[8] = {'D', 'M', 'X', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           std::streamsize(v.size() * sizeof(double)));
}

void get_doubles(std::istream& is, std::vector<double>& v) {
  is.read(reinterpret_cast<char*>(v.data()),
          std::streamsize(v.size() * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated payload");
}

}  // namespace

void save_checkpoint(
    const std::string& path, const std::string& kind,
    const std::string& config_json,
    const std::vector<std::pair<std::string, Tensor>>& tensors) {
  json header;
  header["kind"] = kind;
  header["config"] = config_json;
  header["tensors"] = json::array();
  for (const auto& [name, t] : tensors)
    header["tensors"].push_back(
        {{"name", name}, {"shape", t.shape}, {"complex", t.is_complex()}});
  const std::string hs = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  os.write(kMagic, 8);
  put_u32(os, kVersion);
  put_u32(os, static_cast<uint32_t>(hs.size()));
  os.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& [name, t] : tensors) {
    put_doubles(os, t.re);
    if (t.is_complex()) put_doubles(os, t.im);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = get_u32(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  const uint32_t hlen = get_u32(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), hlen);
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  json header = json::parse(hs, nullptr, false);
  if (header.is_discarded())
    throw std::runtime_error("checkpoint: malformed header JSON");
  Checkpoint ck;
  ck.kind = header.at("kind").get<std::string>();
  ck.config_json = header.at("config").get<std::string>();
  for (const auto& e : header.at("tensors")) {
    Tensor t = Tensor::zeros(e.at("shape").get<std::vector<int>>(),
                             e.at("complex").get<bool>() ? Dtype::Complex
                                                         : Dtype::Real);
    get_doubles(is, t.re);
    if (t.is_complex()) get_doubles(is, t.im);
    ck.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

const Tensor& Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

tiss::WeightFn model_weight_fn(SourceModel& model, std::mt19937_64& rng,
                               bool train) {
  return [&model, &rng, train](const std::vector<Var>& outs) {
    return model.weights(outs, rng, train);
  };
}

}  // namespace srcmodel
}  // namespace demix
