#include "mmclab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "mmclab/rng.hpp"

namespace mmc {

Mlp::Mlp(std::vector<int> layer_sizes, std::uint64_t seed) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("mlp: need at least input and feature dims");
  for (int s : sizes_)
    if (s <= 0) throw std::invalid_argument("mlp: layer sizes must be positive");

  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    auto fan_in = static_cast<std::size_t>(sizes_[l]);
    auto fan_out = static_cast<std::size_t>(sizes_[l + 1]);
    Tensor w({fan_out, fan_in});
    double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (double& v : w.values()) v = rng.uniform(-limit, limit);
    weights_.push_back(std::move(w));
    biases_.push_back(Tensor({fan_out}));
    weight_grads_.push_back(Tensor({fan_out, fan_in}));
    bias_grads_.push_back(Tensor({fan_out}));
  }
}

Tensor Mlp::forward(const Tensor& x) const {
  Workspace ws;
  return forward(x, ws);
}

Tensor Mlp::forward(const Tensor& x, Workspace& ws) const {
  if (x.rank() != 2 || static_cast<int>(x.cols()) != input_dim())
    throw std::invalid_argument("mlp forward: expected [n x " + std::to_string(input_dim()) + "] input");
  if (!x.all_finite()) throw std::invalid_argument("mlp forward: non-finite input");

  ws.layer_inputs.clear();
  std::size_t n = x.rows();
  Tensor cur = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    ws.layer_inputs.push_back(cur);
    const Tensor& w = weights_[l];
    const Tensor& b = biases_[l];
    Tensor next({n, w.rows()});
    for (std::size_t r = 0; r < n; ++r) {
      auto in = cur.row(r);
      auto out = next.row(r);
      for (std::size_t o = 0; o < w.rows(); ++o) out[o] = dot(w.row(o), in) + b(o);
    }
    if (l + 1 < weights_.size())
      for (double& v : next.values()) v = v > 0.0 ? v : 0.0;
    cur = std::move(next);
  }
  ws.populated = true;
  return cur;
}

namespace {
// shared by backward and input_gradient; accumulates parameter grads only
// when stores are provided.
Tensor backprop_pass(const std::vector<Tensor>& weights, const std::vector<Tensor>& layer_inputs,
                     const Tensor& upstream, std::vector<Tensor>* wg, std::vector<Tensor>* bg) {
  std::size_t n = upstream.rows();
  Tensor grad = upstream;
  for (std::size_t li = weights.size(); li-- > 0;) {
    const Tensor& w = weights[li];
    const Tensor& in = layer_inputs[li];
    if (wg) {
      Tensor& dw = (*wg)[li];
      Tensor& db = (*bg)[li];
      for (std::size_t r = 0; r < n; ++r) {
        auto g = grad.row(r);
        auto x = in.row(r);
        for (std::size_t o = 0; o < w.rows(); ++o) {
          db(o) += g[o];
          auto dwo = dw.row(o);
          for (std::size_t c = 0; c < w.cols(); ++c) dwo[c] += g[o] * x[c];
        }
      }
    }
    Tensor down({n, w.cols()});
    for (std::size_t r = 0; r < n; ++r) {
      auto g = grad.row(r);
      auto out = down.row(r);
      for (std::size_t o = 0; o < w.rows(); ++o) {
        double go = g[o];
        if (go == 0.0) continue;
        auto wo = w.row(o);
        for (std::size_t c = 0; c < w.cols(); ++c) out[c] += go * wo[c];
      }
    }
    if (li > 0) {
      // rectifier mask: the stored input of layer li is the rectified output
      // of layer li-1.
      for (std::size_t r = 0; r < n; ++r) {
        auto x = in.row(r);
        auto g = down.row(r);
        for (std::size_t c = 0; c < w.cols(); ++c)
          if (x[c] <= 0.0) g[c] = 0.0;
      }
    }
    grad = std::move(down);
  }
  return grad;
}
}  // namespace

Tensor Mlp::backward(const Workspace& ws, const Tensor& upstream) {
  if (!ws.populated) throw std::logic_error("mlp backward: forward has not populated the workspace");
  if (upstream.rank() != 2 || static_cast<int>(upstream.cols()) != feature_dim() ||
      upstream.rows() != ws.layer_inputs.front().rows())
    throw std::invalid_argument("mlp backward: upstream shape mismatch");
  return backprop_pass(weights_, ws.layer_inputs, upstream, &weight_grads_, &bias_grads_);
}

Tensor Mlp::input_gradient(const Tensor& x, const Tensor& upstream) const {
  Workspace ws;
  forward(x, ws);
  return backprop_pass(weights_, ws.layer_inputs, upstream, nullptr, nullptr);
}

Tensor Mlp::input_gradient(const Workspace& ws, const Tensor& upstream) const {
  if (!ws.populated) throw std::logic_error("mlp input_gradient: forward has not populated the workspace");
  return backprop_pass(weights_, ws.layer_inputs, upstream, nullptr, nullptr);
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<Tensor*> Mlp::gradients() {
  std::vector<Tensor*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weight_grads_[l]);
    out.push_back(&bias_grads_[l]);
  }
  return out;
}

void Mlp::zero_grad() {
  for (Tensor& t : weight_grads_) t.fill(0.0);
  for (Tensor& t : bias_grads_) t.fill(0.0);
}

namespace {
constexpr char kMagic[4] = {'M', 'M', 'C', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}
}  // namespace

void Mlp::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(sizes_.size()));
  for (int s : sizes_) put_u32(os, static_cast<std::uint32_t>(s));
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    for (double v : weights_[l].values()) put_f64(os, v);
    for (double v : biases_[l].values()) put_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Mlp Mlp::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  std::uint32_t version = get_u32(is);
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version");
  std::uint32_t n_sizes = get_u32(is);
  if (n_sizes < 2 || n_sizes > 64) throw std::runtime_error("checkpoint: implausible layer count");
  std::vector<int> sizes(n_sizes);
  for (auto& s : sizes) s = static_cast<int>(get_u32(is));
  Mlp m(sizes, 0);
  for (std::size_t l = 0; l < m.weights_.size(); ++l) {
    for (double& v : m.weights_[l].values()) v = get_f64(is);
    for (double& v : m.biases_[l].values()) v = get_f64(is);
  }
  return m;
}

double gradient_check(const std::function<ValueGrad(const Tensor&)>& f, const Tensor& x, double h) {
  if (h <= 0.0) throw std::invalid_argument("gradient_check: h must be positive");
  ValueGrad at_x = f(x);
  if (!std::isfinite(at_x.value)) throw std::invalid_argument("gradient_check: non-finite value at x");
  if (!at_x.grad.same_shape(x)) throw std::invalid_argument("gradient_check: gradient shape mismatch");

  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double orig = probe.values()[i];
    probe.values()[i] = orig + h;
    double up = f(probe).value;
    probe.values()[i] = orig - h;
    double down = f(probe).value;
    probe.values()[i] = orig;
    double fd = (up - down) / (2.0 * h);
    double analytic = at_x.grad.values()[i];
    double err = std::fabs(analytic - fd) / std::max(1.0, std::fabs(analytic));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace mmc
