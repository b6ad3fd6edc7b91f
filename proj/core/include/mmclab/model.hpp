#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "mmclab/tensor.hpp"

namespace mmc {

// Feed-forward feature extractor: affine layers with rectifiers between them
// (none after the last). Maps inputs [n x p] to features [n x d].
//
// Forward evaluation is const and safe to call concurrently on a frozen
// model; backward accumulates into the model's gradient store and is
// confined to the training thread.
class Mlp {
public:
  Mlp() = default;
  // layer_sizes = {p, hidden..., d}; weights drawn from a fan-in-scaled
  // uniform distribution, biases zero.
  Mlp(std::vector<int> layer_sizes, std::uint64_t seed);

  int input_dim() const { return sizes_.front(); }
  int feature_dim() const { return sizes_.back(); }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  std::size_t num_layers() const { return weights_.size(); }

  const Tensor& weight(std::size_t layer) const { return weights_[layer]; }
  const Tensor& bias(std::size_t layer) const { return biases_[layer]; }

  // Activations captured during a forward pass, needed by backward.
  struct Workspace {
    std::vector<Tensor> layer_inputs;  // input to each affine layer
    bool populated = false;
  };

  Tensor forward(const Tensor& x) const;
  Tensor forward(const Tensor& x, Workspace& ws) const;

  // upstream is dLoss/dfeatures [n x d]; accumulates parameter gradients and
  // returns dLoss/dinput [n x p]. Throws if ws was not populated by forward.
  Tensor backward(const Workspace& ws, const Tensor& upstream);

  // dObjective/dinput on a frozen model; parameter gradients untouched.
  Tensor input_gradient(const Tensor& x, const Tensor& upstream) const;
  // Same, reusing activations from an earlier forward (one pass per attack step).
  Tensor input_gradient(const Workspace& ws, const Tensor& upstream) const;

  std::vector<Tensor*> parameters();
  std::vector<Tensor*> gradients();
  void zero_grad();

  // Versioned little-endian binary: header {p, d, layer sizes}, then
  // row-major float64 parameters.
  void save(const std::filesystem::path& path) const;
  static Mlp load(const std::filesystem::path& path);

private:
  std::vector<int> sizes_;
  std::vector<Tensor> weights_;       // out x in
  std::vector<Tensor> biases_;        // out
  std::vector<Tensor> weight_grads_;
  std::vector<Tensor> bias_grads_;
};

struct ValueGrad {
  double value = 0.0;
  Tensor grad;
};

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
// Only the value part of f is used on displaced points, so the check is
// independent of the gradient computation it validates.
double gradient_check(const std::function<ValueGrad(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace mmc
