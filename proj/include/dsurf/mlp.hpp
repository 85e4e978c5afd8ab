#pragma once

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsurf/autodiff.hpp"

namespace dsurf {

enum class Activation { kNone, kRelu, kSoftplus, kSigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Shape of a coordinate network. `depth` counts affine layers including the
/// output layer; layer l in `skip_layers` receives the encoded network input
/// concatenated after the previous hidden output.
struct MlpSpec {
  int depth = 8;
  int width = 256;
  std::vector<int> skip_layers{4};
  int in_dim = 3;
  int out_dim = 1;
  Activation hidden = Activation::kRelu;
  Activation output = Activation::kNone;
  int encoding_freqs = 0;
  double softplus_beta = 100.0;

  int encoded_dim() const { return in_dim * (1 + 2 * encoding_freqs); }
  int layer_in_dim(int layer) const;
  int layer_out_dim(int layer) const;
  bool is_skip(int layer) const;
  /// Throws ConfigError on an inconsistent spec.
  void validate() const;
};

bool operator==(const MlpSpec& a, const MlpSpec& b);

/// concat(p, sin(2^k π p), cos(2^k π p)) for k = 0..L−1, bands laid out as
/// [p | sin(π p) | cos(π p) | sin(2π p) | cos(2π p) | ...].
std::vector<double> positional_encode(std::span<const double> p, int freqs);

namespace ad {
/// Row-wise positional encoding of a [N × d] input.
template <typename T>
Var<T> positional_encode(const Var<T>& p, int freqs);
/// Encoding together with its directional derivative along `dp`.
template <typename T>
std::pair<Var<T>, Var<T>> positional_encode_tangent(const Var<T>& p, const Var<T>& dp, int freqs);
}  // namespace ad

template <typename T>
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }

  ad::Var<T>& weight(int layer) { return params_[2 * layer]; }
  ad::Var<T>& bias(int layer) { return params_[2 * layer + 1]; }
  const ad::Var<T>& weight(int layer) const { return params_[2 * layer]; }
  const ad::Var<T>& bias(int layer) const { return params_[2 * layer + 1]; }
  /// W0, b0, W1, b1, ... with W of shape [in × out].
  std::vector<ad::Var<T>>& parameters() { return params_; }
  const std::vector<ad::Var<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// U(−1/√fan_in, 1/√fan_in) for weights and biases.
  void init_default(std::mt19937_64& rng);
  void zero();

  /// Encodes the raw [N × in_dim] input, then runs the layer stack.
  ad::Var<T> forward(const ad::Var<T>& x) const;
  ad::Var<T> forward_encoded(const ad::Var<T>& encoded) const;
  /// Input of the output layer (after any skip concatenation) for a raw input.
  ad::Var<T> last_layer_input(const ad::Var<T>& x) const;
  /// Output and its directional derivative along `dx` (forward-mode tangent),
  /// both recorded so the tangent can be differentiated w.r.t. parameters.
  std::pair<ad::Var<T>, ad::Var<T>> forward_with_tangent(const ad::Var<T>& x,
                                                         const ad::Var<T>& dx) const;

  /// Single-point convenience for tests and tools.
  std::vector<T> operator()(std::span<const T> x) const;

 private:
  ad::Var<T> activate(const ad::Var<T>& z, Activation a) const;
  ad::Var<T> activate_tangent(const ad::Var<T>& z, const ad::Var<T>& h, const ad::Var<T>& dz,
                              Activation a) const;
  std::pair<ad::Var<T>, ad::Var<T>> run(const ad::Var<T>& encoded, const ad::Var<T>* d_encoded,
                                        int layers = -1) const;

  MlpSpec spec_;
  std::vector<ad::Var<T>> params_;
};

}  // namespace dsurf
