#include "dsurf/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dsurf {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kNone: return "none";
    case Activation::kRelu: return "relu";
    case Activation::kSoftplus: return "softplus";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "none";
}

Activation activation_from_string(const std::string& s) {
  if (s == "none") return Activation::kNone;
  if (s == "relu") return Activation::kRelu;
  if (s == "softplus") return Activation::kSoftplus;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + s + "'");
}

bool MlpSpec::is_skip(int layer) const {
  return std::find(skip_layers.begin(), skip_layers.end(), layer) != skip_layers.end();
}

int MlpSpec::layer_in_dim(int layer) const {
  if (layer == 0) return encoded_dim();
  return width + (is_skip(layer) ? encoded_dim() : 0);
}

int MlpSpec::layer_out_dim(int layer) const {
  return layer == depth - 1 ? out_dim : width;
}

void MlpSpec::validate() const {
  if (depth < 1 || width < 1 || in_dim < 1 || out_dim < 1) {
    throw ConfigError("mlp: depth, width, in_dim and out_dim must all be >= 1");
  }
  if (encoding_freqs < 0) throw ConfigError("mlp: encoding_freqs must be >= 0");
  for (int s : skip_layers) {
    if (s < 1 || s >= depth) {
      throw ConfigError("mlp: skip layer " + std::to_string(s) + " outside [1, depth)");
    }
  }
  if (hidden == Activation::kSoftplus && !(softplus_beta > 0)) {
    throw ConfigError("mlp: softplus beta must be positive");
  }
}

bool operator==(const MlpSpec& a, const MlpSpec& b) {
  return a.depth == b.depth && a.width == b.width && a.skip_layers == b.skip_layers &&
         a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.hidden == b.hidden &&
         a.output == b.output && a.encoding_freqs == b.encoding_freqs &&
         a.softplus_beta == b.softplus_beta;
}

std::vector<double> positional_encode(std::span<const double> p, int freqs) {
  std::vector<double> out(p.begin(), p.end());
  out.reserve(p.size() * (1 + 2 * static_cast<std::size_t>(std::max(freqs, 0))));
  for (int k = 0; k < freqs; ++k) {
    const double f = std::ldexp(std::numbers::pi, k);
    for (double v : p) out.push_back(std::sin(f * v));
    for (double v : p) out.push_back(std::cos(f * v));
  }
  return out;
}

namespace ad {

template <typename T>
Var<T> positional_encode(const Var<T>& p, int freqs) {
  std::vector<Var<T>> parts{p};
  for (int k = 0; k < freqs; ++k) {
    Var<T> arg = scale(p, static_cast<T>(std::ldexp(std::numbers::pi, k)));
    parts.push_back(sin(arg));
    parts.push_back(cos(arg));
  }
  return parts.size() == 1 ? p : concat_cols(parts);
}

template <typename T>
std::pair<Var<T>, Var<T>> positional_encode_tangent(const Var<T>& p, const Var<T>& dp,
                                                    int freqs) {
  std::vector<Var<T>> parts{p};
  std::vector<Var<T>> tangents{dp};
  for (int k = 0; k < freqs; ++k) {
    const T f = static_cast<T>(std::ldexp(std::numbers::pi, k));
    Var<T> arg = scale(p, f);
    Var<T> s = sin(arg);
    Var<T> c = cos(arg);
    parts.push_back(s);
    parts.push_back(c);
    tangents.push_back(mul(c, scale(dp, f)));
    tangents.push_back(neg(mul(s, scale(dp, f))));
  }
  if (parts.size() == 1) return {p, dp};
  return {concat_cols(parts), concat_cols(tangents)};
}

}  // namespace ad

template <typename T>
Mlp<T>::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (int l = 0; l < spec_.depth; ++l) {
    params_.push_back(
        ad::parameter<T>(ad::Matrix<T>::Zero(spec_.layer_in_dim(l), spec_.layer_out_dim(l))));
    params_.push_back(ad::parameter<T>(ad::Matrix<T>::Zero(1, spec_.layer_out_dim(l))));
  }
}

template <typename T>
std::size_t Mlp<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value().size());
  return n;
}

template <typename T>
void Mlp<T>::init_default(std::mt19937_64& rng) {
  for (int l = 0; l < spec_.depth; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec_.layer_in_dim(l)));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto* m : {&weight(l).mutable_value(), &bias(l).mutable_value()}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<T>(u(rng));
    }
  }
}

template <typename T>
void Mlp<T>::zero() {
  for (auto& p : params_) p.mutable_value().setZero();
}

template <typename T>
ad::Var<T> Mlp<T>::activate(const ad::Var<T>& z, Activation a) const {
  switch (a) {
    case Activation::kNone: return z;
    case Activation::kRelu: return ad::relu(z);
    case Activation::kSoftplus: return ad::softplus(z, static_cast<T>(spec_.softplus_beta));
    case Activation::kSigmoid: return ad::sigmoid(z);
  }
  return z;
}

template <typename T>
ad::Var<T> Mlp<T>::activate_tangent(const ad::Var<T>& z, const ad::Var<T>& h,
                                    const ad::Var<T>& dz, Activation a) const {
  switch (a) {
    case Activation::kNone: return dz;
    case Activation::kRelu: {
      ad::Matrix<T> mask = z.value().unaryExpr([](T v) { return v > T(0) ? T(1) : T(0); });
      return ad::mul(dz, ad::constant<T>(std::move(mask)));
    }
    case Activation::kSoftplus:
      return ad::mul(dz, ad::sigmoid(z, static_cast<T>(spec_.softplus_beta)));
    case Activation::kSigmoid:
      return ad::mul(dz, ad::mul(h, ad::add_scalar(ad::neg(h), T(1))));
  }
  return dz;
}

template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> Mlp<T>::run(const ad::Var<T>& encoded,
                                              const ad::Var<T>* d_encoded, int layers) const {
  if (encoded.cols() != spec_.encoded_dim()) {
    throw ConfigError("mlp: expected input width " + std::to_string(spec_.encoded_dim()) +
                      ", got " + std::to_string(encoded.cols()));
  }
  ad::Var<T> h = encoded;
  ad::Var<T> dh = d_encoded ? *d_encoded : ad::Var<T>{};
  const int stop = layers < 0 ? spec_.depth : layers;
  for (int l = 0; l < spec_.depth; ++l) {
    ad::Var<T> in = h;
    ad::Var<T> d_in = dh;
    if (l > 0 && spec_.is_skip(l)) {
      in = ad::concat_cols<T>({h, encoded});
      if (d_encoded) d_in = ad::concat_cols<T>({dh, *d_encoded});
    }
    if (l == stop) return {in, d_in};
    ad::Var<T> z = ad::linear(in, weight(l), bias(l));
    const Activation act = l == spec_.depth - 1 ? spec_.output : spec_.hidden;
    h = activate(z, act);
    if (d_encoded) {
      ad::Var<T> dz = ad::matmul(d_in, weight(l));
      dh = activate_tangent(z, h, dz, act);
    }
  }
  return {h, dh};
}

template <typename T>
ad::Var<T> Mlp<T>::forward_encoded(const ad::Var<T>& encoded) const {
  return run(encoded, nullptr).first;
}

template <typename T>
ad::Var<T> Mlp<T>::last_layer_input(const ad::Var<T>& x) const {
  return run(ad::positional_encode(x, spec_.encoding_freqs), nullptr, spec_.depth - 1).first;
}

template <typename T>
ad::Var<T> Mlp<T>::forward(const ad::Var<T>& x) const {
  if (x.cols() != spec_.in_dim) {
    throw ConfigError("mlp: expected raw input width " + std::to_string(spec_.in_dim) +
                      ", got " + std::to_string(x.cols()));
  }
  return run(ad::positional_encode(x, spec_.encoding_freqs), nullptr).first;
}

template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> Mlp<T>::forward_with_tangent(const ad::Var<T>& x,
                                                               const ad::Var<T>& dx) const {
  if (x.cols() != spec_.in_dim || dx.cols() != spec_.in_dim || dx.rows() != x.rows()) {
    throw ConfigError("mlp: tangent shape mismatch");
  }
  auto [enc, denc] = ad::positional_encode_tangent(x, dx, spec_.encoding_freqs);
  return run(enc, &denc);
}

template <typename T>
std::vector<T> Mlp<T>::operator()(std::span<const T> x) const {
  ad::Matrix<T> m(1, static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = x[i];
  ad::NoGradGuard no_grad;
  ad::Var<T> y = forward(ad::constant<T>(std::move(m)));
  return std::vector<T>(y.value().data(), y.value().data() + y.value().size());
}

template class Mlp<float>;
template class Mlp<double>;

namespace ad {
template Var<float> positional_encode<float>(const Var<float>&, int);
template Var<double> positional_encode<double>(const Var<double>&, int);
template std::pair<Var<float>, Var<float>> positional_encode_tangent<float>(const Var<float>&,
                                                                            const Var<float>&,
                                                                            int);
template std::pair<Var<double>, Var<double>> positional_encode_tangent<double>(
    const Var<double>&, const Var<double>&, int);
}  // namespace ad

}  // namespace dsurf
