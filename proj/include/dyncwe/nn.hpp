#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dyncwe/rng.hpp"
#include "dyncwe/tensor.hpp"

namespace dyncwe {

// Named parameter registry; the optimizer and checkpoints address tensors by
// module path.
struct ParamList {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(std::string name, Tensor t) {
    for (const auto& [n, unused] : items)
      if (n == name) throw std::invalid_argument("ParamList: duplicate parameter '" + name + "'");
    items.emplace_back(std::move(name), std::move(t));
  }

  Tensor find(const std::string& name) const {
    for (const auto& [n, t] : items)
      if (n == name) return t;
    throw std::invalid_argument("ParamList: unknown parameter '" + name + "'");
  }
};

// Every parameter is initialized from a stream derived from (root seed,
// parameter name), so shared modules come out identical across model
// variants regardless of construction order.
inline Tensor init_gaussian(Shape shape, double stddev, std::uint64_t root_seed,
                            const std::string& name) {
  RandomStream rng(derive_seed(root_seed, name));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.values()) v = rng.gaussian(0.0, stddev);
  return t;
}

inline Tensor init_glorot(std::size_t fan_in, std::size_t fan_out, std::uint64_t root_seed,
                          const std::string& name) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return init_gaussian({fan_in, fan_out}, stddev, root_seed, name);
}

// One affine layer; weights [in, out], bias [out].
struct Linear {
  Tensor W;
  Tensor b;

  static Linear create(std::size_t in, std::size_t out, std::uint64_t root_seed,
                       const std::string& name) {
    Linear l;
    l.W = init_glorot(in, out, root_seed, name + ".W");
    l.b = Tensor::zeros({out}, true);
    return l;
  }

  std::size_t in_width() const { return W.shape()[0]; }
  std::size_t out_width() const { return W.shape()[1]; }

  // x may be [r, in] or a single [in] vector.
  Tensor apply(const Tensor& x) const {
    if (x.ndim() == 1) {
      Tensor row = reshape(x, {1, x.size()});
      return reshape(apply(row), {out_width()});
    }
    return add_rowwise(matmul(x, W), b);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.add(prefix + ".W", W);
    out.add(prefix + ".b", b);
  }
};

inline Tensor ln_gain(std::size_t width) { return Tensor::full({width}, 1.0, true); }
inline Tensor ln_bias(std::size_t width) { return Tensor::zeros({width}, true); }

}  // namespace dyncwe
