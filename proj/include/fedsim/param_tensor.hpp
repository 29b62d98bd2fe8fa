// Copyright 2026 The fedsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <iterator>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

/// Flat, ordered model parameters. Every aggregator consumes and produces these.
template <typename Scalar>
using ParamVectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using ParamVector = ParamVectorT<double>;

/// One layer of a model. Row-major so that the underlying buffer is already
/// in canonical flatten order.
template <typename Scalar>
using LayerT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Layer = LayerT<double>;

template <typename Scalar>
using LayeredWeightsT = std::vector<LayerT<Scalar>>;
using LayeredWeights = LayeredWeightsT<double>;

/// Name and dimensions of one layer. An N-d layer is stored as a
/// dims[0] x prod(dims[1..]) matrix; a 1-d layer as a dims[0] x 1 column.
struct LayerShape {
  std::string name;
  std::vector<Eigen::Index> dims;

  Eigen::Index size() const;
  Eigen::Index rows() const;
  Eigen::Index cols() const;
};

/// Records layer boundaries so flattening is reversible. Layer order is the
/// canonical flatten order.
class ShapeSpec {
 public:
  ShapeSpec() = default;
  explicit ShapeSpec(std::vector<LayerShape> layers);

  const std::vector<LayerShape>& layers() const noexcept { return layers_; }
  Eigen::Index total_size() const noexcept { return total_; }
  /// Offset of layer i inside the flat vector.
  Eigen::Index offset(std::size_t i) const { return offsets_.at(i); }

  bool operator==(const ShapeSpec& other) const;

 private:
  std::vector<LayerShape> layers_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index total_ = 0;
};

/// Throws ValidationError if any element of `v` is NaN or infinite.
template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& v, const std::string& what) {
  if (!v.allFinite()) {
    throw ValidationError(what + ": non-finite value");
  }
}

template <typename Scalar>
ParamVectorT<Scalar> flatten(const LayeredWeightsT<Scalar>& weights, const ShapeSpec& spec) {
  const auto& shapes = spec.layers();
  if (weights.size() != shapes.size()) {
    throw StructuralError("flatten: expected " + std::to_string(shapes.size()) + " layers, got " +
                          std::to_string(weights.size()));
  }
  ParamVectorT<Scalar> out(spec.total_size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& w = weights[i];
    if (w.rows() != shapes[i].rows() || w.cols() != shapes[i].cols()) {
      throw StructuralError("flatten: layer '" + shapes[i].name + "' has shape " +
                            std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                            ", expected " + std::to_string(shapes[i].rows()) + "x" +
                            std::to_string(shapes[i].cols()));
    }
    out.segment(spec.offset(i), w.size()) =
        Eigen::Map<const ParamVectorT<Scalar>>(w.data(), w.size());
  }
  return out;
}

template <typename Derived>
LayeredWeightsT<typename Derived::Scalar> unflatten(const Eigen::MatrixBase<Derived>& v,
                                                    const ShapeSpec& spec) {
  using Scalar = typename Derived::Scalar;
  if (v.size() != spec.total_size()) {
    throw StructuralError("unflatten: vector length " + std::to_string(v.size()) +
                          " does not match spec total " + std::to_string(spec.total_size()));
  }
  LayeredWeightsT<Scalar> out;
  out.reserve(spec.layers().size());
  for (std::size_t i = 0; i < spec.layers().size(); ++i) {
    const auto& shape = spec.layers()[i];
    LayerT<Scalar> layer(shape.rows(), shape.cols());
    Eigen::Map<ParamVectorT<Scalar>>(layer.data(), layer.size()) =
        v.segment(spec.offset(i), layer.size());
    out.push_back(std::move(layer));
  }
  return out;
}

/// sqrt(sum_i (a_i - b_i)^2), accumulated in double regardless of storage type.
template <typename DerivedA, typename DerivedB>
double euclidean_distance(const Eigen::MatrixBase<DerivedA>& a,
                          const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) {
    throw StructuralError("euclidean_distance: length mismatch (" + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()) + ")");
  }
  require_finite(a, "euclidean_distance");
  require_finite(b, "euclidean_distance");
  return (a.template cast<double>() - b.template cast<double>()).norm();
}

/// Elementwise sum_k w_k * v_k over `vectors`, in iteration order. `proj` maps
/// each element of the range to the vector it contributes.
template <typename Range, typename Proj = std::identity>
ParamVector weighted_sum(const Range& vectors, std::span<const double> weights, Proj proj = {}) {
  const auto count = static_cast<std::size_t>(std::ranges::distance(vectors));
  if (count == 0) {
    throw ValidationError("weighted_sum: no vectors");
  }
  if (count != weights.size()) {
    throw StructuralError("weighted_sum: " + std::to_string(count) + " vectors but " +
                          std::to_string(weights.size()) + " weights");
  }
  for (double w : weights) {
    if (!std::isfinite(w)) throw ValidationError("weighted_sum: non-finite weight");
  }
  const Eigen::Index len = std::invoke(proj, *std::ranges::begin(vectors)).size();
  ParamVector acc = ParamVector::Zero(len);
  std::size_t k = 0;
  for (const auto& item : vectors) {
    const auto& v = std::invoke(proj, item);
    if (v.size() != len) {
      throw StructuralError("weighted_sum: vector " + std::to_string(k) + " has length " +
                            std::to_string(v.size()) + ", expected " + std::to_string(len));
    }
    acc.noalias() += weights[k] * v.template cast<double>();
    ++k;
  }
  return acc;
}

}  // namespace fedsim
