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

#include "fedsim/param_tensor.hpp"

#include <numeric>

namespace fedsim {

Eigen::Index LayerShape::size() const {
  return std::accumulate(dims.begin(), dims.end(), Eigen::Index{1}, std::multiplies<>());
}

Eigen::Index LayerShape::rows() const { return dims.empty() ? 1 : dims.front(); }

Eigen::Index LayerShape::cols() const {
  if (dims.size() <= 1) return 1;
  return std::accumulate(dims.begin() + 1, dims.end(), Eigen::Index{1}, std::multiplies<>());
}

ShapeSpec::ShapeSpec(std::vector<LayerShape> layers) : layers_(std::move(layers)) {
  offsets_.reserve(layers_.size());
  for (const auto& l : layers_) {
    if (l.dims.empty()) {
      throw ValidationError("ShapeSpec: layer '" + l.name + "' has no dimensions");
    }
    for (auto d : l.dims) {
      if (d < 1) throw ValidationError("ShapeSpec: layer '" + l.name + "' has a zero dimension");
    }
    offsets_.push_back(total_);
    total_ += l.size();
  }
  if (total_ == 0) throw ValidationError("ShapeSpec: no layers");
}

bool ShapeSpec::operator==(const ShapeSpec& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name != other.layers_[i].name || layers_[i].dims != other.layers_[i].dims) {
      return false;
    }
  }
  return true;
}

}  // namespace fedsim
