// Copyright 2026 The StyleSeg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "styleseg/tensor.hpp"

#include <sstream>

#include "styleseg/errors.hpp"

namespace styleseg {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  data_ = Eigen::VectorXd::Constant(numel(shape_), fill);
}

Tensor Tensor::uninitialized(Shape shape) {
  Tensor t;
  t.data_.resize(numel(shape));
  t.shape_ = std::move(shape);
  return t;
}

Tensor::Tensor(Shape shape, std::span<const double> values) : shape_(std::move(shape)) {
  if (static_cast<Index>(values.size()) != numel(shape_))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape_));
  data_ = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Index>(values.size()));
}

double& Tensor::at(Index n, Index c, Index h, Index w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(Index n, Index c, Index h, Index w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::item() const {
  if (data_.size() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

void check_rank(const Tensor& t, std::size_t rank, const std::string& what) {
  if (t.rank() != rank)
    throw DimensionError(what + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_str(t.shape()));
}

void check_same_shape(const Tensor& a, const Tensor& b, const std::string& what) {
  if (a.rank() != b.rank())
    throw DimensionError(what + ": rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      throw DimensionError(what + ": axis " + std::to_string(i) + " mismatch (" +
                           std::to_string(a.dim(i)) + " vs " + std::to_string(b.dim(i)) + ")");
}

}  // namespace styleseg
