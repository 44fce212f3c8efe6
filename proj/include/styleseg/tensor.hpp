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

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace styleseg {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float64 array. Activations use (N, C, H, W) ordering.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::span<const double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  // Contents unspecified; for outputs that are fully overwritten.
  static Tensor uninitialized(Shape shape);
  static Tensor scalar(double v) { return Tensor(Shape{}, v); }

  const Shape& shape() const { return shape_; }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  Index size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  Eigen::VectorXd& vec() { return data_; }
  const Eigen::VectorXd& vec() const { return data_; }
  std::span<double> span() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const double> span() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  double& operator[](Index i) { return data_[i]; }
  double operator[](Index i) const { return data_[i]; }

  double& at(Index n, Index c, Index h, Index w);
  double at(Index n, Index c, Index h, Index w) const;

  double item() const;
  // x * 0 is NaN exactly when x is not finite; the sum vectorizes.
  bool all_finite() const { return !std::isnan((data_.array() * 0.0).sum()); }
  void fill(double v) { data_.setConstant(v); }

  // Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  Eigen::VectorXd data_;
};

// Throws DimensionError naming `what` and the axis when extents disagree.
void check_rank(const Tensor& t, std::size_t rank, const std::string& what);
void check_same_shape(const Tensor& a, const Tensor& b, const std::string& what);

}  // namespace styleseg
