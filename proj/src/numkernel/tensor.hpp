// Copyright 2026 The MP4SR Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "common/errors.hpp"

namespace mp4sr::nk {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& s);

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy. A tensor with requires_grad carries a gradient buffer of the
/// same size that Graph::backward accumulates into.
template <class Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false) {
    if (numel_of(shape) != values.size()) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    }
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<Real>{v}, requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t numel() const { return s_->value.size(); }
  bool requires_grad() const noexcept { return s_ && s_->requires_grad; }

  std::span<Real> data() { return s_->value; }
  std::span<const Real> data() const { return s_->value; }
  std::span<Real> grad() { return s_->grad; }
  std::span<const Real> grad() const { return s_->grad; }

  Real item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return s_->value[0];
  }

  void zero_grad() { std::fill(s_->grad.begin(), s_->grad.end(), Real(0)); }

  Tensor clone(bool requires_grad) const {
    return Tensor(s_->shape, s_->value, requires_grad);
  }

  bool same_storage(const Tensor& o) const noexcept { return s_ == o.s_; }

 private:
  struct Storage {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
  };

  Tensor(Shape shape, std::vector<Real> values, bool requires_grad)
      : s_(std::make_shared<Storage>()) {
    s_->shape = std::move(shape);
    s_->value = std::move(values);
    s_->requires_grad = requires_grad;
    if (requires_grad) s_->grad.assign(s_->value.size(), Real(0));
  }

  std::shared_ptr<Storage> s_;
};

}  // namespace mp4sr::nk
