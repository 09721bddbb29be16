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

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "common/rng.hpp"
#include "numkernel/tensor.hpp"

namespace mp4sr::nk {

/// Boolean mask, one byte per element; nonzero means "keep".
using Mask = std::vector<std::uint8_t>;

/// Computation record for reverse-mode differentiation.
///
/// Each primitive computes its output eagerly and, when recording is on and
/// some operand requires a gradient, appends a closure that pushes the output
/// gradient back to its operands. Records are appended in execution order,
/// so every operand precedes its consumer and backward() simply replays the
/// list in reverse. Gradients accumulate additively on fan-out. Outputs are
/// never mutated after they are recorded.
///
/// Every primitive checks its output for NaN/Inf and throws NumericError.
template <class Real>
class Graph {
 public:
  using T = Tensor<Real>;

  explicit Graph(bool record = true) : recording_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return records_.size(); }
  /// Operation names in record order.
  std::vector<std::string_view> trace() const;

  // Linear algebra.
  /// a[..., k] x b[k, n] -> [..., n]
  T matmul(const T& a, const T& b);
  /// Batched: a[B, m, k] x b[B, k, n] (or b[B, n, k] with transpose_b) -> [B, m, n]
  T bmm(const T& a, const T& b, bool transpose_b = false);
  T transpose(const T& a);

  // Elementwise.
  T add(const T& a, const T& b);
  T sub(const T& a, const T& b);
  T mul(const T& a, const T& b);
  /// b's shape must be a suffix of a's shape; b is tiled over leading dims.
  T add_broadcast(const T& a, const T& b);
  T scale(const T& a, Real c);
  T gelu(const T& a);

  // Reductions.
  T sum(const T& a);
  T mean(const T& a);
  /// Log-sum-exp over the last axis restricted to mask (same numel as a).
  /// Every row must keep at least one entry.
  T logsumexp(const T& a, const Mask& mask);

  // Normalisation and probability.
  T softmax(const T& a);
  /// Softmax over the last axis; masked entries get probability 0. Rows with
  /// no kept entry produce all zeros.
  T masked_softmax(const T& a, const Mask& mask);
  /// Per-row normalisation over the last axis. gamma/beta have shape equal to
  /// a suffix of x's shape whose last dim is the normalised axis.
  T layer_norm(const T& x, const T& gamma, const T& beta, Real eps = Real(1e-12));
  /// Rows over the last axis divided by (L2 norm + eps).
  T l2_normalize(const T& x, Real eps = Real(1e-12));
  /// Inverted dropout. Identity when !training or rate == 0.
  T dropout(const T& x, double rate, Rng& rng, bool training);

  // Indexing and layout.
  T reshape(const T& a, Shape shape);
  /// rows of table[N, d...] picked by index; index -1 yields a zero row.
  T gather_rows(const T& table, std::span<const std::int64_t> index);
  /// out row r = mask[r] ? b[r] : a[r]; rows are slices over the first axis.
  T where_rows(const Mask& mask, const T& a, const T& b);
  T concat_cols(const T& a, const T& b);
  /// x[B, T, d] -> x[:, t, :] as [B, d]
  T select_step(const T& x, std::size_t t);
  /// [B, T, H*dh] -> [B*H, T, dh]
  T split_heads(const T& x, std::size_t heads);
  /// [B*H, T, dh] -> [B, T, H*dh]
  T merge_heads(const T& x, std::size_t heads);

  /// Reverse pass from a scalar loss. Can be called once per graph.
  void backward(const T& loss);

 private:
  struct Record {
    std::string_view op;
    std::function<void()> backward;
  };

  bool wants_grad(std::initializer_list<const T*> inputs) const;
  T output(std::string_view op, Shape shape, std::vector<Real> values, bool needs_grad);
  void record(std::string_view op, std::function<void()> fn);

  bool recording_;
  bool consumed_ = false;
  std::vector<Record> records_;
};

#ifndef MP4SR_GRAPH_INSTANTIATE
extern template class Graph<float>;
extern template class Graph<double>;
#endif

}  // namespace mp4sr::nk
