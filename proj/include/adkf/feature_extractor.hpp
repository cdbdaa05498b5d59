/*
 * Copyright 2026 The adkf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "adkf/binary_io.hpp"
#include "adkf/core_math.hpp"
#include "adkf/error.hpp"
#include "adkf/random.hpp"

namespace adkf {

struct LayerShape {
  Eigen::Index in = 0;
  Eigen::Index out = 0;

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

using Layout = std::vector<LayerShape>;

enum class Activation : std::uint32_t { kTanh = 1 };

/// Default meta-learned network: two tanh hidden layers of width 32, 8 outputs.
inline Layout default_layout(Eigen::Index input_dim, Eigen::Index width = 32, Eigen::Index output_dim = 8) {
  return {{input_dim, width}, {width, width}, {width, output_dim}};
}

inline Eigen::Index parameter_count(const Layout& layout) {
  Eigen::Index n = 0;
  for (const auto& l : layout) n += l.in * l.out + l.out;
  return n;
}

inline void validate_layout(const Layout& layout) {
  require(!layout.empty(), ErrorCode::kEmptyLayout, "extractor layout has no layers");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    require(layout[i].in > 0 && layout[i].out > 0, ErrorCode::kDimensionMismatch, "layer dimensions must be positive");
    if (i + 1 < layout.size())
      require(layout[i].out == layout[i + 1].in, ErrorCode::kDimensionMismatch,
              "layer " + std::to_string(i) + " output does not match layer " + std::to_string(i + 1) + " input");
  }
}

/**
 * Flat parameter vector of a tanh MLP. Layer l occupies a contiguous block:
 * the out×in weight matrix in row-major order followed by its out biases.
 * All hidden layers apply tanh; the final layer is linear.
 */
struct ExtractorParams {
  Vector flat_values;
  Layout layout;
  Activation activation = Activation::kTanh;

  [[nodiscard]] Eigen::Index input_dim() const { return layout.front().in; }
  [[nodiscard]] Eigen::Index output_dim() const { return layout.back().out; }
  [[nodiscard]] Eigen::Index size() const { return flat_values.size(); }

  friend bool operator==(const ExtractorParams& a, const ExtractorParams& b) {
    return a.layout == b.layout && a.activation == b.activation && a.flat_values.size() == b.flat_values.size() &&
           a.flat_values == b.flat_values;
  }
};

namespace detail {

using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline std::uint64_t fingerprint(const Vector& v) {
  std::uint64_t h = 0x243f6a8885a308d3ULL ^ static_cast<std::uint64_t>(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) h = mix64(h ^ std::bit_cast<std::uint64_t>(v[i]));
  return h;
}

}  // namespace detail

/// Glorot-uniform weights from a seeded stream, zero biases.
inline ExtractorParams init_params(const Layout& layout, std::uint64_t seed) {
  validate_layout(layout);
  ExtractorParams p;
  p.layout = layout;
  p.flat_values = Vector::Zero(parameter_count(layout));
  Rng rng(hash64(seed, "extractor_init"));
  Eigen::Index offset = 0;
  for (const auto& l : layout) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    for (Eigen::Index i = 0; i < l.in * l.out; ++i) p.flat_values[offset + i] = rng.uniform(-bound, bound);
    offset += l.in * l.out + l.out;
  }
  return p;
}

/// Layer inputs recorded during forward: inputs[0] is the batch, inputs[l] = tanh(pre-activation of layer l-1).
struct ForwardTrace {
  std::vector<Matrix> layer_inputs;
  std::uint64_t params_fingerprint = 0;
};

struct ForwardResult {
  Matrix output;
  ForwardTrace trace;
};

inline ForwardResult forward(const ExtractorParams& params, const Matrix& inputs) {
  validate_layout(params.layout);
  require(inputs.cols() == params.input_dim(), ErrorCode::kDimensionMismatch,
          "extractor expects input dimension " + std::to_string(params.input_dim()) + ", got " +
              std::to_string(inputs.cols()));
  require(params.flat_values.size() == parameter_count(params.layout), ErrorCode::kDimensionMismatch,
          "flat parameter vector does not match layout");
  ForwardResult result;
  result.trace.params_fingerprint = detail::fingerprint(params.flat_values);
  result.trace.layer_inputs.reserve(params.layout.size());
  Matrix x = inputs;
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < params.layout.size(); ++l) {
    const auto& shape = params.layout[l];
    detail::RowMajorMap w(params.flat_values.data() + offset, shape.out, shape.in);
    const auto b = params.flat_values.segment(offset + shape.in * shape.out, shape.out);
    offset += shape.in * shape.out + shape.out;
    Matrix z = x * w.transpose();
    z.rowwise() += b.transpose();
    result.trace.layer_inputs.push_back(std::move(x));
    if (l + 1 < params.layout.size()) {
      x = z.array().tanh().matrix();
    } else {
      x = std::move(z);
    }
  }
  result.output = std::move(x);
  return result;
}

/// Σ_batch (∂h/∂φ)ᵀ · cotangent, by reverse accumulation over the trace.
inline Vector vjp_params(const ExtractorParams& params, const ForwardTrace& trace, const Matrix& output_cotangent) {
  require(trace.layer_inputs.size() == params.layout.size() &&
              trace.params_fingerprint == detail::fingerprint(params.flat_values),
          ErrorCode::kTraceMismatch, "trace was not produced by forward on these parameters");
  const Eigen::Index batch = trace.layer_inputs.front().rows();
  require(output_cotangent.rows() == batch && output_cotangent.cols() == params.output_dim(),
          ErrorCode::kDimensionMismatch, "output cotangent shape does not match the forward output");

  Vector grad = Vector::Zero(params.size());
  std::vector<Eigen::Index> offsets;
  Eigen::Index offset = 0;
  for (const auto& l : params.layout) {
    offsets.push_back(offset);
    offset += l.in * l.out + l.out;
  }
  Matrix g = output_cotangent;
  for (std::size_t li = params.layout.size(); li-- > 0;) {
    const auto& shape = params.layout[li];
    const Matrix& x = trace.layer_inputs[li];
    const Eigen::Index off = offsets[li];
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dw(grad.data() + off, shape.out,
                                                                                           shape.in);
    dw.noalias() = g.transpose() * x;
    grad.segment(off + shape.in * shape.out, shape.out) = g.colwise().sum().transpose();
    if (li == 0) break;
    detail::RowMajorMap w(params.flat_values.data() + off, shape.out, shape.in);
    Matrix prev = g * w;
    // x is the tanh output of the previous layer.
    g = prev.array() * (1.0 - x.array().square());
  }
  return grad;
}

// Extractor file: "ADKFNET\0", u32 version, u32 activation, u32 layer count,
// (u32 in, u32 out) per layer, u64 value count, then f64 values; all little-endian.
inline constexpr std::array<char, 8> kExtractorMagic = {'A', 'D', 'K', 'F', 'N', 'E', 'T', '\0'};
inline constexpr std::uint32_t kExtractorFormatVersion = 1;

inline void write_extractor(std::ostream& out, const ExtractorParams& p) {
  binary::write_magic(out, kExtractorMagic);
  binary::write_u32(out, kExtractorFormatVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(p.activation));
  binary::write_u32(out, static_cast<std::uint32_t>(p.layout.size()));
  for (const auto& l : p.layout) {
    binary::write_u32(out, static_cast<std::uint32_t>(l.in));
    binary::write_u32(out, static_cast<std::uint32_t>(l.out));
  }
  binary::write_u64(out, static_cast<std::uint64_t>(p.flat_values.size()));
  for (Eigen::Index i = 0; i < p.flat_values.size(); ++i) binary::write_f64(out, p.flat_values[i]);
}

inline ExtractorParams read_extractor(std::istream& in) {
  binary::expect_magic(in, kExtractorMagic);
  const auto version = binary::read_u32(in);
  require(version == kExtractorFormatVersion, ErrorCode::kVersionMismatch,
          "extractor format version " + std::to_string(version) + " is not supported");
  ExtractorParams p;
  const auto act = binary::read_u32(in);
  require(act == static_cast<std::uint32_t>(Activation::kTanh), ErrorCode::kMalformedRecord, "unknown activation tag");
  p.activation = Activation::kTanh;
  const auto layers = binary::read_u32(in);
  for (std::uint32_t i = 0; i < layers; ++i) {
    const auto a = binary::read_u32(in);
    const auto b = binary::read_u32(in);
    p.layout.push_back({static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)});
  }
  validate_layout(p.layout);
  const auto n = binary::read_u64(in);
  require(n == static_cast<std::uint64_t>(parameter_count(p.layout)), ErrorCode::kMalformedRecord,
          "extractor value count does not match layout");
  p.flat_values.resize(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < p.flat_values.size(); ++i) p.flat_values[i] = binary::read_f64(in);
  return p;
}

}  // namespace adkf
