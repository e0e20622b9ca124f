#pragma once

#include <array>
#include <vector>

#include "dir/tensor.hpp"

namespace dir {

using Vec2 = std::array<double, 2>;

/// Plain dense array without gradient machinery; the carrier for datasets
/// and transform inputs/outputs. First dimension is the batch.
struct NdArray {
  Shape shape;
  std::vector<double> data;

  NdArray() = default;
  NdArray(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("NdArray: data length does not match shape " + shape_str(shape));
  }
  static NdArray zeros(Shape s) {
    auto n = numel(s);
    return NdArray(std::move(s), std::vector<double>(n, 0.0));
  }

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  std::int64_t sample_size() const { return rows() ? static_cast<std::int64_t>(data.size()) / rows() : 0; }
  const double* row(int i) const { return data.data() + i * sample_size(); }
  double* row(int i) { return data.data() + i * sample_size(); }

  bool operator==(const NdArray&) const = default;
};

}  // namespace dir
