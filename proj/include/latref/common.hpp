#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace latref {

using Tensor = torch::Tensor;

/// Raised when a request names a tag, attribute, or slot outside the catalog.
class CatalogError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for mismatched tensor shapes or widths between cooperating pieces.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a configuration or on-disk artifact does not validate.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Tensor& t);

/// Throws ShapeError unless both tensors have identical sizes.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// True when every element is finite.
bool all_finite(const Tensor& t);

/// Float32 CPU tensor options used throughout the library.
inline torch::TensorOptions f32() { return torch::TensorOptions().dtype(torch::kFloat32); }

}  // namespace latref
