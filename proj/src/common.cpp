#include "latref/common.hpp"

#include <sstream>

namespace latref {

std::string shape_string(const Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.sizes() != b.sizes())
    throw ShapeError(std::string(what) + ": shape " + shape_string(a) + " vs " + shape_string(b));
}

bool all_finite(const Tensor& t) { return torch::isfinite(t).all().item<bool>(); }

}  // namespace latref
