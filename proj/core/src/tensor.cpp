#include "rccm/tensor.hpp"

#include <cmath>
#include <sstream>

namespace rccm {

int64_t Tensor::numel_of(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("tensor dimension must be nonnegative");
    n *= d;
  }
  return n;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

void check_shape(const Tensor& t, const std::vector<int64_t>& expect, const char* what) {
  if (t.shape() != expect) {
    Tensor e(expect);
    throw std::invalid_argument(std::string(what) + ": expected shape " + e.shape_str() +
                                ", got " + t.shape_str());
  }
}

}  // namespace rccm
