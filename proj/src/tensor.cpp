#include "cloudattn/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace cloudattn {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

static void check_dims(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be >= 1, got " + shape_str(shape));
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape_));
  return shape_[1];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace kernels {

namespace {

using v4d = double __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}
inline void store4(double* p, v4d v) { std::memcpy(p, &v, sizeof(v)); }

// C block (R rows x 8 cols) += A(i.., p) * B(p, j..j+8), p ascending. A(i, p) = a[i*si + p*sp].
template <int R>
void block_8(const double* a, std::size_t si, std::size_t sp, const double* b, std::size_t n,
             double* c, std::size_t k) {
  v4d acc[R][2];
  for (int r = 0; r < R; ++r) {
    acc[r][0] = load4(c + r * n);
    acc[r][1] = load4(c + r * n + 4);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const v4d b0 = load4(b + p * n), b1 = load4(b + p * n + 4);
    for (int r = 0; r < R; ++r) {
      const double av = a[r * si + p * sp];
      const v4d a4 = {av, av, av, av};
      acc[r][0] = acc[r][0] + a4 * b0;
      acc[r][1] = acc[r][1] + a4 * b1;
    }
  }
  for (int r = 0; r < R; ++r) {
    store4(c + r * n, acc[r][0]);
    store4(c + r * n + 4, acc[r][1]);
  }
}

// General strided A times contiguous k x n B.
void gemm_kn(const double* a, std::size_t si, std::size_t sp, const double* b, double* c,
             std::size_t m, std::size_t n, std::size_t k) {
  const std::size_t n8 = n - n % 8;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4)
    for (std::size_t j = 0; j < n8; j += 8) block_8<4>(a + i * si, si, sp, b + j, n, c + i * n + j, k);
  for (; i < m; ++i)
    for (std::size_t j = 0; j < n8; j += 8) block_8<1>(a + i * si, si, sp, b + j, n, c + i * n + j, k);
  if (n8 == n) return;
  for (std::size_t r = 0; r < m; ++r) {
    double* cr = c + r * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[r * si + p * sp];
      const double* bp = b + p * n;
      for (std::size_t j = n8; j < n; ++j) cr[j] += av * bp[j];
    }
  }
}

}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
          std::size_t k, bool trans_a, bool trans_b, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  std::vector<double> bt;
  if (trans_b) {
    // b is n x k; lay it out as k x n.
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    b = bt.data();
  }
  if (trans_a) {
    gemm_kn(a, 1, m, b, c, m, n, k);  // a is k x m
  } else {
    gemm_kn(a, k, 1, b, c, m, n, k);
  }
}

}  // namespace kernels

}  // namespace cloudattn
