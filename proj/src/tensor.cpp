#include "nowcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "nowcast/errors.hpp"

namespace nowcast {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_string(shape_));
  }
}

double& Tensor::at(std::size_t n, std::size_t t, std::size_t h, std::size_t w, std::size_t c) {
  return data_[(((n * shape_[1] + t) * shape_[2] + h) * shape_[3] + w) * shape_[4] + c];
}

double Tensor::at(std::size_t n, std::size_t t, std::size_t h, std::size_t w, std::size_t c) const {
  return data_[(((n * shape_[1] + t) * shape_[2] + h) * shape_[3] + w) * shape_[4] + c];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

static void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

double dot(const Tensor& a, const Tensor& b) {
  require_same(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return s;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  require_same(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Tensor scaled(const Tensor& a, double alpha) {
  Tensor out = a;
  for (double& v : out.data()) v *= alpha;
  return out;
}

Tensor added(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += b[i];
  return out;
}

Tensor subtracted(const Tensor& a, const Tensor& b) {
  require_same(a, b, "subtract");
  Tensor out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] -= b[i];
  return out;
}

static void require_rank5(const Tensor& x, const char* what) {
  if (x.rank() != 5) throw DimensionError(std::string(what) + ": expected rank-5 tensor, got " + shape_string(x.shape()));
}

Tensor slice_time(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank5(x, "slice_time");
  const auto& s = x.shape();
  if (begin + count > s[1]) throw DimensionError("slice_time: range exceeds time axis of " + shape_string(s));
  Tensor out({s[0], count, s[2], s[3], s[4]});
  const std::size_t frame = s[2] * s[3] * s[4];
  for (std::size_t n = 0; n < s[0]; ++n) {
    auto src = x.data().begin() + static_cast<std::ptrdiff_t>((n * s[1] + begin) * frame);
    auto dst = out.data().begin() + static_cast<std::ptrdiff_t>(n * count * frame);
    std::copy(src, src + static_cast<std::ptrdiff_t>(count * frame), dst);
  }
  return out;
}

Tensor concat_time(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_time: no inputs");
  Shape s = parts.front().shape();
  require_rank5(parts.front(), "concat_time");
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank5(p, "concat_time");
    if (p.dim(0) != s[0] || p.dim(2) != s[2] || p.dim(3) != s[3] || p.dim(4) != s[4]) {
      throw DimensionError("concat_time: incompatible shapes " + shape_string(s) + " and " + shape_string(p.shape()));
    }
    total += p.dim(1);
  }
  Shape os = s;
  os[1] = total;
  Tensor out(os);
  const std::size_t frame = s[2] * s[3] * s[4];
  for (std::size_t n = 0; n < s[0]; ++n) {
    std::size_t t0 = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.dim(1) * frame;
      auto src = p.data().begin() + static_cast<std::ptrdiff_t>(n * len);
      std::copy(src, src + static_cast<std::ptrdiff_t>(len),
                out.data().begin() + static_cast<std::ptrdiff_t>((n * total + t0) * frame));
      t0 += p.dim(1);
    }
  }
  return out;
}

Tensor slice_batch(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank5(x, "slice_batch");
  Shape s = x.shape();
  if (begin + count > s[0]) throw DimensionError("slice_batch: range exceeds batch axis of " + shape_string(s));
  const std::size_t per = x.size() / s[0];
  s[0] = count;
  auto src = x.data().begin() + static_cast<std::ptrdiff_t>(begin * per);
  return Tensor(s, std::vector<double>(src, src + static_cast<std::ptrdiff_t>(count * per)));
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_batch: no inputs");
  Shape s = parts.front().shape();
  require_rank5(parts.front(), "concat_batch");
  std::vector<double> data;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rank() != 5 || !std::equal(p.shape().begin() + 1, p.shape().end(), s.begin() + 1)) {
      throw DimensionError("concat_batch: incompatible shapes " + shape_string(s) + " and " + shape_string(p.shape()));
    }
    data.insert(data.end(), p.data().begin(), p.data().end());
    n += p.dim(0);
  }
  s[0] = n;
  return Tensor(s, std::move(data));
}

}  // namespace nowcast
