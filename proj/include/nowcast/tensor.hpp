#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace nowcast {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Activations use the five-axis layout [batch, time, height, width,
/// channel]; parameters use whatever rank they need (conv kernels are
/// [kt, kh, kw, cin, cout], biases are [cout]).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Element access for rank-5 activations.
  double& at(std::size_t n, std::size_t t, std::size_t h, std::size_t w, std::size_t c);
  double at(std::size_t n, std::size_t t, std::size_t h, std::size_t w, std::size_t c) const;

  void fill(double v);
  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Small algebra helpers used by the training loop and the tests.
double dot(const Tensor& a, const Tensor& b);
double sum(const Tensor& a);
double max_abs(const Tensor& a);
void axpy(double alpha, const Tensor& x, Tensor& y);
Tensor scaled(const Tensor& a, double alpha);
Tensor added(const Tensor& a, const Tensor& b);
Tensor subtracted(const Tensor& a, const Tensor& b);

/// Copies time steps [begin, begin + count) of a rank-5 tensor.
Tensor slice_time(const Tensor& x, std::size_t begin, std::size_t count);
/// Concatenates rank-5 tensors along the time axis.
Tensor concat_time(std::span<const Tensor> parts);
/// Copies batch entries [begin, begin + count) of a rank-5 tensor.
Tensor slice_batch(const Tensor& x, std::size_t begin, std::size_t count);
Tensor concat_batch(std::span<const Tensor> parts);

}  // namespace nowcast
