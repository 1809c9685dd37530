#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <vector>

namespace xbld {

/// Dense row-major tensor of doubles. Copies share the underlying buffer;
/// use clone() when a deep copy is needed.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    numel_ = 1;
    for (int d : shape_) {
      assert(d >= 0);
      numel_ *= static_cast<size_t>(d);
    }
    alloc();
  }

  static Tensor zeros(std::vector<int> shape) {
    Tensor t(std::move(shape));
    t.fill(0.0);
    return t;
  }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor from(std::vector<int> shape, const std::vector<double>& vals) {
    Tensor t(std::move(shape));
    assert(vals.size() == t.numel());
    for (size_t i = 0; i < vals.size(); ++i) t.data()[i] = vals[i];
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  size_t numel() const { return numel_; }

  double* data() { return data_.get(); }
  const double* data() const { return data_.get(); }

  double& operator[](size_t i) { return data_.get()[i]; }
  double operator[](size_t i) const { return data_.get()[i]; }

  void fill(double v) {
    double* p = data();
    for (size_t i = 0; i < numel_; ++i) p[i] = v;
  }

  Tensor clone() const {
    Tensor t(shape_);
    const double* src = data();
    double* dst = t.data();
    for (size_t i = 0; i < numel_; ++i) dst[i] = src[i];
    return t;
  }

  /// Same buffer, new shape (element count must match).
  Tensor reshaped(std::vector<int> shape) const {
    Tensor t;
    t.shape_ = std::move(shape);
    size_t n = 1;
    for (int d : t.shape_) n *= static_cast<size_t>(d);
    assert(n == numel_);
    t.numel_ = numel_;
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  void alloc() {
    if (numel_ == 0) {
      // keep a valid pointer so data() is never null for defined tensors
      data_ = std::shared_ptr<double[]>(new double[1]);
      return;
    }
    data_ = std::shared_ptr<double[]>(new double[numel_]);
  }

  std::vector<int> shape_;
  size_t numel_ = 0;
  std::shared_ptr<double[]> data_;
};

}  // namespace xbld
