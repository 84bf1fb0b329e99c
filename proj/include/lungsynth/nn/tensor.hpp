#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <string>
#include <vector>

namespace lungsynth::nn {

// Cache-line aligned allocation. Vectorized reductions peel leading elements
// up to the first aligned address, so a fixed alignment keeps float results
// independent of where the heap places a buffer.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using FloatBuffer = std::vector<float, AlignedAllocator<float>>;

// Dense float tensor, row-major. Image batches use NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, float fill = 0.0f);
  Tensor(std::vector<int> shape, std::vector<float> values);
  Tensor(std::vector<int> shape, FloatBuffer values);
  Tensor(std::vector<int> shape, std::initializer_list<float> values) : Tensor(std::move(shape), FloatBuffer(values)) {}

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::size_t numel() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  float* data() { return values_.data(); }
  const float* data() const { return values_.data(); }
  FloatBuffer& values() { return values_; }
  const FloatBuffer& values() const { return values_; }

  float& operator[](std::size_t i) { return values_[i]; }
  float operator[](std::size_t i) const { return values_[i]; }

  void fill(float v);
  // Same element count, new shape.
  Tensor reshaped(std::vector<int> shape) const;

  std::string shape_string() const;

 private:
  std::vector<int> shape_;
  FloatBuffer values_;
};

std::size_t shape_numel(const std::vector<int>& shape);

// Autograd graph node. Results of operations hold their parents and a
// closure that pushes the node's gradient into them.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
  bool has_grad() const { return !grad.empty(); }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value);

// Builds an op result. The closure is kept only if grad mode is on and some
// parent requires grad.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
void backward(const Var& root);

bool grad_enabled();

// Disables graph construction within its scope (sampling, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace lungsynth::nn
