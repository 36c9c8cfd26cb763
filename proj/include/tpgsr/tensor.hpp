#pragma once
// Dense N-D tensor with reverse-mode autodiff on a dynamically recorded tape.
//
// Design notes:
//  - Tensor<T> is a cheap handle over a shared TensorImpl<T>. Ops build new
//    nodes; each node stores its parents and a backward closure. backward()
//    replays closures in reverse creation order (valid topological order for a
//    tape) and frees the graph as it goes: non-leaf grads are dropped right
//    after their node's closure runs, closures/parent links immediately after.
//  - The tape is single-use: a second backward() on the same root is an error.
//  - Grad recording is thread-local (GradMode / NoGradGuard); graphs are
//    single-threaded, matching the concurrency model.

#include <functional>
#include <memory>
#include <unordered_set>

#include "tpgsr/base.hpp"

namespace tpgsr {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev; }
};

inline uint64_t next_node_seq() {
  thread_local uint64_t counter = 0;
  return ++counter;
}

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, same length as data when present
  bool requires_grad = false;  // leaf parameters keep their grad after backward
  bool needs_grad = false;     // on the active tape (leaf or derived from one)
  bool backward_ran = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor empty(const Shape& shape) {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = shape;
    impl->data.resize(size_t(numel_of(shape)));
    impl->seq = next_node_seq();
    return Tensor(std::move(impl));
  }
  static Tensor zeros(const Shape& shape) { return empty(shape); }
  static Tensor full(const Shape& shape, T v) {
    Tensor t = empty(shape);
    std::fill(t.data().begin(), t.data().end(), v);
    return t;
  }
  static Tensor from_vec(const Shape& shape, std::vector<T> v) {
    check(int64_t(v.size()) == numel_of(shape), "from_vec: ", v.size(),
          " values for shape ", shape_str(shape));
    Tensor t = empty(shape);
    t.data() = std::move(v);
    return t;
  }
  static Tensor randn(const Shape& shape, Rng& rng, T stddev = T(1)) {
    Tensor t = empty(shape);
    for (auto& x : t.data()) x = T(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return int64_t(impl_->data.size()); }
  int64_t dim(int i) const { return impl_->shape[size_t(i)]; }
  int rank() const { return int(impl_->shape.size()); }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }
  std::vector<T>& grad() {
    check(!impl_->grad.empty(), "grad accessed but not populated");
    return impl_->grad;
  }
  const std::vector<T>& grad() const {
    check(!impl_->grad.empty(), "grad accessed but not populated");
    return impl_->grad;
  }
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad() {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    check(!impl_->backward_fn, "requires_grad is a leaf property");
    impl_->requires_grad = v;
    impl_->needs_grad = v;
    return *this;
  }

  T item() const {
    check(numel() == 1, "item() on non-scalar ", shape_str(shape()));
    return impl_->data[0];
  }

  int64_t offset_of(std::initializer_list<int64_t> idx) const {
    check(int(idx.size()) == rank(), "index rank mismatch");
    int64_t off = 0, stride = 1;
    const auto& s = impl_->shape;
    auto it = idx.end();
    for (int i = rank() - 1; i >= 0; --i) {
      --it;
      off += *it * stride;
      stride *= s[size_t(i)];
    }
    return off;
  }
  T at(std::initializer_list<int64_t> idx) const {
    return impl_->data[size_t(offset_of(idx))];
  }
  T& at(std::initializer_list<int64_t> idx) {
    return impl_->data[size_t(offset_of(idx))];
  }

  // Leaf copy, cut from the tape.
  Tensor detach() const {
    Tensor t = empty(shape());
    t.data() = data();
    return t;
  }

  std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

  void backward() const {
    auto& root = *impl_;
    check(numel() == 1, "backward() needs a scalar loss, got ",
          shape_str(shape()));
    check(!root.backward_ran, "backward() already ran on this graph");
    root.backward_ran = true;
    if (!root.needs_grad) return;
    root.ensure_grad()[0] = T(1);

    // Gather the reachable tape. keep_alive owns every non-root node so the
    // raw pointers stay valid while parent links are being severed below.
    std::vector<TensorImpl<T>*> nodes;
    std::vector<std::shared_ptr<TensorImpl<T>>> keep_alive;
    std::unordered_set<TensorImpl<T>*> visited;
    std::vector<TensorImpl<T>*> stack = {&root};
    visited.insert(&root);
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      nodes.push_back(n);
      for (auto& p : n->parents) {
        if (p->needs_grad && visited.insert(p.get()).second) {
          keep_alive.push_back(p);
          stack.push_back(p.get());
        }
      }
    }
    // Reverse creation order = consumers before producers.
    std::sort(nodes.begin(), nodes.end(),
              [](auto* a, auto* b) { return a->seq > b->seq; });
    for (auto* n : nodes) {
      if (n->backward_fn) {
        // A node never reached by any gradient keeps an empty grad; its
        // closure has nothing to propagate.
        if (!n->grad.empty()) n->backward_fn(*n);
        n->backward_fn = nullptr;
      }
      n->parents.clear();
      if (!n->requires_grad) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Creates a tape node. parents/backward are recorded only when grad flow is
// both enabled and possible; otherwise the result is a plain constant.
template <class T>
Tensor<T> make_node(const Shape& shape,
                    std::vector<Tensor<T>> parents,
                    std::function<void(TensorImpl<T>&)> backward_fn) {
  Tensor<T> out = Tensor<T>::empty(shape);
  if (grad_enabled()) {
    bool needs = false;
    for (auto& p : parents)
      if (p.impl()->needs_grad) needs = true;
    if (needs) {
      auto impl = out.impl();
      impl->needs_grad = true;
      impl->backward_fn = std::move(backward_fn);
      impl->parents.reserve(parents.size());
      for (auto& p : parents) impl->parents.push_back(p.impl());
    }
  }
  return out;
}

}  // namespace tpgsr
