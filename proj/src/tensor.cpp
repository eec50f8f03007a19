#include "dpt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

namespace dpt {

namespace {
std::atomic<uint64_t> g_seq{0};
thread_local int g_no_grad_depth = 0;
}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad) {
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(shape_numel(impl_->shape), 0.0);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  DPT_CHECK(shape_numel(shape) == values.size(),
            "from_data: shape " << shape_str(shape) << " expects " << shape_numel(shape)
                                << " values, got " << values.size());
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(values.begin(), values.end());
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(shape);
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

const Shape& Tensor::shape() const {
  DPT_CHECK(impl_, "shape() on undefined tensor");
  return impl_->shape;
}

size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

size_t Tensor::size(size_t axis) const {
  DPT_CHECK(axis < shape().size(), "size(" << axis << ") out of range for " << shape_str(shape()));
  return shape()[axis];
}

double* Tensor::data() {
  DPT_CHECK(impl_, "data() on undefined tensor");
  return impl_->data.data();
}
const double* Tensor::data() const {
  DPT_CHECK(impl_, "data() on undefined tensor");
  return impl_->data.data();
}
DataVec& Tensor::vec() {
  DPT_CHECK(impl_, "vec() on undefined tensor");
  return impl_->data;
}
const DataVec& Tensor::vec() const {
  DPT_CHECK(impl_, "vec() on undefined tensor");
  return impl_->data;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  DPT_CHECK(impl_, "set_requires_grad on undefined tensor");
  impl_->requires_grad = value;
  return *this;
}

Tensor Tensor::grad() const {
  DPT_CHECK(impl_, "grad() on undefined tensor");
  if (impl_->grad.empty()) return Tensor();
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->grad;
  return t;
}

double* Tensor::grad_data() {
  DPT_CHECK(impl_, "grad_data() on undefined tensor");
  detail::ensure_grad(*impl_);
  return impl_->grad.data();
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

double Tensor::item() const {
  DPT_CHECK(numel() == 1, "item() requires a scalar, shape is " << shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<size_t> idx) const {
  const Shape& s = shape();
  DPT_CHECK(idx.size() == s.size(), "at(): rank mismatch");
  size_t flat = 0, axis = 0;
  for (size_t i : idx) {
    DPT_CHECK(i < s[axis], "at(): index " << i << " out of range on axis " << axis);
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

Tensor Tensor::detach() const {
  DPT_CHECK(impl_, "detach() on undefined tensor");
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;  // value copy keeps backward saves immutable
  return t;
}

Tensor Tensor::clone() const { return detach(); }

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

namespace detail {

bool tape_needed(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && (t->requires_grad() || t->impl()->node)) return true;
  return false;
}

void attach_node(Tensor& out, const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                 std::function<void(const TensorImpl&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->seq = ++g_seq;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward_fn);
  out.impl()->node = std::move(node);
}

DataVec& ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

}  // namespace detail

void backward(const Tensor& loss) {
  DPT_CHECK(loss.defined() && loss.numel() == 1, "backward() requires a defined scalar loss");
  TensorImpl* root = loss.impl().get();
  if (!root->node) {
    if (root->requires_grad) detail::ensure_grad(*root)[0] += 1.0;
    return;
  }

  // Collect every impl reachable through creator nodes.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<TensorImpl*> stack{root};
  seen.insert(root);
  while (!stack.empty()) {
    TensorImpl* t = stack.back();
    stack.pop_back();
    if (!t->node) continue;
    order.push_back(t);
    for (auto& in : t->node->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }

  // Fresh gradient buffers for every tape output; leaves keep accumulating.
  for (TensorImpl* t : order) t->grad.assign(t->data.size(), 0.0);
  root->grad[0] = 1.0;

  std::sort(order.begin(), order.end(),
            [](TensorImpl* a, TensorImpl* b) { return a->node->seq > b->node->seq; });
  for (TensorImpl* t : order) t->node->backward(*t);
}

}  // namespace dpt
