#include "skelgcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "skelgcn/rng.hpp"

namespace skelgcn {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

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

namespace detail {

std::vector<double>& TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

namespace {
thread_local KinkRecorder* g_kink_recorder = nullptr;
}

KinkRecorder* active_kink_recorder() { return g_kink_recorder; }
void set_kink_recorder(KinkRecorder* recorder) { g_kink_recorder = recorder; }

}  // namespace detail

namespace {

using detail::TensorImpl;

std::shared_ptr<TensorImpl> new_impl(Shape shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (int e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0);
  impl->shape = std::move(shape);
  return impl;
}

bool needs_grad(const TensorImpl& t) { return t.requires_grad || t.from_op; }

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
}

// Records the node if a tape is active and any input carries gradient state.
void maybe_record(const char* op, std::vector<std::shared_ptr<TensorImpl>> inputs,
                  const std::shared_ptr<TensorImpl>& output, std::function<void()> backprop) {
  Tape* tape = Tape::active();
  if (!tape) return;
  bool any = false;
  for (const auto& in : inputs) any = any || needs_grad(*in);
  if (!any) return;
  output->from_op = true;
  tape->record(op, std::move(inputs), output, std::move(backprop));
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t(new_impl(std::move(shape)));
  t.impl()->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl()->data.begin(), t.impl()->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  Tensor t(new_impl(std::move(shape)));
  t.impl()->data = std::move(values);
  t.impl()->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.impl()->data) v = dist(rng);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
int Tensor::extent(int axis) const { return impl_->shape.at(static_cast<std::size_t>(axis)); }
std::int64_t Tensor::size() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<double> Tensor::data() { return impl_->data; }
std::span<const double> Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int> index) const {
  const Shape& s = impl_->shape;
  if (index.size() != s.size()) throw ShapeError("at: index rank mismatch");
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (int i : index) {
    if (i < 0 || i >= s[axis]) throw ShapeError("at: index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::grad() { return impl_->grad; }

void Tensor::zero_grad() { impl_->grad.clear(); }

const std::string& Tensor::name() const { return impl_->name; }

Tensor& Tensor::set_name(std::string name) {
  impl_->name = std::move(name);
  return *this;
}

Tensor Tensor::detached() const {
  Tensor t(new_impl(impl_->shape));
  t.impl()->data = impl_->data;
  return t;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const char* op, std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
                  std::shared_ptr<detail::TensorImpl> output, std::function<void()> backprop) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backprop)});
}

void Tape::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  loss.impl()->ensure_grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // no gradient reached this node
    it->backprop();
  }
}

namespace ops {

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// Adds src into impl's grad buffer element-wise when gradient is wanted.
void accumulate(TensorImpl* impl, const std::vector<double>& src) {
  if (!needs_grad(*impl)) return;
  auto& g = impl->ensure_grad();
  for (std::size_t i = 0; i < src.size(); ++i) g[i] += src[i];
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const auto &ad = a.impl()->data, &bd = b.impl()->data;
  auto& od = out.impl()->data;
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
  auto *ai = a.impl().get(), *bi = b.impl().get(), *oi = out.impl().get();
  maybe_record("add", {a.impl(), b.impl()}, out.impl(), [ai, bi, oi] {
    accumulate(ai, oi->grad);
    accumulate(bi, oi->grad);
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const auto &ad = a.impl()->data, &bd = b.impl()->data;
  auto& od = out.impl()->data;
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
  auto *ai = a.impl().get(), *bi = b.impl().get(), *oi = out.impl().get();
  maybe_record("sub", {a.impl(), b.impl()}, out.impl(), [ai, bi, oi] {
    accumulate(ai, oi->grad);
    if (needs_grad(*bi)) {
      auto& g = bi->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= oi->grad[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  require_defined(x, "scale");
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.impl()->data;
  auto& od = out.impl()->data;
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = factor * xd[i];
  auto *xi = x.impl().get(), *oi = out.impl().get();
  maybe_record("scale", {x.impl()}, out.impl(), [xi, oi, factor] {
    if (!needs_grad(*xi)) return;
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * oi->grad[i];
  });
  return out;
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.impl()->data;
  auto& od = out.impl()->data;
  detail::KinkRecorder* rec = detail::active_kink_recorder();
  for (std::size_t i = 0; i < od.size(); ++i) {
    bool positive = xd[i] > 0.0;
    if (rec) rec->feed(positive);
    od[i] = positive ? xd[i] : 0.0;
  }
  auto *xi = x.impl().get(), *oi = out.impl().get();
  maybe_record("relu", {x.impl()}, out.impl(), [xi, oi] {
    if (!needs_grad(*xi)) return;
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xi->data[i] > 0.0) g[i] += oi->grad[i];  // subgradient 0 at the kink
    }
  });
  return out;
}

Tensor tanh(const Tensor& x) {
  require_defined(x, "tanh");
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.impl()->data;
  auto& od = out.impl()->data;
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = std::tanh(xd[i]);
  auto *xi = x.impl().get(), *oi = out.impl().get();
  maybe_record("tanh", {x.impl()}, out.impl(), [xi, oi] {
    if (!needs_grad(*xi)) return;
    auto& g = xi->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += (1.0 - oi->data[i] * oi->data[i]) * oi->grad[i];
    }
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out = Tensor::zeros({m, n});
  const auto &ad = a.impl()->data, &bd = b.impl()->data;
  auto& od = out.impl()->data;
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const double av = ad[static_cast<std::size_t>(i) * k + l];
      if (av == 0.0) continue;
      const double* brow = &bd[static_cast<std::size_t>(l) * n];
      double* orow = &od[static_cast<std::size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto *ai = a.impl().get(), *bi = b.impl().get(), *oi = out.impl().get();
  maybe_record("matmul", {a.impl(), b.impl()}, out.impl(), [ai, bi, oi, m, k, n] {
    const auto& g = oi->grad;
    if (needs_grad(*ai)) {
      auto& ga = ai->ensure_grad();  // dA = dC * B^T
      for (int i = 0; i < m; ++i) {
        for (int l = 0; l < k; ++l) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j) {
            acc += g[static_cast<std::size_t>(i) * n + j] * bi->data[static_cast<std::size_t>(l) * n + j];
          }
          ga[static_cast<std::size_t>(i) * k + l] += acc;
        }
      }
    }
    if (needs_grad(*bi)) {
      auto& gb = bi->ensure_grad();  // dB = A^T * dC
      for (int l = 0; l < k; ++l) {
        for (int j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int i = 0; i < m; ++i) {
            acc += ai->data[static_cast<std::size_t>(i) * k + l] * g[static_cast<std::size_t>(i) * n + j];
          }
          gb[static_cast<std::size_t>(l) * n + j] += acc;
        }
      }
    }
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  require_defined(x, "transpose");
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const int r = x.extent(0), c = x.extent(1);
  Tensor out = Tensor::zeros({c, r});
  const auto& xd = x.impl()->data;
  auto& od = out.impl()->data;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      od[static_cast<std::size_t>(j) * r + i] = xd[static_cast<std::size_t>(i) * c + j];
    }
  }
  auto *xi = x.impl().get(), *oi = out.impl().get();
  maybe_record("transpose", {x.impl()}, out.impl(), [xi, oi, r, c] {
    if (!needs_grad(*xi)) return;
    auto& g = xi->ensure_grad();
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        g[static_cast<std::size_t>(i) * c + j] += oi->grad[static_cast<std::size_t>(j) * r + i];
      }
    }
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                     " changes element count");
  }
  Tensor out = Tensor::zeros(std::move(shape));
  out.impl()->data = x.impl()->data;
  auto *xi = x.impl().get(), *oi = out.impl().get();
  maybe_record("reshape", {x.impl()}, out.impl(), [xi, oi] { accumulate(xi, oi->grad); });
  return out;
}

Tensor repeat_axis(const Tensor& x, int axis, int copies) {
  require_defined(x, "repeat_axis");
  if (axis < 0 || axis > x.rank()) {
    throw ShapeError("repeat_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  if (copies < 1) throw ShapeError("repeat_axis: copies must be >= 1");
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + axis, copies);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.extent(i);
  for (int i = axis; i < x.rank(); ++i) inner *= x.extent(i);
  Tensor out = Tensor::zeros(std::move(out_shape));
  const auto& xd = x.impl()->data;
  auto& od = out.impl()->data;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (int r = 0; r < copies; ++r) {
      std::copy_n(xd.begin() + o * inner, inner, od.begin() + (o * copies + r) * inner);
    }
  }
  auto *xi = x.impl().get(), *oi = out.impl().get();
  maybe_record("repeat_axis", {x.impl()}, out.impl(), [xi, oi, outer, copies, inner] {
    if (!needs_grad(*xi)) return;
    auto& g = xi->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (int r = 0; r < copies; ++r) {
        const double* src = &oi->grad[static_cast<std::size_t>((o * copies + r) * inner)];
        double* dst = &g[static_cast<std::size_t>(o * inner)];
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  });
  return out;
}

Tensor mean_over_axis(const Tensor& x, int axis) {
  require_defined(x, "mean_over_axis");
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("mean_over_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  const int extent = x.extent(axis);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.extent(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape = {1};
  Tensor out = Tensor::zeros(std::move(out_shape));
  const auto& xd = x.impl()->data;
  auto& od = out.impl()->data;
  const double inv = 1.0 / extent;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (int a = 0; a < extent; ++a) {
      const double* src = &xd[static_cast<std::size_t>((o * extent + a) * inner)];
      double* dst = &od[static_cast<std::size_t>(o * inner)];
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
    }
  }
  auto *xi = x.impl().get(), *oi = out.impl().get();
  maybe_record("mean_over_axis", {x.impl()}, out.impl(), [xi, oi, outer, extent, inner, inv] {
    if (!needs_grad(*xi)) return;
    auto& g = xi->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (int a = 0; a < extent; ++a) {
        double* dst = &g[static_cast<std::size_t>((o * extent + a) * inner)];
        const double* src = &oi->grad[static_cast<std::size_t>(o * inner)];
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
      }
    }
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  require_defined(x, "sum_all");
  double total = 0.0;
  for (double v : x.impl()->data) total += v;
  Tensor out = Tensor::scalar(total);
  auto *xi = x.impl().get(), *oi = out.impl().get();
  maybe_record("sum_all", {x.impl()}, out.impl(), [xi, oi] {
    if (!needs_grad(*xi)) return;
    auto& g = xi->ensure_grad();
    for (double& v : g) v += oi->grad[0];
  });
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_defined(x, "softmax_rows");
  if (x.rank() != 2) {
    throw ShapeError("softmax_rows: expected rank 2, got " + shape_str(x.shape()));
  }
  const int rows = x.extent(0), cols = x.extent(1);
  const auto& xd = x.impl()->data;
  for (double v : xd) {
    if (!std::isfinite(v)) throw NumericError("softmax_rows: non-finite input");
  }
  Tensor out = Tensor::zeros(x.shape());
  auto& od = out.impl()->data;
  for (int i = 0; i < rows; ++i) {
    const double* row = &xd[static_cast<std::size_t>(i) * cols];
    double* orow = &od[static_cast<std::size_t>(i) * cols];
    double mx = row[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < cols; ++j) orow[j] /= sum;
  }
  auto *xi = x.impl().get(), *oi = out.impl().get();
  maybe_record("softmax_rows", {x.impl()}, out.impl(), [xi, oi, rows, cols] {
    if (!needs_grad(*xi)) return;
    auto& g = xi->ensure_grad();
    for (int i = 0; i < rows; ++i) {
      const double* y = &oi->data[static_cast<std::size_t>(i) * cols];
      const double* gy = &oi->grad[static_cast<std::size_t>(i) * cols];
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += gy[j] * y[j];
      double* gx = &g[static_cast<std::size_t>(i) * cols];
      for (int j = 0; j < cols; ++j) gx[j] += (gy[j] - dot) * y[j];
    }
  });
  return out;
}

Tensor l2_normalize(const Tensor& x) {
  require_defined(x, "l2_normalize");
  const auto& xd = x.impl()->data;
  double sq = 0.0;
  for (double v : xd) sq += v * v;
  const double norm = std::sqrt(sq);
  Tensor out = Tensor::zeros(x.shape());
  auto& od = out.impl()->data;
  constexpr double kMinNorm = 1e-12;
  const bool degenerate = norm < kMinNorm;
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = degenerate ? xd[i] : xd[i] / norm;
  auto *xi = x.impl().get(), *oi = out.impl().get();
  maybe_record("l2_normalize", {x.impl()}, out.impl(), [xi, oi, norm, degenerate] {
    if (!needs_grad(*xi)) return;
    auto& g = xi->ensure_grad();
    if (degenerate) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
      return;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += oi->grad[i] * oi->data[i];
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += (oi->grad[i] - dot * oi->data[i]) / norm;
    }
  });
  return out;
}

Tensor channelwise_graph_apply(const Tensor& adj, const Tensor& feat) {
  require_defined(adj, "channelwise_graph_apply");
  require_defined(feat, "channelwise_graph_apply");
  if (adj.rank() != 3 || adj.extent(0) != adj.extent(1)) {
    throw ShapeError("channelwise_graph_apply: adjacency must be NxNxC, got " +
                     shape_str(adj.shape()));
  }
  if (feat.rank() != 3 || feat.extent(0) != adj.extent(0) || feat.extent(2) != adj.extent(2)) {
    throw ShapeError("channelwise_graph_apply: features " + shape_str(feat.shape()) +
                     " do not match adjacency " + shape_str(adj.shape()));
  }
  const int N = adj.extent(0), C = adj.extent(2), T = feat.extent(1);
  Tensor out = Tensor::zeros(feat.shape());
  const auto &ad = adj.impl()->data, &fd = feat.impl()->data;
  auto& od = out.impl()->data;
  auto aidx = [N, C](int n, int m, int c) { return (static_cast<std::size_t>(n) * N + m) * C + c; };
  auto fidx = [T, C](int n, int t, int c) { return (static_cast<std::size_t>(n) * T + t) * C + c; };
  for (int n = 0; n < N; ++n) {
    for (int m = 0; m < N; ++m) {
      for (int t = 0; t < T; ++t) {
        for (int c = 0; c < C; ++c) {
          od[fidx(n, t, c)] += ad[aidx(n, m, c)] * fd[fidx(m, t, c)];
        }
      }
    }
  }
  auto *ai = adj.impl().get(), *fi = feat.impl().get(), *oi = out.impl().get();
  maybe_record("channelwise_graph_apply", {adj.impl(), feat.impl()}, out.impl(),
               [ai, fi, oi, N, T, C, aidx, fidx] {
                 const auto& g = oi->grad;
                 if (needs_grad(*ai)) {
                   auto& ga = ai->ensure_grad();
                   for (int n = 0; n < N; ++n) {
                     for (int m = 0; m < N; ++m) {
                       for (int t = 0; t < T; ++t) {
                         for (int c = 0; c < C; ++c) {
                           ga[aidx(n, m, c)] += g[fidx(n, t, c)] * fi->data[fidx(m, t, c)];
                         }
                       }
                     }
                   }
                 }
                 if (needs_grad(*fi)) {
                   auto& gf = fi->ensure_grad();
                   for (int n = 0; n < N; ++n) {
                     for (int m = 0; m < N; ++m) {
                       for (int t = 0; t < T; ++t) {
                         for (int c = 0; c < C; ++c) {
                           gf[fidx(m, t, c)] += ai->data[aidx(n, m, c)] * g[fidx(n, t, c)];
                         }
                       }
                     }
                   }
                 }
               });
  return out;
}

Tensor depthwise_conv_time(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_defined(x, "depthwise_conv_time");
  require_defined(kernel, "depthwise_conv_time");
  require_defined(bias, "depthwise_conv_time");
  if (x.rank() != 3) {
    throw ShapeError("depthwise_conv_time: input must be NxTxC, got " + shape_str(x.shape()));
  }
  const int N = x.extent(0), T = x.extent(1), C = x.extent(2);
  if (kernel.rank() != 2 || kernel.extent(0) != C) {
    throw ShapeError("depthwise_conv_time: kernel " + shape_str(kernel.shape()) +
                     " does not match channels of " + shape_str(x.shape()));
  }
  const int k = kernel.extent(1);
  if (k % 2 == 0) throw ShapeError("depthwise_conv_time: kernel width must be odd");
  if (bias.rank() != 1 || bias.extent(0) != C) {
    throw ShapeError("depthwise_conv_time: bias " + shape_str(bias.shape()) +
                     " does not match channels");
  }
  const int r = k / 2;
  Tensor out = Tensor::zeros(x.shape());
  const auto &xd = x.impl()->data, &kd = kernel.impl()->data, &bd = bias.impl()->data;
  auto& od = out.impl()->data;
  auto idx = [T, C](int n, int t, int c) { return (static_cast<std::size_t>(n) * T + t) * C + c; };
  for (int n = 0; n < N; ++n) {
    for (int t = 0; t < T; ++t) {
      for (int c = 0; c < C; ++c) {
        double acc = bd[static_cast<std::size_t>(c)];
        for (int u = 0; u < k; ++u) {
          const int s = t + u - r;
          if (s < 0 || s >= T) continue;  // zero padding
          acc += kd[static_cast<std::size_t>(c) * k + u] * xd[idx(n, s, c)];
        }
        od[idx(n, t, c)] = acc;
      }
    }
  }
  auto *xi = x.impl().get(), *ki = kernel.impl().get(), *bi = bias.impl().get(),
       *oi = out.impl().get();
  maybe_record("depthwise_conv_time", {x.impl(), kernel.impl(), bias.impl()}, out.impl(),
               [xi, ki, bi, oi, N, T, C, k, r, idx] {
                 const auto& g = oi->grad;
                 if (needs_grad(*xi)) {
                   auto& gx = xi->ensure_grad();
                   for (int n = 0; n < N; ++n) {
                     for (int t = 0; t < T; ++t) {
                       for (int c = 0; c < C; ++c) {
                         const double gv = g[idx(n, t, c)];
                         for (int u = 0; u < k; ++u) {
                           const int s = t + u - r;
                           if (s < 0 || s >= T) continue;
                           gx[idx(n, s, c)] += ki->data[static_cast<std::size_t>(c) * k + u] * gv;
                         }
                       }
                     }
                   }
                 }
                 if (needs_grad(*ki)) {
                   auto& gk = ki->ensure_grad();
                   for (int n = 0; n < N; ++n) {
                     for (int t = 0; t < T; ++t) {
                       for (int c = 0; c < C; ++c) {
                         const double gv = g[idx(n, t, c)];
                         for (int u = 0; u < k; ++u) {
                           const int s = t + u - r;
                           if (s < 0 || s >= T) continue;
                           gk[static_cast<std::size_t>(c) * k + u] += gv * xi->data[idx(n, s, c)];
                         }
                       }
                     }
                   }
                 }
                 if (needs_grad(*bi)) {
                   auto& gb = bi->ensure_grad();
                   for (int n = 0; n < N; ++n) {
                     for (int t = 0; t < T; ++t) {
                       for (int c = 0; c < C; ++c) gb[static_cast<std::size_t>(c)] += g[idx(n, t, c)];
                     }
                   }
                 }
               });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be Bxc, got " + shape_str(logits.shape()));
  }
  const int B = logits.extent(0), c = logits.extent(1);
  if (static_cast<int>(labels.size()) != B) {
    throw ShapeError("cross_entropy: got " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(B));
  }
  for (int y : labels) {
    if (y < 0 || y >= c) {
      throw ConfigError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                        std::to_string(c) + ")");
    }
  }
  const auto& xd = logits.impl()->data;
  for (double v : xd) {
    if (!std::isfinite(v)) throw NumericError("cross_entropy: non-finite logits");
  }
  // probs saved for the backward rule (softmax - one_hot) / B
  std::vector<double> probs(xd.size());
  double total = 0.0;
  for (int i = 0; i < B; ++i) {
    const double* row = &xd[static_cast<std::size_t>(i) * c];
    double* prow = &probs[static_cast<std::size_t>(i) * c];
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += prow[j];
    }
    total += std::log(sum) + mx - row[labels[static_cast<std::size_t>(i)]];
    for (int j = 0; j < c; ++j) prow[j] /= sum;
  }
  Tensor out = Tensor::scalar(total / B);
  auto *xi = logits.impl().get(), *oi = out.impl().get();
  maybe_record("cross_entropy", {logits.impl()}, out.impl(),
               [xi, oi, B, c, labels, probs = std::move(probs)] {
                 if (!needs_grad(*xi)) return;
                 auto& g = xi->ensure_grad();
                 const double gv = oi->grad[0] / B;
                 for (int i = 0; i < B; ++i) {
                   for (int j = 0; j < c; ++j) {
                     const std::size_t p = static_cast<std::size_t>(i) * c + j;
                     g[p] += gv * (probs[p] - (j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
                   }
                 }
               });
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("concat_rows: empty input");
  const int c = rows.front().extent(1);
  for (const Tensor& row : rows) {
    require_defined(row, "concat_rows");
    if (row.rank() != 2 || row.extent(0) != 1 || row.extent(1) != c) {
      throw ShapeError("concat_rows: expected 1x" + std::to_string(c) + " rows, got " +
                       shape_str(row.shape()));
    }
  }
  const int B = static_cast<int>(rows.size());
  Tensor out = Tensor::zeros({B, c});
  auto& od = out.impl()->data;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  inputs.reserve(rows.size());
  for (int i = 0; i < B; ++i) {
    std::copy_n(rows[static_cast<std::size_t>(i)].impl()->data.begin(), c,
                od.begin() + static_cast<std::size_t>(i) * c);
    inputs.push_back(rows[static_cast<std::size_t>(i)].impl());
  }
  auto* oi = out.impl().get();
  std::vector<TensorImpl*> raw;
  raw.reserve(inputs.size());
  for (auto& in : inputs) raw.push_back(in.get());
  maybe_record("concat_rows", std::move(inputs), out.impl(), [raw = std::move(raw), oi, c] {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!needs_grad(*raw[i])) continue;
      auto& g = raw[i]->ensure_grad();
      for (int j = 0; j < c; ++j) g[static_cast<std::size_t>(j)] += oi->grad[i * c + j];
    }
  });
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts, int total_channels) {
  if (parts.empty()) throw ShapeError("concat_channels: empty input");
  const int N = parts.front().extent(0);
  int used = 0;
  for (const Tensor& p : parts) {
    require_defined(p, "concat_channels");
    if (p.rank() != 3 || p.extent(0) != N || p.extent(1) != N) {
      throw ShapeError("concat_channels: expected NxNxC blocks, got " + shape_str(p.shape()));
    }
    used += p.extent(2);
  }
  if (used > total_channels) {
    throw ShapeError("concat_channels: blocks hold " + std::to_string(used) +
                     " channels but target has " + std::to_string(total_channels));
  }
  Tensor out = Tensor::zeros({N, N, total_channels});
  auto& od = out.impl()->data;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::vector<int> offsets;
  int offset = 0;
  for (const Tensor& p : parts) {
    const int ch = p.extent(2);
    const auto& pd = p.impl()->data;
    for (int i = 0; i < N * N; ++i) {
      std::copy_n(pd.begin() + static_cast<std::size_t>(i) * ch, ch,
                  od.begin() + static_cast<std::size_t>(i) * total_channels + offset);
    }
    inputs.push_back(p.impl());
    offsets.push_back(offset);
    offset += ch;
  }
  auto* oi = out.impl().get();
  std::vector<TensorImpl*> raw;
  std::vector<int> widths;
  for (auto& in : inputs) {
    raw.push_back(in.get());
    widths.push_back(in->shape[2]);
  }
  maybe_record("concat_channels", std::move(inputs), out.impl(),
               [raw = std::move(raw), offsets = std::move(offsets), widths = std::move(widths), oi,
                N, total_channels] {
                 for (std::size_t p = 0; p < raw.size(); ++p) {
                   if (!needs_grad(*raw[p])) continue;
                   auto& g = raw[p]->ensure_grad();
                   const int ch = widths[p], off = offsets[p];
                   for (int i = 0; i < N * N; ++i) {
                     for (int c = 0; c < ch; ++c) {
                       g[static_cast<std::size_t>(i) * ch + c] +=
                           oi->grad[static_cast<std::size_t>(i) * total_channels + off + c];
                     }
                   }
                 }
               });
  return out;
}

}  // namespace ops

namespace {

double loss_value(const std::function<Tensor()>& loss_fn) {
  Tensor loss = loss_fn();
  if (loss.size() != 1) {
    throw ShapeError("grad_audit: loss must be scalar, got " + shape_str(loss.shape()));
  }
  return loss.item();
}

}  // namespace

AuditReport grad_audit(const std::vector<Tensor>& params,
                       const std::function<Tensor()>& loss_fn, const AuditOptions& options) {
  AuditReport report;
  if (params.empty()) return report;

  // Reference gradients from one taped pass.
  std::vector<std::vector<double>> reference(params.size());
  {
    for (const Tensor& p : params) p.impl()->grad.clear();
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = loss_fn();
    if (loss.size() != 1) {
      throw ShapeError("grad_audit: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!std::isfinite(loss.item())) throw NumericError("grad_audit: non-finite loss");
    tape.backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& g = params[i].impl()->grad;
      reference[i] = g.empty() ? std::vector<double>(params[i].impl()->data.size(), 0.0) : g;
    }
  }

  const double eps = options.eps;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor& p = params[pi];
    AuditGroup group;
    group.name = p.name().empty() ? "param" + std::to_string(pi) : p.name();

    std::vector<std::int64_t> indices(static_cast<std::size_t>(p.size()));
    std::iota(indices.begin(), indices.end(), 0);
    if (options.max_entries_per_param > 0 &&
        p.size() > options.max_entries_per_param) {
      auto rng = make_rng(derive_seed(options.subsample_seed, "audit_subsample", pi));
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(static_cast<std::size_t>(options.max_entries_per_param));
      std::sort(indices.begin(), indices.end());
    }

    auto& data = p.impl()->data;
    std::vector<double> fd;
    std::vector<std::int64_t> checked;
    fd.reserve(indices.size());
    for (std::int64_t idx : indices) {
      const double saved = data[static_cast<std::size_t>(idx)];

      detail::KinkRecorder plus_rec, minus_rec;
      data[static_cast<std::size_t>(idx)] = saved + eps;
      detail::set_kink_recorder(&plus_rec);
      double f_plus;
      try {
        f_plus = loss_value(loss_fn);
      } catch (...) {
        detail::set_kink_recorder(nullptr);
        data[static_cast<std::size_t>(idx)] = saved;
        throw;
      }
      data[static_cast<std::size_t>(idx)] = saved - eps;
      detail::set_kink_recorder(&minus_rec);
      double f_minus;
      try {
        f_minus = loss_value(loss_fn);
      } catch (...) {
        detail::set_kink_recorder(nullptr);
        data[static_cast<std::size_t>(idx)] = saved;
        throw;
      }
      detail::set_kink_recorder(nullptr);
      data[static_cast<std::size_t>(idx)] = saved;

      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw NumericError("grad_audit: non-finite loss while probing " + group.name);
      }
      if (plus_rec.hash != minus_rec.hash) {
        ++group.skipped_kinks;  // the probe interval crosses a ReLU kink
        continue;
      }
      fd.push_back((f_plus - f_minus) / (2.0 * eps));
      checked.push_back(idx);
    }

    // Relative error against the larger of the two estimates, floored by the
    // group scale so that curvature noise on near-zero entries does not
    // register as gradient error.
    double scale = 0.0;
    for (double g : reference[pi]) scale = std::max(scale, std::abs(g));
    for (double v : fd) scale = std::max(scale, std::abs(v));
    const double floor = std::max(0.1 * scale, 1e-8);
    for (std::size_t i = 0; i < checked.size(); ++i) {
      const double g = reference[pi][static_cast<std::size_t>(checked[i])];
      const double denom = std::max({std::abs(fd[i]), std::abs(g), floor});
      group.max_rel_err = std::max(group.max_rel_err, std::abs(fd[i] - g) / denom);
    }
    group.checked = static_cast<std::int64_t>(checked.size());

    report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
    report.total_checked += group.checked;
    report.total_skipped += group.skipped_kinks;
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace skelgcn
