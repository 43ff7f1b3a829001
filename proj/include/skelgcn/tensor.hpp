#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "skelgcn/error.hpp"

namespace skelgcn {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward reaches this tensor
  bool requires_grad = false;
  bool from_op = false;  // produced by a recorded op, so gradient must flow through
  std::string name;

  std::vector<double>& ensure_grad();
};

// Records ReLU input signs during audit probe passes so that central
// differences straddling a kink can be excluded from the report.
struct KinkRecorder {
  std::uint64_t hash = 1469598103934665603ull;
  void feed(bool positive) {
    hash ^= positive ? 0x9e3779b97f4a7c15ull : 0x2545f4914f6cdd1dull;
    hash *= 1099511628211ull;
  }
};

KinkRecorder* active_kink_recorder();
void set_kink_recorder(KinkRecorder* recorder);

}  // namespace detail

// Dense row-major tensor of doubles with shared-buffer value semantics.
// Copies alias the same storage; detached()/clone() make independent buffers.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const;
  int extent(int axis) const;
  std::int64_t size() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double at(std::initializer_list<int> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad();
  void zero_grad();

  const std::string& name() const;
  Tensor& set_name(std::string name);

  // Value copy with no gradient flag and no tape linkage.
  Tensor detached() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Wengert list. Ops executed while a Scope is active append one node each,
// in execution order, so inputs always precede the nodes that consume them.
// backward() sweeps the list exactly once in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* active();

  void backward(const Tensor& loss);
  std::size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void record(const char* op, std::vector<std::shared_ptr<detail::TensorImpl>> inputs,
              std::shared_ptr<detail::TensorImpl> output, std::function<void()> backprop);

 private:
  struct Node {
    const char* op;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void()> backprop;
  };
  std::vector<Node> nodes_;
};

namespace ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Inserts an axis of the given extent at `axis`, replicating the input along
// it. Gradient sums over the inserted axis.
Tensor repeat_axis(const Tensor& x, int axis, int copies);
Tensor mean_over_axis(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
Tensor l2_normalize(const Tensor& x);

// out[n,t,c] = sum_m adj[n,m,c] * feat[m,t,c]
Tensor channelwise_graph_apply(const Tensor& adj, const Tensor& feat);

// Per-channel 1-D convolution along the frame axis with zero padding.
// x: N x T x C, kernel: C x k (k odd), bias: C.
Tensor depthwise_conv_time(const Tensor& x, const Tensor& kernel, const Tensor& bias);

// Mean of -log softmax(logits_row)[label] over the batch. logits: B x c.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Stacks B tensors of shape 1 x c into B x c.
Tensor concat_rows(const std::vector<Tensor>& rows);

// Concatenates N x N x C_h blocks along the channel axis and zero-pads up to
// total_channels. Gradient into the padding is dropped.
Tensor concat_channels(const std::vector<Tensor>& parts, int total_channels);

}  // namespace ops

struct AuditOptions {
  double eps = 1e-3;
  // 0 audits every scalar; otherwise a deterministic subsample per tensor.
  std::int64_t max_entries_per_param = 0;
  std::uint64_t subsample_seed = 0x5eedau;
};

struct AuditGroup {
  std::string name;
  std::int64_t checked = 0;
  std::int64_t skipped_kinks = 0;
  double max_rel_err = 0.0;
};

struct AuditReport {
  std::vector<AuditGroup> groups;
  double max_rel_err = 0.0;
  std::int64_t total_checked = 0;
  std::int64_t total_skipped = 0;
};

// Compares backprop gradients of `loss_fn` against central finite differences
// for every scalar of every parameter. loss_fn must rebuild the forward pass
// from the current parameter values and return a scalar tensor. Probe passes
// whose ReLU sign pattern differs between theta+eps and theta-eps are skipped
// (the central difference straddles a kink there).
AuditReport grad_audit(const std::vector<Tensor>& params,
                       const std::function<Tensor()>& loss_fn, const AuditOptions& options = {});

}  // namespace skelgcn
