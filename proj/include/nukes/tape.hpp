#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nukes/tensor.hpp"

namespace nukes {

class Tape;

// Handle to a tape node. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape: ops append nodes in topological order, backward() walks
// them once in reverse. One backward pass per forward pass.
class Tape {
 public:
  Var leaf(const Tensor& t, bool requires_grad = false);
  Var constant(double v) { return leaf(Tensor::scalar(v), false); }

  const Tensor& value(Var v) const { return node(v.id).val; }
  const std::vector<int>& shape(Var v) const { return node(v.id).val.shape; }

  // gradient of the last backward() target w.r.t. v (zeros if untouched)
  Tensor grad(Var v) const;

  void backward(Var scalar_loss);
  size_t size() const { return nodes_.size(); }

  // --- internal plumbing for op implementations ---
  struct Node {
    Tensor val;
    std::vector<double> grad;  // lazily sized
    std::vector<int> parents;
    std::function<void(Tape&, int)> backward;
    bool requires_grad = false;
  };

  int push(Tensor val, std::vector<int> parents, std::function<void(Tape&, int)> bw);
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  // grad buffer of a node, allocated and zeroed on first use; nullptr when the
  // node does not require gradients
  double* grad_buf(int id);

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------- primitive ops ----------------
// Elementwise ops broadcast a single-element operand against any shape.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divide(Var a, Var b);
Var scale(Var a, double c);
Var add_const(Var a, double c);

Var matmul(Var a, Var b);     // [m,k] x [k,n]
Var transpose(Var a);         // [m,n] -> [n,m]

// per-position linear map over the last dim; bias optional (pass invalid Var)
Var linear(Var x, Var w, Var b = Var{});

// depthwise 2-d convolution, reflect padding, odd kernel;
// shared kernel [kh,kw] applied to every channel, or per-channel [C,kh,kw]
Var depthwise_conv_shared(Var x, Var kernel);
Var depthwise_conv(Var x, Var kernel);

// 1-d convolution along the channel axis: w [O,k], b [O], zero padded;
// output channels grouped as o*C + c
Var spectral_conv(Var x, Var w, Var b);

Var softmax_cols(Var s);  // [m,n], each column sums to 1

Var sigmoid(Var a);
Var softplus_op(Var a);
Var gelu(Var a);
Var exp_op(Var a);
Var log_op(Var a);
Var sin_op(Var a);
Var cos_op(Var a);
Var acos_op(Var a);
Var power(Var a, double e);
Var clamp_op(Var a, double lo, double hi);

Var reduce_sum(Var a);
Var reduce_mean(Var a);

Var slice_channels(Var x, int c0, int c1);  // half-open over last dim
Var concat_channels(const std::vector<Var>& xs);

Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);

Var avg_pool2(Var x);   // [H,W,C] -> [H/2,W/2,C]
Var upsample2(Var x);   // [H,W,C] -> [2H,2W,C], nearest
Var mean_spatial(Var x);  // [H,W,C] -> [C]

Var reshape(Var x, std::vector<int> new_shape);
Var cumsum(Var x);  // 1-d

// differentiable pixel gather: rows of (row,col) indices -> [n, C]
Var gather_pixels(Var x, const std::vector<std::pair<int, int>>& idx);

// rational B-spline activation applied elementwise; gradients flow to x,
// knots, control points and weights
Var spline_rational(Var x, Var knots, Var ctrl, Var wts, int degree);

// clamped knot vector from raw increments: softplus-cumsum of the increments
// rescaled to span exactly [-radius, radius], end knots repeated degree+1 times
Var ncpg_knots_on_tape(Tape& t, Var raw_increments, int degree, double radius);

// ---------------- gradient checking ----------------

using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  int worst_input = -1;
  int64_t worst_coord = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  int64_t coords_checked = 0;
};

// central finite differences vs tape backward; f must be scalar-valued
GradCheckReport grad_check(const TapeFn& f, const std::vector<Tensor>& inputs, double h = 1e-5,
                           double tol = 1e-4);

// ---------------- op self-check registry ----------------

struct OpCheck {
  std::string name;
  std::function<GradCheckReport(uint64_t seed)> run;
};

const std::vector<OpCheck>& op_registry();
void register_op_check(const std::string& name, std::function<GradCheckReport(uint64_t)> run);

// ---------------- parameters and Adam ----------------

struct Param {
  std::string name;
  Tensor value;
};

class ParamGroup {
 public:
  explicit ParamGroup(std::string name) : name_(std::move(name)) {}
  ParamGroup(const ParamGroup&) = delete;
  ParamGroup& operator=(const ParamGroup&) = delete;

  Param* add(const std::string& name, Tensor init);
  const std::string& name() const { return name_; }
  const std::vector<std::unique_ptr<Param>>& params() const { return params_; }
  int64_t count() const;
  Param* find(const std::string& name) const;

 private:
  std::string name_;
  std::vector<std::unique_ptr<Param>> params_;
};

// Inserts parameters as tape leaves, one leaf per Param even when bound twice
// (weight sharing accumulates gradients on the shared node). A frozen binder
// inserts leaves without gradients; gradient still flows through the ops they
// feed, just not into the parameters.
class Binder {
 public:
  explicit Binder(Tape& tape, bool requires_grad = true)
      : tape_(&tape), requires_grad_(requires_grad) {}
  Var operator()(Param* p);
  // use an existing Var for this parameter (gradient-check plumbing)
  void set_override(Param* p, Var v) { overrides_.push_back({p, v}); }
  const std::vector<std::pair<Param*, Var>>& bound() const { return bound_; }

 private:
  Tape* tape_;
  bool requires_grad_;
  std::vector<std::pair<Param*, Var>> bound_;
  std::vector<std::pair<Param*, Var>> overrides_;
};

double cosine_lr(double lr_init, int64_t t, int64_t horizon);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lr_init = 2e-4;
  double eps = 1e-8;
  int64_t horizon = 1;  // cosine schedule T
  int64_t step_count = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  void attach(const std::vector<ParamGroup*>& groups);
  // applies one update from the tape gradients recorded by the binder
  void step(const Tape& tape, const Binder& binder);

 private:
  std::vector<Param*> order_;
};

}  // namespace nukes
