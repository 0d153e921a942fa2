#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "layerpool/rng.hpp"
#include "layerpool/tensor.hpp"

namespace layerpool {

/// A trainable tensor with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool decay = true)
      : name(std::move(name)), value(std::move(value)), grad(this->value.shape()), decay(decay) {}

  void zero_grad() { grad = Tensor(value.shape()); }

  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;      // participates in the L2 penalty
  std::size_t slot = 0;   // index into a gradient sink, assigned by the owning model
};

class Tape;

/// Handle to a value recorded on a Tape. Invalidated when the tape is cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id, std::uint64_t generation) : tape_(tape), id_(id), generation_(generation) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
  std::uint64_t generation_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in execution order, which
/// is a topological order, and replayed backwards by `backward`.
///
/// Gradients of parameter leaves land in `Parameter::grad`, or in
/// `(*sink)[param.slot]` when the tape was built with a sink. The sink form
/// lets several tapes run concurrently against shared read-only parameters.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(std::vector<Tensor>* sink = nullptr) : sink_(sink) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter. Repeated calls return the same node.
  Var parameter(Parameter& p);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(const Var& v) const;
  bool requires_grad(const Var& v) const;
  /// Gradient buffer of an input, zero-initialised on first use. Returns
  /// nullptr for inputs that do not require a gradient.
  Tensor* grad_target(const Var& v);

  /// Propagate d(loss)/d(node) to every node and parameter, then clear.
  void backward(const Var& loss);
  void clear();
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  void check(const Var& v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> leaves_;
  std::vector<Tensor>* sink_;
  std::uint64_t generation_ = 1;
};

// ---- differentiable operations -------------------------------------------
// All inputs must live on the same tape. Rank-1 tensors act as single rows.

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, Real c);
/// x[m x n] + bias[n] broadcast over rows. The only broadcast supported.
Var add_bias(const Var& x, const Var& bias);

Var sigmoid(const Var& x);
Var tanh(const Var& x);
/// Exact erf-based GELU.
Var gelu(const Var& x);

/// Softmax along the last axis, computed with max subtraction. When
/// `key_mask` is non-empty it has one entry per column; columns with mask 0
/// get probability exactly 0 and no gradient.
Var softmax(const Var& x, std::span<const std::uint8_t> key_mask = {});

/// Row-wise layer normalisation with affine gamma/beta of length cols.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps = 1e-12);

/// Gathers rows of `table` [V x H]; ids out of range throw IndexError.
Var embedding(const Var& table, std::span<const std::int32_t> ids);

/// Inverted dropout: keeps each entry with probability 1-p and scales it by
/// 1/(1-p). p == 0 is the identity.
Var dropout(const Var& x, Real p, Rng& rng);

Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var select_row(const Var& x, std::size_t r);
Var stack_rows(std::span<const Var> rows);

Var sum(const Var& x);
Var sum_squares(const Var& x);

/// -(1/B) sum_b log(max(probs[b, label_b], 1e-12)).
Var cross_entropy(const Var& probs, std::span<const std::int32_t> labels);

inline constexpr Real kLogClamp = 1e-12;

}  // namespace layerpool
