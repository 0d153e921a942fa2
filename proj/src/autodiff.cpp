#include "layerpool/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "layerpool/kernels.hpp"

namespace layerpool {

// ---- Var / Tape -------------------------------------------------------------

const Tensor& Var::value() const { return tape().value(*this); }

Tape& Var::tape() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return *tape_;
}

void Tape::check(const Var& v) const {
  if (v.tape_ != this) throw ContractError("Var belongs to a different tape");
  if (v.generation_ != generation_ || v.id_ >= nodes_.size()) {
    throw ContractError("Var used after its tape was cleared");
  }
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::parameter(Parameter& p) {
  if (auto it = leaves_.find(&p); it != leaves_.end()) return Var(this, it->second, generation_);
  nodes_.push_back(Node{p.value, {}, true, {}, &p});
  leaves_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Var& in : inputs) {
    check(in);
    needs = needs || nodes_[in.id_].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}, nullptr});
  return Var(this, nodes_.size() - 1, generation_);
}

const Tensor& Tape::value(const Var& v) const {
  check(v);
  return nodes_[v.id_].value;
}

bool Tape::requires_grad(const Var& v) const {
  check(v);
  return nodes_[v.id_].requires_grad;
}

Tensor* Tape::grad_target(const Var& v) {
  check(v);
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

void Tape::backward(const Var& loss) {
  check(loss);
  Node& root = nodes_[loss.id_];
  if (root.value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + to_string(root.value.shape()));
  }
  if (root.requires_grad) {
    root.grad = Tensor(root.value.shape(), 1.0);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        Tensor& dst = sink_ ? (*sink_)[n.param->slot] : n.param->grad;
        if (dst.size() != n.grad.size()) dst = Tensor(n.param->value.shape());
        dst += n.grad;
      }
    }
  }
  clear();
}

void Tape::clear() {
  nodes_.clear();
  leaves_.clear();
  ++generation_;
}

// ---- operations ---------------------------------------------------------------

namespace {

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = a.tape();
  if (&b.tape() != &t) throw ContractError("operands live on different tapes");
  return t;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& a) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("matmul", av);
  require_matrix("matmul", bv);
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ for " + to_string(av.shape()) + " and " +
                     to_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  kernels::gemm_nn(av.values(), bv.values(), out.values(), m, k, n);
  return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& tp, const Tensor& g) {
    if (Tensor* ga = tp.grad_target(a)) {
      Tensor tmp({m, k});
      kernels::gemm_nt(g.values(), tp.value(b).values(), tmp.values(), m, n, k);
      *ga += tmp;
    }
    if (Tensor* gb = tp.grad_target(b)) {
      Tensor tmp({k, n});
      kernels::gemm_tn(tp.value(a).values(), g.values(), tmp.values(), k, m, n);
      *gb += tmp;
    }
  });
}

Var transpose(const Var& a) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  require_matrix("transpose", av);
  return t.record(av.transposed(), {a}, [a](Tape& tp, const Tensor& g) {
    if (Tensor* ga = tp.grad_target(a)) *ga += g.transposed();
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out += b.value();
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (Tensor* ga = tp.grad_target(a)) *ga += g;
    if (Tensor* gb = tp.grad_target(b)) *gb += g;
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_same_shape("sub", a.value(), b.value());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (Tensor* ga = tp.grad_target(a)) *ga += g;
    if (Tensor* gb = tp.grad_target(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  require_same_shape("mul", a.value(), b.value());
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (Tensor* ga = tp.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    if (Tensor* gb = tp.grad_target(b))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
  });
}

Var scale(const Var& a, Real c) {
  Tape& t = a.tape();
  Tensor out = a.value();
  for (Real& v : out.values()) v *= c;
  return t.record(std::move(out), {a}, [a, c](Tape& tp, const Tensor& g) {
    if (Tensor* ga = tp.grad_target(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += c * g[i];
  });
}

Var add_bias(const Var& x, const Var& bias) {
  Tape& t = common_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols()) {
    throw ShapeError("add_bias: bias " + to_string(bv.shape()) + " does not match columns of " +
                     to_string(xv.shape()));
  }
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor out = xv;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bv[j];
  return t.record(std::move(out), {x, bias}, [x, bias, r, c](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_target(x)) *gx += g;
    if (Tensor* gb = tp.grad_target(bias))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g[i * c + j];
  });
}

Var sigmoid(const Var& x) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  Tensor y = out;
  return t.record(std::move(out), {x}, [x, y = std::move(y)](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_target(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(const Var& x) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
  Tensor y = out;
  return t.record(std::move(out), {x}, [x, y = std::move(y)](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_target(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var gelu(const Var& x) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  }
  return t.record(std::move(out), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad_target(x);
    if (!gx) return;
    const Tensor& xv = tp.value(x);
    const Real inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real v = xv[i];
      const Real cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const Real pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*gx)[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var softmax(const Var& x, std::span<const std::uint8_t> key_mask) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (!key_mask.empty() && key_mask.size() != c) {
    throw ShapeError("softmax: mask length " + std::to_string(key_mask.size()) + " vs " +
                     std::to_string(c) + " columns");
  }
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
  auto live = [&mask](std::size_t j) { return mask.empty() || mask[j] != 0; };
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = xv.values().data() + i * c;
    Real* o = out.values().data() + i * c;
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (live(j)) mx = std::max(mx, row[j]);
    Real total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = live(j) ? std::exp(row[j] - mx) : 0.0;
      total += o[j];
    }
    if (total > 0.0)
      for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  Tensor y = out;
  return t.record(std::move(out), {x}, [x, y = std::move(y), r, c](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad_target(x);
    if (!gx) return;
    for (std::size_t i = 0; i < r; ++i) {
      Real dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, Real eps) {
  Tape& t = common_tape(x, gamma);
  common_tape(x, beta);
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(c) + " entries");
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor xhat(xv.shape());
  std::vector<Real> rstd(r);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < r; ++i) {
    const Real* row = xv.values().data() + i * c;
    Real mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<Real>(c);
    Real var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<Real>(c);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mean) * rstd[i];
      out[i * c + j] = gv[j] * xhat[i * c + j] + bv[j];
    }
  }
  return t.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd), r, c](
                      Tape& tp, const Tensor& g) {
                    const Tensor& gv = tp.value(gamma);
                    if (Tensor* gg = tp.grad_target(gamma))
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) (*gg)[j] += g[i * c + j] * xhat[i * c + j];
                    if (Tensor* gb = tp.grad_target(beta))
                      for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < c; ++j) (*gb)[j] += g[i * c + j];
                    Tensor* gx = tp.grad_target(x);
                    if (!gx) return;
                    const Real inv_c = 1.0 / static_cast<Real>(c);
                    for (std::size_t i = 0; i < r; ++i) {
                      Real mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t j = 0; j < c; ++j) {
                        const Real d = g[i * c + j] * gv[j];
                        mean_d += d;
                        mean_dx += d * xhat[i * c + j];
                      }
                      mean_d *= inv_c;
                      mean_dx *= inv_c;
                      for (std::size_t j = 0; j < c; ++j) {
                        const Real d = g[i * c + j] * gv[j];
                        (*gx)[i * c + j] += rstd[i] * (d - mean_d - xhat[i * c + j] * mean_dx);
                      }
                    }
                  });
}

Var embedding(const Var& table, std::span<const std::int32_t> ids) {
  Tape& t = table.tape();
  const Tensor& tv = table.value();
  require_matrix("embedding", tv);
  const std::size_t vocab = tv.rows(), h = tv.cols();
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  Tensor out({idx.size(), h});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= vocab) {
      throw IndexError("embedding: id " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.values().data() + idx[i] * h, h, out.values().data() + i * h);
  }
  return t.record(std::move(out), {table}, [table, idx = std::move(idx), h](Tape& tp, const Tensor& g) {
    Tensor* gt = tp.grad_target(table);
    if (!gt) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < h; ++j) (*gt)[idx[i] * h + j] += g[i * h + j];
  });
}

Var dropout(const Var& x, Real p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout rate must lie in [0, 1)");
  if (p == 0.0) return x;
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  Tensor keep(xv.shape());
  const Real s = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = rng.uniform() >= p ? s : 0.0;
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * keep[i];
  return t.record(std::move(out), {x}, [x, keep = std::move(keep)](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_target(x))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * keep[i];
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (begin > end || end > c) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + std::to_string(c) + " columns");
  }
  const std::size_t w = end - begin;
  Tensor out({r, w});
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xv.values().data() + i * c + begin, w, out.values().data() + i * w);
  return t.record(std::move(out), {x}, [x, begin, w, r, c](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_target(x))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) (*gx)[i * c + begin + j] += g[i * w + j];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = parts.front().tape();
  const std::size_t r = parts.front().value().rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != r) throw ShapeError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.value().cols();
  }
  Tensor out({r, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    const std::size_t w = pv.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(pv.values().data() + i * w, w, out.values().data() + i * total + offsets[k]);
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [inputs, offsets, r, total](Tape& tp, const Tensor& g) {
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      Tensor* gp = tp.grad_target(inputs[k]);
      if (!gp) continue;
      const std::size_t w = gp->cols();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) (*gp)[i * w + j] += g[i * total + offsets[k] + j];
    }
  });
}

Var select_row(const Var& x, std::size_t row) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  if (row >= xv.rows()) {
    throw IndexError("select_row: row " + std::to_string(row) + " of " + std::to_string(xv.rows()));
  }
  const std::size_t c = xv.cols();
  Tensor out = Tensor::row(xv.row_span(row));
  return t.record(std::move(out), {x}, [x, row, c](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_target(x))
      for (std::size_t j = 0; j < c; ++j) (*gx)[row * c + j] += g[j];
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw ContractError("stack_rows: no inputs");
  Tape& t = rows.front().tape();
  const std::size_t c = rows.front().value().size();
  Tensor out({rows.size(), c});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& rv = rows[i].value();
    if (rv.size() != c) throw ShapeError("stack_rows: vectors differ in length");
    std::copy(rv.values().begin(), rv.values().end(), out.values().begin() + i * c);
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return t.record(std::move(out), rows, [inputs, c](Tape& tp, const Tensor& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (Tensor* gr = tp.grad_target(inputs[i]))
        for (std::size_t j = 0; j < c; ++j) (*gr)[j] += g[i * c + j];
  });
}

Var sum(const Var& x) {
  Tape& t = x.tape();
  Real s = 0.0;
  for (Real v : x.value().values()) s += v;
  return t.record(Tensor::scalar(s), {x}, [x](Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_target(x))
      for (Real& v : gx->values()) v += g[0];
  });
}

Var sum_squares(const Var& x) {
  Tape& t = x.tape();
  Real s = 0.0;
  for (Real v : x.value().values()) s += v * v;
  return t.record(Tensor::scalar(s), {x}, [x](Tape& tp, const Tensor& g) {
    Tensor* gx = tp.grad_target(x);
    if (!gx) return;
    const Tensor& xv = tp.value(x);
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += 2.0 * xv[i] * g[0];
  });
}

Var cross_entropy(const Var& probs, std::span<const std::int32_t> labels) {
  Tape& t = probs.tape();
  const Tensor& pv = probs.value();
  const std::size_t b = pv.rows(), c = pv.cols();
  if (labels.size() != b) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(b) + " rows");
  }
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  Real loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= c) {
      throw IndexError("cross_entropy: label " + std::to_string(lab[i]) + " outside [0, " +
                       std::to_string(c) + ")");
    }
    loss -= std::log(std::max(pv[i * c + lab[i]], kLogClamp));
  }
  loss /= static_cast<Real>(b);
  return t.record(Tensor::scalar(loss), {probs}, [probs, lab = std::move(lab), b, c](Tape& tp, const Tensor& g) {
    Tensor* gp = tp.grad_target(probs);
    if (!gp) return;
    const Tensor& pv = tp.value(probs);
    for (std::size_t i = 0; i < b; ++i) {
      const Real p = pv[i * c + lab[i]];
      if (p > kLogClamp) (*gp)[i * c + lab[i]] -= g[0] / (static_cast<Real>(b) * p);
    }
  });
}

}  // namespace layerpool
