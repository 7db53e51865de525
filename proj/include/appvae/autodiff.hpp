#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "appvae/errors.hpp"
#include "appvae/rng.hpp"
#include "appvae/util.hpp"

namespace appvae {

// A named trainable array (row-major rows x cols) with its gradient slot and
// Adam state. Addresses are stable: ParameterStore hands out Param* that stay
// valid for the store's lifetime.
struct Param {
  std::string name;
  int rows = 0;
  int cols = 1;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  std::int64_t adam_t = 0;

  int size() const { return rows * cols; }
};

class ParameterStore {
 public:
  // Weight init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); fan_in defaults
  // to the input dimension (cols).
  Param& add_weight(const std::string& name, int rows, int cols, SplitMix64& rng,
                    int fan_in = -1) {
    Param& p = add_raw(name, rows, cols);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : cols));
    for (double& v : p.value) v = (2.0 * rng.uniform() - 1.0) * bound;
    return p;
  }

  Param& add_zeros(const std::string& name, int rows, int cols = 1) {
    return add_raw(name, rows, cols);
  }

  Param& add_raw(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw ValidationError("duplicate parameter: " + name);
    if (rows < 1 || cols < 1) throw ValidationError("parameter shape must be positive: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->rows = rows;
    p->cols = cols;
    p->value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    p->grad.assign(p->value.size(), 0.0);
    p->adam_m.assign(p->value.size(), 0.0);
    p->adam_v.assign(p->value.size(), 0.0);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Param& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Param& get(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->get(name);
  }

  // Registration order; deterministic, used for checkpoints and init.
  const std::vector<std::unique_ptr<Param>>& params() const { return params_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  }

  double grad_global_norm() const {
    double s = 0.0;
    for (const auto& p : params_)
      for (double g : p->grad) s += g * g;
    return std::sqrt(s);
  }

  void clip_grads_global_norm(double max_norm) {
    const double norm = grad_global_norm();
    if (norm <= max_norm || norm == 0.0) return;
    const double scale = max_norm / norm;
    for (auto& p : params_)
      for (double& g : p->grad) g *= scale;
  }

  // Bias-corrected Adam update; gradients are left untouched (callers zero
  // them between batches).
  void adam_step(double lr, double beta1, double beta2, double eps) {
    for (auto& p : params_) {
      p->adam_t += 1;
      const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p->adam_t));
      const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p->adam_t));
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double g = p->grad[i];
        p->adam_m[i] = beta1 * p->adam_m[i] + (1.0 - beta1) * g;
        p->adam_v[i] = beta2 * p->adam_v[i] + (1.0 - beta2) * g * g;
        const double m_hat = p->adam_m[i] / bc1;
        const double v_hat = p->adam_v[i] / bc2;
        p->value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
    }
  }

  std::vector<std::vector<double>> snapshot_values() const {
    std::vector<std::vector<double>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p->value);
    return out;
  }

  void restore_values(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != params_.size()) throw ValidationError("snapshot shape mismatch");
    for (std::size_t i = 0; i < snap.size(); ++i) {
      if (snap[i].size() != params_[i]->value.size())
        throw ValidationError("snapshot shape mismatch for " + params_[i]->name);
      params_[i]->value = snap[i];
    }
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, std::size_t> index_;
};

// Define-by-run tape over vector values. Forward values are computed eagerly
// as operations are recorded; backward() walks the record once in reverse.
// Parameters enter either as linear/matvec operands (gradients accumulate
// straight into Param::grad) or as leaf nodes.
class Tape {
 public:
  using Id = int;

  enum class Op {
    kConst,
    kLeaf,
    kLinear,   // W x + b
    kMatvec,   // W x
    kAdd,
    kSub,
    kMul,
    kAffine,   // c0 * x + c1
    kRelu,
    kTanh,
    kSigmoid,
    kSoftplus,
    kExp,
    kSoftmax,
    kLogSoftmax,
    kConcat,
    kSum,
    kPick,
    kClamp,
    kLog1mExp,  // log(1 - exp(-u)), u > 0
  };

  Id constant(std::vector<double> v) {
    Node n;
    n.op = Op::kConst;
    n.val = std::move(v);
    return push(std::move(n));
  }

  Id leaf(Param& p) {
    Node n;
    n.op = Op::kLeaf;
    n.param = &p;
    n.val = p.value;
    return push(std::move(n));
  }

  Id linear(Param& w, Param& b, Id x) {
    check_shape(w.cols == static_cast<int>(val(x).size()), "linear: W cols vs x");
    check_shape(b.rows == w.rows && b.cols == 1, "linear: bias shape");
    Node n;
    n.op = Op::kLinear;
    n.a = x;
    n.param = &w;
    n.bias = &b;
    n.val = b.value;
    matvec_accum(w, val(x), n.val);
    return push(std::move(n));
  }

  Id matvec(Param& w, Id x) {
    check_shape(w.cols == static_cast<int>(val(x).size()), "matvec: W cols vs x");
    Node n;
    n.op = Op::kMatvec;
    n.a = x;
    n.param = &w;
    n.val.assign(w.rows, 0.0);
    matvec_accum(w, val(x), n.val);
    return push(std::move(n));
  }

  Id add(Id a, Id b) { return binary(Op::kAdd, a, b); }
  Id sub(Id a, Id b) { return binary(Op::kSub, a, b); }
  Id mul(Id a, Id b) { return binary(Op::kMul, a, b); }

  Id affine(Id a, double scale, double shift) {
    Node n;
    n.op = Op::kAffine;
    n.a = a;
    n.c0 = scale;
    n.c1 = shift;
    n.val = val(a);
    for (double& v : n.val) v = scale * v + shift;
    return push(std::move(n));
  }

  Id scale(Id a, double s) { return affine(a, s, 0.0); }
  Id neg(Id a) { return affine(a, -1.0, 0.0); }

  Id relu(Id a) { return unary(Op::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; }); }
  Id tanh_(Id a) { return unary(Op::kTanh, a, [](double x) { return std::tanh(x); }); }
  Id sigmoid(Id a) {
    return unary(Op::kSigmoid, a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  }
  Id softplus(Id a) {
    return unary(Op::kSoftplus, a,
                 [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  }
  Id exp_(Id a) { return unary(Op::kExp, a, [](double x) { return std::exp(x); }); }

  Id softmax(Id a) {
    Node n;
    n.op = Op::kSoftmax;
    n.a = a;
    n.val = val(a);
    const double m = *std::max_element(n.val.begin(), n.val.end());
    double s = 0.0;
    for (double& v : n.val) {
      v = std::exp(v - m);
      s += v;
    }
    for (double& v : n.val) v /= s;
    return push(std::move(n));
  }

  Id log_softmax(Id a) {
    Node n;
    n.op = Op::kLogSoftmax;
    n.a = a;
    n.val = val(a);
    const double m = *std::max_element(n.val.begin(), n.val.end());
    double s = 0.0;
    for (double v : n.val) s += std::exp(v - m);
    const double lse = m + std::log(s);
    for (double& v : n.val) v -= lse;
    return push(std::move(n));
  }

  Id concat(Id a, Id b) {
    Node n;
    n.op = Op::kConcat;
    n.a = a;
    n.b = b;
    n.val = val(a);
    n.val.insert(n.val.end(), val(b).begin(), val(b).end());
    return push(std::move(n));
  }

  Id sum(Id a) {
    Node n;
    n.op = Op::kSum;
    n.a = a;
    double s = 0.0;
    for (double v : val(a)) s += v;
    n.val = {s};
    return push(std::move(n));
  }

  Id pick(Id a, int index) {
    check_shape(index >= 0 && index < static_cast<int>(val(a).size()), "pick: index range");
    Node n;
    n.op = Op::kPick;
    n.a = a;
    n.k = index;
    n.val = {val(a)[index]};
    return push(std::move(n));
  }

  // Hard clamp; gradient is passed through strictly inside the bounds.
  Id clamp(Id a, double lo, double hi) {
    Node n;
    n.op = Op::kClamp;
    n.a = a;
    n.c0 = lo;
    n.c1 = hi;
    n.val = val(a);
    for (double& v : n.val) v = std::min(std::max(v, lo), hi);
    return push(std::move(n));
  }

  Id log1mexp(Id a) {
    Node n;
    n.op = Op::kLog1mExp;
    n.a = a;
    n.val = val(a);
    for (double& v : n.val) v = appvae::log1mexp(v);
    return push(std::move(n));
  }

  Id one_hot(int index, int size) {
    if (index < 0 || index >= size) throw ValidationError("one_hot index out of range");
    std::vector<double> v(size, 0.0);
    v[index] = 1.0;
    return constant(std::move(v));
  }

  const std::vector<double>& val(Id id) const { return nodes_[check_id(id)].val; }
  double scalar(Id id) const {
    const auto& v = val(id);
    check_shape(v.size() == 1, "scalar: node is not size 1");
    return v[0];
  }

  // Reverse accumulation from a scalar output. Parameter gradients are
  // accumulated (+=) into their stores; call repeatedly to sum gradients of
  // several outputs recorded on this tape.
  void backward(Id output, double seed_grad = 1.0) {
    const std::size_t out = check_id(output);
    check_shape(nodes_[out].val.size() == 1, "backward: output must be scalar");
    for (auto& n : nodes_) n.adj.assign(n.val.size(), 0.0);
    nodes_[out].adj[0] = seed_grad;
    for (std::size_t i = nodes_.size(); i-- > 0;) backprop_node(nodes_[i]);
  }

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Smallest distance of any relu or clamp input to its kink. Central
  // differences are only trustworthy when this margin comfortably exceeds the
  // probe epsilon; gradient checks scan seeds until it does.
  double kink_margin() const {
    double margin = std::numeric_limits<double>::infinity();
    for (const Node& n : nodes_) {
      if (n.op == Op::kRelu) {
        for (double v : nodes_[n.a].val) margin = std::min(margin, std::abs(v));
      } else if (n.op == Op::kClamp) {
        for (double v : nodes_[n.a].val)
          margin = std::min({margin, std::abs(v - n.c0), std::abs(v - n.c1)});
      }
    }
    return margin;
  }

 private:
  struct Node {
    Op op = Op::kConst;
    Id a = -1;
    Id b = -1;
    Param* param = nullptr;
    Param* bias = nullptr;
    double c0 = 0.0;
    double c1 = 0.0;
    int k = 0;
    std::vector<double> val;
    std::vector<double> adj;
  };

  static void check_shape(bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("shape mismatch: ") + what);
  }

  std::size_t check_id(Id id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw ValidationError("tape id out of range");
    return static_cast<std::size_t>(id);
  }

  static void matvec_accum(const Param& w, const std::vector<double>& x,
                           std::vector<double>& out) {
    for (int r = 0; r < w.rows; ++r) {
      const double* row = w.value.data() + static_cast<std::size_t>(r) * w.cols;
      double acc = 0.0;
      for (int c = 0; c < w.cols; ++c) acc += row[c] * x[c];
      out[r] += acc;
    }
  }

  Id push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id binary(Op op, Id a, Id b) {
    check_shape(val(a).size() == val(b).size(), "elementwise: operand lengths");
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.val = val(a);
    const auto& vb = val(b);
    for (std::size_t i = 0; i < n.val.size(); ++i) {
      if (op == Op::kAdd) n.val[i] += vb[i];
      else if (op == Op::kSub) n.val[i] -= vb[i];
      else n.val[i] *= vb[i];
    }
    return push(std::move(n));
  }

  template <class F>
  Id unary(Op op, Id a, F f) {
    Node n;
    n.op = op;
    n.a = a;
    n.val = val(a);
    for (double& v : n.val) v = f(v);
    return push(std::move(n));
  }

  void backprop_node(Node& n) {
    bool any = false;
    for (double g : n.adj)
      if (g != 0.0) {
        any = true;
        break;
      }
    if (!any) return;
    switch (n.op) {
      case Op::kConst:
        break;
      case Op::kLeaf:
        for (std::size_t i = 0; i < n.adj.size(); ++i) n.param->grad[i] += n.adj[i];
        break;
      case Op::kLinear:
      case Op::kMatvec: {
        auto& x = nodes_[n.a];
        Param& w = *n.param;
        for (int r = 0; r < w.rows; ++r) {
          const double g = n.adj[r];
          if (g == 0.0) continue;
          double* wg = w.grad.data() + static_cast<std::size_t>(r) * w.cols;
          const double* wv = w.value.data() + static_cast<std::size_t>(r) * w.cols;
          for (int c = 0; c < w.cols; ++c) {
            wg[c] += g * x.val[c];
            x.adj[c] += wv[c] * g;
          }
          if (n.op == Op::kLinear) n.bias->grad[r] += g;
        }
        break;
      }
      case Op::kAdd:
        for (std::size_t i = 0; i < n.adj.size(); ++i) {
          nodes_[n.a].adj[i] += n.adj[i];
          nodes_[n.b].adj[i] += n.adj[i];
        }
        break;
      case Op::kSub:
        for (std::size_t i = 0; i < n.adj.size(); ++i) {
          nodes_[n.a].adj[i] += n.adj[i];
          nodes_[n.b].adj[i] -= n.adj[i];
        }
        break;
      case Op::kMul:
        for (std::size_t i = 0; i < n.adj.size(); ++i) {
          nodes_[n.a].adj[i] += n.adj[i] * nodes_[n.b].val[i];
          nodes_[n.b].adj[i] += n.adj[i] * nodes_[n.a].val[i];
        }
        break;
      case Op::kAffine:
        for (std::size_t i = 0; i < n.adj.size(); ++i) nodes_[n.a].adj[i] += n.c0 * n.adj[i];
        break;
      case Op::kRelu:
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          if (nodes_[n.a].val[i] > 0.0) nodes_[n.a].adj[i] += n.adj[i];
        break;
      case Op::kTanh:
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          nodes_[n.a].adj[i] += n.adj[i] * (1.0 - n.val[i] * n.val[i]);
        break;
      case Op::kSigmoid:
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          nodes_[n.a].adj[i] += n.adj[i] * n.val[i] * (1.0 - n.val[i]);
        break;
      case Op::kSoftplus:
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          nodes_[n.a].adj[i] += n.adj[i] / (1.0 + std::exp(-nodes_[n.a].val[i]));
        break;
      case Op::kExp:
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          nodes_[n.a].adj[i] += n.adj[i] * n.val[i];
        break;
      case Op::kSoftmax: {
        double dot = 0.0;
        for (std::size_t i = 0; i < n.adj.size(); ++i) dot += n.adj[i] * n.val[i];
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          nodes_[n.a].adj[i] += n.val[i] * (n.adj[i] - dot);
        break;
      }
      case Op::kLogSoftmax: {
        double s = 0.0;
        for (double g : n.adj) s += g;
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          nodes_[n.a].adj[i] += n.adj[i] - std::exp(n.val[i]) * s;
        break;
      }
      case Op::kConcat: {
        const std::size_t na = nodes_[n.a].val.size();
        for (std::size_t i = 0; i < na; ++i) nodes_[n.a].adj[i] += n.adj[i];
        for (std::size_t i = 0; i < nodes_[n.b].val.size(); ++i)
          nodes_[n.b].adj[i] += n.adj[na + i];
        break;
      }
      case Op::kSum:
        for (std::size_t i = 0; i < nodes_[n.a].val.size(); ++i)
          nodes_[n.a].adj[i] += n.adj[0];
        break;
      case Op::kPick:
        nodes_[n.a].adj[n.k] += n.adj[0];
        break;
      case Op::kClamp:
        for (std::size_t i = 0; i < n.adj.size(); ++i) {
          const double x = nodes_[n.a].val[i];
          if (x > n.c0 && x < n.c1) nodes_[n.a].adj[i] += n.adj[i];
        }
        break;
      case Op::kLog1mExp:
        // d/du log(1 - e^{-u}) = 1 / (e^u - 1); expm1 overflow yields +inf
        // and a correctly vanishing gradient.
        for (std::size_t i = 0; i < n.adj.size(); ++i)
          nodes_[n.a].adj[i] += n.adj[i] / std::expm1(nodes_[n.a].val[i]);
        break;
    }
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// LSTM cell (standard gates: sigmoid i/f/o, tanh candidate).

struct LstmWeights {
  Param* w_i;
  Param* u_i;
  Param* b_i;
  Param* w_f;
  Param* u_f;
  Param* b_f;
  Param* w_g;
  Param* u_g;
  Param* b_g;
  Param* w_o;
  Param* u_o;
  Param* b_o;

  int hidden_dim() const { return w_i->rows; }
};

inline LstmWeights register_lstm(ParameterStore& store, const std::string& prefix, int input_dim,
                                 int hidden_dim, SplitMix64& rng) {
  auto w = [&](const char* gate) -> Param& {
    return store.add_weight(prefix + ".W" + gate, hidden_dim, input_dim, rng);
  };
  auto u = [&](const char* gate) -> Param& {
    return store.add_weight(prefix + ".U" + gate, hidden_dim, hidden_dim, rng);
  };
  auto b = [&](const char* gate) -> Param& {
    return store.add_zeros(prefix + ".b" + gate, hidden_dim);
  };
  return LstmWeights{&w("i"), &u("i"), &b("i"), &w("f"), &u("f"), &b("f"),
                     &w("g"), &u("g"), &b("g"), &w("o"), &u("o"), &b("o")};
}

inline LstmWeights bind_lstm(ParameterStore& store, const std::string& prefix) {
  auto g = [&](const std::string& s) -> Param* { return &store.get(prefix + "." + s); };
  return LstmWeights{g("Wi"), g("Ui"), g("bi"), g("Wf"), g("Uf"), g("bf"),
                     g("Wg"), g("Ug"), g("bg"), g("Wo"), g("Uo"), g("bo")};
}

struct LstmNodes {
  Tape::Id h = -1;
  Tape::Id c = -1;
};

inline LstmNodes lstm_initial(Tape& tape, int hidden_dim) {
  return {tape.constant(std::vector<double>(hidden_dim, 0.0)),
          tape.constant(std::vector<double>(hidden_dim, 0.0))};
}

inline LstmNodes lstm_step(Tape& tape, const LstmWeights& w, const LstmNodes& state,
                           Tape::Id x) {
  auto gate = [&](Param* wx, Param* uh, Param* b) {
    return tape.add(tape.linear(*wx, *b, x), tape.matvec(*uh, state.h));
  };
  const Tape::Id i = tape.sigmoid(gate(w.w_i, w.u_i, w.b_i));
  const Tape::Id f = tape.sigmoid(gate(w.w_f, w.u_f, w.b_f));
  const Tape::Id g = tape.tanh_(gate(w.w_g, w.u_g, w.b_g));
  const Tape::Id o = tape.sigmoid(gate(w.w_o, w.u_o, w.b_o));
  const Tape::Id c = tape.add(tape.mul(f, state.c), tape.mul(i, g));
  const Tape::Id h = tape.mul(o, tape.tanh_(c));
  return {h, c};
}

// Value-only mirror of the cell for evaluation paths; must agree with the
// taped version bit for bit (unit-tested).
struct RecurrentState {
  std::vector<double> h;
  std::vector<double> c;
};

inline RecurrentState lstm_initial_values(int hidden_dim) {
  return {std::vector<double>(hidden_dim, 0.0), std::vector<double>(hidden_dim, 0.0)};
}

inline std::vector<double> linear_values(const Param& w, const Param* b,
                                         std::span<const double> x) {
  if (w.cols != static_cast<int>(x.size()))
    throw ValidationError("shape mismatch: linear_values");
  std::vector<double> out(w.rows, 0.0);
  if (b) out = b->value;
  for (int r = 0; r < w.rows; ++r) {
    const double* row = w.value.data() + static_cast<std::size_t>(r) * w.cols;
    double acc = 0.0;
    for (int c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    out[r] += acc;
  }
  return out;
}

inline RecurrentState lstm_step_values(const LstmWeights& w, const RecurrentState& state,
                                       std::span<const double> x) {
  const int h_dim = w.hidden_dim();
  auto gate = [&](Param* wx, Param* uh, Param* b) {
    std::vector<double> pre = linear_values(*wx, b, x);
    const std::vector<double> rec = linear_values(*uh, nullptr, state.h);
    for (int i = 0; i < h_dim; ++i) pre[i] += rec[i];
    return pre;
  };
  std::vector<double> i = gate(w.w_i, w.u_i, w.b_i);
  std::vector<double> f = gate(w.w_f, w.u_f, w.b_f);
  std::vector<double> g = gate(w.w_g, w.u_g, w.b_g);
  std::vector<double> o = gate(w.w_o, w.u_o, w.b_o);
  RecurrentState next{std::vector<double>(h_dim), std::vector<double>(h_dim)};
  for (int k = 0; k < h_dim; ++k) {
    const double ik = 1.0 / (1.0 + std::exp(-i[k]));
    const double fk = 1.0 / (1.0 + std::exp(-f[k]));
    const double gk = std::tanh(g[k]);
    const double ok = 1.0 / (1.0 + std::exp(-o[k]));
    next.c[k] = fk * state.c[k] + ik * gk;
    next.h[k] = ok * std::tanh(next.c[k]);
  }
  return next;
}

// ---------------------------------------------------------------------------
// Gradient verification.
//
// `loss_with_grad` must rebuild its tape, run backward, and return the loss;
// it has to be deterministic given the store (fix any sampling noise).
// Returns max over parameter entries of
//   |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, denom_floor)
// with g_numeric from central differences.
//
// The floor guards the ratio when the true gradient is near zero. Central
// differences carry roundoff noise of roughly eps_machine * |loss| / (2 *
// epsilon), about 1e-10 at these scales, so checks over deep compositions
// whose smallest gradients sit below that noise should raise the floor to
// ~1e-5: entries above the floor are still held to the relative tolerance,
// entries below it to floor * tolerance in absolute terms.
inline double finite_diff_check(const std::function<double()>& loss_with_grad,
                                ParameterStore& store, double epsilon = 1e-5,
                                double denom_floor = 1e-12) {
  store.zero_grads();
  const double base = loss_with_grad();
  if (!std::isfinite(base)) throw NumericalError("finite_diff_check: non-finite loss");
  std::vector<std::vector<double>> analytic;
  analytic.reserve(store.params().size());
  for (const auto& p : store.params()) analytic.push_back(p->grad);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < store.params().size(); ++pi) {
    Param& p = *store.params()[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + epsilon;
      const double up = loss_with_grad();
      p.value[i] = saved - epsilon;
      const double down = loss_with_grad();
      p.value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericalError("finite_diff_check: non-finite perturbed loss");
      const double numeric = (up - down) / (2.0 * epsilon);
      const double g = analytic[pi][i];
      const double denom = std::max({std::abs(g), std::abs(numeric), denom_floor});
      worst = std::max(worst, std::abs(g - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace appvae
