#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pmim/errors.hpp"
#include "pmim/mat.hpp"

namespace pmim {

// A named trainable tensor. Gradients are accumulated here by
// Graph::backward; optimizer state lives in the optimizer.
template <class S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Insertion-ordered registry so checkpoints and optimizer state have a
// stable tensor order.
template <class S>
class ParamStore {
 public:
  Param<S>* add(const std::string& name, int rows, int cols) {
    PMIM_CHECK(index_.find(name) == index_.end(), "duplicate param '", name, "'");
    store_.emplace_back();
    Param<S>& p = store_.back();
    p.name = name;
    p.value.setZero(rows, cols);
    p.grad.setZero(rows, cols);
    index_[name] = &p;
    return &p;
  }
  Param<S>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }
  const Param<S>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }
  size_t size() const { return store_.size(); }
  auto begin() { return store_.begin(); }
  auto end() { return store_.end(); }
  auto begin() const { return store_.begin(); }
  auto end() const { return store_.end(); }
  void zero_grads() {
    for (auto& p : store_) p.zero_grad();
  }

 private:
  std::deque<Param<S>> store_;  // stable addresses
  std::unordered_map<std::string, Param<S>*> index_;
};

// One tape node. Leaves view a Param's value in place; op outputs own
// their storage.
template <class S>
struct Node {
  const Mat<S>* view = nullptr;
  Mat<S> owned;
  Mat<S> grad;
  bool requires_grad = false;
  Param<S>* sink = nullptr;
  std::vector<Node*> parents;
  std::function<void(Node&)> back;

  const Mat<S>& value() const { return view ? *view : owned; }
  int rows() const { return static_cast<int>(value().rows()); }
  int cols() const { return static_cast<int>(value().cols()); }
  void ensure_grad() {
    if (grad.size() == 0) grad.setZero(value().rows(), value().cols());
  }
};

// Reverse-mode tape. One Graph per forward pass; backward() accumulates
// into Param::grad for every leaf reached from the root.
template <class S>
class Graph {
 public:
  Node<S>* leaf(Param<S>& p) {
    Node<S>* n = alloc();
    n->view = &p.value;
    n->requires_grad = true;
    n->sink = &p;
    return n;
  }

  Node<S>* constant(Mat<S> v) {
    Node<S>* n = alloc();
    n->owned = std::move(v);
    return n;
  }

  // y = x * w^T (+ bias broadcast over rows); w is (out x in).
  Node<S>* linear(Node<S>* x, Node<S>* w, Node<S>* b) {
    PMIM_CHECK(x->cols() == w->cols(), "linear: in dim ", x->cols(),
               " != weight cols ", w->cols());
    Node<S>* n = alloc();
    n->owned.noalias() = x->value() * w->value().transpose();
    if (b) {
      PMIM_CHECK(b->rows() == 1 && b->cols() == w->rows(), "linear: bad bias shape");
      n->owned.rowwise() += b->value().row(0);
    }
    wire(n, {x, w, b});
    n->back = [x, w, b](Node<S>& self) {
      const Mat<S>& dy = self.grad;
      if (x->requires_grad) {
        x->ensure_grad();
        x->grad.noalias() += dy * w->value();
      }
      if (w->requires_grad) {
        w->ensure_grad();
        w->grad.noalias() += dy.transpose() * x->value();
      }
      if (b && b->requires_grad) {
        b->ensure_grad();
        b->grad.row(0) += dy.colwise().sum();
      }
    };
    return n;
  }

  // Row-wise layer normalization with scale/offset (1 x D each).
  Node<S>* layernorm(Node<S>* x, Node<S>* gamma, Node<S>* beta, S eps) {
    const int nr = x->rows(), d = x->cols();
    PMIM_CHECK(gamma->rows() == 1 && gamma->cols() == d, "layernorm: bad gamma");
    PMIM_CHECK(beta->rows() == 1 && beta->cols() == d, "layernorm: bad beta");
    Node<S>* n = alloc();
    auto xhat = std::make_shared<Mat<S>>(nr, d);
    auto inv_std = std::make_shared<Vec<S>>(nr);
    n->owned.resize(nr, d);
    for (int i = 0; i < nr; ++i) {
      const auto row = x->value().row(i);
      const S mu = row.mean();
      const S var = (row.array() - mu).square().mean();
      const S inv = S(1) / std::sqrt(var + eps);
      (*inv_std)(i) = inv;
      xhat->row(i) = (row.array() - mu) * inv;
      n->owned.row(i) =
          xhat->row(i).cwiseProduct(gamma->value().row(0)) + beta->value().row(0);
    }
    wire(n, {x, gamma, beta});
    n->back = [x, gamma, beta, xhat, inv_std, nr, d](Node<S>& self) {
      const Mat<S>& dy = self.grad;
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        gamma->grad.row(0) += dy.cwiseProduct(*xhat).colwise().sum();
      }
      if (beta->requires_grad) {
        beta->ensure_grad();
        beta->grad.row(0) += dy.colwise().sum();
      }
      if (x->requires_grad) {
        x->ensure_grad();
        const S invd = S(1) / static_cast<S>(d);
        for (int i = 0; i < nr; ++i) {
          const auto t = dy.row(i).cwiseProduct(gamma->value().row(0));
          const S mean_t = t.sum() * invd;
          const S mean_tx = t.cwiseProduct(xhat->row(i)).sum() * invd;
          x->grad.row(i) += (*inv_std)(i) *
                            (t.array() - mean_t - xhat->row(i).array() * mean_tx)
                                .matrix();
        }
      }
    };
    return n;
  }

  // Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
  Node<S>* gelu(Node<S>* x) {
    Node<S>* n = alloc();
    n->owned = x->value().unaryExpr([](S v) {
      return S(0.5) * v * (S(1) + std::erf(v * S(M_SQRT1_2)));
    });
    wire(n, {x});
    n->back = [x](Node<S>& self) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      const S inv_sqrt_2pi = S(1) / std::sqrt(S(2) * S(M_PI));
      x->grad.array() +=
          self.grad.array() *
          x->value().unaryExpr([inv_sqrt_2pi](S v) {
             return S(0.5) * (S(1) + std::erf(v * S(M_SQRT1_2))) +
                    v * std::exp(S(-0.5) * v * v) * inv_sqrt_2pi;
           }).array();
    };
    return n;
  }

  Node<S>* add(Node<S>* a, Node<S>* b) {
    PMIM_CHECK(a->rows() == b->rows() && a->cols() == b->cols(),
               "add: shape mismatch ", a->rows(), "x", a->cols(), " vs ",
               b->rows(), "x", b->cols());
    Node<S>* n = alloc();
    n->owned = a->value() + b->value();
    wire(n, {a, b});
    n->back = [a, b](Node<S>& self) {
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad += self.grad;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad += self.grad;
      }
    };
    return n;
  }

  // y.row(i) = table.row(idx[i]). Covers positional lookup, mask-token
  // broadcast and proxy tiling.
  Node<S>* gather_rows(Node<S>* table, std::vector<int> idx) {
    Node<S>* n = alloc();
    n->owned.resize(static_cast<int>(idx.size()), table->cols());
    for (size_t i = 0; i < idx.size(); ++i) {
      PMIM_CHECK(idx[i] >= 0 && idx[i] < table->rows(), "gather_rows: index ",
                 idx[i], " out of range [0,", table->rows(), ")");
      n->owned.row(static_cast<int>(i)) = table->value().row(idx[i]);
    }
    wire(n, {table});
    auto indices = std::make_shared<std::vector<int>>(std::move(idx));
    n->back = [table, indices](Node<S>& self) {
      if (!table->requires_grad) return;
      table->ensure_grad();
      for (size_t i = 0; i < indices->size(); ++i)
        table->grad.row((*indices)[i]) += self.grad.row(static_cast<int>(i));
    };
    return n;
  }

  // Per-image row-block concatenation of two batched token tensors:
  // a holds ta rows per image, b holds tb rows per image.
  Node<S>* concat_tokens(Node<S>* a, Node<S>* b, int batch, int ta, int tb) {
    PMIM_CHECK(a->rows() == batch * ta && b->rows() == batch * tb,
               "concat_tokens: row counts do not match batch layout");
    PMIM_CHECK(a->cols() == b->cols(), "concat_tokens: dim mismatch");
    const int d = a->cols(), t = ta + tb;
    Node<S>* n = alloc();
    n->owned.resize(batch * t, d);
    for (int im = 0; im < batch; ++im) {
      if (ta > 0) n->owned.middleRows(im * t, ta) = a->value().middleRows(im * ta, ta);
      if (tb > 0)
        n->owned.middleRows(im * t + ta, tb) = b->value().middleRows(im * tb, tb);
    }
    wire(n, {a, b});
    n->back = [a, b, batch, ta, tb, t](Node<S>& self) {
      for (int im = 0; im < batch; ++im) {
        if (a->requires_grad && ta > 0) {
          a->ensure_grad();
          a->grad.middleRows(im * ta, ta) += self.grad.middleRows(im * t, ta);
        }
        if (b->requires_grad && tb > 0) {
          b->ensure_grad();
          b->grad.middleRows(im * tb, tb) += self.grad.middleRows(im * t + ta, tb);
        }
      }
    };
    return n;
  }

  // Rows [offset, offset+len) of every image block of height stride.
  Node<S>* slice_tokens(Node<S>* x, int batch, int stride, int offset, int len) {
    PMIM_CHECK(x->rows() == batch * stride, "slice_tokens: bad layout");
    PMIM_CHECK(offset >= 0 && len >= 0 && offset + len <= stride,
               "slice_tokens: bad slice");
    Node<S>* n = alloc();
    n->owned.resize(batch * len, x->cols());
    for (int im = 0; im < batch; ++im)
      if (len > 0)
        n->owned.middleRows(im * len, len) =
            x->value().middleRows(im * stride + offset, len);
    wire(n, {x});
    n->back = [x, batch, stride, offset, len](Node<S>& self) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (int im = 0; im < batch; ++im)
        if (len > 0)
          x->grad.middleRows(im * stride + offset, len) +=
              self.grad.middleRows(im * len, len);
    };
    return n;
  }

  // Scaled-dot-product attention over already-projected q/k/v, with heads
  // as contiguous column slices. Softmax matrices can be captured per
  // (image, head) for analysis.
  Node<S>* attention(Node<S>* q, Node<S>* k, Node<S>* v, int batch, int heads,
                     std::vector<std::vector<Mat<S>>>* capture = nullptr) {
    const int d = q->cols();
    PMIM_CHECK(k->cols() == d && v->cols() == d, "attention: dim mismatch");
    PMIM_CHECK(d % heads == 0, "attention: dim ", d, " not divisible by heads ",
               heads);
    PMIM_CHECK(q->rows() % batch == 0 && k->rows() % batch == 0,
               "attention: rows not divisible by batch");
    const int tq = q->rows() / batch;
    const int tk = k->rows() / batch;
    PMIM_CHECK(v->rows() == k->rows(), "attention: k/v row mismatch");
    const int dh = d / heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));

    Node<S>* n = alloc();
    n->owned.setZero(batch * tq, d);
    auto probs = std::make_shared<std::vector<Mat<S>>>();
    probs->reserve(static_cast<size_t>(batch) * heads);
    if (capture) capture->assign(batch, {});

    for (int im = 0; im < batch; ++im) {
      if (capture) (*capture)[im].reserve(heads);
      for (int h = 0; h < heads; ++h) {
        const auto qb = q->value().block(im * tq, h * dh, tq, dh);
        const auto kb = k->value().block(im * tk, h * dh, tk, dh);
        const auto vb = v->value().block(im * tk, h * dh, tk, dh);
        Mat<S> a(tq, tk);
        a.noalias() = qb * kb.transpose();
        a *= scale;
        for (int r = 0; r < tq; ++r) {
          const S m = a.row(r).maxCoeff();
          a.row(r) = (a.row(r).array() - m).exp();
          a.row(r) /= a.row(r).sum();
        }
        n->owned.block(im * tq, h * dh, tq, dh).noalias() = a * vb;
        if (capture) (*capture)[im].push_back(a);
        probs->push_back(std::move(a));
      }
    }
    wire(n, {q, k, v});
    n->back = [q, k, v, probs, batch, heads, tq, tk, dh, scale](Node<S>& self) {
      if (q->requires_grad) q->ensure_grad();
      if (k->requires_grad) k->ensure_grad();
      if (v->requires_grad) v->ensure_grad();
      for (int im = 0; im < batch; ++im) {
        for (int h = 0; h < heads; ++h) {
          const Mat<S>& a = (*probs)[static_cast<size_t>(im) * heads + h];
          const auto dy = self.grad.block(im * tq, h * dh, tq, dh);
          const auto qb = q->value().block(im * tq, h * dh, tq, dh);
          const auto kb = k->value().block(im * tk, h * dh, tk, dh);
          const auto vb = v->value().block(im * tk, h * dh, tk, dh);
          if (v->requires_grad)
            v->grad.block(im * tk, h * dh, tk, dh).noalias() += a.transpose() * dy;
          if (!q->requires_grad && !k->requires_grad) continue;
          Mat<S> da(tq, tk);
          da.noalias() = dy * vb.transpose();
          // softmax backward per row
          Mat<S> ds(tq, tk);
          for (int r = 0; r < tq; ++r) {
            const S dot = da.row(r).cwiseProduct(a.row(r)).sum();
            ds.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
          }
          if (q->requires_grad)
            q->grad.block(im * tq, h * dh, tq, dh).noalias() += scale * (ds * kb);
          if (k->requires_grad)
            k->grad.block(im * tk, h * dh, tk, dh).noalias() +=
                scale * (ds.transpose() * qb);
        }
      }
    };
    return n;
  }

  // Per-image row-block scaling (stochastic depth).
  Node<S>* scale_tokens(Node<S>* x, int batch, std::vector<S> factors) {
    PMIM_CHECK(static_cast<int>(factors.size()) == batch, "scale_tokens: factors");
    PMIM_CHECK(x->rows() % batch == 0, "scale_tokens: bad layout");
    const int t = x->rows() / batch;
    Node<S>* n = alloc();
    n->owned.resize(x->rows(), x->cols());
    for (int im = 0; im < batch; ++im)
      n->owned.middleRows(im * t, t) = x->value().middleRows(im * t, t) * factors[im];
    wire(n, {x});
    auto f = std::make_shared<std::vector<S>>(std::move(factors));
    n->back = [x, f, batch, t](Node<S>& self) {
      if (!x->requires_grad) return;
      x->ensure_grad();
      for (int im = 0; im < batch; ++im)
        x->grad.middleRows(im * t, t) += self.grad.middleRows(im * t, t) * (*f)[im];
    };
    return n;
  }

  // Mean absolute error against a fixed target; 1x1 output.
  Node<S>* l1_mean(Node<S>* pred, Mat<S> target) {
    PMIM_CHECK(pred->rows() == target.rows() && pred->cols() == target.cols(),
               "l1_mean: shape mismatch");
    Node<S>* n = alloc();
    auto t = std::make_shared<Mat<S>>(std::move(target));
    n->owned.resize(1, 1);
    n->owned(0, 0) = (pred->value() - *t).cwiseAbs().mean();
    wire(n, {pred});
    n->back = [pred, t](Node<S>& self) {
      if (!pred->requires_grad) return;
      pred->ensure_grad();
      const S u = self.grad(0, 0) / static_cast<S>(t->size());
      pred->grad.array() += u * (pred->value() - *t).array().sign();
    };
    return n;
  }

  // Mean squared error; used by gradient tests (smooth everywhere).
  Node<S>* sq_mean(Node<S>* pred, Mat<S> target) {
    PMIM_CHECK(pred->rows() == target.rows() && pred->cols() == target.cols(),
               "sq_mean: shape mismatch");
    Node<S>* n = alloc();
    auto t = std::make_shared<Mat<S>>(std::move(target));
    n->owned.resize(1, 1);
    n->owned(0, 0) = (pred->value() - *t).array().square().mean();
    wire(n, {pred});
    n->back = [pred, t](Node<S>& self) {
      if (!pred->requires_grad) return;
      pred->ensure_grad();
      const S u = self.grad(0, 0) * S(2) / static_cast<S>(t->size());
      pred->grad += u * (pred->value() - *t);
    };
    return n;
  }

  // Mean softmax cross-entropy over rows of logits; labels are class ids.
  Node<S>* softmax_ce_mean(Node<S>* logits, std::vector<int> labels) {
    const int nr = logits->rows(), nc = logits->cols();
    PMIM_CHECK(static_cast<int>(labels.size()) == nr, "ce: label count mismatch");
    Node<S>* n = alloc();
    auto p = std::make_shared<Mat<S>>(nr, nc);
    S total = 0;
    for (int i = 0; i < nr; ++i) {
      PMIM_CHECK_DATA(labels[static_cast<size_t>(i)] >= 0 &&
                          labels[static_cast<size_t>(i)] < nc,
                      "label ", labels[static_cast<size_t>(i)],
                      " outside class range [0,", nc, ")");
      const auto z = logits->value().row(i);
      const S zmax = z.maxCoeff();
      p->row(i) = (z.array() - zmax).exp();
      const S sum = p->row(i).sum();
      p->row(i) /= sum;
      total += std::log(sum) + zmax - z(labels[static_cast<size_t>(i)]);
    }
    n->owned.resize(1, 1);
    n->owned(0, 0) = total / static_cast<S>(nr);
    wire(n, {logits});
    auto lab = std::make_shared<std::vector<int>>(std::move(labels));
    n->back = [logits, p, lab, nr](Node<S>& self) {
      if (!logits->requires_grad) return;
      logits->ensure_grad();
      const S u = self.grad(0, 0) / static_cast<S>(nr);
      logits->grad += u * (*p);
      for (int i = 0; i < nr; ++i)
        logits->grad(i, (*lab)[static_cast<size_t>(i)]) -= u;
    };
    return n;
  }

  // Reverse accumulation from a scalar root into Param::grad.
  void backward(Node<S>* root) {
    PMIM_CHECK(root->rows() == 1 && root->cols() == 1,
               "backward root must be scalar");
    std::vector<Node<S>*> topo;
    topo.reserve(nodes_.size());
    std::unordered_set<Node<S>*> visited;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<S>* parent = node->parents[next++];
        if (parent && parent->requires_grad && !visited.count(parent)) {
          visited.insert(parent);
          stack.emplace_back(parent, 0);
        }
      } else {
        topo.push_back(node);
        stack.pop_back();
      }
    }
    root->ensure_grad();
    root->grad(0, 0) = S(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
      Node<S>* node = *it;
      if (!node->requires_grad || node->grad.size() == 0) continue;
      if (node->back) node->back(*node);
      if (node->sink) node->sink->grad += node->grad;
    }
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  Node<S>* alloc() {
    nodes_.emplace_back();
    return &nodes_.back();
  }

  void wire(Node<S>* n, std::initializer_list<Node<S>*> parents) {
    for (Node<S>* p : parents) {
      if (!p) continue;
      n->parents.push_back(p);
      n->requires_grad = n->requires_grad || p->requires_grad;
    }
  }

  std::deque<Node<S>> nodes_;
};

}  // namespace pmim
