#include "owodlab/tensor.hpp"

#include <cassert>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <utility>

#include "owodlab/kernels.hpp"

namespace owodlab {

namespace {
constexpr double kLogFloor = 1e-300;
}

Graph::Ref Graph::push(Tensor val) {
  Node n;
  n.val = std::move(val);
  n.grad.assign(n.val.size(), 0.0);
  nodes_.push_back(std::move(n));
  return static_cast<Ref>(nodes_.size() - 1);
}

std::vector<double>& Graph::grad(Ref r) { return node(r).grad; }

Graph::Ref Graph::leaf(Tensor& param) {
  Ref r = push(param);
  node(r).param = &param;
  return r;
}

Graph::Ref Graph::input(Tensor value) { return push(std::move(value)); }

Graph::Ref Graph::input(std::size_t rows, std::size_t cols, const std::vector<double>& values) {
  Tensor t(rows, cols);
  if (values.size() != t.size()) throw std::invalid_argument("input: value count mismatch");
  t.v = values;
  return push(std::move(t));
}

Graph::Ref Graph::scalar(double value) {
  Tensor t(1, 1);
  t.v[0] = value;
  return push(std::move(t));
}

Graph::Ref Graph::add(Ref a, Ref b) {
  const Tensor& ta = at(a);
  const Tensor& tb = at(b);
  if (ta.size() != tb.size()) throw std::invalid_argument("add: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += tb.v[i];
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, b] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      grad(a)[i] += grad(r)[i];
      grad(b)[i] += grad(r)[i];
    }
  };
  return r;
}

Graph::Ref Graph::sub(Ref a, Ref b) {
  const Tensor& ta = at(a);
  const Tensor& tb = at(b);
  if (ta.size() != tb.size()) throw std::invalid_argument("sub: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] -= tb.v[i];
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, b] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      grad(a)[i] += grad(r)[i];
      grad(b)[i] -= grad(r)[i];
    }
  };
  return r;
}

Graph::Ref Graph::mul(Ref a, Ref b) {
  const Tensor& ta = at(a);
  const Tensor& tb = at(b);
  if (ta.size() != tb.size()) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] *= tb.v[i];
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, b] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      grad(a)[i] += grad(r)[i] * at(b).v[i];
      grad(b)[i] += grad(r)[i] * at(a).v[i];
    }
  };
  return r;
}

Graph::Ref Graph::div(Ref a, Ref b) {
  const Tensor& ta = at(a);
  const Tensor& tb = at(b);
  if (ta.size() != tb.size()) throw std::invalid_argument("div: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] /= tb.v[i];
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, b] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      const double bv = at(b).v[i];
      grad(a)[i] += grad(r)[i] / bv;
      grad(b)[i] -= grad(r)[i] * at(a).v[i] / (bv * bv);
    }
  };
  return r;
}

Graph::Ref Graph::scale(Ref a, double s) {
  Tensor out = at(a);
  for (double& x : out.v) x *= s;
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, s] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) grad(a)[i] += grad(r)[i] * s;
  };
  return r;
}

Graph::Ref Graph::add_scalar(Ref a, double s) {
  Tensor out = at(a);
  for (double& x : out.v) x += s;
  Ref r = push(std::move(out));
  node(r).back = [this, r, a] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) grad(a)[i] += grad(r)[i];
  };
  return r;
}

Graph::Ref Graph::matmul(Ref a, Ref b) {
  const Tensor& ta = at(a);
  const Tensor& tb = at(b);
  if (ta.cols() != tb.rows()) throw std::invalid_argument("matmul: inner dim mismatch");
  const std::size_t n = ta.rows(), k = ta.cols(), m = tb.cols();
  Tensor out(n, m);
  kernels::matmul(ta.v.data(), tb.v.data(), out.v.data(), n, k, m);
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, b, n, k, m] {
    // dA += dC * B^T ; dB += A^T * dC
    std::vector<double> da(n * k), db(k * m);
    kernels::matmul_nt(grad(r).data(), at(b).v.data(), da.data(), n, m, k);
    kernels::matmul_tn(at(a).v.data(), grad(r).data(), db.data(), n, k, m);
    for (std::size_t i = 0; i < da.size(); ++i) grad(a)[i] += da[i];
    for (std::size_t i = 0; i < db.size(); ++i) grad(b)[i] += db[i];
  };
  return r;
}

Graph::Ref Graph::transpose(Ref a) {
  const Tensor& ta = at(a);
  const std::size_t n = ta.rows(), m = ta.cols();
  Tensor out(m, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.v[j * n + i] = ta.v[i * m + j];
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, n, m] {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) grad(a)[i * m + j] += grad(r)[j * n + i];
  };
  return r;
}

Graph::Ref Graph::add_rowvec(Ref a, Ref row) {
  const Tensor& ta = at(a);
  const Tensor& tr = at(row);
  if (tr.size() != ta.cols()) throw std::invalid_argument("add_rowvec: width mismatch");
  Tensor out = ta;
  const std::size_t n = ta.rows(), m = ta.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.v[i * m + j] += tr.v[j];
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, row, n, m] {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        grad(a)[i * m + j] += grad(r)[i * m + j];
        grad(row)[j] += grad(r)[i * m + j];
      }
  };
  return r;
}

Graph::Ref Graph::slice_cols(Ref a, std::size_t first, std::size_t count) {
  const Tensor& ta = at(a);
  const std::size_t n = ta.rows(), m = ta.cols();
  if (first + count > m) throw std::invalid_argument("slice_cols: out of range");
  Tensor out(n, count);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < count; ++j) out.v[i * count + j] = ta.v[i * m + first + j];
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, first, count, n, m] {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count; ++j)
        grad(a)[i * m + first + j] += grad(r)[i * count + j];
  };
  return r;
}

Graph::Ref Graph::concat_cols(const std::vector<Ref>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const std::size_t n = at(parts[0]).rows();
  std::size_t total = 0;
  for (Ref p : parts) {
    if (at(p).rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
    total += at(p).cols();
  }
  Tensor out(n, total);
  std::size_t off = 0;
  for (Ref p : parts) {
    const Tensor& tp = at(p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < tp.cols(); ++j)
        out.v[i * total + off + j] = tp.v[i * tp.cols() + j];
    off += tp.cols();
  }
  Ref r = push(std::move(out));
  std::vector<Ref> ps = parts;
  node(r).back = [this, r, ps, n, total] {
    std::size_t off2 = 0;
    for (Ref p : ps) {
      const std::size_t w = at(p).cols();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j)
          grad(p)[i * w + j] += grad(r)[i * total + off2 + j];
      off2 += w;
    }
  };
  return r;
}

Graph::Ref Graph::gather_rows(Ref a, std::vector<std::size_t> idx) {
  const Tensor& ta = at(a);
  const std::size_t m = ta.cols();
  Tensor out(idx.size(), m);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < m; ++j) out.v[i * m + j] = ta.v[idx[i] * m + j];
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, idx = std::move(idx), m] {
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < m; ++j) grad(a)[idx[i] * m + j] += grad(r)[i * m + j];
  };
  return r;
}

Graph::Ref Graph::softmax_rows(Ref a) {
  const Tensor& ta = at(a);
  const std::size_t n = ta.rows(), m = ta.cols();
  Tensor out(n, m);
  kernels::softmax_rows(ta.v.data(), out.v.data(), n, m);
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, n, m] {
    for (std::size_t i = 0; i < n; ++i) {
      const double* y = at(r).v.data() + i * m;
      const double* dy = grad(r).data() + i * m;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < m; ++j) grad(a)[i * m + j] += y[j] * (dy[j] - dot);
    }
  };
  return r;
}

Graph::Ref Graph::layer_norm_rows(Ref a, Ref gamma, Ref beta) {
  constexpr double kEps = 1e-5;
  const Tensor& ta = at(a);
  const std::size_t n = ta.rows(), m = ta.cols();
  if (at(gamma).size() != m || at(beta).size() != m)
    throw std::invalid_argument("layer_norm_rows: affine width mismatch");
  Tensor out(n, m);
  // normalized activations and inverse sigma are needed by the backward pass
  auto norm = std::make_shared<std::vector<double>>(n * m);
  auto inv_sigma = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = ta.v.data() + i * m;
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += x[j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + kEps);
    (*inv_sigma)[i] = is;
    for (std::size_t j = 0; j < m; ++j) {
      const double y = (x[j] - mu) * is;
      (*norm)[i * m + j] = y;
      out.v[i * m + j] = at(gamma).v[j] * y + at(beta).v[j];
    }
  }
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, gamma, beta, n, m, norm, inv_sigma] {
    for (std::size_t i = 0; i < n; ++i) {
      const double* dy = grad(r).data() + i * m;
      const double* y = norm->data() + i * m;
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double gdy = at(gamma).v[j] * dy[j];
        s1 += gdy;
        s2 += gdy * y[j];
        grad(gamma)[j] += dy[j] * y[j];
        grad(beta)[j] += dy[j];
      }
      s1 /= static_cast<double>(m);
      s2 /= static_cast<double>(m);
      for (std::size_t j = 0; j < m; ++j) {
        const double gdy = at(gamma).v[j] * dy[j];
        grad(a)[i * m + j] += (gdy - s1 - y[j] * s2) * (*inv_sigma)[i];
      }
    }
  };
  return r;
}

Graph::Ref Graph::relu(Ref a) {
  Tensor out = at(a);
  for (double& x : out.v) x = x > 0.0 ? x : 0.0;
  Ref r = push(std::move(out));
  node(r).back = [this, r, a] {
    for (std::size_t i = 0; i < grad(r).size(); ++i)
      if (at(a).v[i] > 0.0) grad(a)[i] += grad(r)[i];
  };
  return r;
}

Graph::Ref Graph::sigmoid(Ref a) {
  Tensor out = at(a);
  for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
  Ref r = push(std::move(out));
  node(r).back = [this, r, a] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      const double y = at(r).v[i];
      grad(a)[i] += grad(r)[i] * y * (1.0 - y);
    }
  };
  return r;
}

Graph::Ref Graph::exp(Ref a) {
  Tensor out = at(a);
  for (double& x : out.v) x = std::exp(x);
  Ref r = push(std::move(out));
  node(r).back = [this, r, a] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) grad(a)[i] += grad(r)[i] * at(r).v[i];
  };
  return r;
}

Graph::Ref Graph::log(Ref a) {
  Tensor out = at(a);
  for (double& x : out.v) x = std::log(x);
  Ref r = push(std::move(out));
  node(r).back = [this, r, a] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) grad(a)[i] += grad(r)[i] / at(a).v[i];
  };
  return r;
}

Graph::Ref Graph::abs(Ref a) {
  Tensor out = at(a);
  for (double& x : out.v) x = std::fabs(x);
  Ref r = push(std::move(out));
  node(r).back = [this, r, a] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      const double x = at(a).v[i];
      grad(a)[i] += grad(r)[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
    }
  };
  return r;
}

Graph::Ref Graph::pow_const(Ref a, double p) {
  Tensor out = at(a);
  for (double& x : out.v) x = std::pow(x, p);
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, p] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      const double x = at(a).v[i];
      grad(a)[i] += grad(r)[i] * p * std::pow(x, p - 1.0);
    }
  };
  return r;
}

Graph::Ref Graph::emax(Ref a, Ref b) {
  const Tensor& ta = at(a);
  const Tensor& tb = at(b);
  if (ta.size() != tb.size()) throw std::invalid_argument("emax: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = std::max(ta.v[i], tb.v[i]);
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, b] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      if (at(a).v[i] >= at(b).v[i])
        grad(a)[i] += grad(r)[i];
      else
        grad(b)[i] += grad(r)[i];
    }
  };
  return r;
}

Graph::Ref Graph::emin(Ref a, Ref b) {
  const Tensor& ta = at(a);
  const Tensor& tb = at(b);
  if (ta.size() != tb.size()) throw std::invalid_argument("emin: shape mismatch");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = std::min(ta.v[i], tb.v[i]);
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, b] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      if (at(a).v[i] <= at(b).v[i])
        grad(a)[i] += grad(r)[i];
      else
        grad(b)[i] += grad(r)[i];
    }
  };
  return r;
}

Graph::Ref Graph::clamp_min(Ref a, double lo) {
  Tensor out = at(a);
  for (double& x : out.v) x = x > lo ? x : lo;
  Ref r = push(std::move(out));
  node(r).back = [this, r, a, lo] {
    for (std::size_t i = 0; i < grad(r).size(); ++i)
      if (at(a).v[i] > lo) grad(a)[i] += grad(r)[i];
  };
  return r;
}

Graph::Ref Graph::sum(Ref a) {
  Tensor out(1, 1);
  for (double x : at(a).v) out.v[0] += x;
  Ref r = push(std::move(out));
  node(r).back = [this, r, a] {
    for (std::size_t i = 0; i < grad(a).size(); ++i) grad(a)[i] += grad(r)[0];
  };
  return r;
}

Graph::Ref Graph::mean(Ref a) {
  const double inv = 1.0 / static_cast<double>(at(a).size());
  return scale(sum(a), inv);
}

Graph::Ref Graph::bce_with_logits(Ref logits, std::vector<double> targets) {
  const Tensor& tl = at(logits);
  if (targets.size() != tl.size()) throw std::invalid_argument("bce: target size mismatch");
  Tensor out = tl;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = tl.v[i];
    const double t = targets[i];
    out.v[i] = std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::fabs(x)));
  }
  Ref r = push(std::move(out));
  node(r).back = [this, r, logits, targets = std::move(targets)] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-at(logits).v[i]));
      grad(logits)[i] += grad(r)[i] * (p - targets[i]);
    }
  };
  return r;
}

Graph::Ref Graph::focal_with_logits(Ref logits, std::vector<double> targets, double alpha,
                                    double gamma) {
  const Tensor& tl = at(logits);
  if (targets.size() != tl.size()) throw std::invalid_argument("focal: target size mismatch");
  Tensor out = tl;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-tl.v[i]));
    const double t = targets[i];
    const double pt = t > 0.5 ? p : 1.0 - p;
    const double at_ = t > 0.5 ? alpha : 1.0 - alpha;
    out.v[i] = -at_ * std::pow(1.0 - pt, gamma) * std::log(std::max(pt, kLogFloor));
  }
  Ref r = push(std::move(out));
  node(r).back = [this, r, logits, targets = std::move(targets), alpha, gamma] {
    for (std::size_t i = 0; i < grad(r).size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-at(logits).v[i]));
      const double t = targets[i];
      const double pt = t > 0.5 ? p : 1.0 - p;
      const double at_ = t > 0.5 ? alpha : 1.0 - alpha;
      const double logpt = std::log(std::max(pt, kLogFloor));
      // dL/dpt, then dpt/dx = +-p(1-p)
      const double dl_dpt =
          -at_ * (-gamma * std::pow(1.0 - pt, gamma - 1.0) * logpt +
                  std::pow(1.0 - pt, gamma) / std::max(pt, kLogFloor));
      const double dpt_dx = (t > 0.5 ? 1.0 : -1.0) * p * (1.0 - p);
      grad(logits)[i] += grad(r)[i] * dl_dpt * dpt_dx;
    }
  };
  return r;
}

void Graph::backward(Ref scalar_node) {
  if (at(scalar_node).size() != 1) throw std::invalid_argument("backward: non-scalar seed");
  for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  node(scalar_node).grad[0] = 1.0;
  for (Ref r = scalar_node; r >= 0; --r) {
    if (node(r).back) node(r).back();
  }
  for (Node& n : nodes_) {
    if (n.param) {
      n.param->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) n.param->g[i] += n.grad[i];
    }
  }
}

}  // namespace owodlab
