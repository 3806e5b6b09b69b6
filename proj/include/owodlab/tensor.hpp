#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace owodlab {

// Dense row-major tensor with an optional gradient channel of the same shape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;
  std::vector<double> g;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape{rows, cols}, v(rows * cols, fill) {}

  std::size_t size() const { return v.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
  }
  void zero_grad() { g.assign(v.size(), 0.0); }
};

// Reverse-mode computation graph. Nodes are referenced by index; the graph
// owns all intermediate storage and is rebuilt every forward pass.
// Parameters registered through leaf() receive accumulated gradients in
// their own g buffer when backward() runs. Not movable: backward closures
// capture `this`.
class Graph {
 public:
  using Ref = int;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Ref leaf(Tensor& param);
  Ref input(Tensor value);
  Ref input(std::size_t rows, std::size_t cols, const std::vector<double>& values);
  Ref scalar(double value);

  Ref add(Ref a, Ref b);
  Ref sub(Ref a, Ref b);
  Ref mul(Ref a, Ref b);
  Ref div(Ref a, Ref b);
  Ref scale(Ref a, double s);
  Ref add_scalar(Ref a, double s);

  Ref matmul(Ref a, Ref b);
  Ref transpose(Ref a);
  Ref add_rowvec(Ref a, Ref row);  // row: [1, cols], broadcast over rows

  Ref slice_cols(Ref a, std::size_t first, std::size_t count);
  Ref concat_cols(const std::vector<Ref>& parts);
  Ref gather_rows(Ref a, std::vector<std::size_t> idx);

  Ref softmax_rows(Ref a);
  Ref layer_norm_rows(Ref a, Ref gamma, Ref beta);

  Ref relu(Ref a);
  Ref sigmoid(Ref a);
  Ref exp(Ref a);
  Ref log(Ref a);
  Ref abs(Ref a);
  Ref pow_const(Ref a, double p);
  Ref emax(Ref a, Ref b);
  Ref emin(Ref a, Ref b);
  Ref clamp_min(Ref a, double lo);

  Ref sum(Ref a);   // -> [1,1]
  Ref mean(Ref a);  // -> [1,1]

  // Numerically stable classification losses, elementwise over logits.
  Ref bce_with_logits(Ref logits, std::vector<double> targets);
  Ref focal_with_logits(Ref logits, std::vector<double> targets, double alpha, double gamma);

  const Tensor& at(Ref r) const { return nodes_[static_cast<std::size_t>(r)].val; }
  double value(Ref r) const { return at(r).v.at(0); }

  // Seeds d(scalar)=1 and propagates down the tape; leaf parameter
  // gradients are accumulated into their Tensor::g.
  void backward(Ref scalar_node);

 private:
  struct Node {
    Tensor val;
    std::vector<double> grad;
    Tensor* param = nullptr;
    std::function<void()> back;
  };

  Ref push(Tensor val);
  Node& node(Ref r) { return nodes_[static_cast<std::size_t>(r)]; }
  std::vector<double>& grad(Ref r);

  std::vector<Node> nodes_;
};

}  // namespace owodlab
