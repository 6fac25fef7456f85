#include "xpol/graph.hpp"

#include <algorithm>
#include <cmath>

namespace xpol {

NodeRef Graph::push(Tensor value, std::vector<std::size_t> ins,
                    std::function<void(Graph&, std::size_t)> back) {
  Node n;
  n.value = std::move(value);
  n.ins = std::move(ins);
  n.needs_grad = any_needs_grad(n.ins);
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return NodeRef{nodes_.size() - 1};
}

bool Graph::any_needs_grad(const std::vector<std::size_t>& ins) const {
  for (std::size_t i : ins) {
    if (nodes_[i].needs_grad) return true;
  }
  return false;
}

Tensor& Graph::grad_buf(std::size_t idx) {
  Node& n = nodes_[idx];
  if (!n.grad_ready) {
    n.grad = Tensor::zeros(n.value.rows(), n.value.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

void Graph::accumulate(std::size_t idx, const Tensor& g) {
  if (!nodes_[idx].needs_grad) return;
  Tensor& buf = grad_buf(idx);
  for (std::size_t i = 0; i < buf.size(); ++i) buf.data[i] += g.data[i];
}

NodeRef Graph::input(Tensor t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return NodeRef{nodes_.size() - 1};
}

NodeRef Graph::leaf(Tensor t) {
  Node n;
  n.value = std::move(t);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return NodeRef{nodes_.size() - 1};
}

NodeRef Graph::param(const std::string& name) {
  if (store_ == nullptr) throw ConfigError("Graph::param: no ParamStore bound");
  Node n;
  n.value = store_->get(name);
  n.needs_grad = true;
  n.param_name = name;
  nodes_.push_back(std::move(n));
  return NodeRef{nodes_.size() - 1};
}

NodeRef Graph::matmul(NodeRef a, NodeRef b) {
  Tensor out = k_matmul(value(a), value(b));
  return push(std::move(out), {a.idx, b.idx}, [](Graph& g, std::size_t self) {
    const Node& node = g.nodes_[self];
    const Tensor& dc = node.grad;
    const std::size_t ai = node.ins[0], bi = node.ins[1];
    const Tensor& A = g.nodes_[ai].value;
    const Tensor& B = g.nodes_[bi].value;
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (g.nodes_[ai].needs_grad) {
      Tensor& da = g.grad_buf(ai);
      // dA[i,kk] += sum_j dC[i,j] * B[kk,j]
      for (std::size_t i = 0; i < m; ++i) {
        const double* dcrow = dc.data.data() + i * n;
        double* darow = da.data.data() + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double* brow = B.data.data() + kk * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
          darow[kk] += s;
        }
      }
    }
    if (g.nodes_[bi].needs_grad) {
      Tensor& db = g.grad_buf(bi);
      // dB[kk,j] += sum_i A[i,kk] * dC[i,j]
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A.data.data() + i * k;
        const double* dcrow = dc.data.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
          const double av = arow[kk];
          if (av == 0.0) continue;
          double* dbrow = db.data.data() + kk * n;
          for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
        }
      }
    }
  });
}

NodeRef Graph::transpose(NodeRef a) {
  return push(k_transpose(value(a)), {a.idx}, [](Graph& g, std::size_t self) {
    const Node& node = g.nodes_[self];
    g.accumulate(node.ins[0], k_transpose(node.grad));
  });
}

NodeRef Graph::add(NodeRef a, NodeRef b) {
  return push(k_add(value(a), value(b)), {a.idx, b.idx},
              [](Graph& g, std::size_t self) {
                const Node& node = g.nodes_[self];
                g.accumulate(node.ins[0], node.grad);
                g.accumulate(node.ins[1], node.grad);
              });
}

NodeRef Graph::sub(NodeRef a, NodeRef b) {
  return push(k_sub(value(a), value(b)), {a.idx, b.idx},
              [](Graph& g, std::size_t self) {
                const Node& node = g.nodes_[self];
                g.accumulate(node.ins[0], node.grad);
                g.accumulate(node.ins[1], k_scale(node.grad, -1.0));
              });
}

NodeRef Graph::mul(NodeRef a, NodeRef b) {
  return push(k_mul(value(a), value(b)), {a.idx, b.idx},
              [](Graph& g, std::size_t self) {
                const Node& node = g.nodes_[self];
                const Tensor& A = g.nodes_[node.ins[0]].value;
                const Tensor& B = g.nodes_[node.ins[1]].value;
                g.accumulate(node.ins[0], k_mul(node.grad, B));
                g.accumulate(node.ins[1], k_mul(node.grad, A));
              });
}

NodeRef Graph::scale(NodeRef a, double c) {
  return push(k_scale(value(a), c), {a.idx}, [c](Graph& g, std::size_t self) {
    const Node& node = g.nodes_[self];
    g.accumulate(node.ins[0], k_scale(node.grad, c));
  });
}

NodeRef Graph::add_rowvec(NodeRef a, NodeRef bias) {
  return push(k_add_rowvec(value(a), value(bias)), {a.idx, bias.idx},
              [](Graph& g, std::size_t self) {
                const Node& node = g.nodes_[self];
                g.accumulate(node.ins[0], node.grad);
                if (g.nodes_[node.ins[1]].needs_grad) {
                  Tensor& db = g.grad_buf(node.ins[1]);
                  const Tensor& dc = node.grad;
                  for (std::size_t i = 0; i < dc.rows(); ++i)
                    for (std::size_t j = 0; j < dc.cols(); ++j)
                      db.data[j] += dc.at(i, j);
                }
              });
}

NodeRef Graph::relu(NodeRef a) {
  return push(k_relu(value(a)), {a.idx}, [](Graph& g, std::size_t self) {
    const Node& node = g.nodes_[self];
    const Tensor& x = g.nodes_[node.ins[0]].value;
    if (!g.nodes_[node.ins[0]].needs_grad) return;
    Tensor& dx = g.grad_buf(node.ins[0]);
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x.data[i] > 0.0) dx.data[i] += node.grad.data[i];
  });
}

NodeRef Graph::gelu(NodeRef a) {
  return push(k_gelu(value(a)), {a.idx}, [](Graph& g, std::size_t self) {
    const Node& node = g.nodes_[self];
    const Tensor& x = g.nodes_[node.ins[0]].value;
    if (!g.nodes_[node.ins[0]].needs_grad) return;
    Tensor& dx = g.grad_buf(node.ins[0]);
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x.data[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      dx.data[i] += node.grad.data[i] * (cdf + v * pdf);
    }
  });
}

NodeRef Graph::softmax(NodeRef a) {
  return push(k_softmax(value(a)), {a.idx}, [](Graph& g, std::size_t self) {
    const Node& node = g.nodes_[self];
    if (!g.nodes_[node.ins[0]].needs_grad) return;
    const Tensor& y = node.value;
    const Tensor& dy = node.grad;
    Tensor& dx = g.grad_buf(node.ins[0]);
    const std::size_t n = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const double* yr = y.data.data() + i * n;
      const double* dyr = dy.data.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += yr[j] * dyr[j];
      double* dxr = dx.data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
    }
  });
}

NodeRef Graph::layer_norm(NodeRef a, double eps) {
  return push(k_layer_norm(value(a), eps), {a.idx},
              [eps](Graph& g, std::size_t self) {
                const Node& node = g.nodes_[self];
                if (!g.nodes_[node.ins[0]].needs_grad) return;
                const Tensor& x = g.nodes_[node.ins[0]].value;
                const Tensor& y = node.value;
                const Tensor& dy = node.grad;
                Tensor& dx = g.grad_buf(node.ins[0]);
                const std::size_t n = x.cols();
                const double dn = static_cast<double>(n);
                for (std::size_t i = 0; i < x.rows(); ++i) {
                  const double* xr = x.data.data() + i * n;
                  const double* yr = y.data.data() + i * n;
                  const double* dyr = dy.data.data() + i * n;
                  double mean = 0.0;
                  for (std::size_t j = 0; j < n; ++j) mean += xr[j];
                  mean /= dn;
                  double var = 0.0;
                  for (std::size_t j = 0; j < n; ++j) {
                    const double d = xr[j] - mean;
                    var += d * d;
                  }
                  var /= dn;
                  const double inv_std = 1.0 / std::sqrt(var + eps);
                  double sum_dy = 0.0, sum_dyy = 0.0;
                  for (std::size_t j = 0; j < n; ++j) {
                    sum_dy += dyr[j];
                    sum_dyy += dyr[j] * yr[j];
                  }
                  double* dxr = dx.data.data() + i * n;
                  for (std::size_t j = 0; j < n; ++j) {
                    dxr[j] += inv_std *
                              (dyr[j] - sum_dy / dn - yr[j] * sum_dyy / dn);
                  }
                }
              });
}

NodeRef Graph::concat_cols(const std::vector<NodeRef>& parts) {
  std::vector<const Tensor*> vals;
  std::vector<std::size_t> ins;
  vals.reserve(parts.size());
  for (NodeRef p : parts) {
    vals.push_back(&value(p));
    ins.push_back(p.idx);
  }
  Tensor out = k_concat_cols(vals);
  return push(std::move(out), std::move(ins), [](Graph& g, std::size_t self) {
    const Node& node = g.nodes_[self];
    const Tensor& dc = node.grad;
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < node.ins.size(); ++pi) {
      const std::size_t src = node.ins[pi];
      const std::size_t w = g.nodes_[src].value.cols();
      if (g.nodes_[src].needs_grad) {
        Tensor& dp = g.grad_buf(src);
        for (std::size_t i = 0; i < dc.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j)
            dp.at(i, j) += dc.at(i, off + j);
      }
      off += w;
    }
  });
}

NodeRef Graph::stack_rows(const std::vector<NodeRef>& rows) {
  if (rows.empty()) throw ShapeMismatch("stack_rows: no inputs");
  const std::size_t cols = value(rows[0]).cols();
  Tensor out = Tensor::zeros(rows.size(), cols);
  std::vector<std::size_t> ins;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Tensor& v = value(rows[i]);
    if (v.rows() != 1 || v.cols() != cols) {
      throw ShapeMismatch("stack_rows: inputs must be [1, n] with equal n");
    }
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + i * cols);
    ins.push_back(rows[i].idx);
  }
  return push(std::move(out), std::move(ins), [](Graph& g, std::size_t self) {
    const Node& node = g.nodes_[self];
    const Tensor& dc = node.grad;
    const std::size_t cols = dc.cols();
    for (std::size_t i = 0; i < node.ins.size(); ++i) {
      const std::size_t src = node.ins[i];
      if (!g.nodes_[src].needs_grad) continue;
      Tensor& dp = g.grad_buf(src);
      for (std::size_t j = 0; j < cols; ++j) dp.data[j] += dc.at(i, j);
    }
  });
}

NodeRef Graph::reshape(NodeRef a, std::size_t rows, std::size_t cols) {
  const Tensor& v = value(a);
  if (rows * cols != v.size()) throw ShapeMismatch("reshape: size changed");
  Tensor out = v;
  out.shape = {rows, cols};
  return push(std::move(out), {a.idx}, [](Graph& g, std::size_t self) {
    const Node& node = g.nodes_[self];
    // Flat accumulate; layout is unchanged by reshape.
    g.accumulate(node.ins[0], node.grad);
  });
}

NodeRef Graph::reduce_mean(NodeRef a) {
  const double inv = 1.0 / static_cast<double>(value(a).size());
  return push(Tensor::scalar(k_reduce_mean(value(a))), {a.idx},
              [inv](Graph& g, std::size_t self) {
                const Node& node = g.nodes_[self];
                if (!g.nodes_[node.ins[0]].needs_grad) return;
                Tensor& dx = g.grad_buf(node.ins[0]);
                const double gv = node.grad.item() * inv;
                for (double& v : dx.data) v += gv;
              });
}

NodeRef Graph::reduce_sum(NodeRef a) {
  return push(Tensor::scalar(k_reduce_sum(value(a))), {a.idx},
              [](Graph& g, std::size_t self) {
                const Node& node = g.nodes_[self];
                if (!g.nodes_[node.ins[0]].needs_grad) return;
                Tensor& dx = g.grad_buf(node.ins[0]);
                const double gv = node.grad.item();
                for (double& v : dx.data) v += gv;
              });
}

NodeRef Graph::mean_rows(NodeRef a) {
  const double inv = 1.0 / static_cast<double>(value(a).rows());
  return push(k_mean_rows(value(a)), {a.idx},
              [inv](Graph& g, std::size_t self) {
                const Node& node = g.nodes_[self];
                if (!g.nodes_[node.ins[0]].needs_grad) return;
                Tensor& dx = g.grad_buf(node.ins[0]);
                const Tensor& dc = node.grad;
                for (std::size_t i = 0; i < dx.rows(); ++i)
                  for (std::size_t j = 0; j < dx.cols(); ++j)
                    dx.at(i, j) += dc.data[j] * inv;
              });
}

const Tensor& Graph::grad(NodeRef n) { return grad_buf(n.idx); }

void Graph::backward(NodeRef root) {
  if (value(root).size() != 1) {
    throw ShapeMismatch("Graph::backward: root must be a scalar");
  }
  for (Node& n : nodes_) n.grad_ready = false;
  grad_buf(root.idx).data[0] = 1.0;
  for (std::size_t i = root.idx + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad_ready && n.back) n.back(*this, i);
  }
}

void Graph::export_param_grads(GradMap& acc) const {
  for (const Node& n : nodes_) {
    if (n.param_name.empty()) continue;
    if (n.grad_ready) {
      grad_accumulate(acc, n.param_name, n.grad);
    } else if (acc.find(n.param_name) == acc.end()) {
      acc.emplace(n.param_name,
                  Tensor::zeros(n.value.rows(), n.value.cols()));
    }
  }
}

}  // namespace xpol
