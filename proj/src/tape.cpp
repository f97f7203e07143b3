#include "udalm/tape.hpp"

#include <algorithm>
#include <cmath>

#include "udalm/errors.hpp"

namespace udalm::ad {

namespace {

constexpr double kSqrt1_2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kSqrt1_2)); }

double gelu_grad(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * kSqrt1_2));
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

}  // namespace

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Value Tape::make(OpKind kind, std::vector<int> in, Tensor out) {
  Node n;
  n.kind = kind;
  n.in = std::move(in);
  n.out = std::move(out);
  int id = push(std::move(n));
  return Value{id, nodes_[id].out.rows, nodes_[id].out.cols};
}

void Tape::check_finite(const Tensor& t, const char* op, int node_id) const {
  if (!t.all_finite())
    throw NumericError(std::string(op) + " produced non-finite values (node " +
                       std::to_string(node_id) + ")");
}

Value Tape::param(const Tensor& t, const std::string& name) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.out = t;
  n.name = name;
  n.requires_grad = true;
  int id = push(std::move(n));
  return Value{id, t.rows, t.cols};
}

Value Tape::input(Tensor t, bool requires_grad) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.out = std::move(t);
  n.requires_grad = requires_grad;
  int id = push(std::move(n));
  return Value{id, nodes_[id].out.rows, nodes_[id].out.cols};
}

Value Tape::matmul(Value a, Value b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: " + nodes_[a.id].out.shape_str() + " x " +
                     nodes_[b.id].out.shape_str() + " (nodes " + std::to_string(a.id) +
                     "," + std::to_string(b.id) + ")");
  return make(OpKind::kMatmul, {a.id, b.id},
              udalm::matmul(nodes_[a.id].out, nodes_[b.id].out));
}

Value Tape::matmul_nt(Value a, Value b) {
  if (a.cols != b.cols)
    throw ShapeError("matmul_nt: " + nodes_[a.id].out.shape_str() + " x " +
                     nodes_[b.id].out.shape_str() + "^T (nodes " + std::to_string(a.id) +
                     "," + std::to_string(b.id) + ")");
  return make(OpKind::kMatmulNT, {a.id, b.id},
              udalm::matmul_nt(nodes_[a.id].out, nodes_[b.id].out));
}

Value Tape::add(Value a, Value b) {
  const Tensor& ta = nodes_[a.id].out;
  const Tensor& tb = nodes_[b.id].out;
  if (!ta.same_shape(tb))
    throw ShapeError("add: shapes " + ta.shape_str() + " vs " + tb.shape_str() +
                     " (nodes " + std::to_string(a.id) + "," + std::to_string(b.id) + ")");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += tb.v[i];
  return make(OpKind::kAdd, {a.id, b.id}, std::move(out));
}

Value Tape::add_rowvec(Value a, Value row) {
  const Tensor& ta = nodes_[a.id].out;
  const Tensor& tr = nodes_[row.id].out;
  if (tr.rows != 1 || tr.cols != ta.cols)
    throw ShapeError("add_rowvec: " + ta.shape_str() + " + " + tr.shape_str() +
                     " (node " + std::to_string(row.id) + ")");
  Tensor out = ta;
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) += tr.v[j];
  return make(OpKind::kAddRowVec, {a.id, row.id}, std::move(out));
}

Value Tape::mul_rowvec(Value a, Value row) {
  const Tensor& ta = nodes_[a.id].out;
  const Tensor& tr = nodes_[row.id].out;
  if (tr.rows != 1 || tr.cols != ta.cols)
    throw ShapeError("mul_rowvec: " + ta.shape_str() + " * " + tr.shape_str() +
                     " (node " + std::to_string(row.id) + ")");
  Tensor out = ta;
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) *= tr.v[j];
  return make(OpKind::kMulRowVec, {a.id, row.id}, std::move(out));
}

Value Tape::add_const(Value a, const Tensor& m) {
  const Tensor& ta = nodes_[a.id].out;
  if (!ta.same_shape(m))
    throw ShapeError("add_const: shapes " + ta.shape_str() + " vs " + m.shape_str());
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += m.v[i];
  const int r = ta.rows, c = ta.cols;
  Node n;
  n.kind = OpKind::kAddConst;
  n.in = {a.id};
  n.out = std::move(out);
  int id = push(std::move(n));
  return Value{id, r, c};
}

Value Tape::scale(Value a, double alpha) {
  Tensor out = nodes_[a.id].out;
  for (double& x : out.v) x *= alpha;
  Node n;
  n.kind = OpKind::kScale;
  n.in = {a.id};
  n.out = std::move(out);
  n.alpha = alpha;
  int id = push(std::move(n));
  return Value{id, nodes_[id].out.rows, nodes_[id].out.cols};
}

Value Tape::relu(Value a) {
  Tensor out = nodes_[a.id].out;
  for (double& x : out.v) x = x > 0.0 ? x : 0.0;
  return make(OpKind::kRelu, {a.id}, std::move(out));
}

Value Tape::gelu(Value a) {
  Tensor out = nodes_[a.id].out;
  for (double& x : out.v) x = gelu_fwd(x);
  return make(OpKind::kGelu, {a.id}, std::move(out));
}

Value Tape::layer_norm(Value a, double eps) {
  const Tensor& ta = nodes_[a.id].out;
  Tensor out(ta.rows, ta.cols);
  Node n;
  n.kind = OpKind::kLayerNorm;
  n.in = {a.id};
  n.alpha = eps;
  n.saved.resize(static_cast<std::size_t>(ta.rows) * 2);  // mean, rstd per row
  const int d = ta.cols;
  for (int i = 0; i < ta.rows; ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += ta.at(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = ta.at(i, j) - mean;
      var += c * c;
    }
    var /= d;
    double rstd = 1.0 / std::sqrt(var + eps);
    n.saved[2 * i] = mean;
    n.saved[2 * i + 1] = rstd;
    for (int j = 0; j < d; ++j) out.at(i, j) = (ta.at(i, j) - mean) * rstd;
  }
  const int r = ta.rows, c = ta.cols;
  n.out = std::move(out);
  int id = push(std::move(n));
  return Value{id, r, c};
}

Value Tape::softmax_rows(Value a) {
  const Tensor& ta = nodes_[a.id].out;
  Tensor out(ta.rows, ta.cols);
  for (int i = 0; i < ta.rows; ++i) {
    double mx = ta.at(i, 0);
    for (int j = 1; j < ta.cols; ++j) mx = std::max(mx, ta.at(i, j));
    double z = 0.0;
    for (int j = 0; j < ta.cols; ++j) {
      double e = std::exp(ta.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    double inv = 1.0 / z;
    for (int j = 0; j < ta.cols; ++j) out.at(i, j) *= inv;
  }
  const int r = ta.rows, c = ta.cols;
  int id;
  {
    Node n;
    n.kind = OpKind::kSoftmaxRows;
    n.in = {a.id};
    n.out = std::move(out);
    id = push(std::move(n));
  }
  check_finite(nodes_[id].out, "softmax", id);
  return Value{id, r, c};
}

Value Tape::cross_entropy(Value logits, const std::vector<int>& targets, int ignore_index) {
  const Tensor& tl = nodes_[logits.id].out;
  if (static_cast<int>(targets.size()) != tl.rows)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(tl.rows) + " rows (node " +
                     std::to_string(logits.id) + ")");
  for (int i = 0; i < tl.rows; ++i)
    if (targets[i] != ignore_index && (targets[i] < 0 || targets[i] >= tl.cols))
      throw ShapeError("cross_entropy: target " + std::to_string(targets[i]) +
                       " out of range at row " + std::to_string(i));
  int count = 0;
  double total = 0.0;
  for (int i = 0; i < tl.rows; ++i) {
    if (targets[i] == ignore_index) continue;
    double mx = tl.at(i, 0);
    for (int j = 1; j < tl.cols; ++j) mx = std::max(mx, tl.at(i, j));
    double z = 0.0;
    for (int j = 0; j < tl.cols; ++j) z += std::exp(tl.at(i, j) - mx);
    total += std::log(z) + mx - tl.at(i, targets[i]);
    ++count;
  }
  Node n;
  n.kind = OpKind::kCrossEntropy;
  n.in = {logits.id};
  n.idx = targets;
  n.alpha = static_cast<double>(ignore_index);
  n.out = Tensor::scalar(count > 0 ? total / count : 0.0);
  int id = push(std::move(n));
  check_finite(nodes_[id].out, "cross_entropy", id);
  return Value{id, 1, 1};
}

Value Tape::embedding_gather(Value table, const std::vector<int>& ids) {
  const Tensor& tt = nodes_[table.id].out;
  Tensor out(static_cast<int>(ids.size()), tt.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tt.rows)
      throw ShapeError("embedding_gather: id " + std::to_string(ids[i]) +
                       " outside table of " + std::to_string(tt.rows) + " rows");
    for (int j = 0; j < tt.cols; ++j) out.at(static_cast<int>(i), j) = tt.at(ids[i], j);
  }
  Node n;
  n.kind = OpKind::kEmbeddingGather;
  n.in = {table.id};
  n.idx = ids;
  const int c = tt.cols;
  n.out = std::move(out);
  int id = push(std::move(n));
  return Value{id, static_cast<int>(ids.size()), c};
}

Value Tape::select_rows(Value a, const std::vector<int>& rows) {
  const Tensor& ta = nodes_[a.id].out;
  Tensor out(static_cast<int>(rows.size()), ta.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= ta.rows)
      throw ShapeError("select_rows: row " + std::to_string(rows[i]) + " outside " +
                       ta.shape_str() + " (node " + std::to_string(a.id) + ")");
    for (int j = 0; j < ta.cols; ++j) out.at(static_cast<int>(i), j) = ta.at(rows[i], j);
  }
  Node n;
  n.kind = OpKind::kSelectRows;
  n.in = {a.id};
  n.idx = rows;
  const int c = ta.cols;
  n.out = std::move(out);
  int id = push(std::move(n));
  return Value{id, static_cast<int>(rows.size()), c};
}

Value Tape::slice_cols(Value a, int col0, int width) {
  const Tensor& ta = nodes_[a.id].out;
  if (col0 < 0 || width <= 0 || col0 + width > ta.cols)
    throw ShapeError("slice_cols: [" + std::to_string(col0) + "," +
                     std::to_string(col0 + width) + ") outside " + ta.shape_str());
  Tensor out(ta.rows, width);
  for (int i = 0; i < ta.rows; ++i)
    for (int j = 0; j < width; ++j) out.at(i, j) = ta.at(i, col0 + j);
  Node n;
  n.kind = OpKind::kSliceCols;
  n.in = {a.id};
  n.idx = {col0, width};
  const int r = ta.rows;
  n.out = std::move(out);
  int id = push(std::move(n));
  return Value{id, r, width};
}

Value Tape::concat_cols(Value a, Value b) {
  const Tensor& ta = nodes_[a.id].out;
  const Tensor& tb = nodes_[b.id].out;
  if (ta.rows != tb.rows)
    throw ShapeError("concat_cols: rows " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out(ta.rows, ta.cols + tb.cols);
  for (int i = 0; i < ta.rows; ++i) {
    for (int j = 0; j < ta.cols; ++j) out.at(i, j) = ta.at(i, j);
    for (int j = 0; j < tb.cols; ++j) out.at(i, ta.cols + j) = tb.at(i, j);
  }
  return make(OpKind::kConcatCols, {a.id, b.id}, std::move(out));
}

Value Tape::sum_all(Value a) {
  const Tensor& ta = nodes_[a.id].out;
  double s = 0.0;
  for (double x : ta.v) s += x;
  return make(OpKind::kSumAll, {a.id}, Tensor::scalar(s));
}

Value Tape::mean_all(Value a) {
  const Tensor& ta = nodes_[a.id].out;
  double s = 0.0;
  for (double x : ta.v) s += x;
  return make(OpKind::kMeanAll, {a.id}, Tensor::scalar(s / static_cast<double>(ta.size())));
}

Value Tape::grad_reverse(Value a, double lambda_d) {
  if (lambda_d < 0.0)
    throw UsageError("grad_reverse: lambda_d must be nonnegative, got " +
                     std::to_string(lambda_d));
  Node n;
  n.kind = OpKind::kGradReverse;
  n.in = {a.id};
  n.out = nodes_[a.id].out;
  n.alpha = lambda_d;
  int id = push(std::move(n));
  return Value{id, nodes_[id].out.rows, nodes_[id].out.cols};
}

Tensor& Tape::grad_buf(int id) {
  if (grads_[id].size() == 0)
    grads_[id] = Tensor(nodes_[id].out.rows, nodes_[id].out.cols);
  return grads_[id];
}

void Tape::backward(Value loss) {
  const Tensor& tl = nodes_[loss.id].out;
  if (tl.rows != 1 || tl.cols != 1)
    throw ShapeError("backward: loss must be scalar, got " + tl.shape_str() +
                     " (node " + std::to_string(loss.id) + ")");
  grads_.assign(nodes_.size(), Tensor());
  grad_buf(loss.id).v[0] = 1.0;
  ran_backward_ = true;

  for (int id = loss.id; id >= 0; --id) {
    if (grads_[id].size() == 0) continue;  // unreached
    const Node& n = nodes_[id];
    const Tensor& g = grads_[id];
    switch (n.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kMatmul: {
        const Tensor& a = nodes_[n.in[0]].out;
        const Tensor& b = nodes_[n.in[1]].out;
        matmul_nt_acc(g, b, grad_buf(n.in[0]));  // dA += g * B^T
        matmul_tn_acc(a, g, grad_buf(n.in[1]));  // dB += A^T * g
        break;
      }
      case OpKind::kMatmulNT: {
        const Tensor& a = nodes_[n.in[0]].out;
        const Tensor& b = nodes_[n.in[1]].out;
        matmul_acc(g, b, grad_buf(n.in[0]));     // dA += g * B
        matmul_tn_acc(g, a, grad_buf(n.in[1]));  // dB += g^T * A
        break;
      }
      case OpKind::kAdd:
        axpy(1.0, g, grad_buf(n.in[0]));
        axpy(1.0, g, grad_buf(n.in[1]));
        break;
      case OpKind::kAddRowVec: {
        axpy(1.0, g, grad_buf(n.in[0]));
        Tensor& gr = grad_buf(n.in[1]);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) gr.v[j] += g.at(i, j);
        break;
      }
      case OpKind::kMulRowVec: {
        const Tensor& a = nodes_[n.in[0]].out;
        const Tensor& r = nodes_[n.in[1]].out;
        Tensor& ga = grad_buf(n.in[0]);
        Tensor& gr = grad_buf(n.in[1]);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) {
            ga.at(i, j) += g.at(i, j) * r.v[j];
            gr.v[j] += g.at(i, j) * a.at(i, j);
          }
        break;
      }
      case OpKind::kAddConst:
        axpy(1.0, g, grad_buf(n.in[0]));
        break;
      case OpKind::kScale:
        axpy(n.alpha, g, grad_buf(n.in[0]));
        break;
      case OpKind::kRelu: {
        const Tensor& a = nodes_[n.in[0]].out;
        Tensor& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (a.v[i] > 0.0) ga.v[i] += g.v[i];
        break;
      }
      case OpKind::kGelu: {
        const Tensor& a = nodes_[n.in[0]].out;
        Tensor& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga.v[i] += g.v[i] * gelu_grad(a.v[i]);
        break;
      }
      case OpKind::kLayerNorm: {
        const Tensor& y = n.out;
        Tensor& ga = grad_buf(n.in[0]);
        const int d = y.cols;
        for (int i = 0; i < y.rows; ++i) {
          double rstd = n.saved[2 * i + 1];
          double gsum = 0.0, gysum = 0.0;
          for (int j = 0; j < d; ++j) {
            gsum += g.at(i, j);
            gysum += g.at(i, j) * y.at(i, j);
          }
          double gmean = gsum / d, gymean = gysum / d;
          for (int j = 0; j < d; ++j)
            ga.at(i, j) += rstd * (g.at(i, j) - gmean - y.at(i, j) * gymean);
        }
        break;
      }
      case OpKind::kSoftmaxRows: {
        const Tensor& s = n.out;
        Tensor& ga = grad_buf(n.in[0]);
        for (int i = 0; i < s.rows; ++i) {
          double dot = 0.0;
          for (int j = 0; j < s.cols; ++j) dot += g.at(i, j) * s.at(i, j);
          for (int j = 0; j < s.cols; ++j)
            ga.at(i, j) += s.at(i, j) * (g.at(i, j) - dot);
        }
        break;
      }
      case OpKind::kCrossEntropy: {
        const Tensor& l = nodes_[n.in[0]].out;
        Tensor& ga = grad_buf(n.in[0]);
        const int ignore = static_cast<int>(n.alpha);
        int count = 0;
        for (int t : n.idx)
          if (t != ignore) ++count;
        if (count == 0) break;
        const double gscale = g.v[0] / count;
        for (int i = 0; i < l.rows; ++i) {
          if (n.idx[i] == ignore) continue;
          double mx = l.at(i, 0);
          for (int j = 1; j < l.cols; ++j) mx = std::max(mx, l.at(i, j));
          double z = 0.0;
          for (int j = 0; j < l.cols; ++j) z += std::exp(l.at(i, j) - mx);
          for (int j = 0; j < l.cols; ++j) {
            double p = std::exp(l.at(i, j) - mx) / z;
            ga.at(i, j) += gscale * (p - (j == n.idx[i] ? 1.0 : 0.0));
          }
        }
        break;
      }
      case OpKind::kEmbeddingGather: {
        Tensor& gt = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < n.idx.size(); ++i)
          for (int j = 0; j < g.cols; ++j)
            gt.at(n.idx[i], j) += g.at(static_cast<int>(i), j);
        break;
      }
      case OpKind::kSelectRows: {
        Tensor& ga = grad_buf(n.in[0]);
        for (std::size_t i = 0; i < n.idx.size(); ++i)
          for (int j = 0; j < g.cols; ++j)
            ga.at(n.idx[i], j) += g.at(static_cast<int>(i), j);
        break;
      }
      case OpKind::kSliceCols: {
        Tensor& ga = grad_buf(n.in[0]);
        const int c0 = n.idx[0], w = n.idx[1];
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < w; ++j) ga.at(i, c0 + j) += g.at(i, j);
        break;
      }
      case OpKind::kConcatCols: {
        Tensor& ga = grad_buf(n.in[0]);
        Tensor& gb = grad_buf(n.in[1]);
        const int ca = ga.cols;
        for (int i = 0; i < g.rows; ++i) {
          for (int j = 0; j < ca; ++j) ga.at(i, j) += g.at(i, j);
          for (int j = 0; j < gb.cols; ++j) gb.at(i, j) += g.at(i, ca + j);
        }
        break;
      }
      case OpKind::kSumAll: {
        Tensor& ga = grad_buf(n.in[0]);
        for (double& x : ga.v) x += g.v[0];
        break;
      }
      case OpKind::kMeanAll: {
        Tensor& ga = grad_buf(n.in[0]);
        const double s = g.v[0] / static_cast<double>(ga.size());
        for (double& x : ga.v) x += s;
        break;
      }
      case OpKind::kGradReverse:
        axpy(-n.alpha, g, grad_buf(n.in[0]));
        break;
    }
  }
}

const Tensor& Tape::grad(Value v) const {
  static const Tensor kEmpty;
  if (!ran_backward_) throw UsageError("grad() called before backward()");
  if (grads_[v.id].size() == 0) {
    // unreached: report a zero tensor of the right shape
    const_cast<Tape*>(this)->grads_[v.id] =
        Tensor(nodes_[v.id].out.rows, nodes_[v.id].out.cols);
  }
  return grads_[v.id];
}

std::map<std::string, Tensor> Tape::gradient_map() const {
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.kind != OpKind::kLeaf || !n.requires_grad || n.name.empty()) continue;
    Tensor g = (ran_backward_ && grads_[i].size() != 0)
                   ? grads_[i]
                   : Tensor(n.out.rows, n.out.cols);
    auto it = out.find(n.name);
    if (it == out.end())
      out.emplace(n.name, std::move(g));
    else
      axpy(1.0, g, it->second);
  }
  return out;
}

}  // namespace udalm::ad
