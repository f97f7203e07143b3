#ifndef UDALM_TAPE_HPP
#define UDALM_TAPE_HPP

#include <map>
#include <string>
#include <vector>

#include "udalm/tensor.hpp"

namespace udalm::ad {

// Reverse-mode autodiff over a tape of matrix ops. Forward values are
// computed eagerly at node creation; backward() walks the tape in reverse.
// Gradients accumulate additively at fan-out. Single-threaded per tape.

enum class OpKind {
  kLeaf,
  kMatmul,      // A * B
  kMatmulNT,    // A * B^T
  kAdd,         // same shape
  kAddRowVec,   // (n x d) + broadcast (1 x d)
  kMulRowVec,   // (n x d) * broadcast (1 x d), elementwise
  kAddConst,    // + constant matrix, no grad through the constant
  kScale,       // * scalar constant
  kRelu,
  kGelu,
  kLayerNorm,       // row-wise, no affine; eps in alpha
  kSoftmaxRows,     // row-wise, max-subtracted
  kCrossEntropy,    // fused log-softmax + NLL, mean over non-ignored rows
  kEmbeddingGather, // rows of a table selected by index
  kSelectRows,
  kSliceCols,
  kConcatCols,      // two inputs side by side
  kSumAll,
  kMeanAll,
  kGradReverse,     // identity forward, -lambda * upstream backward
};

struct Node {
  OpKind kind;
  std::vector<int> in;       // input node ids
  Tensor out;                // forward value
  std::vector<int> idx;      // gather/select indices, targets, slice offsets
  double alpha = 0.0;        // scale factor / lambda_d / eps
  Tensor constant;           // kAddConst payload
  std::vector<double> saved; // per-row stats for layer_norm
  std::string name;          // kLeaf: parameter name
  bool requires_grad = false;
};

struct Value {
  int id = -1;
  int rows = 0;
  int cols = 0;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  // Leaf bound to external parameter storage; participates in gradient maps.
  Value param(const Tensor& t, const std::string& name);
  // Leaf holding an activation or constant input by value.
  Value input(Tensor t, bool requires_grad = false);

  Value matmul(Value a, Value b);
  Value matmul_nt(Value a, Value b);
  Value add(Value a, Value b);
  Value add_rowvec(Value a, Value row);
  Value mul_rowvec(Value a, Value row);
  Value add_const(Value a, const Tensor& m);
  Value scale(Value a, double alpha);
  Value relu(Value a);
  Value gelu(Value a);
  Value layer_norm(Value a, double eps = 1e-12);
  Value softmax_rows(Value a);
  // targets: one per row of logits; ignore_index rows contribute zero.
  Value cross_entropy(Value logits, const std::vector<int>& targets, int ignore_index);
  Value embedding_gather(Value table, const std::vector<int>& ids);
  Value select_rows(Value a, const std::vector<int>& rows);
  Value slice_cols(Value a, int col0, int width);
  Value concat_cols(Value a, Value b);
  Value sum_all(Value a);
  Value mean_all(Value a);
  Value grad_reverse(Value a, double lambda_d);

  const Tensor& value(Value v) const { return nodes_[v.id].out; }

  // Backward from a scalar loss. Rejected if loss is not 1x1.
  void backward(Value loss);

  // Gradient of any node after backward(); zeros if unreached.
  const Tensor& grad(Value v) const;

  // name -> gradient for every bound parameter leaf, zeros when unreached.
  std::map<std::string, Tensor> gradient_map() const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  int push(Node n);
  Value make(OpKind kind, std::vector<int> in, Tensor out);
  void check_finite(const Tensor& t, const char* op, int node_id) const;
  Tensor& grad_buf(int id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool ran_backward_ = false;
};

}  // namespace udalm::ad

#endif
