#ifndef UDALM_ENCODER_HPP
#define UDALM_ENCODER_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "udalm/tape.hpp"
#include "udalm/tokenizer.hpp"

namespace udalm::nn {

struct EncoderConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 4;
  int ff_dim = 128;
  int vocab_size = 0;
  int max_len = 128;
  int num_classes = 2;
  bool tie_mlm_embeddings = false;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

// All learnable weights, keyed by name. std::map keeps iteration order
// deterministic for init, serialization and the optimizer.
struct EncoderParams {
  EncoderConfig config;
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t scalar_count() const;
};

// Deterministic init: weight matrices Xavier-normal, embeddings N(0, 0.1),
// biases and layer-norm shifts zero, layer-norm gains one.
EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed);

struct EncoderGraph {
  ad::Value hidden_states;  // max_len x hidden
  ad::Value cls_feature;    // 1 x hidden
};

// Full encoder stack over one padded sequence. Padded key positions receive
// a large negative additive attention bias, so their values cannot influence
// real positions.
EncoderGraph encode_sequence(ad::Tape& tape, const EncoderParams& params,
                             const tok::TokenSequence& seq);

// Vocabulary logits at the given (masked) positions: |positions| x vocab.
ad::Value mlm_logits(ad::Tape& tape, const EncoderParams& params,
                     ad::Value hidden_states, const std::vector<int>& positions);

// Task head: one affine map from the CLS feature, nothing else.
ad::Value clf_logits(ad::Tape& tape, const EncoderParams& params, ad::Value cls_feature);

// Domain head behind the gradient-reversal gate. Forward is identical to an
// un-reversed head; backward into the encoder is scaled by -lambda_d.
ad::Value domain_logits(ad::Tape& tape, const EncoderParams& params,
                        ad::Value cls_feature, double lambda_d);

// Checkpoint file: magic, version, config header, named tensors as raw
// little-endian doubles, trailing FNV-1a checksum. Round-trip is bit-exact.
void save_params(const EncoderParams& params, const std::string& path);
EncoderParams load_params(const std::string& path);

// Convenience forward passes for evaluation (no gradients kept).
Tensor eval_cls_feature(const EncoderParams& params, const tok::TokenSequence& seq);
int predict_class(const EncoderParams& params, const tok::TokenSequence& seq);

}  // namespace udalm::nn

#endif
