#ifndef UDALM_TOKENIZER_HPP
#define UDALM_TOKENIZER_HPP

#include <map>
#include <string>
#include <vector>

#include "udalm/rng.hpp"

namespace udalm::tok {

// Label value marking positions that do not contribute to the MLM loss.
constexpr int kIgnoreIndex = -100;

// Subword vocabulary. Reserved ids are fixed: PAD=0, CLS=1, SEP=2, MASK=3,
// UNK=4; remaining ids are dense in [0, size()).
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kMask = 3;
  static constexpr int kUnk = 4;
  static constexpr int kReservedCount = 5;

  Vocab();

  int add(const std::string& piece);  // returns existing id if present
  int id_of(const std::string& piece) const;  // -1 if absent
  const std::string& piece_of(int id) const;
  int size() const { return static_cast<int>(pieces_.size()); }
  bool is_reserved(int id) const { return id >= 0 && id < kReservedCount; }

  void save(const std::string& path) const;          // token<TAB>id lines
  static Vocab load(const std::string& path);

 private:
  std::map<std::string, int> piece_to_id_;
  std::vector<std::string> pieces_;
};

// Encoded, padded token stream. Position 0 is CLS; padding only at the tail.
// mlm_labels is empty until masking is applied, then holds the original id at
// masked positions and kIgnoreIndex elsewhere.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<int> attention_mask;  // 1 = real token (CLS/SEP included)
  std::vector<int> mlm_labels;

  int length() const { return static_cast<int>(ids.size()); }
  bool has_mlm_labels() const { return !mlm_labels.empty(); }
  int real_token_count() const;
};

// Greedy frequency-based subword merges standing in for WordPiece training.
// The base alphabet (first-character pieces and "##" continuations) is always
// included so every in-alphabet word stays encodable; the merge budget is
// target_size minus the reserved count. min_freq gates which pairs may merge.
Vocab build_vocab(const std::vector<std::string>& corpus, int target_size,
                  int min_freq = 1);

// Lowercase, whitespace-split, greedy longest-match subword encoding with
// CLS/SEP framing, truncation to max_len, and PAD tail. A word containing a
// character outside the vocabulary encodes as a single UNK.
TokenSequence encode(const std::string& text, const Vocab& vocab, int max_len);

// Inverse of encode for diagnostics: joins pieces, fusing "##" continuations.
std::string detokenize(const TokenSequence& seq, const Vocab& vocab);

// MLM masking: each eligible position (real, non-CLS/SEP/PAD) is selected
// independently with probability rate; selected positions are replaced by
// MASK 80% of the time, by a uniform random non-reserved id 10%, and left
// unchanged 10%. mlm_labels holds the original id at selected positions.
TokenSequence apply_mlm_mask(const TokenSequence& seq, const Vocab& vocab,
                             double rate, Rng& rng);

}  // namespace udalm::tok

#endif
