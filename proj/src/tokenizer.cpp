#include "udalm/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "udalm/errors.hpp"

namespace udalm::tok {

namespace {

const char* kReservedPieces[] = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"};

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

// Symbol sequence for one word: first char bare, continuations "##"-prefixed.
std::vector<std::string> word_symbols(const std::string& word) {
  std::vector<std::string> syms;
  for (std::size_t i = 0; i < word.size(); ++i) {
    std::string s(1, word[i]);
    syms.push_back(i == 0 ? s : "##" + s);
  }
  return syms;
}

std::string merge_symbols(const std::string& left, const std::string& right) {
  std::string r = right;
  if (r.rfind("##", 0) == 0) r = r.substr(2);
  return left + r;
}

}  // namespace

Vocab::Vocab() {
  for (const char* p : kReservedPieces) add(p);
}

int Vocab::add(const std::string& piece) {
  auto it = piece_to_id_.find(piece);
  if (it != piece_to_id_.end()) return it->second;
  int id = static_cast<int>(pieces_.size());
  pieces_.push_back(piece);
  piece_to_id_.emplace(piece, id);
  return id;
}

int Vocab::id_of(const std::string& piece) const {
  auto it = piece_to_id_.find(piece);
  return it == piece_to_id_.end() ? -1 : it->second;
}

const std::string& Vocab::piece_of(int id) const {
  if (id < 0 || id >= size()) throw DataError("vocab: id " + std::to_string(id) + " out of range");
  return pieces_[id];
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("vocab: cannot write " + path);
  for (int i = 0; i < size(); ++i) out << pieces_[i] << '\t' << i << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("vocab: cannot read " + path);
  Vocab v;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError("vocab: missing tab at " + path + ":" + std::to_string(lineno));
    std::string piece = line.substr(0, tab);
    int id = std::stoi(line.substr(tab + 1));
    if (id < Vocab::kReservedCount) {
      if (piece != kReservedPieces[id])
        throw DataError("vocab: reserved id " + std::to_string(id) + " bound to '" +
                        piece + "' at " + path + ":" + std::to_string(lineno));
      continue;  // constructor already added it
    }
    int got = v.add(piece);
    if (got != id)
      throw DataError("vocab: non-dense id " + std::to_string(id) + " (expected " +
                      std::to_string(got) + ") at " + path + ":" + std::to_string(lineno));
  }
  return v;
}

int TokenSequence::real_token_count() const {
  int n = 0;
  for (int m : attention_mask) n += m;
  return n;
}

Vocab build_vocab(const std::vector<std::string>& corpus, int target_size, int min_freq) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  if (target_size < Vocab::kReservedCount)
    throw UsageError("build_vocab: target_size " + std::to_string(target_size) +
                     " below reserved count " + std::to_string(Vocab::kReservedCount));

  std::map<std::string, long long> word_freq;
  for (const std::string& text : corpus)
    for (const std::string& w : split_words(text)) ++word_freq[w];

  // working symbol sequences, one per distinct word, weighted by frequency
  std::vector<std::vector<std::string>> seqs;
  std::vector<long long> weights;
  seqs.reserve(word_freq.size());
  for (const auto& [word, freq] : word_freq) {
    seqs.push_back(word_symbols(word));
    weights.push_back(freq);
  }

  Vocab vocab;
  for (const auto& seq : seqs)
    for (const auto& s : seq) vocab.add(s);

  const int merge_budget = target_size - Vocab::kReservedCount;
  for (int merges = 0; merges < merge_budget; ++merges) {
    std::map<std::pair<std::string, std::string>, long long> pair_freq;
    for (std::size_t si = 0; si < seqs.size(); ++si) {
      const auto& seq = seqs[si];
      for (std::size_t i = 0; i + 1 < seq.size(); ++i)
        pair_freq[{seq[i], seq[i + 1]}] += weights[si];
    }
    // best pair: highest frequency, ties broken lexicographically (map order)
    std::pair<std::string, std::string> best;
    long long best_freq = 0;
    for (const auto& [pair, freq] : pair_freq) {
      if (freq > best_freq) {
        best_freq = freq;
        best = pair;
      }
    }
    if (best_freq < min_freq || best_freq == 0) break;
    std::string merged = merge_symbols(best.first, best.second);
    vocab.add(merged);
    for (auto& seq : seqs) {
      for (std::size_t i = 0; i + 1 < seq.size();) {
        if (seq[i] == best.first && seq[i + 1] == best.second) {
          seq[i] = merged;
          seq.erase(seq.begin() + static_cast<long>(i) + 1);
        } else {
          ++i;
        }
      }
    }
  }
  return vocab;
}

TokenSequence encode(const std::string& text, const Vocab& vocab, int max_len) {
  if (max_len < 2) throw UsageError("encode: max_len must be at least 2");
  std::vector<int> piece_ids;
  for (const std::string& word : split_words(text)) {
    std::vector<int> word_ids;
    bool bad = false;
    std::size_t start = 0;
    while (start < word.size()) {
      std::size_t end = word.size();
      int match = -1;
      while (end > start) {
        std::string sub = word.substr(start, end - start);
        if (start > 0) sub = "##" + sub;
        int id = vocab.id_of(sub);
        if (id >= 0) {
          match = id;
          break;
        }
        --end;
      }
      if (match < 0) {
        bad = true;
        break;
      }
      word_ids.push_back(match);
      start = end;
    }
    if (bad)
      piece_ids.push_back(Vocab::kUnk);
    else
      piece_ids.insert(piece_ids.end(), word_ids.begin(), word_ids.end());
  }

  const int body = max_len - 2;
  if (static_cast<int>(piece_ids.size()) > body) piece_ids.resize(body);

  TokenSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(Vocab::kCls);
  seq.ids.insert(seq.ids.end(), piece_ids.begin(), piece_ids.end());
  seq.ids.push_back(Vocab::kSep);
  seq.attention_mask.assign(seq.ids.size(), 1);
  while (static_cast<int>(seq.ids.size()) < max_len) {
    seq.ids.push_back(Vocab::kPad);
    seq.attention_mask.push_back(0);
  }
  return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocab& vocab) {
  std::string out;
  for (int i = 0; i < seq.length(); ++i) {
    if (!seq.attention_mask[i]) break;
    int id = seq.ids[i];
    if (id == Vocab::kCls || id == Vocab::kSep) continue;
    const std::string& piece = vocab.piece_of(id);
    if (piece.rfind("##", 0) == 0) {
      out += piece.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += piece;
    }
  }
  return out;
}

TokenSequence apply_mlm_mask(const TokenSequence& seq, const Vocab& vocab,
                             double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0))
    throw UsageError("apply_mlm_mask: rate must be in [0,1], got " + std::to_string(rate));
  TokenSequence out = seq;
  out.mlm_labels.assign(seq.ids.size(), kIgnoreIndex);
  const int non_reserved = vocab.size() - Vocab::kReservedCount;
  for (int i = 0; i < seq.length(); ++i) {
    if (!seq.attention_mask[i]) continue;
    const int id = seq.ids[i];
    if (id == Vocab::kCls || id == Vocab::kSep || id == Vocab::kPad) continue;
    if (!rng.bernoulli(rate)) continue;
    out.mlm_labels[i] = id;
    double u = rng.uniform();
    if (u < 0.8) {
      out.ids[i] = Vocab::kMask;
    } else if (u < 0.9) {
      out.ids[i] = non_reserved > 0
                       ? Vocab::kReservedCount + static_cast<int>(rng.uniform_int(non_reserved))
                       : Vocab::kMask;
    }
    // else: token kept as is
  }
  return out;
}

}  // namespace udalm::tok
