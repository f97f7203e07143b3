#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "udalm/encoder.hpp"
#include "udalm/errors.hpp"
#include "udalm/rng.hpp"
#include "udalm/tokenizer.hpp"

using namespace udalm;
using nn::EncoderConfig;
using nn::EncoderParams;
using tok::TokenSequence;

namespace {

EncoderConfig tiny_config(int vocab) {
  EncoderConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.ff_dim = 16;
  c.vocab_size = vocab;
  c.max_len = 8;
  c.num_classes = 2;
  return c;
}

TokenSequence make_seq(std::vector<int> ids, int real_count) {
  TokenSequence seq;
  seq.ids = std::move(ids);
  seq.attention_mask.assign(seq.ids.size(), 0);
  for (int i = 0; i < real_count; ++i) seq.attention_mask[i] = 1;
  return seq;
}

double mixed_mini_loss(const EncoderParams& params, const TokenSequence& seq, int label,
                       const std::vector<int>& mlm_positions,
                       const std::vector<int>& mlm_targets,
                       std::map<std::string, Tensor>* grads_out) {
  ad::Tape tape;
  nn::EncoderGraph g = nn::encode_sequence(tape, params, seq);
  ad::Value clf_ce = tape.cross_entropy(nn::clf_logits(tape, params, g.cls_feature),
                                        {label}, tok::kIgnoreIndex);
  ad::Value mlm_ce = tape.cross_entropy(
      nn::mlm_logits(tape, params, g.hidden_states, mlm_positions), mlm_targets,
      tok::kIgnoreIndex);
  ad::Value loss = tape.add(tape.scale(clf_ce, 0.5), tape.scale(mlm_ce, 0.5));
  if (grads_out) {
    tape.backward(loss);
    *grads_out = tape.gradient_map();
  }
  return tape.value(loss).v[0];
}

}  // namespace

TEST_CASE("init is deterministic per seed and differs across seeds") {
  EncoderConfig cfg = tiny_config(20);
  EncoderParams a = nn::init_params(cfg, 5);
  EncoderParams b = nn::init_params(cfg, 5);
  EncoderParams c = nn::init_params(cfg, 6);
  REQUIRE(a.tensors.size() == b.tensors.size());
  bool all_equal = true, any_diff_c = false;
  for (const auto& [name, t] : a.tensors) {
    if (t.v != b.tensors.at(name).v) all_equal = false;
    if (t.v != c.tensors.at(name).v) any_diff_c = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
}

TEST_CASE("random init gives finite logits on a random batch") {
  EncoderConfig cfg = tiny_config(20);
  EncoderParams p = nn::init_params(cfg, 11);
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> ids = {tok::Vocab::kCls};
    for (int i = 1; i < 7; ++i) ids.push_back(5 + rng.index(15));
    ids.push_back(tok::Vocab::kSep);
    ids.resize(8, tok::Vocab::kPad);
    TokenSequence seq = make_seq(ids, 8);
    ad::Tape tape;
    nn::EncoderGraph g = nn::encode_sequence(tape, p, seq);
    const Tensor& logits = tape.value(nn::clf_logits(tape, p, g.cls_feature));
    CHECK(logits.all_finite());
    const Tensor& ml = tape.value(nn::mlm_logits(tape, p, g.hidden_states, {1, 3}));
    CHECK(ml.all_finite());
  }
}

TEST_CASE("sequence length must match the configured max_len") {
  EncoderConfig cfg = tiny_config(20);
  EncoderParams p = nn::init_params(cfg, 1);
  TokenSequence seq = make_seq({1, 5, 2, 0}, 3);
  ad::Tape tape;
  CHECK_THROWS_AS(nn::encode_sequence(tape, p, seq), ShapeError);
}

TEST_CASE("padded tail content cannot influence real positions") {
  EncoderConfig cfg = tiny_config(30);
  EncoderParams p = nn::init_params(cfg, 21);
  TokenSequence a = make_seq({1, 7, 9, 11, 2, 0, 0, 0}, 5);
  TokenSequence b = make_seq({1, 7, 9, 11, 2, 13, 17, 23}, 5);  // junk in the pad tail
  ad::Tape ta, tb;
  nn::EncoderGraph ga = nn::encode_sequence(ta, p, a);
  nn::EncoderGraph gb = nn::encode_sequence(tb, p, b);
  const Tensor& ha = ta.value(ga.hidden_states);
  const Tensor& hb = tb.value(gb.hidden_states);
  for (int pos = 0; pos < 5; ++pos)
    for (int j = 0; j < cfg.hidden; ++j) CHECK(ha.at(pos, j) == hb.at(pos, j));
  CHECK(ta.value(ga.cls_feature).v == tb.value(gb.cls_feature).v);
}

TEST_CASE("all-padding-after-frame input stays finite") {
  EncoderConfig cfg = tiny_config(30);
  EncoderParams p = nn::init_params(cfg, 22);
  TokenSequence seq = make_seq({1, 2, 0, 0, 0, 0, 0, 0}, 2);
  ad::Tape tape;
  nn::EncoderGraph g = nn::encode_sequence(tape, p, seq);
  CHECK(tape.value(g.hidden_states).all_finite());
  CHECK(tape.value(g.cls_feature).all_finite());
}

TEST_CASE("zeroed value/output projections reduce a layer to its feed-forward path") {
  EncoderConfig cfg = tiny_config(30);
  EncoderParams p = nn::init_params(cfg, 23);
  for (const char* name : {"layer0.wv", "layer0.bv", "layer0.wo", "layer0.bo"})
    p.at(name).fill(0.0);

  TokenSequence seq = make_seq({1, 7, 9, 11, 13, 15, 2, 0}, 7);
  ad::Tape tape;
  nn::EncoderGraph g = nn::encode_sequence(tape, p, seq);
  const Tensor& got = tape.value(g.hidden_states);

  // reference trace: embeddings -> LN -> affine -> FFN -> residual LN -> affine
  ad::Tape ref;
  auto P = [&](const std::string& n) { return ref.param(p.at(n), n); };
  ad::Value emb = ref.add(ref.embedding_gather(P("tok_emb"), seq.ids), P("pos_emb"));
  ad::Value res1 = ref.add_rowvec(
      ref.mul_rowvec(ref.layer_norm(emb), P("layer0.ln1_g")), P("layer0.ln1_b"));
  ad::Value ff = ref.add_rowvec(
      ref.matmul(ref.gelu(ref.add_rowvec(ref.matmul(res1, P("layer0.ff_w1")),
                                         P("layer0.ff_b1"))),
                 P("layer0.ff_w2")),
      P("layer0.ff_b2"));
  ad::Value expect = ref.add_rowvec(
      ref.mul_rowvec(ref.layer_norm(ref.add(res1, ff)), P("layer0.ln2_g")),
      P("layer0.ln2_b"));
  const Tensor& want = ref.value(expect);

  REQUIRE(got.same_shape(want));
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got.v[i] == doctest::Approx(want.v[i]).epsilon(1e-14));
}

TEST_CASE("full tiny model matches finite differences end to end") {
  EncoderConfig cfg = tiny_config(20);
  EncoderParams params = nn::init_params(cfg, 31);
  TokenSequence seq = make_seq({1, 6, 3, 9, 12, 2, 0, 0}, 6);
  std::vector<int> positions = {2, 4};
  std::vector<int> targets = {7, 15};

  std::map<std::string, Tensor> analytic;
  mixed_mini_loss(params, seq, 1, positions, targets, &analytic);

  constexpr double kEps = 1e-5;
  double worst = 0.0;
  for (auto& [name, tensor] : params.tensors) {
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      double keep = tensor.v[i];
      tensor.v[i] = keep + kEps;
      double up = mixed_mini_loss(params, seq, 1, positions, targets, nullptr);
      tensor.v[i] = keep - kEps;
      double down = mixed_mini_loss(params, seq, 1, positions, targets, nullptr);
      tensor.v[i] = keep;
      double fd = (up - down) / (2.0 * kEps);
      // heads that are not part of this loss never reach the tape; their
      // gradient is structurally zero
      auto it = analytic.find(name);
      double a = it == analytic.end() ? 0.0 : it->second.v[i];
      double rel = std::abs(a - fd) / std::max({1e-6, std::abs(a), std::abs(fd)});
      worst = std::max(worst, rel);
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("mlm head: empty positions give empty logits and zero loss") {
  EncoderConfig cfg = tiny_config(20);
  EncoderParams p = nn::init_params(cfg, 41);
  TokenSequence seq = make_seq({1, 6, 2, 0, 0, 0, 0, 0}, 3);
  ad::Tape tape;
  nn::EncoderGraph g = nn::encode_sequence(tape, p, seq);
  ad::Value logits = nn::mlm_logits(tape, p, g.hidden_states, {});
  CHECK(tape.value(logits).rows == 0);
  ad::Value ce = tape.cross_entropy(logits, {}, tok::kIgnoreIndex);
  CHECK(tape.value(ce).v[0] == 0.0);
}

TEST_CASE("mlm smoke training lowers the loss on a tiny corpus") {
  // 50 patterned sentences; 200 plain gradient steps on the MLM loss
  EncoderConfig cfg = tiny_config(24);
  EncoderParams params = nn::init_params(cfg, 43);
  Rng rng(7);
  std::vector<TokenSequence> batch;
  for (int i = 0; i < 50; ++i) {
    int a = 5 + rng.index(9);
    int pair = a + 9;  // deterministic co-occurrence structure to learn
    batch.push_back(make_seq({1, a, pair, a, pair, a, 2, 0}, 7));
  }
  auto mlm_loss_and_grads = [&](std::map<std::string, Tensor>* grads) {
    double total = 0.0;
    for (const auto& seq : batch) {
      TokenSequence masked = seq;
      masked.ids[4] = tok::Vocab::kMask;
      ad::Tape tape;
      nn::EncoderGraph g = nn::encode_sequence(tape, params, masked);
      ad::Value ce = tape.cross_entropy(nn::mlm_logits(tape, params, g.hidden_states, {4}),
                                        {seq.ids[4]}, tok::kIgnoreIndex);
      total += tape.value(ce).v[0];
      if (grads) {
        tape.backward(ce);
        for (auto& [name, gr] : tape.gradient_map()) {
          auto it = grads->find(name);
          if (it == grads->end()) grads->emplace(name, gr);
          else axpy(1.0, gr, it->second);
        }
      }
    }
    return total / batch.size();
  };
  double initial = mlm_loss_and_grads(nullptr);
  for (int step = 0; step < 200; ++step) {
    std::map<std::string, Tensor> grads;
    mlm_loss_and_grads(&grads);
    for (auto& [name, t] : params.tensors) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      axpy(-0.05 / batch.size(), it->second, t);
    }
  }
  double trained = mlm_loss_and_grads(nullptr);
  CHECK(trained < initial);
}

TEST_CASE("classifier head: zero weights give the uniform distribution") {
  EncoderConfig cfg = tiny_config(20);
  EncoderParams p = nn::init_params(cfg, 47);
  p.at("clf_w").fill(0.0);
  p.at("clf_b").fill(0.0);
  TokenSequence seq = make_seq({1, 6, 2, 0, 0, 0, 0, 0}, 3);
  ad::Tape tape;
  nn::EncoderGraph g = nn::encode_sequence(tape, p, seq);
  ad::Value logits = nn::clf_logits(tape, p, g.cls_feature);
  const Tensor& lv = tape.value(logits);
  CHECK(lv.v[0] == 0.0);
  CHECK(lv.v[1] == 0.0);
  double ce = tape.value(tape.cross_entropy(logits, {1}, tok::kIgnoreIndex)).v[0];
  CHECK(ce == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const Tensor& sm = tape.value(tape.softmax_rows(logits));
  CHECK(sm.v[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("classifier head is exactly one affine map") {
  EncoderConfig cfg = tiny_config(20);
  EncoderParams p = nn::init_params(cfg, 49);
  CHECK(p.at("clf_w").size() == static_cast<std::size_t>(cfg.hidden * cfg.num_classes));
  CHECK(p.at("clf_b").size() == static_cast<std::size_t>(cfg.num_classes));
  Rng rng(5);
  Tensor fa(1, cfg.hidden), fb(1, cfg.hidden), zero(1, cfg.hidden);
  for (int j = 0; j < cfg.hidden; ++j) {
    fa.v[j] = rng.uniform(-1, 1);
    fb.v[j] = rng.uniform(-1, 1);
  }
  Tensor sum(1, cfg.hidden);
  for (int j = 0; j < cfg.hidden; ++j) sum.v[j] = fa.v[j] + fb.v[j];
  auto head = [&](const Tensor& f) {
    ad::Tape tape;
    return tape.value(nn::clf_logits(tape, p, tape.input(f))).v;
  };
  auto la = head(fa), lb = head(fb), ls = head(sum), l0 = head(zero);
  for (int j = 0; j < cfg.num_classes; ++j)
    CHECK(std::abs(ls[j] - la[j] - lb[j] + l0[j]) < 1e-12);
}

TEST_CASE("supervised training separates a linearly separable toy set") {
  EncoderConfig cfg = tiny_config(30);
  EncoderParams params = nn::init_params(cfg, 53);
  // class 1 sentences use ids 5..9, class 0 use ids 20..24
  std::vector<std::pair<TokenSequence, int>> data;
  Rng rng(9);
  for (int i = 0; i < 40; ++i) {
    int label = i % 2;
    int base = label ? 5 : 20;
    std::vector<int> ids = {1};
    for (int j = 0; j < 5; ++j) ids.push_back(base + rng.index(5));
    ids.push_back(2);
    ids.resize(8, 0);
    data.push_back({make_seq(ids, 7), label});
  }
  for (int step = 0; step < 150; ++step) {
    std::map<std::string, Tensor> grads;
    for (const auto& [seq, label] : data) {
      ad::Tape tape;
      nn::EncoderGraph g = nn::encode_sequence(tape, params, seq);
      ad::Value ce = tape.cross_entropy(nn::clf_logits(tape, params, g.cls_feature),
                                        {label}, tok::kIgnoreIndex);
      tape.backward(ce);
      for (auto& [name, gr] : tape.gradient_map()) {
        auto it = grads.find(name);
        if (it == grads.end()) grads.emplace(name, gr);
        else axpy(1.0, gr, it->second);
      }
    }
    for (auto& [name, t] : params.tensors) {
      auto it = grads.find(name);
      if (it != grads.end()) axpy(-0.1 / data.size(), it->second, t);
    }
  }
  int correct = 0;
  for (const auto& [seq, label] : data)
    if (nn::predict_class(params, seq) == label) ++correct;
  CHECK(correct == static_cast<int>(data.size()));
}

TEST_CASE("domain head forward is independent of lambda and gradients scale linearly") {
  EncoderConfig cfg = tiny_config(30);
  EncoderParams p = nn::init_params(cfg, 59);
  TokenSequence seq = make_seq({1, 7, 9, 11, 2, 0, 0, 0}, 5);

  auto encoder_grads = [&](double lambda) {
    ad::Tape tape;
    nn::EncoderGraph g = nn::encode_sequence(tape, p, seq);
    ad::Value ce = tape.cross_entropy(nn::domain_logits(tape, p, g.cls_feature, lambda),
                                      {1}, tok::kIgnoreIndex);
    tape.backward(ce);
    return tape.gradient_map();
  };

  {
    ad::Tape ta, tb;
    nn::EncoderGraph ga = nn::encode_sequence(ta, p, seq);
    nn::EncoderGraph gb = nn::encode_sequence(tb, p, seq);
    CHECK(ta.value(nn::domain_logits(ta, p, ga.cls_feature, 0.0)).v ==
          tb.value(nn::domain_logits(tb, p, gb.cls_feature, 0.73)).v);
  }

  auto g0 = encoder_grads(0.0);
  auto g001 = encoder_grads(0.01);
  auto g1 = encoder_grads(1.0);
  for (const auto& [name, t] : g0) {
    if (name == "dom_w" || name == "dom_b") {
      // the head itself trains at full strength regardless of lambda
      for (std::size_t i = 0; i < t.size(); ++i) CHECK(t.v[i] == g1.at(name).v[i]);
      continue;
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(t.v[i] == 0.0);  // lambda 0 blocks the encoder entirely
      double expect = 0.01 * g1.at(name).v[i];
      double got = g001.at(name).v[i];
      CHECK(std::abs(got - expect) <=
            1e-12 * std::max({1.0, std::abs(got), std::abs(expect)}));
    }
  }
}

TEST_CASE("checkpoint round-trip is bit-exact and corruption is caught") {
  EncoderConfig cfg = tiny_config(26);
  cfg.layers = 2;
  EncoderParams p = nn::init_params(cfg, 61);
  std::string path = "test_ckpt_roundtrip.ckpt";
  nn::save_params(p, path);
  EncoderParams q = nn::load_params(path);
  CHECK(q.config == p.config);
  REQUIRE(q.tensors.size() == p.tensors.size());
  for (const auto& [name, t] : p.tensors) CHECK(q.at(name).v == t.v);

  // flip one payload byte: checksum must reject the file
  {
    FILE* f = std::fopen(path.c_str(), "r+b");
    REQUIRE(f != nullptr);
    std::fseek(f, 64, SEEK_SET);
    int c = std::fgetc(f);
    std::fseek(f, 64, SEEK_SET);
    std::fputc(c ^ 0xff, f);
    std::fclose(f);
  }
  CHECK_THROWS_WITH_AS(nn::load_params(path), doctest::Contains("checksum"), DataError);
  std::remove(path.c_str());
}

TEST_CASE("tied mlm head reuses token embeddings") {
  EncoderConfig cfg = tiny_config(26);
  cfg.tie_mlm_embeddings = true;
  EncoderParams p = nn::init_params(cfg, 67);
  CHECK(p.tensors.count("mlm_w") == 0);
  TokenSequence seq = make_seq({1, 7, 9, 2, 0, 0, 0, 0}, 4);
  ad::Tape tape;
  nn::EncoderGraph g = nn::encode_sequence(tape, p, seq);
  const Tensor& logits = tape.value(nn::mlm_logits(tape, p, g.hidden_states, {1, 2}));
  CHECK(logits.rows == 2);
  CHECK(logits.cols == cfg.vocab_size);
  CHECK(logits.all_finite());
}
