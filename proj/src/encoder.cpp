#include "udalm/encoder.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "udalm/errors.hpp"
#include "udalm/rng.hpp"

namespace udalm::nn {

namespace {

constexpr double kAttnMaskBias = -1e30;  // exp() underflows to exactly 0

void init_xavier(Tensor& t, Rng& rng) {
  double s = std::sqrt(2.0 / (t.rows + t.cols));
  for (double& x : t.v) x = rng.normal(0.0, s);
}

}  // namespace

void EncoderConfig::validate() const {
  if (layers <= 0 || hidden <= 0 || heads <= 0 || ff_dim <= 0 || vocab_size <= 0 ||
      max_len <= 0 || num_classes <= 0)
    throw UsageError("encoder config: all counts must be positive");
  if (hidden % heads != 0)
    throw UsageError("encoder config: hidden " + std::to_string(hidden) +
                     " not divisible by heads " + std::to_string(heads));
}

Tensor& EncoderParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("params: missing tensor " + name);
  return it->second;
}

const Tensor& EncoderParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("params: missing tensor " + name);
  return it->second;
}

std::size_t EncoderParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

EncoderParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams p;
  p.config = config;
  auto mat = [&](const std::string& name, int r, int c) -> Tensor& {
    Tensor t(r, c);
    t.requires_grad = true;
    return p.tensors.emplace(name, std::move(t)).first->second;
  };

  const int h = config.hidden;
  mat("tok_emb", config.vocab_size, h);
  mat("pos_emb", config.max_len, h);
  for (int l = 0; l < config.layers; ++l) {
    std::string pre = "layer" + std::to_string(l) + ".";
    mat(pre + "wq", h, h);
    mat(pre + "bq", 1, h);
    mat(pre + "wk", h, h);
    mat(pre + "bk", 1, h);
    mat(pre + "wv", h, h);
    mat(pre + "bv", 1, h);
    mat(pre + "wo", h, h);
    mat(pre + "bo", 1, h);
    mat(pre + "ln1_g", 1, h);
    mat(pre + "ln1_b", 1, h);
    mat(pre + "ff_w1", h, config.ff_dim);
    mat(pre + "ff_b1", 1, config.ff_dim);
    mat(pre + "ff_w2", config.ff_dim, h);
    mat(pre + "ff_b2", 1, h);
    mat(pre + "ln2_g", 1, h);
    mat(pre + "ln2_b", 1, h);
  }
  if (!config.tie_mlm_embeddings) mat("mlm_w", h, config.vocab_size);
  mat("mlm_b", 1, config.vocab_size);
  mat("clf_w", h, config.num_classes);
  mat("clf_b", 1, config.num_classes);
  mat("dom_w", h, 2);
  mat("dom_b", 1, 2);

  // Deterministic order: tensors map is sorted by name, one shared stream.
  Rng rng(derive_seed(seed, "init_params"));
  for (auto& [name, t] : p.tensors) {
    if (name == "tok_emb" || name == "pos_emb") {
      for (double& x : t.v) x = rng.normal(0.0, 0.1);
    } else if (name.find("ln") != std::string::npos && name.find("_g") != std::string::npos) {
      t.fill(1.0);
    } else if (t.rows == 1) {
      t.fill(0.0);  // biases and layer-norm shifts
    } else {
      init_xavier(t, rng);
    }
  }
  return p;
}

EncoderGraph encode_sequence(ad::Tape& tape, const EncoderParams& params,
                             const tok::TokenSequence& seq) {
  const EncoderConfig& cfg = params.config;
  if (seq.length() != cfg.max_len)
    throw ShapeError("encode_sequence: sequence length " + std::to_string(seq.length()) +
                     " != max_len " + std::to_string(cfg.max_len));
  const int L = cfg.max_len;
  const int h = cfg.hidden;
  const int dh = h / cfg.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  // additive attention bias: masked-out key columns get a large negative
  Tensor mask_bias(L, L);
  for (int q = 0; q < L; ++q)
    for (int k = 0; k < L; ++k)
      mask_bias.at(q, k) = seq.attention_mask[k] ? 0.0 : kAttnMaskBias;

  ad::Value tok = tape.embedding_gather(tape.param(params.at("tok_emb"), "tok_emb"), seq.ids);
  ad::Value x = tape.add(tok, tape.param(params.at("pos_emb"), "pos_emb"));

  for (int l = 0; l < cfg.layers; ++l) {
    std::string pre = "layer" + std::to_string(l) + ".";
    auto P = [&](const std::string& s) { return tape.param(params.at(pre + s), pre + s); };

    ad::Value q = tape.add_rowvec(tape.matmul(x, P("wq")), P("bq"));
    ad::Value k = tape.add_rowvec(tape.matmul(x, P("wk")), P("bk"));
    ad::Value v = tape.add_rowvec(tape.matmul(x, P("wv")), P("bv"));

    ad::Value heads_out;
    for (int hd = 0; hd < cfg.heads; ++hd) {
      ad::Value qh = tape.slice_cols(q, hd * dh, dh);
      ad::Value kh = tape.slice_cols(k, hd * dh, dh);
      ad::Value vh = tape.slice_cols(v, hd * dh, dh);
      ad::Value scores = tape.add_const(tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh),
                                        mask_bias);
      ad::Value attn = tape.softmax_rows(scores);
      ad::Value oh = tape.matmul(attn, vh);
      heads_out = hd == 0 ? oh : tape.concat_cols(heads_out, oh);
    }
    ad::Value attn_out = tape.add_rowvec(tape.matmul(heads_out, P("wo")), P("bo"));

    // post-norm residual blocks
    ad::Value res1 = tape.layer_norm(tape.add(x, attn_out));
    res1 = tape.add_rowvec(tape.mul_rowvec(res1, P("ln1_g")), P("ln1_b"));

    ad::Value ff = tape.add_rowvec(
        tape.matmul(tape.gelu(tape.add_rowvec(tape.matmul(res1, P("ff_w1")), P("ff_b1"))),
                    P("ff_w2")),
        P("ff_b2"));
    ad::Value res2 = tape.layer_norm(tape.add(res1, ff));
    x = tape.add_rowvec(tape.mul_rowvec(res2, P("ln2_g")), P("ln2_b"));
  }

  EncoderGraph g;
  g.hidden_states = x;
  g.cls_feature = tape.select_rows(x, {0});
  return g;
}

ad::Value mlm_logits(ad::Tape& tape, const EncoderParams& params,
                     ad::Value hidden_states, const std::vector<int>& positions) {
  ad::Value picked = tape.select_rows(hidden_states, positions);
  ad::Value logits;
  if (params.config.tie_mlm_embeddings) {
    logits = tape.matmul_nt(picked, tape.param(params.at("tok_emb"), "tok_emb"));
  } else {
    logits = tape.matmul(picked, tape.param(params.at("mlm_w"), "mlm_w"));
  }
  return tape.add_rowvec(logits, tape.param(params.at("mlm_b"), "mlm_b"));
}

ad::Value clf_logits(ad::Tape& tape, const EncoderParams& params, ad::Value cls_feature) {
  return tape.add_rowvec(tape.matmul(cls_feature, tape.param(params.at("clf_w"), "clf_w")),
                         tape.param(params.at("clf_b"), "clf_b"));
}

ad::Value domain_logits(ad::Tape& tape, const EncoderParams& params,
                        ad::Value cls_feature, double lambda_d) {
  ad::Value gated = tape.grad_reverse(cls_feature, lambda_d);
  return tape.add_rowvec(tape.matmul(gated, tape.param(params.at("dom_w"), "dom_w")),
                         tape.param(params.at("dom_b"), "dom_b"));
}

namespace {

constexpr char kMagic[8] = {'U', 'D', 'L', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(buf, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw DataError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return x;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return x;
  }
  double f64() {
    std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string config_header(const EncoderConfig& c) {
  std::ostringstream os;
  os << "layers=" << c.layers << "\nhidden=" << c.hidden << "\nheads=" << c.heads
     << "\nff_dim=" << c.ff_dim << "\nvocab_size=" << c.vocab_size
     << "\nmax_len=" << c.max_len << "\nnum_classes=" << c.num_classes
     << "\ntie_mlm_embeddings=" << (c.tie_mlm_embeddings ? 1 : 0) << "\n";
  return os.str();
}

EncoderConfig parse_config_header(const std::string& header) {
  EncoderConfig c;
  std::istringstream is(header);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    long val = std::stol(line.substr(eq + 1));
    if (key == "layers") c.layers = static_cast<int>(val);
    else if (key == "hidden") c.hidden = static_cast<int>(val);
    else if (key == "heads") c.heads = static_cast<int>(val);
    else if (key == "ff_dim") c.ff_dim = static_cast<int>(val);
    else if (key == "vocab_size") c.vocab_size = static_cast<int>(val);
    else if (key == "max_len") c.max_len = static_cast<int>(val);
    else if (key == "num_classes") c.num_classes = static_cast<int>(val);
    else if (key == "tie_mlm_embeddings") c.tie_mlm_embeddings = val != 0;
    else throw DataError("checkpoint: unknown config field " + key);
  }
  return c;
}

}  // namespace

void save_params(const EncoderParams& params, const std::string& path) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put_u32(buf, kVersion);
  std::string header = config_header(params.config);
  put_u32(buf, static_cast<std::uint32_t>(header.size()));
  buf += header;
  put_u32(buf, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, t] : params.tensors) {
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_u32(buf, static_cast<std::uint32_t>(t.rows));
    put_u32(buf, static_cast<std::uint32_t>(t.cols));
    for (double d : t.v) put_f64(buf, d);
  }
  std::uint64_t checksum = fnv1a(buf.data(), buf.size());
  put_u64(buf, checksum);

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot write " + tmp);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("checkpoint: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("checkpoint: cannot rename " + tmp + " to " + path);
}

EncoderParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot read " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 12) throw DataError("checkpoint: truncated file " + path);
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: bad magic in " + path);

  std::string payload = buf.substr(0, buf.size() - 8);
  Reader tail(buf);
  tail.pos = buf.size() - 8;
  std::uint64_t stored = tail.u64();
  if (fnv1a(payload.data(), payload.size()) != stored)
    throw DataError("checkpoint: checksum mismatch in " + path);

  Reader r(payload);
  r.pos = sizeof(kMagic);
  std::uint32_t version = r.u32();
  if (version != kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  EncoderParams p;
  p.config = parse_config_header(r.str());
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    int rows = static_cast<int>(r.u32());
    int cols = static_cast<int>(r.u32());
    Tensor t(rows, cols);
    t.requires_grad = true;
    for (double& d : t.v) d = r.f64();
    p.tensors.emplace(std::move(name), std::move(t));
  }
  return p;
}

Tensor eval_cls_feature(const EncoderParams& params, const tok::TokenSequence& seq) {
  ad::Tape tape;
  EncoderGraph g = encode_sequence(tape, params, seq);
  return tape.value(g.cls_feature);
}

int predict_class(const EncoderParams& params, const tok::TokenSequence& seq) {
  ad::Tape tape;
  EncoderGraph g = encode_sequence(tape, params, seq);
  const Tensor& logits = tape.value(clf_logits(tape, params, g.cls_feature));
  int best = 0;
  for (int j = 1; j < logits.cols; ++j)
    if (logits.v[j] > logits.v[best]) best = j;
  return best;
}

}  // namespace udalm::nn
