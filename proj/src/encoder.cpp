#include "layerpool/encoder.hpp"

#include <cmath>
#include <numeric>

namespace layerpool {

namespace {

constexpr Real kNormEps = 1e-12;

Parameter normal_weight(std::string name, Shape shape, Real stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (Real& v : t.values()) v = rng.normal(0.0, stddev);
  return Parameter(std::move(name), std::move(t));
}

Parameter zeros(std::string name, Shape shape) { return Parameter(std::move(name), Tensor(std::move(shape)), false); }
Parameter ones(std::string name, Shape shape) {
  return Parameter(std::move(name), Tensor(std::move(shape), 1.0), false);
}

Var affine(Tape& tape, const Var& x, Parameter& w, Parameter& b) {
  return add_bias(matmul(x, tape.parameter(w)), tape.parameter(b));
}

Var maybe_dropout(const Var& x, Real p, Rng* rng) { return rng ? dropout(x, p, *rng) : x; }

}  // namespace

void EncoderConfig::validate() const {
  if (layers < 1) throw ContractError("encoder needs at least one layer");
  if (heads == 0 || hidden % heads != 0) {
    throw ContractError("hidden size " + std::to_string(hidden) + " is not divisible by " +
                        std::to_string(heads) + " heads");
  }
  if (vocab == 0) throw ContractError("encoder vocabulary is empty");
  if (max_len == 0) throw ContractError("max_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("dropout must lie in [0, 1)");
}

PackedInput trim_padding(const PackedInput& input) {
  std::size_t keep = input.mask.size();
  while (keep > 1 && input.mask[keep - 1] == 0) --keep;
  PackedInput out = input;
  out.token_ids.resize(keep);
  out.segment_ids.resize(keep);
  out.mask.resize(keep);
  return out;
}

std::vector<Tensor> CLSTrace::values() const {
  std::vector<Tensor> out;
  out.reserve(layers.size());
  for (const Var& v : layers) out.push_back(v.value());
  return out;
}

Encoder::Encoder(const EncoderConfig& config, Rng& init_rng) : config_(config) {
  config_.validate();
  const std::size_t h = config_.hidden, f = config_.ffn;
  const Real sd = config_.init_stddev;
  token_table_ = normal_weight("embeddings.token", {config_.vocab, h}, sd, init_rng);
  position_table_ = normal_weight("embeddings.position", {config_.max_len, h}, sd, init_rng);
  segment_table_ = normal_weight("embeddings.segment", {2, h}, sd, init_rng);
  embed_norm_gamma_ = ones("embeddings.norm.gamma", {h});
  embed_norm_beta_ = zeros("embeddings.norm.beta", {h});
  layers_.reserve(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l + 1) + ".";
    EncoderLayer layer;
    layer.query_w = normal_weight(p + "attention.query.w", {h, h}, sd, init_rng);
    layer.query_b = zeros(p + "attention.query.b", {h});
    layer.key_w = normal_weight(p + "attention.key.w", {h, h}, sd, init_rng);
    layer.key_b = zeros(p + "attention.key.b", {h});
    layer.value_w = normal_weight(p + "attention.value.w", {h, h}, sd, init_rng);
    layer.value_b = zeros(p + "attention.value.b", {h});
    layer.out_w = normal_weight(p + "attention.output.w", {h, h}, sd, init_rng);
    layer.out_b = zeros(p + "attention.output.b", {h});
    layer.attn_norm_gamma = ones(p + "attention.norm.gamma", {h});
    layer.attn_norm_beta = zeros(p + "attention.norm.beta", {h});
    layer.ffn_in_w = normal_weight(p + "ffn.in.w", {h, f}, sd, init_rng);
    layer.ffn_in_b = zeros(p + "ffn.in.b", {f});
    layer.ffn_out_w = normal_weight(p + "ffn.out.w", {f, h}, sd, init_rng);
    layer.ffn_out_b = zeros(p + "ffn.out.b", {h});
    layer.ffn_norm_gamma = ones(p + "ffn.norm.gamma", {h});
    layer.ffn_norm_beta = zeros(p + "ffn.norm.beta", {h});
    layers_.push_back(std::move(layer));
  }
}

void Encoder::check_input(const PackedInput& input) const {
  const std::size_t s = input.length();
  if (s == 0) throw ShapeError("empty input sequence");
  if (s > config_.max_len) {
    throw ShapeError("sequence length " + std::to_string(s) + " exceeds max_len " +
                     std::to_string(config_.max_len));
  }
  if (input.segment_ids.size() != s || input.mask.size() != s) {
    throw ShapeError("token, segment and mask arrays differ in length");
  }
}

Var Encoder::embed(Tape& tape, const PackedInput& input, Rng* dropout_rng) {
  check_input(input);
  std::vector<std::int32_t> positions(input.length());
  std::iota(positions.begin(), positions.end(), 0);
  Var x = embedding(tape.parameter(token_table_), input.token_ids);
  x = add(x, embedding(tape.parameter(position_table_), positions));
  x = add(x, embedding(tape.parameter(segment_table_), input.segment_ids));
  x = layer_norm(x, tape.parameter(embed_norm_gamma_), tape.parameter(embed_norm_beta_), kNormEps);
  return maybe_dropout(x, config_.dropout, dropout_rng);
}

Var Encoder::self_attention_block(Tape& tape, const Var& x, std::span<const std::uint8_t> mask,
                                  std::size_t layer_index, Rng* dropout_rng, AttentionProbe* probe) {
  EncoderLayer& L = layers_.at(layer_index);
  const std::size_t h = config_.hidden, dh = config_.head_dim();
  if (x.value().rank() != 2 || x.cols() != h) {
    throw ShapeError("attention block expects [S x " + std::to_string(h) + "], got " +
                     to_string(x.shape()));
  }
  if (mask.size() != x.rows()) throw ShapeError("attention mask length does not match sequence");

  const Var q = affine(tape, x, L.query_w, L.query_b);
  const Var k = affine(tape, x, L.key_w, L.key_b);
  const Var v = affine(tape, x, L.value_w, L.value_b);
  const Real inv_scale = 1.0 / std::sqrt(static_cast<Real>(dh));

  std::vector<Var> heads;
  heads.reserve(config_.heads);
  if (probe) {
    probe->weights.clear();
    probe->values = v.value();
  }
  for (std::size_t a = 0; a < config_.heads; ++a) {
    const Var qh = slice_cols(q, a * dh, (a + 1) * dh);
    const Var kh = slice_cols(k, a * dh, (a + 1) * dh);
    const Var vh = slice_cols(v, a * dh, (a + 1) * dh);
    const Var weights = softmax(scale(matmul(qh, transpose(kh)), inv_scale), mask);
    if (probe) probe->weights.push_back(weights.value());
    heads.push_back(matmul(weights, vh));
  }
  const Var context = concat_cols(heads);
  if (probe) probe->context = context.value();

  Var attn = maybe_dropout(affine(tape, context, L.out_w, L.out_b), config_.dropout, dropout_rng);
  const Var x1 = layer_norm(add(x, attn), tape.parameter(L.attn_norm_gamma), tape.parameter(L.attn_norm_beta),
                            kNormEps);
  Var ff = affine(tape, gelu(affine(tape, x1, L.ffn_in_w, L.ffn_in_b)), L.ffn_out_w, L.ffn_out_b);
  ff = maybe_dropout(ff, config_.dropout, dropout_rng);
  return layer_norm(add(x1, ff), tape.parameter(L.ffn_norm_gamma), tape.parameter(L.ffn_norm_beta), kNormEps);
}

EncoderOutput Encoder::encode(Tape& tape, const PackedInput& input, Rng* dropout_rng) {
  Var x = embed(tape, input, dropout_rng);
  EncoderOutput out;
  out.trace.layers.reserve(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    x = self_attention_block(tape, x, input.mask, l, dropout_rng);
    out.trace.layers.push_back(select_row(x, 0));
  }
  out.final = x;
  return out;
}

std::vector<Parameter*> Encoder::parameters() {
  std::vector<Parameter*> out{&token_table_, &position_table_, &segment_table_, &embed_norm_gamma_,
                              &embed_norm_beta_};
  for (EncoderLayer& L : layers_) {
    for (Parameter* p : {&L.query_w, &L.query_b, &L.key_w, &L.key_b, &L.value_w, &L.value_b, &L.out_w,
                         &L.out_b, &L.attn_norm_gamma, &L.attn_norm_beta, &L.ffn_in_w, &L.ffn_in_b,
                         &L.ffn_out_w, &L.ffn_out_b, &L.ffn_norm_gamma, &L.ffn_norm_beta}) {
      out.push_back(p);
    }
  }
  return out;
}

}  // namespace layerpool
