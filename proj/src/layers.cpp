#include "dualslu/layers.hpp"

#include <cmath>

namespace dualslu {

namespace {

Tensor init_weight(std::size_t out, std::size_t in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return uniform_tensor({out, in}, -bound, bound, rng, true);
}

}  // namespace

Pipeline pipeline_from_string(const std::string& s) {
  if (s == "specialize") return Pipeline::specialize;
  if (s == "slu_finetune") return Pipeline::slu_finetune;
  if (s == "dual") return Pipeline::dual;
  if (s == "dual_then_slu") return Pipeline::dual_then_slu;
  throw ConfigError("unknown pipeline '" + s + "'");
}

std::string pipeline_to_string(Pipeline p) {
  switch (p) {
    case Pipeline::specialize: return "specialize";
    case Pipeline::slu_finetune: return "slu_finetune";
    case Pipeline::dual: return "dual";
    case Pipeline::dual_then_slu: return "dual_then_slu";
  }
  throw ConfigError("invalid pipeline value");
}

LinearLayer::LinearLayer(std::size_t in, std::size_t out, Rng& rng)
    : weight(init_weight(out, in, rng)), bias(zeros({out}, true)) {}

Tensor LinearLayer::forward(Tape& t, const Tensor& x) const {
  if (x->shape.size() == 2)
    return add_rows(t, matmul_nt(t, x, weight), bias);
  return add(t, matvec(t, weight, x), bias);
}

void LinearLayer::collect(const std::string& prefix,
                          std::vector<NamedParam>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LstmCell::LstmCell(std::size_t in, std::size_t hidden, Rng& rng)
    : w_ih(init_weight(4 * hidden, in, rng)),
      w_hh(init_weight(4 * hidden, hidden, rng)),
      bias(zeros({4 * hidden}, true)) {
  for (std::size_t i = hidden; i < 2 * hidden; ++i) bias->values[i] = 1.0;
}

void LstmCell::collect(const std::string& prefix,
                       std::vector<NamedParam>& out) const {
  out.emplace_back(prefix + ".w_ih", w_ih);
  out.emplace_back(prefix + ".w_hh", w_hh);
  out.emplace_back(prefix + ".bias", bias);
}

namespace {

// Shared tail of the recurrence once the fused gate pre-activations are
// known. Gate order: input, forget, cell, output.
std::pair<Tensor, Tensor> gate_update(Tape& t, const Tensor& gates,
                                      const Tensor& c, std::size_t h) {
  auto i = sigmoid(t, slice(t, gates, 0, h));
  auto f = sigmoid(t, slice(t, gates, h, h));
  auto g = tanh(t, slice(t, gates, 2 * h, h));
  auto o = sigmoid(t, slice(t, gates, 3 * h, h));
  auto c_next = add(t, mul(t, f, c), mul(t, i, g));
  auto h_next = mul(t, o, tanh(t, c_next));
  return {h_next, c_next};
}

}  // namespace

std::pair<Tensor, Tensor> lstm_cell_step(const LstmCell& cell, Tape& t,
                                         const Tensor& x, const Tensor& h,
                                         const Tensor& c) {
  const std::size_t hid = cell.hidden();
  if (x->shape != Shape{cell.input_dim()} || h->shape != Shape{hid} ||
      c->shape != Shape{hid})
    throw DimensionError("lstm_cell_step: got x " + shape_str(x->shape) +
                         ", h " + shape_str(h->shape) + ", c " +
                         shape_str(c->shape) + " for cell in=" +
                         std::to_string(cell.input_dim()) + " h=" +
                         std::to_string(hid));
  auto gates = add(t, add(t, matvec(t, cell.w_ih, x), cell.bias),
                   matvec(t, cell.w_hh, h));
  return gate_update(t, gates, c, hid);
}

BiLstmStack::BiLstmStack(std::size_t in, std::size_t hidden,
                         std::size_t depth, Rng& rng)
    : hidden_size(hidden) {
  if (depth < 1) throw ConfigError("BiLstmStack: depth must be >= 1");
  layers.reserve(depth);
  std::size_t d = in;
  for (std::size_t l = 0; l < depth; ++l) {
    BiLstmLayer layer;
    layer.fw = LstmCell(d, hidden, rng);
    layer.bw = LstmCell(d, hidden, rng);
    layers.push_back(std::move(layer));
    d = 2 * hidden;
  }
}

void BiLstmStack::collect(const std::string& prefix,
                          std::vector<NamedParam>& out) const {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string base = prefix + ".l" + std::to_string(l);
    layers[l].fw.collect(base + ".fw", out);
    layers[l].bw.collect(base + ".bw", out);
  }
}

namespace {

// One direction over the whole sequence. The input-to-hidden product for
// all frames is batched into a single matmul; only the hidden-to-hidden
// part stays per-step. order[] gives the frame visit sequence.
std::vector<Tensor> run_direction(const LstmCell& cell, Tape& t,
                                  const Tensor& x,
                                  const std::vector<std::size_t>& order) {
  const std::size_t hid = cell.hidden();
  auto x_proj = add_rows(t, matmul_nt(t, x, cell.w_ih), cell.bias);
  Tensor h = zeros({hid});
  Tensor c = zeros({hid});
  std::vector<Tensor> out(order.size());
  for (std::size_t step = 0; step < order.size(); ++step) {
    auto gates =
        add(t, row(t, x_proj, order[step]), matvec(t, cell.w_hh, h));
    auto [h2, c2] = gate_update(t, gates, c, hid);
    h = h2;
    c = c2;
    out[order[step]] = h;
  }
  return out;
}

}  // namespace

Tensor bilstm_forward(const BiLstmStack& stack, Tape& t, const Tensor& x) {
  if (x->shape.size() != 2)
    throw DimensionError("bilstm_forward: expected [T,D], got " +
                         shape_str(x->shape));
  const std::size_t T = x->shape[0];
  if (T == 0) throw EmptySequenceError("bilstm_forward: empty sequence");

  std::vector<std::size_t> fwd(T), bwd(T);
  for (std::size_t i = 0; i < T; ++i) {
    fwd[i] = i;
    bwd[i] = T - 1 - i;
  }

  Tensor cur = x;
  for (const auto& layer : stack.layers) {
    auto hf = run_direction(layer.fw, t, cur, fwd);
    auto hb = run_direction(layer.bw, t, cur, bwd);
    std::vector<Tensor> rows(T);
    for (std::size_t i = 0; i < T; ++i) rows[i] = concat(t, hf[i], hb[i]);
    cur = stack_rows(t, rows);
  }
  return cur;
}

SemanticHead::SemanticHead(std::size_t enc_dim, std::size_t d_e, Rng& rng)
    : projection(enc_dim, d_e, rng), embedding_dim(d_e) {}

void SemanticHead::collect(const std::string& prefix,
                           std::vector<NamedParam>& out) const {
  projection.collect(prefix + ".proj", out);
}

Tensor semantic_head_forward(const SemanticHead& head, Tape& t,
                             const Tensor& enc) {
  if (enc->rows() == 0)
    throw EmptySequenceError("semantic_head_forward: empty sequence");
  auto pooled = mean_pool(t, enc);
  return l2_normalize(t, tanh(t, head.projection.forward(t, pooled)), 1e-12);
}

SluHead::SluHead(std::size_t enc_dim, std::size_t hidden, std::size_t depth,
                 std::size_t vocab, double slope, Rng& rng)
    : bilstm(enc_dim, hidden, depth, rng),
      dnn(2 * hidden, vocab, rng),
      leaky_slope(slope),
      vocab_size(vocab) {}

void SluHead::collect(const std::string& prefix,
                      std::vector<NamedParam>& out) const {
  bilstm.collect(prefix + ".bilstm", out);
  dnn.collect(prefix + ".dnn", out);
}

Tensor slu_head_forward(const SluHead& head, Tape& t, const Tensor& enc) {
  if (enc->rows() == 0)
    throw EmptySequenceError("slu_head_forward: empty sequence");
  auto ctx = bilstm_forward(head.bilstm, t, enc);
  auto logits = head.dnn.forward(t, leaky_relu(t, ctx, head.leaky_slope));
  return log_softmax(t, logits);
}

Encoder::Encoder(std::size_t feat_dim, std::size_t model_dim,
                 std::size_t hidden, std::size_t depth, double ms, Rng& rng)
    : in_proj(feat_dim, model_dim, rng),
      bilstm(model_dim, hidden, depth, rng),
      frame_ms(ms) {}

void Encoder::collect(const std::string& prefix,
                      std::vector<NamedParam>& out) const {
  in_proj.collect(prefix + ".in_proj", out);
  bilstm.collect(prefix + ".bilstm", out);
}

Tensor encoder_forward(const Encoder& enc, Tape& t, const Tensor& feats) {
  if (feats->rows() == 0)
    throw EmptySequenceError("encoder_forward: empty sequence");
  return bilstm_forward(enc.bilstm, t, enc.in_proj.forward(t, feats));
}

void ModelConfig::validate() const {
  if (feat_dim == 0 || model_dim == 0 || enc_layers == 0 || enc_hidden == 0 ||
      slu_layers == 0 || slu_hidden == 0 || embedding_dim == 0)
    throw ConfigError("model dimensions must all be positive");
  if (vocab_size < 2)
    throw ConfigError("vocab_size must cover at least the blank and one "
                      "real token");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
    throw ConfigError("leaky_slope must lie in (0,1)");
}

DualModel::DualModel(const ModelConfig& config, Rng& rng) : cfg(config) {
  cfg.validate();
  encoder = Encoder(cfg.feat_dim, cfg.model_dim, cfg.enc_hidden,
                    cfg.enc_layers, cfg.frame_ms, rng);
  semantic_head = SemanticHead(encoder.out_dim(), cfg.embedding_dim, rng);
  slu_head = SluHead(encoder.out_dim(), cfg.slu_hidden, cfg.slu_layers,
                     cfg.vocab_size, cfg.leaky_slope, rng);
}

std::vector<NamedParam> DualModel::named_params() const {
  std::vector<NamedParam> out;
  encoder.collect("encoder", out);
  semantic_head.collect("semantic", out);
  slu_head.collect("slu", out);
  return out;
}

std::vector<NamedParam> DualModel::trainable_params(Pipeline p) const {
  std::vector<NamedParam> out;
  encoder.collect("encoder", out);
  switch (p) {
    case Pipeline::specialize:
      semantic_head.collect("semantic", out);
      break;
    case Pipeline::slu_finetune:
      slu_head.collect("slu", out);
      break;
    case Pipeline::dual:
    case Pipeline::dual_then_slu:
      semantic_head.collect("semantic", out);
      slu_head.collect("slu", out);
      break;
  }
  return out;
}

std::size_t param_count(const std::vector<NamedParam>& params) {
  std::size_t n = 0;
  for (const auto& [name, p] : params)
    if (p->requires_grad) n += p->numel();
  return n;
}

namespace {

template <typename Part>
std::size_t count_part(const Part& part) {
  std::vector<NamedParam> tmp;
  part.collect("p", tmp);
  return param_count(tmp);
}

}  // namespace

std::size_t param_count(const LinearLayer& l) { return count_part(l); }
std::size_t param_count(const LstmCell& c) { return count_part(c); }
std::size_t param_count(const BiLstmStack& s) { return count_part(s); }
std::size_t param_count(const Encoder& e) { return count_part(e); }
std::size_t param_count(const SemanticHead& h) { return count_part(h); }
std::size_t param_count(const SluHead& h) { return count_part(h); }

}  // namespace dualslu
