#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dualslu/tensor.hpp"

namespace dualslu {

using NamedParam = std::pair<std::string, Tensor>;

// Which parts of the model a training run updates.
enum class Pipeline { specialize, slu_finetune, dual, dual_then_slu };

Pipeline pipeline_from_string(const std::string& s);
std::string pipeline_to_string(Pipeline p);

struct LinearLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, Rng& rng);

  // x may be [T,in] (row-wise) or [in].
  Tensor forward(Tape& t, const Tensor& x) const;

  std::size_t in_dim() const { return weight->cols(); }
  std::size_t out_dim() const { return weight->rows(); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// Gate layout in the fused [4h] blocks: input, forget, cell, output.
struct LstmCell {
  Tensor w_ih;  // [4h, in]
  Tensor w_hh;  // [4h, h]
  Tensor bias;  // [4h], forget block starts at 1.0

  LstmCell() = default;
  LstmCell(std::size_t in, std::size_t hidden, Rng& rng);

  std::size_t hidden() const { return w_hh->cols(); }
  std::size_t input_dim() const { return w_ih->cols(); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// One recurrence step. Returns (h', c').
std::pair<Tensor, Tensor> lstm_cell_step(const LstmCell& cell, Tape& t,
                                         const Tensor& x, const Tensor& h,
                                         const Tensor& c);

struct BiLstmLayer {
  LstmCell fw;
  LstmCell bw;
};

struct BiLstmStack {
  std::vector<BiLstmLayer> layers;
  std::size_t hidden_size = 0;  // per direction

  BiLstmStack() = default;
  BiLstmStack(std::size_t in, std::size_t hidden, std::size_t depth, Rng& rng);

  std::size_t out_dim() const { return 2 * hidden_size; }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// [T,D] -> [T,2h]. Both directions start from fresh zero states per layer.
Tensor bilstm_forward(const BiLstmStack& stack, Tape& t, const Tensor& x);

// Pools the encoder output into one unit-norm sentence embedding.
struct SemanticHead {
  LinearLayer projection;  // encoder dim -> embedding dim
  std::size_t embedding_dim = 0;

  SemanticHead() = default;
  SemanticHead(std::size_t enc_dim, std::size_t d_e, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

Tensor semantic_head_forward(const SemanticHead& head, Tape& t,
                             const Tensor& enc);

// Sequence labeler: bi-LSTM context, LeakyReLU, DNN layer, log-softmax.
struct SluHead {
  BiLstmStack bilstm;
  LinearLayer dnn;
  double leaky_slope = 0.01;
  std::size_t vocab_size = 0;  // includes the blank

  SluHead() = default;
  SluHead(std::size_t enc_dim, std::size_t hidden, std::size_t depth,
          std::size_t vocab, double slope, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

// [T,D] -> [T,V] log-probabilities; every row exponentiates to 1.
Tensor slu_head_forward(const SluHead& head, Tape& t, const Tensor& enc);

// Trainable stand-in for the pretrained speech encoder: projects raw
// feature frames and contextualizes them. Frame count is preserved.
struct Encoder {
  LinearLayer in_proj;  // feature dim -> model dim
  BiLstmStack bilstm;
  double frame_ms = 20.0;

  Encoder() = default;
  Encoder(std::size_t feat_dim, std::size_t model_dim, std::size_t hidden,
          std::size_t depth, double frame_ms, Rng& rng);
  std::size_t out_dim() const { return bilstm.out_dim(); }
  void collect(const std::string& prefix, std::vector<NamedParam>& out) const;
};

Tensor encoder_forward(const Encoder& enc, Tape& t, const Tensor& feats);

struct ModelConfig {
  std::size_t feat_dim = 16;
  std::size_t model_dim = 64;      // encoder input projection width
  std::size_t enc_layers = 2;
  std::size_t enc_hidden = 64;     // per direction
  std::size_t slu_layers = 3;
  std::size_t slu_hidden = 64;     // per direction
  std::size_t embedding_dim = 32;  // d_e
  std::size_t vocab_size = 0;      // set from the corpus vocabulary
  double leaky_slope = 0.01;
  double frame_ms = 20.0;

  void validate() const;
};

// The full architecture. Every pipeline builds all three parts with the
// same seeded draw order (encoder, semantic head, SLU head) so that runs
// which train different subsets still start from identical weights.
struct DualModel {
  ModelConfig cfg;
  Encoder encoder;
  SemanticHead semantic_head;
  SluHead slu_head;
  double lambda = 1.0;

  DualModel() = default;
  DualModel(const ModelConfig& config, Rng& rng);

  std::vector<NamedParam> named_params() const;
  // The subset a given pipeline trains. dual_then_slu reports the dual
  // stage's set; its second stage is plain slu_finetune.
  std::vector<NamedParam> trainable_params(Pipeline p) const;
};

std::size_t param_count(const std::vector<NamedParam>& params);
std::size_t param_count(const LinearLayer& l);
std::size_t param_count(const LstmCell& c);
std::size_t param_count(const BiLstmStack& s);
std::size_t param_count(const Encoder& e);
std::size_t param_count(const SemanticHead& h);
std::size_t param_count(const SluHead& h);

}  // namespace dualslu
