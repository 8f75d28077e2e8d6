#pragma once
// The DECI network. A shared encoder (embedding -> linear -> tanh) and
// per-label attention produce a label-specific representation H; a set of
// per-label linear experts scores it, and the three pathways differ only in
// how the experts are mixed:
//
//   z_k  learned softmax gate over experts, full input (note + demographics)
//   z_d  learned softmax gate over experts, demographic tokens only
//   z_e  uniform 1/F_N mixture, full input
//
// and the debiased score is z_f = sigmoid(z_k + z_d + z_e) - sigmoid(z_d + z_e).

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deci/corpus.hpp"
#include "deci/numerics.hpp"

namespace deci {

enum class GatingMode {
    PerLabel,     // one gate distribution per label row of H
    PerDocument,  // one gate distribution from the label-averaged H
};

std::string_view to_string(GatingMode m);
GatingMode parse_gating_mode(std::string_view s);

struct ModelConfig {
    std::size_t d_e = 100;
    std::size_t d_h = 100;
    std::size_t n_experts = 4;
    std::size_t max_len = kDefaultMaxLen;
    GatingMode gating = GatingMode::PerLabel;
};

struct ModelParams {
    Matrix embedding;               // vocab x d_e
    Matrix enc_proj;                // d_e x d_h
    Matrix enc_bias;                // 1 x d_h
    Matrix label_queries;           // N_L x d_h
    std::vector<Matrix> expert_w;   // F_N of N_L x d_h
    std::vector<Matrix> expert_b;   // F_N of 1 x N_L
    Matrix gate_w;                  // d_h x F_N
    Matrix gate_bias;               // 1 x F_N

    std::size_t vocab_size() const noexcept { return embedding.rows(); }
    std::size_t d_e() const noexcept { return embedding.cols(); }
    std::size_t d_h() const noexcept { return enc_proj.cols(); }
    std::size_t n_labels() const noexcept { return label_queries.rows(); }
    std::size_t n_experts() const noexcept { return expert_w.size(); }

    static ModelParams zeros(std::size_t vocab_size, std::size_t n_labels, const ModelConfig& cfg);
    // Uniform(-0.1, 0.1) embeddings, Glorot-uniform projections, queries and
    // experts; zero biases and zero gate so training starts at uniform gating.
    static ModelParams initialize(std::size_t vocab_size, std::size_t n_labels,
                                  const ModelConfig& cfg, Rng& rng);

    // Throws DimensionError on inconsistent shapes, EvaluationError on
    // non-finite entries.
    void validate() const;

    // Every trainable array in checkpoint order.
    std::vector<std::pair<std::string, Matrix*>> arrays();
    std::vector<std::pair<std::string, const Matrix*>> arrays() const;

    std::size_t parameter_count() const;
    bool operator==(const ModelParams&) const = default;
};

// Same shapes as `like`, all zero.
ModelParams zeros_like(const ModelParams& like);

// Encoder output over a padded sequence. Rows at PAD positions are zero and
// `positions` lists the non-PAD indices in order.
struct Encoded {
    Matrix e;                            // N x d_h
    std::vector<std::size_t> positions;  // non-PAD rows
};

// Throws std::out_of_range for ids outside the embedding table.
Encoded encode(const ModelParams& params, std::span<const TokenId> ids);

struct Attention {
    Matrix h;        // N_L x d_h
    Matrix weights;  // N_L x N, zero at PAD positions
    bool degenerate = false;  // no non-PAD positions; h is zero
};

Attention label_attention(const ModelParams& params, const Encoded& enc);

// Entry (i, l) = W_i[l] . H[l] + b_i[l].
Matrix expert_scores(const ModelParams& params, const Matrix& h);

// Row l is a probability vector over experts.
Matrix gate_weights(const ModelParams& params, const Matrix& h,
                    GatingMode mode = GatingMode::PerLabel);

// out[l] = sum_i weights(l, i) * scores(i, l). The terms of each label are
// summed in sorted order, which makes the result exactly invariant to a
// consistent permutation of the experts.
Vector mix_experts(const Matrix& weights, const Matrix& scores);

// Uniform 1/F_N weights for every label, produced by the same softmax as the
// gate so that zero gate logits reproduce them bit for bit.
Matrix uniform_weights(std::size_t n_labels, std::size_t n_experts);

Vector pathway_zk(const ModelParams& params, const Matrix& h_k,
                  GatingMode mode = GatingMode::PerLabel);
Vector pathway_ze(const ModelParams& params, const Matrix& h_k);

struct PathwayScores {
    Vector z_k;
    Vector z_d;
    Vector z_e;
    Vector z_f;
};

// z_f = sigmoid(z_k + z_d + z_e) - sigmoid(z_d + z_e), elementwise.
Vector counterfactual_scores(std::span<const double> z_k, std::span<const double> z_d,
                             std::span<const double> z_e);

struct PathTrace {
    std::vector<TokenId> ids;
    Encoded enc;
    Attention attn;
    Matrix scores;  // F_N x N_L
    Matrix gates;   // N_L x F_N
};

struct ForwardTrace {
    PathTrace full;
    PathTrace demographic;
};

// Everything needed to score a document: parameters plus the tables that turn
// a Document into token ids.
struct DeciModel {
    ModelConfig config;
    Vocabulary vocab;
    LabelSpace labels;
    ModelParams params;

    static DeciModel create(const ModelConfig& cfg, Vocabulary vocab, LabelSpace labels, Rng& rng);
};

Vector pathway_zd(const DeciModel& model, const Document& doc);

PathwayScores forward(const DeciModel& model, const Document& doc, ForwardTrace* trace = nullptr);

// Upstream gradients of the three pathway scores for one document.
struct PathwayGradients {
    Vector d_zk;
    Vector d_zd;
    Vector d_ze;
};

struct BackwardOptions {
    GatingMode gating = GatingMode::PerLabel;
    // When set, the z_d and z_e gradients update experts and gate only and do
    // not reach the attention or encoder parameters.
    bool stop_bias_gradients = false;
};

// Accumulates dLoss/dparams into `grads` (which must have the shapes of
// `params`). Empty upstream vectors are treated as zero.
void backward(const ModelParams& params, const ForwardTrace& trace, const PathwayGradients& dz,
              const BackwardOptions& opts, ModelParams& grads);

}  // namespace deci
