#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "btsr/corpus.hpp"

namespace btsr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct EncoderConfig {
    int num_items = 0;   // N; embedding table has N + 1 rows
    int dim = 64;        // D
    int layers = 2;
    int heads = 2;
    int max_len = 50;    // n
    int ffn_dim = 0;     // 0 means "same as dim"
    double dropout = 0.2;
    double layer_norm_eps = 1e-8;

    int hidden() const { return ffn_dim > 0 ? ffn_dim : dim; }
    void validate() const;
};

struct BlockParameters {
    Matrix ln1_gain, ln1_bias;
    Matrix wq, bq, wk, bk, wv, bv, wo, bo;
    Matrix ln2_gain, ln2_bias;
    Matrix w1, b1, w2, b2;
};

// Every learnable tensor. Vectors are stored as 1 x k matrices so that all
// tensors share one type. Row 0 of item_embeddings is the padding row.
struct Parameters {
    Matrix item_embeddings;
    Matrix positional;
    std::vector<BlockParameters> blocks;
    Matrix final_gain, final_bias;

    // Visits tensors in a fixed canonical order with stable names.
    void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
    void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;

    Parameters zeros_like() const;
    void set_zero();
    // this += scale * other
    void add_scaled(const Parameters& other, double scale);
    bool all_finite() const;
    std::size_t size() const;
};

struct Model {
    EncoderConfig config;
    Parameters params;
};

Parameters init_parameters(const EncoderConfig& config, std::uint64_t seed);
Model make_model(const EncoderConfig& config, std::uint64_t seed);

// Keys the counter-based dropout masks. A null context means inference mode.
struct DropoutContext {
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t batch = 0;
    std::uint64_t slot = 0;  // which encoder pass inside the batch
};

struct LayerNormCache {
    Matrix xhat;
    Vector rstd;
};

struct BlockTrace {
    Matrix input;
    LayerNormCache ln1;
    Matrix attn_in, q, k, v;
    std::vector<Matrix> probs;  // per head, T x T
    Matrix context;             // concatenated head outputs
    Matrix attn_mask;           // empty when dropout is off
    Matrix mid;                 // input + attention branch
    LayerNormCache ln2;
    Matrix ffn_in, pre_act, act;
    Matrix ffn_mask;
};

// Everything the backward pass needs from one forward pass.
struct ForwardTrace {
    std::vector<ItemId> tokens;  // non-padding suffix of the prefix
    int first_slot = 0;          // slot index of tokens[0] in the length-n prefix
    Matrix embed_mask;
    std::vector<BlockTrace> blocks;
    Matrix last_hidden;          // 1 x D, pre final norm
    LayerNormCache final_ln;
    Vector output;               // z
};

// Runs the causal encoder over a left-padded prefix (length <= n; shorter
// prefixes are treated as if padded) and returns the last-position state.
ForwardTrace forward(const Model& model, std::span<const ItemId> prefix,
                     const DropoutContext* dropout = nullptr);

Vector encode(const Model& model, std::span<const ItemId> prefix,
              const DropoutContext* dropout = nullptr);

// Accumulates d(loss)/d(params) into `grads`, given d(loss)/dz.
void backward(const Model& model, const ForwardTrace& trace, const Vector& dz, Parameters& grads);

// Scores for items 1..N, stored at indices 0..N-1.
Vector score_all(const Model& model, const Vector& z);

// Outputs at every position of the last block before the final norm; used by
// the causality tests.
Matrix hidden_states(const Model& model, std::span<const ItemId> prefix);

}  // namespace btsr
