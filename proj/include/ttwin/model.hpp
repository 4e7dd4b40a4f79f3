#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "ttwin/rng.hpp"
#include "ttwin/vocab.hpp"

namespace ttwin {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

struct ModelConfig {
    int n_blocks = 12;
    int d_model = 768;
    int d_ff = 3072;
    int n_heads = 12;
    int d_head = 64;
    int d_seq = 2048;
    double p_drop = 0.1;
    int vocab_size = 0;

    void validate() const;

    static ModelConfig paper_scale(int vocab_size);
    static ModelConfig desk(int vocab_size);   // 4 blocks, d_model=128, d_seq=512
    static ModelConfig tiny(int vocab_size);   // 2 blocks, d_model=16, for numeric checks

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

template <typename S>
struct BlockParams {
    Mat<S> ln1_g, ln1_b;
    Mat<S> qkv_w, qkv_b;    // d x 3d, 1 x 3d
    Mat<S> proj_w, proj_b;  // d x d (residual-path projection)
    Mat<S> ln2_g, ln2_b;
    Mat<S> fc_w, fc_b;      // d x d_ff
    Mat<S> proj2_w, proj2_b;  // d_ff x d (residual-path projection)
};

// All trainable tensors. Visit order is the canonical tensor order for the
// optimizer, gradient clipping and the checkpoint format.
template <typename S>
struct ParamSet {
    Mat<S> tok_emb;  // V x d
    Mat<S> pos_emb;  // d_seq x d
    Mat<S> adm_vec;  // 1 x d, added to entries inside an admission interval
    Mat<S> num_w1, num_b1, num_w2, num_b2;  // numeric encoder, 1 -> d -> d
    Mat<S> tmp_w1, tmp_b1, tmp_w2, tmp_b2;  // temporal encoder, 5 -> d -> d
    std::vector<BlockParams<S>> blocks;
    Mat<S> ln_f_g, ln_f_b;
    Mat<S> head_w, head_b;  // d x V, 1 x V

    void allocate(const ModelConfig& cfg);  // zero-filled, correct shapes
    void set_zero();
    size_t n_params() const;

    template <typename F>
    void visit(F&& f) {
        f("tok_emb", tok_emb);
        f("pos_emb", pos_emb);
        f("adm_vec", adm_vec);
        f("num_enc.w1", num_w1); f("num_enc.b1", num_b1);
        f("num_enc.w2", num_w2); f("num_enc.b2", num_b2);
        f("tmp_enc.w1", tmp_w1); f("tmp_enc.b1", tmp_b1);
        f("tmp_enc.w2", tmp_w2); f("tmp_enc.b2", tmp_b2);
        for (size_t i = 0; i < blocks.size(); ++i) {
            std::string p = "block" + std::to_string(i) + ".";
            auto& b = blocks[i];
            f(p + "ln1.g", b.ln1_g); f(p + "ln1.b", b.ln1_b);
            f(p + "attn.qkv_w", b.qkv_w); f(p + "attn.qkv_b", b.qkv_b);
            f(p + "attn.proj_w", b.proj_w); f(p + "attn.proj_b", b.proj_b);
            f(p + "ln2.g", b.ln2_g); f(p + "ln2.b", b.ln2_b);
            f(p + "mlp.fc_w", b.fc_w); f(p + "mlp.fc_b", b.fc_b);
            f(p + "mlp.proj_w", b.proj2_w); f(p + "mlp.proj_b", b.proj2_b);
        }
        f("ln_f.g", ln_f_g); f("ln_f.b", ln_f_b);
        f("head.w", head_w); f("head.b", head_b);
    }
    template <typename F>
    void visit(F&& f) const { const_cast<ParamSet*>(this)->visit(std::forward<F>(f)); }
};

// Per-block key/value tensors for the positions already processed.
template <typename S>
struct DecodeCacheT {
    int len = 0;
    std::vector<Mat<S>> k, v;  // per block, capacity x d_model, rows [0, len)

    void reset(const ModelConfig& cfg);
};
using DecodeCache = DecodeCacheT<float>;

// Activation tape for one training forward pass.
template <typename S>
struct Tape {
    Mat<S> emb_raw;        // pathway outputs before dropout
    Mat<S> emb_mask;
    struct BlockTape {
        Mat<S> x_in;
        Mat<S> xhat1;  // (x - mu) * rstd
        Eigen::Matrix<S, Eigen::Dynamic, 1> rstd1;
        Mat<S> qkv;
        std::vector<Mat<S>> att;  // per head, t x t softmax weights
        Mat<S> att_out;           // concatenated heads, pre-projection
        Mat<S> attn_mask;
        Mat<S> x_mid;
        Mat<S> xhat2;
        Eigen::Matrix<S, Eigen::Dynamic, 1> rstd2;
        Mat<S> h_pre;  // pre-GeLU
        Mat<S> mlp_mask;
    };
    std::vector<BlockTape> blocks;
    Mat<S> x_final;
    Mat<S> xhat_f;
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstd_f;
    std::vector<EncodedEntry> entries;
    Mat<S> num_h1;  // per-row encoder hidden pre-GeLU (numeric/temporal rows)
};

template <typename S>
class TransformerT {
  public:
    ModelConfig cfg;
    ParamSet<S> params;

    TransformerT() = default;
    explicit TransformerT(const ModelConfig& c) : cfg(c) { params.allocate(c); }

    // GPT-2 initialization: N(0, 0.02^2) weights, residual-path projections
    // scaled by 1/sqrt(2 n_blocks), zero biases, deterministic in the seed.
    static TransformerT init_params(const ModelConfig& cfg, uint64_t seed);

    // Input matrix construction: one encoder pathway per entry, plus the
    // positional embedding and the admission vector where flagged.
    // start_pos offsets the positional rows (used by cached decoding).
    Mat<S> embed_sequence(std::span<const EncodedEntry> entries, int start_pos = 0,
                          Tape<S>* tape = nullptr) const;

    // Full forward over an embedded sequence; returns per-position logits
    // (t x V). Dropout is applied only when training (rng required).
    Mat<S> forward(const Mat<S>& input, bool training = false, Tape<S>* tape = nullptr,
                   Rng* dropout_rng = nullptr) const;

    // Convenience: embed + forward.
    Mat<S> forward_entries(std::span<const EncodedEntry> entries, bool training = false,
                           Tape<S>* tape = nullptr, Rng* dropout_rng = nullptr) const;

    // Backward through forward_entries. dlogits is t x V; gradients are
    // accumulated into grads (which must be allocated for cfg).
    void backward(const Tape<S>& tape, const Mat<S>& dlogits, ParamSet<S>& grads) const;

    // Incremental decoding: process the single next entry for each lane.
    // Rows of `entries` correspond to lanes; each lane owns a private cache.
    // Returns one logit row per lane.
    Mat<S> step_batch(std::span<DecodeCacheT<S>* const> lanes,
                      std::span<const EncodedEntry> entries) const;

    // Single-lane cached forward per the decode contract.
    RowVec<S> forward_cached(DecodeCacheT<S>& cache, const EncodedEntry& entry) const;

    size_t n_params() const { return params.n_params(); }
};

using Transformer = TransformerT<float>;

// Numerically stable softmax (max-subtracted).
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> softmax(const Eigen::Matrix<S, Eigen::Dynamic, 1>& z);

void save_checkpoint(const std::string& path, const Transformer& model);
Transformer load_checkpoint(const std::string& path);

}  // namespace ttwin
