#include "ttwin/model.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"

namespace ttwin {

using nlohmann::json;

void ModelConfig::validate() const {
    if (n_blocks < 1 || d_model < 1 || d_ff < 1 || n_heads < 1 || d_head < 1)
        throw std::runtime_error("model config: dimensions must be positive");
    if (d_model != n_heads * d_head)
        throw std::runtime_error("model config: d_model must equal n_heads * d_head");
    if (d_seq < 2) throw std::runtime_error("model config: d_seq must be >= 2");
    if (!(p_drop >= 0.0 && p_drop < 1.0))
        throw std::runtime_error("model config: p_drop must lie in [0,1)");
    if (vocab_size < 1) throw std::runtime_error("model config: vocab_size must be positive");
}

ModelConfig ModelConfig::paper_scale(int vocab_size) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    return c;
}

ModelConfig ModelConfig::desk(int vocab_size) {
    ModelConfig c;
    c.n_blocks = 4;
    c.d_model = 128;
    c.d_ff = 512;
    c.n_heads = 4;
    c.d_head = 32;
    c.d_seq = 512;
    c.p_drop = 0.1;
    c.vocab_size = vocab_size;
    return c;
}

ModelConfig ModelConfig::tiny(int vocab_size) {
    ModelConfig c;
    c.n_blocks = 2;
    c.d_model = 16;
    c.d_ff = 64;
    c.n_heads = 2;
    c.d_head = 8;
    c.d_seq = 64;
    c.p_drop = 0.0;
    c.vocab_size = vocab_size;
    return c;
}

std::string ModelConfig::to_json() const {
    json j{{"n_blocks", n_blocks}, {"d_model", d_model}, {"d_ff", d_ff},
           {"n_heads", n_heads},   {"d_head", d_head},   {"d_seq", d_seq},
           {"p_drop", p_drop},     {"vocab_size", vocab_size}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.n_blocks = j.at("n_blocks");
    c.d_model = j.at("d_model");
    c.d_ff = j.at("d_ff");
    c.n_heads = j.at("n_heads");
    c.d_head = j.at("d_head");
    c.d_seq = j.at("d_seq");
    c.p_drop = j.at("p_drop");
    c.vocab_size = j.at("vocab_size");
    c.validate();
    return c;
}

template <typename S>
void ParamSet<S>::allocate(const ModelConfig& cfg) {
    cfg.validate();
    const int d = cfg.d_model;
    tok_emb = Mat<S>::Zero(cfg.vocab_size, d);
    pos_emb = Mat<S>::Zero(cfg.d_seq, d);
    adm_vec = Mat<S>::Zero(1, d);
    num_w1 = Mat<S>::Zero(1, d);
    num_b1 = Mat<S>::Zero(1, d);
    num_w2 = Mat<S>::Zero(d, d);
    num_b2 = Mat<S>::Zero(1, d);
    tmp_w1 = Mat<S>::Zero(5, d);
    tmp_b1 = Mat<S>::Zero(1, d);
    tmp_w2 = Mat<S>::Zero(d, d);
    tmp_b2 = Mat<S>::Zero(1, d);
    blocks.resize(cfg.n_blocks);
    for (auto& b : blocks) {
        b.ln1_g = Mat<S>::Zero(1, d);
        b.ln1_b = Mat<S>::Zero(1, d);
        b.qkv_w = Mat<S>::Zero(d, 3 * d);
        b.qkv_b = Mat<S>::Zero(1, 3 * d);
        b.proj_w = Mat<S>::Zero(d, d);
        b.proj_b = Mat<S>::Zero(1, d);
        b.ln2_g = Mat<S>::Zero(1, d);
        b.ln2_b = Mat<S>::Zero(1, d);
        b.fc_w = Mat<S>::Zero(d, cfg.d_ff);
        b.fc_b = Mat<S>::Zero(1, cfg.d_ff);
        b.proj2_w = Mat<S>::Zero(cfg.d_ff, d);
        b.proj2_b = Mat<S>::Zero(1, d);
    }
    ln_f_g = Mat<S>::Zero(1, d);
    ln_f_b = Mat<S>::Zero(1, d);
    head_w = Mat<S>::Zero(d, cfg.vocab_size);
    head_b = Mat<S>::Zero(1, cfg.vocab_size);
}

template <typename S>
void ParamSet<S>::set_zero() {
    visit([](const std::string&, Mat<S>& m) { m.setZero(); });
}

template <typename S>
size_t ParamSet<S>::n_params() const {
    size_t n = 0;
    visit([&](const std::string&, const Mat<S>& m) { n += static_cast<size_t>(m.size()); });
    return n;
}

template <typename S>
void DecodeCacheT<S>::reset(const ModelConfig& cfg) {
    len = 0;
    k.assign(cfg.n_blocks, Mat<S>());
    v.assign(cfg.n_blocks, Mat<S>());
}

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

template <typename S>
S gelu(S x) {
    double xd = static_cast<double>(x);
    return static_cast<S>(0.5 * xd * (1.0 + std::tanh(kGeluK * (xd + kGeluC * xd * xd * xd))));
}

template <typename S>
S gelu_grad(S x) {
    double xd = static_cast<double>(x);
    double u = kGeluK * (xd + kGeluC * xd * xd * xd);
    double t = std::tanh(u);
    double du = kGeluK * (1.0 + 3.0 * kGeluC * xd * xd);
    return static_cast<S>(0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du);
}

template <typename S>
Mat<S> gelu_mat(const Mat<S>& x) {
    return x.unaryExpr([](S v) { return gelu(v); });
}

// y = xhat * g + b with xhat = (x - mean) * rstd per row.
template <typename S>
void layernorm_fwd(const Mat<S>& x, const Mat<S>& g, const Mat<S>& b, Mat<S>& y, Mat<S>& xhat,
                   Eigen::Matrix<S, Eigen::Dynamic, 1>& rstd) {
    const auto t = x.rows();
    const auto d = x.cols();
    xhat.resize(t, d);
    y.resize(t, d);
    rstd.resize(t);
    for (Eigen::Index i = 0; i < t; ++i) {
        S mu = x.row(i).mean();
        auto centered = (x.row(i).array() - mu).eval();
        S var = centered.square().mean();
        S r = static_cast<S>(1.0 / std::sqrt(static_cast<double>(var) + kLnEps));
        rstd(i) = r;
        xhat.row(i) = centered * r;
        y.row(i) = xhat.row(i).cwiseProduct(g.row(0)) + b.row(0);
    }
}

template <typename S>
void layernorm_bwd(const Mat<S>& dy, const Mat<S>& xhat,
                   const Eigen::Matrix<S, Eigen::Dynamic, 1>& rstd, const Mat<S>& g, Mat<S>& dx,
                   Mat<S>& dg, Mat<S>& db) {
    const auto t = dy.rows();
    const auto d = dy.cols();
    dx.resize(t, d);
    for (Eigen::Index i = 0; i < t; ++i) {
        dg.row(0) += dy.row(i).cwiseProduct(xhat.row(i));
        db.row(0) += dy.row(i);
        auto dxhat = dy.row(i).cwiseProduct(g.row(0)).eval();
        S m1 = dxhat.mean();
        S m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = (((dxhat.array() - m1) - xhat.row(i).array() * m2) * rstd(i)).matrix();
    }
    (void)d;
}

template <typename S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    Mat<S> m(rows, cols);
    const S keep = static_cast<S>(1.0 / (1.0 - p));
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform() < p ? S(0) : keep;
    return m;
}

template <typename S>
void ensure_rows(Mat<S>& m, Eigen::Index rows, Eigen::Index cols) {
    if (m.cols() != cols) m.resize(0, cols);
    if (m.rows() < rows) {
        Eigen::Index cap = m.rows() < 32 ? 32 : m.rows() * 2;
        if (cap < rows) cap = rows;
        m.conservativeResize(cap, cols);
    }
}

}  // namespace

template <typename S>
TransformerT<S> TransformerT<S>::init_params(const ModelConfig& cfg, uint64_t seed) {
    TransformerT<S> m(cfg);
    Rng rng(seed);
    const double base_sd = 0.02;
    const double resid_sd = base_sd / std::sqrt(2.0 * cfg.n_blocks);
    m.params.visit([&](const std::string& name, Mat<S>& t) {
        auto ends_with = [&](const char* suf) {
            std::string s(suf);
            return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
        };
        if (ends_with(".g")) {
            t.setOnes();
            return;
        }
        if (ends_with(".b") || ends_with("_b") || ends_with(".b1") || ends_with(".b2") ||
            ends_with("qkv_b") || ends_with("proj_b") || ends_with("fc_b")) {
            t.setZero();
            return;
        }
        double sd = (ends_with("attn.proj_w") || ends_with("mlp.proj_w")) ? resid_sd : base_sd;
        for (Eigen::Index i = 0; i < t.rows(); ++i)
            for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = static_cast<S>(rng.normal(0.0, sd));
    });
    return m;
}

template <typename S>
Mat<S> TransformerT<S>::embed_sequence(std::span<const EncodedEntry> entries, int start_pos,
                                       Tape<S>* tape) const {
    const int t = static_cast<int>(entries.size());
    const int d = cfg.d_model;
    if (start_pos + t > cfg.d_seq)
        throw std::runtime_error("embed_sequence: sequence exceeds d_seq");
    Mat<S> x(t, d);
    Mat<S> h1_store;
    if (tape) h1_store = Mat<S>::Zero(t, d);
    for (int i = 0; i < t; ++i) {
        const EncodedEntry& e = entries[i];
        if (e.token_id < 0 || e.token_id >= cfg.vocab_size)
            throw std::runtime_error("embed_sequence: token id out of vocabulary");
        if (e.numeric) {
            Mat<S> h1 = params.num_w1 * static_cast<S>(e.percentile) + params.num_b1;
            if (tape) h1_store.row(i) = h1.row(0);
            x.row(i) = gelu_mat(h1).row(0) * params.num_w2 + params.num_b2.row(0);
        } else if (e.temporal) {
            Eigen::Matrix<S, 1, Eigen::Dynamic> a(1, 5);
            for (int c = 0; c < 5; ++c) a(0, c) = static_cast<S>(e.age.components[c]);
            Mat<S> h1 = a * params.tmp_w1 + params.tmp_b1;
            if (tape) h1_store.row(i) = h1.row(0);
            x.row(i) = gelu_mat(h1).row(0) * params.tmp_w2 + params.tmp_b2.row(0);
        } else {
            x.row(i) = params.tok_emb.row(e.token_id);
        }
        if (e.admitted) x.row(i) += params.adm_vec.row(0);
        x.row(i) += params.pos_emb.row(start_pos + i);
    }
    if (tape) {
        tape->entries.assign(entries.begin(), entries.end());
        tape->num_h1 = std::move(h1_store);
        tape->emb_raw = x;
    }
    return x;
}

template <typename S>
Mat<S> TransformerT<S>::forward(const Mat<S>& input, bool training, Tape<S>* tape,
                                Rng* dropout_rng) const {
    const int t = static_cast<int>(input.rows());
    const int d = cfg.d_model;
    const int nh = cfg.n_heads;
    const int dh = cfg.d_head;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    const bool drop = training && cfg.p_drop > 0.0;
    if (drop && !dropout_rng) throw std::runtime_error("forward: training dropout needs an rng");
    if (t > cfg.d_seq) throw std::runtime_error("forward: sequence exceeds d_seq");

    Mat<S> x = input;
    if (tape) tape->blocks.resize(cfg.n_blocks);
    if (drop) {
        Mat<S> m = dropout_mask<S>(t, d, cfg.p_drop, *dropout_rng);
        x = x.cwiseProduct(m);
        if (tape) tape->emb_mask = std::move(m);
    }

    for (int b = 0; b < cfg.n_blocks; ++b) {
        const BlockParams<S>& bp = params.blocks[b];
        typename Tape<S>::BlockTape* bt = tape ? &tape->blocks[b] : nullptr;
        if (bt) bt->x_in = x;

        Mat<S> xn1, xhat1;
        Eigen::Matrix<S, Eigen::Dynamic, 1> rstd1;
        layernorm_fwd(x, bp.ln1_g, bp.ln1_b, xn1, xhat1, rstd1);

        Mat<S> qkv = xn1 * bp.qkv_w;
        qkv.rowwise() += bp.qkv_b.row(0);

        Mat<S> att_out(t, d);
        std::vector<Mat<S>> att_store;
        if (bt) att_store.resize(nh);
        for (int h = 0; h < nh; ++h) {
            auto q = qkv.block(0, h * dh, t, dh);
            auto k = qkv.block(0, d + h * dh, t, dh);
            auto v = qkv.block(0, 2 * d + h * dh, t, dh);
            Mat<S> a = q * k.transpose() * scale;
            for (int i = 0; i < t; ++i) {
                // causal: position i attends only to positions <= i
                S mx = a.row(i).head(i + 1).maxCoeff();
                for (int j = 0; j <= i; ++j) a(i, j) = std::exp(a(i, j) - mx);
                for (int j = i + 1; j < t; ++j) a(i, j) = S(0);
                a.row(i) /= a.row(i).sum();
            }
            att_out.block(0, h * dh, t, dh) = a * v;
            if (bt) att_store[h] = std::move(a);
        }
        Mat<S> p = att_out * bp.proj_w;
        p.rowwise() += bp.proj_b.row(0);
        if (drop) {
            Mat<S> m = dropout_mask<S>(t, d, cfg.p_drop, *dropout_rng);
            p = p.cwiseProduct(m);
            if (bt) bt->attn_mask = std::move(m);
        }
        Mat<S> x_mid = x + p;

        Mat<S> xn2, xhat2;
        Eigen::Matrix<S, Eigen::Dynamic, 1> rstd2;
        layernorm_fwd(x_mid, bp.ln2_g, bp.ln2_b, xn2, xhat2, rstd2);
        Mat<S> h_pre = xn2 * bp.fc_w;
        h_pre.rowwise() += bp.fc_b.row(0);
        Mat<S> m_out = gelu_mat(h_pre) * bp.proj2_w;
        m_out.rowwise() += bp.proj2_b.row(0);
        if (drop) {
            Mat<S> m = dropout_mask<S>(t, d, cfg.p_drop, *dropout_rng);
            m_out = m_out.cwiseProduct(m);
            if (bt) bt->mlp_mask = std::move(m);
        }

        if (bt) {
            bt->xhat1 = std::move(xhat1);
            bt->rstd1 = std::move(rstd1);
            bt->qkv = std::move(qkv);
            bt->att = std::move(att_store);
            bt->att_out = std::move(att_out);
            bt->x_mid = x_mid;
            bt->xhat2 = std::move(xhat2);
            bt->rstd2 = std::move(rstd2);
            bt->h_pre = std::move(h_pre);
        }
        x = x_mid + m_out;
    }

    Mat<S> xnf, xhatf;
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstdf;
    layernorm_fwd(x, params.ln_f_g, params.ln_f_b, xnf, xhatf, rstdf);
    if (tape) {
        tape->x_final = x;
        tape->xhat_f = std::move(xhatf);
        tape->rstd_f = std::move(rstdf);
    }
    Mat<S> logits = xnf * params.head_w;
    logits.rowwise() += params.head_b.row(0);
    if (!logits.allFinite()) throw std::runtime_error("forward: non-finite activations");
    return logits;
}

template <typename S>
Mat<S> TransformerT<S>::forward_entries(std::span<const EncodedEntry> entries, bool training,
                                        Tape<S>* tape, Rng* dropout_rng) const {
    Mat<S> x = embed_sequence(entries, 0, tape);
    return forward(x, training, tape, dropout_rng);
}

template <typename S>
void TransformerT<S>::backward(const Tape<S>& tape, const Mat<S>& dlogits,
                               ParamSet<S>& grads) const {
    const int t = static_cast<int>(dlogits.rows());
    const int d = cfg.d_model;
    const int nh = cfg.n_heads;
    const int dh = cfg.d_head;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    const bool drop = tape.emb_mask.size() > 0;

    // head + final layernorm
    Mat<S> xnf(t, d);
    for (int i = 0; i < t; ++i)
        xnf.row(i) = tape.xhat_f.row(i).cwiseProduct(params.ln_f_g.row(0)) + params.ln_f_b.row(0);
    grads.head_w += xnf.transpose() * dlogits;
    grads.head_b += dlogits.colwise().sum();
    Mat<S> dxn = dlogits * params.head_w.transpose();
    Mat<S> dx;
    layernorm_bwd(dxn, tape.xhat_f, tape.rstd_f, params.ln_f_g, dx, grads.ln_f_g, grads.ln_f_b);

    for (int b = cfg.n_blocks - 1; b >= 0; --b) {
        const BlockParams<S>& bp = params.blocks[b];
        const typename Tape<S>::BlockTape& bt = tape.blocks[b];
        BlockParams<S>& bg = grads.blocks[b];

        // MLP path: x = x_mid + drop(proj2(gelu(fc(ln2(x_mid)))))
        Mat<S> dm = drop ? dx.cwiseProduct(bt.mlp_mask).eval() : dx;
        Mat<S> h_act = gelu_mat(bt.h_pre);
        bg.proj2_w += h_act.transpose() * dm;
        bg.proj2_b += dm.colwise().sum();
        Mat<S> dh_act = dm * bp.proj2_w.transpose();
        Mat<S> dh_pre =
            dh_act.cwiseProduct(bt.h_pre.unaryExpr([](S v) { return gelu_grad(v); }));
        Mat<S> xn2(t, d);
        for (int i = 0; i < t; ++i)
            xn2.row(i) = bt.xhat2.row(i).cwiseProduct(bp.ln2_g.row(0)) + bp.ln2_b.row(0);
        bg.fc_w += xn2.transpose() * dh_pre;
        bg.fc_b += dh_pre.colwise().sum();
        Mat<S> dxn2 = dh_pre * bp.fc_w.transpose();
        Mat<S> dx_ln2;
        layernorm_bwd(dxn2, bt.xhat2, bt.rstd2, bp.ln2_g, dx_ln2, bg.ln2_g, bg.ln2_b);
        Mat<S> dx_mid = dx + dx_ln2;

        // attention path: x_mid = x_in + drop(proj(attn(ln1(x_in))))
        Mat<S> dp = drop ? dx_mid.cwiseProduct(bt.attn_mask).eval() : dx_mid;
        bg.proj_w += bt.att_out.transpose() * dp;
        bg.proj_b += dp.colwise().sum();
        Mat<S> datt_out = dp * bp.proj_w.transpose();

        Mat<S> dqkv = Mat<S>::Zero(t, 3 * d);
        for (int h = 0; h < nh; ++h) {
            auto q = bt.qkv.block(0, h * dh, t, dh);
            auto k = bt.qkv.block(0, d + h * dh, t, dh);
            auto v = bt.qkv.block(0, 2 * d + h * dh, t, dh);
            const Mat<S>& a = bt.att[h];
            auto doh = datt_out.block(0, h * dh, t, dh);
            Mat<S> dv = a.transpose() * doh;
            Mat<S> da = doh * v.transpose();
            Mat<S> da_raw(t, t);
            for (int i = 0; i < t; ++i) {
                S rowdot = da.row(i).cwiseProduct(a.row(i)).sum();
                da_raw.row(i) = (a.row(i).array() * (da.row(i).array() - rowdot)).matrix();
            }
            dqkv.block(0, h * dh, t, dh) = da_raw * k * scale;
            dqkv.block(0, d + h * dh, t, dh) = da_raw.transpose() * q * scale;
            dqkv.block(0, 2 * d + h * dh, t, dh) = dv;
        }
        Mat<S> xn1(t, d);
        for (int i = 0; i < t; ++i)
            xn1.row(i) = bt.xhat1.row(i).cwiseProduct(bp.ln1_g.row(0)) + bp.ln1_b.row(0);
        bg.qkv_w += xn1.transpose() * dqkv;
        bg.qkv_b += dqkv.colwise().sum();
        Mat<S> dxn1 = dqkv * bp.qkv_w.transpose();
        Mat<S> dx_ln1;
        layernorm_bwd(dxn1, bt.xhat1, bt.rstd1, bp.ln1_g, dx_ln1, bg.ln1_g, bg.ln1_b);
        dx = dx_mid + dx_ln1;
    }

    // embedding pathways
    if (drop) dx = dx.cwiseProduct(tape.emb_mask);
    for (int i = 0; i < t; ++i) {
        const EncodedEntry& e = tape.entries[i];
        auto drow = dx.row(i);
        if (e.numeric) {
            Mat<S> h1 = tape.num_h1.row(i);
            Mat<S> a1 = gelu_mat(h1);
            grads.num_w2 += a1.transpose() * drow;
            grads.num_b2 += drow;
            Mat<S> da1 = drow * params.num_w2.transpose();
            Mat<S> dh1 = da1.cwiseProduct(h1.unaryExpr([](S x) { return gelu_grad(x); }));
            grads.num_w1 += dh1 * static_cast<S>(e.percentile);
            grads.num_b1 += dh1;
        } else if (e.temporal) {
            Mat<S> h1 = tape.num_h1.row(i);
            Mat<S> a1 = gelu_mat(h1);
            grads.tmp_w2 += a1.transpose() * drow;
            grads.tmp_b2 += drow;
            Mat<S> da1 = drow * params.tmp_w2.transpose();
            Mat<S> dh1 = da1.cwiseProduct(h1.unaryExpr([](S x) { return gelu_grad(x); }));
            for (int c = 0; c < 5; ++c)
                grads.tmp_w1.row(c) += dh1.row(0) * static_cast<S>(e.age.components[c]);
            grads.tmp_b1 += dh1;
        } else {
            grads.tok_emb.row(e.token_id) += drow;
        }
        if (e.admitted) grads.adm_vec.row(0) += drow;
        grads.pos_emb.row(i) += drow;
    }
}

template <typename S>
Mat<S> TransformerT<S>::step_batch(std::span<DecodeCacheT<S>* const> lanes,
                                   std::span<const EncodedEntry> entries) const {
    const int a_n = static_cast<int>(lanes.size());
    if (a_n != static_cast<int>(entries.size()))
        throw std::runtime_error("step_batch: lane/entry count mismatch");
    const int d = cfg.d_model;
    const int nh = cfg.n_heads;
    const int dh = cfg.d_head;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    Mat<S> x(a_n, d);
    for (int a = 0; a < a_n; ++a) {
        DecodeCacheT<S>& c = *lanes[a];
        if (c.len >= cfg.d_seq) throw std::runtime_error("step_batch: decode cache overflow");
        if (static_cast<int>(c.k.size()) != cfg.n_blocks) c.reset(cfg);
        x.row(a) = embed_sequence(std::span(&entries[a], 1), c.len).row(0);
    }

    for (int b = 0; b < cfg.n_blocks; ++b) {
        const BlockParams<S>& bp = params.blocks[b];
        Mat<S> xn1, xhat1;
        Eigen::Matrix<S, Eigen::Dynamic, 1> rstd1;
        layernorm_fwd(x, bp.ln1_g, bp.ln1_b, xn1, xhat1, rstd1);
        Mat<S> qkv = xn1 * bp.qkv_w;
        qkv.rowwise() += bp.qkv_b.row(0);

        Mat<S> att_out(a_n, d);
        for (int a = 0; a < a_n; ++a) {
            DecodeCacheT<S>& c = *lanes[a];
            ensure_rows(c.k[b], c.len + 1, d);
            ensure_rows(c.v[b], c.len + 1, d);
            c.k[b].row(c.len) = qkv.block(a, d, 1, d);
            c.v[b].row(c.len) = qkv.block(a, 2 * d, 1, d);
            const int n = c.len + 1;
            for (int h = 0; h < nh; ++h) {
                auto q = qkv.block(a, h * dh, 1, dh);
                auto kh = c.k[b].block(0, h * dh, n, dh);
                auto vh = c.v[b].block(0, h * dh, n, dh);
                Eigen::Matrix<S, Eigen::Dynamic, 1> s = kh * q.transpose() * scale;
                S mx = s.maxCoeff();
                s = (s.array() - mx).exp();
                s /= s.sum();
                att_out.block(a, h * dh, 1, dh) = s.transpose() * vh;
            }
        }
        Mat<S> p = att_out * bp.proj_w;
        p.rowwise() += bp.proj_b.row(0);
        Mat<S> x_mid = x + p;

        Mat<S> xn2, xhat2;
        Eigen::Matrix<S, Eigen::Dynamic, 1> rstd2;
        layernorm_fwd(x_mid, bp.ln2_g, bp.ln2_b, xn2, xhat2, rstd2);
        Mat<S> h_pre = xn2 * bp.fc_w;
        h_pre.rowwise() += bp.fc_b.row(0);
        Mat<S> m_out = gelu_mat(h_pre) * bp.proj2_w;
        m_out.rowwise() += bp.proj2_b.row(0);
        x = x_mid + m_out;
    }
    for (int a = 0; a < a_n; ++a) lanes[a]->len += 1;

    Mat<S> xnf, xhatf;
    Eigen::Matrix<S, Eigen::Dynamic, 1> rstdf;
    layernorm_fwd(x, params.ln_f_g, params.ln_f_b, xnf, xhatf, rstdf);
    Mat<S> logits = xnf * params.head_w;
    logits.rowwise() += params.head_b.row(0);
    if (!logits.allFinite()) throw std::runtime_error("step_batch: non-finite activations");
    return logits;
}

template <typename S>
RowVec<S> TransformerT<S>::forward_cached(DecodeCacheT<S>& cache, const EncodedEntry& entry) const {
    DecodeCacheT<S>* lane = &cache;
    Mat<S> logits = step_batch(std::span(&lane, 1), std::span(&entry, 1));
    return logits.row(0);
}

template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> softmax(const Eigen::Matrix<S, Eigen::Dynamic, 1>& z) {
    if (!z.allFinite()) throw std::runtime_error("softmax: non-finite logits");
    Eigen::Matrix<S, Eigen::Dynamic, 1> p = (z.array() - z.maxCoeff()).exp();
    p /= p.sum();
    return p;
}

void save_checkpoint(const std::string& path, const Transformer& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
    out.write("TTWIN", 5);
    uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);
    std::string cfg = model.cfg.to_json();
    uint32_t cfg_len = static_cast<uint32_t>(cfg.size());
    out.write(reinterpret_cast<const char*>(&cfg_len), 4);
    out.write(cfg.data(), cfg.size());
    model.params.visit([&](const std::string& name, const Mat<float>& t) {
        uint32_t name_len = static_cast<uint32_t>(name.size());
        out.write(reinterpret_cast<const char*>(&name_len), 4);
        out.write(name.data(), name.size());
        uint32_t rank = 2;
        out.write(reinterpret_cast<const char*>(&rank), 4);
        uint64_t dims[2] = {static_cast<uint64_t>(t.rows()), static_cast<uint64_t>(t.cols())};
        out.write(reinterpret_cast<const char*>(dims), 16);
        out.write(reinterpret_cast<const char*>(t.data()), sizeof(float) * t.size());
    });
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Transformer load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[5];
    in.read(magic, 5);
    if (!in || std::string(magic, 5) != "TTWIN")
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = 0, cfg_len = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    in.read(reinterpret_cast<char*>(&cfg_len), 4);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), cfg_len);
    Transformer model(ModelConfig::from_json(cfg_text));

    std::map<std::string, Mat<float>*> by_name;
    model.params.visit([&](const std::string& name, Mat<float>& t) { by_name[name] = &t; });
    size_t loaded = 0;
    while (true) {
        uint32_t name_len = 0;
        in.read(reinterpret_cast<char*>(&name_len), 4);
        if (!in) break;  // EOF
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint32_t rank = 0;
        in.read(reinterpret_cast<char*>(&rank), 4);
        if (rank != 2) throw std::runtime_error("checkpoint: unsupported tensor rank");
        uint64_t dims[2];
        in.read(reinterpret_cast<char*>(dims), 16);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: unknown tensor " + name);
        Mat<float>& t = *it->second;
        if (static_cast<uint64_t>(t.rows()) != dims[0] || static_cast<uint64_t>(t.cols()) != dims[1])
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(t.data()), sizeof(float) * t.size());
        if (!in) throw std::runtime_error("checkpoint: truncated tensor " + name);
        ++loaded;
    }
    if (loaded != by_name.size()) throw std::runtime_error("checkpoint: missing tensors");
    return model;
}

template struct ParamSet<float>;
template struct ParamSet<double>;
template struct DecodeCacheT<float>;
template struct DecodeCacheT<double>;
template class TransformerT<float>;
template class TransformerT<double>;
template Eigen::Matrix<float, Eigen::Dynamic, 1> softmax(
    const Eigen::Matrix<float, Eigen::Dynamic, 1>&);
template Eigen::Matrix<double, Eigen::Dynamic, 1> softmax(
    const Eigen::Matrix<double, Eigen::Dynamic, 1>&);

}  // namespace ttwin
