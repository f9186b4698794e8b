// condnet.hpp - the conditioned velocity network: lyric/style/duration
// encoders, condition fusion with a convolutional positional term, a small
// pre-norm transformer trunk with rotary attention, lyric residual injection
// with a learnable padding bias on the first half of the layers, two-stage
// condition dropout, and multi-condition classifier-free guidance.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "conditioning.hpp"
#include "flowcore.hpp"
#include "lyricalign.hpp"
#include "rng.hpp"

namespace jamflow {

struct ModelConfig {
    int layers = 4;   // transformer depth; residual injection covers the first layers/2
    int hidden = 64;
    int heads = 4;
    int channels = 32;  // latent channel count c
    int lyric_dim = 32; // c_l
    int style_dim = 8;  // c_s
    int dur_dim = 8;    // c_d
    int upsample = 2;   // r, phoneme grid cells per latent frame
    int lyric_vocab = 26;  // phoneme alphabet + the two filler tokens
    int lyric_kernel = 3;
    int convpos_kernel = 7;
    int ffn_dim = 128;
    int time_feats = 16;
    int dur_feats = 16;
    bool use_tdc = true;  // token-level duration control (padding bias pathway)
    double rope_base = 10000.0;
    double norm_eps = 1e-6;

    int residual_layers() const { return layers / 2; }
    int head_dim() const { return hidden / heads; }
};

inline void validate_model(const ModelConfig& m) {
    if (m.layers < 1 || m.hidden < 1 || m.heads < 1 || m.channels < 1 || m.lyric_dim < 1 || m.style_dim < 1 ||
        m.dur_dim < 1 || m.upsample < 1 || m.ffn_dim < 1 || m.lyric_vocab < 3)
        throw std::invalid_argument("ModelConfig: dimensions must be positive");
    if (m.hidden % m.heads != 0) throw std::invalid_argument("ModelConfig: hidden must be divisible by heads");
    if (m.head_dim() % 2 != 0) throw std::invalid_argument("ModelConfig: head_dim must be even for rotary encoding");
    if (m.lyric_kernel % 2 == 0 || m.convpos_kernel % 2 == 0)
        throw std::invalid_argument("ModelConfig: conv kernels must be odd");
    if (m.time_feats % 2 != 0 || m.dur_feats % 2 != 0)
        throw std::invalid_argument("ModelConfig: sinusoid feature counts must be even");
}

// geometric ladder of sin/cos features; injective enough to separate any two
// realistic durations or timesteps
template <typename T>
inline Mat<T> sinusoid_features(double x, int dim, double period_min, double period_max) {
    Mat<T> out(1, dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double frac = (half == 1) ? 0.0 : static_cast<double>(i) / static_cast<double>(half - 1);
        const double period = period_min * std::pow(period_max / period_min, frac);
        out.at(0, 2 * i) = static_cast<T>(std::sin(x / period));
        out.at(0, 2 * i + 1) = static_cast<T>(std::cos(x / period));
    }
    return out;
}

template <typename T>
class CondNet : public VelocityField<T> {
public:
    CondNet(ModelConfig cfg, uint64_t init_seed) : cfg_(cfg) {
        validate_model(cfg_);
        Rng rng(init_seed);
        auto gauss = [&rng](int r, int c, double std) {
            Mat<T> m(r, c);
            for (auto& x : m.v) x = static_cast<T>(std * rng.normal());
            return m;
        };
        const int fuse_in = cfg_.channels + cfg_.lyric_dim + cfg_.style_dim + cfg_.dur_dim;

        params_.add("lyric.embed", gauss(cfg_.lyric_vocab, cfg_.lyric_dim, 1.0));
        params_.add("lyric.conv.w", gauss(cfg_.lyric_dim, cfg_.lyric_dim * cfg_.lyric_kernel,
                                          1.0 / std::sqrt(double(cfg_.lyric_dim * cfg_.lyric_kernel))));
        params_.add("lyric.conv.b", Mat<T>(1, cfg_.lyric_dim));
        params_.add("lyric.null", gauss(1, cfg_.lyric_dim, 1.0));
        params_.add("style.null", gauss(1, cfg_.style_dim, 1.0));
        params_.add("dur.proj.w", gauss(cfg_.dur_dim, cfg_.dur_feats, 1.0 / std::sqrt(double(cfg_.dur_feats))));
        params_.add("dur.proj.b", Mat<T>(1, cfg_.dur_dim));
        params_.add("time.proj.w", gauss(cfg_.hidden, cfg_.time_feats, 1.0 / std::sqrt(double(cfg_.time_feats))));
        params_.add("time.proj.b", Mat<T>(1, cfg_.hidden));
        params_.add("fuse.w", gauss(cfg_.hidden, fuse_in, 1.0 / std::sqrt(double(fuse_in))));
        params_.add("fuse.b", Mat<T>(1, cfg_.hidden));
        params_.add("convpos.w", gauss(cfg_.hidden, cfg_.convpos_kernel, 1.0 / std::sqrt(double(cfg_.convpos_kernel))));
        params_.add("convpos.b", Mat<T>(1, cfg_.hidden));
        params_.add("pad.bias", Mat<T>(1, cfg_.lyric_dim));  // zero start: TDC off until trained

        const double wstd = 1.0 / std::sqrt(double(cfg_.hidden));
        for (int i = 0; i < cfg_.layers; ++i) {
            const std::string p = "blk" + std::to_string(i) + ".";
            params_.add(p + "attn.norm", Mat<T>::filled(1, cfg_.hidden, T(1)));
            params_.add(p + "attn.wq", gauss(cfg_.hidden, cfg_.hidden, wstd));
            params_.add(p + "attn.wk", gauss(cfg_.hidden, cfg_.hidden, wstd));
            params_.add(p + "attn.wv", gauss(cfg_.hidden, cfg_.hidden, wstd));
            params_.add(p + "attn.wo", gauss(cfg_.hidden, cfg_.hidden, wstd));
            params_.add(p + "ffn.norm", Mat<T>::filled(1, cfg_.hidden, T(1)));
            params_.add(p + "ffn.w1", gauss(cfg_.ffn_dim, cfg_.hidden, wstd));
            params_.add(p + "ffn.w3", gauss(cfg_.ffn_dim, cfg_.hidden, wstd));
            params_.add(p + "ffn.w2", gauss(cfg_.hidden, cfg_.ffn_dim, 1.0 / std::sqrt(double(cfg_.ffn_dim))));
            if (i < cfg_.residual_layers())
                params_.add(p + "inject.w", gauss(cfg_.hidden, cfg_.lyric_dim, 1.0 / std::sqrt(double(cfg_.lyric_dim))));
        }
        params_.add("out.norm", Mat<T>::filled(1, cfg_.hidden, T(1)));
        params_.add("out.proj.w", Mat<T>(cfg_.channels, cfg_.hidden));  // zero start: identity-zero velocity
        params_.add("out.proj.b", Mat<T>(1, cfg_.channels));
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

    // grid token -> embedding row: 0 = song filler, 1 = vocal filler, 2+p = phoneme p
    std::vector<int> grid_ids(const PhonemeGrid& grid) const {
        std::vector<int> ids;
        ids.reserve(grid.tokens.size());
        for (const GridToken& tok : grid.tokens) {
            switch (tok.kind) {
                case GridToken::Kind::song_filler: ids.push_back(0); break;
                case GridToken::Kind::vocal_filler: ids.push_back(1); break;
                case GridToken::Kind::phoneme:
                    if (tok.phoneme + 2 >= cfg_.lyric_vocab)
                        throw std::invalid_argument("grid_ids: phoneme id outside the embedding vocabulary");
                    ids.push_back(tok.phoneme + 2);
                    break;
            }
        }
        return ids;
    }

    // embedding lookup then a strided convolution that downsamples by r
    int lyric_encoder_node(Tape<T>& g, const PhonemeGrid& grid) const {
        if (grid.length() % cfg_.upsample != 0)
            throw std::invalid_argument("encode_lyrics: grid length not divisible by the upsample rate");
        const int emb = g.embed_rows(g.param("lyric.embed"), grid_ids(grid));
        return g.conv1d(emb, g.param("lyric.conv.w"), g.param("lyric.conv.b"), cfg_.lyric_kernel, cfg_.upsample,
                        (cfg_.lyric_kernel - 1) / 2);
    }

    Mat<T> encode_lyrics(const PhonemeGrid& grid) const {
        Tape<T> g(&params_);
        return g.val(lyric_encoder_node(g, grid));
    }

    int duration_encoder_node(Tape<T>& g, double t_target) const {
        if (!(t_target > 0.0)) throw std::invalid_argument("encode_duration: t_target must be positive");
        const int f = g.constant(sinusoid_features<T>(t_target, cfg_.dur_feats, 0.1, 1000.0));
        return g.add_rowvec(g.matmul_nt(f, g.param("dur.proj.w")), g.param("dur.proj.b"));
    }

    Mat<T> encode_duration(double t_target) const {
        Tape<T> g(&params_);
        return g.val(duration_encoder_node(g, t_target));
    }

    CondSet<T> encode_conditions(const CondInputs<T>& in) const {
        CondSet<T> c;
        c.lyric_present = in.lyric_present;
        c.style_present = in.style_present;
        c.pad_mask = in.pad_mask;
        if (in.lyric_present) {
            c.lyric = encode_lyrics(in.grid);
        } else {
            const Mat<T>& null_row = params_.value("lyric.null");
            c.lyric = Mat<T>(in.pad_mask.length(), cfg_.lyric_dim);
            for (int i = 0; i < c.lyric.rows; ++i)
                for (int j = 0; j < c.lyric.cols; ++j) c.lyric.at(i, j) = null_row.at(0, j);
        }
        c.style = in.style_present ? in.style : params_.value("style.null");
        c.dur = encode_duration(in.duration.t_target);
        return c;
    }

    // concat [z_t | c_lyric | style | dur] per frame, shared linear map,
    // plus the depthwise convolutional positional term
    int fuse_node(Tape<T>& g, int z_t, int c_lyric, int style_row, int dur_row) const {
        const int l = g.val(z_t).rows;
        const int cat = g.concat_cols({z_t, c_lyric, g.tile_rows(style_row, l), g.tile_rows(dur_row, l)});
        const int x = g.add_rowvec(g.matmul_nt(cat, g.param("fuse.w")), g.param("fuse.b"));
        return g.add(x, g.dwconv1d(x, g.param("convpos.w"), g.param("convpos.b")));
    }

    Mat<T> fuse(const LatentSeq<T>& z_t, const CondSet<T>& cond) const {
        Tape<T> g(&params_);
        const int lyr = cond_lyric_node(g, cond, z_t.frames());
        const int sty = cond_style_node(g, cond);
        return g.val(fuse_node(g, g.constant(z_t.values), lyr, sty, g.constant(cond.dur)));
    }

    // c_lyric with the padding bias added on masked frames (the TDC marker)
    int residual_source_node(Tape<T>& g, int c_lyric, const PadMask& mask) const {
        if (!cfg_.use_tdc) return c_lyric;
        if (mask.length() != g.val(c_lyric).rows)
            throw std::invalid_argument("residual_source: pad mask length mismatch");
        Mat<T> col(mask.length(), 1);
        for (int i = 0; i < mask.length(); ++i) col.at(i, 0) = mask.beyond[static_cast<size_t>(i)] ? T(1) : T(0);
        return g.add(c_lyric, g.matmul(g.constant(std::move(col)), g.param("pad.bias")));
    }

    // r_layer = W_layer (c_lyric + b_pad on masked frames); defined for the injected half
    int residual_inject_node(Tape<T>& g, int biased, int layer) const {
        if (layer < 0 || layer >= cfg_.residual_layers())
            throw std::invalid_argument("residual_inject: layer outside the injected range");
        return g.matmul_nt(biased, g.param("blk" + std::to_string(layer) + ".inject.w"));
    }

    Mat<T> residual_inject(const Mat<T>& c_lyric, const PadMask& mask, int layer) const {
        Tape<T> g(&params_);
        return g.val(residual_inject_node(g, residual_source_node(g, g.constant(c_lyric), mask), layer));
    }

    // pre-norm attention with rotary encoding, then a gated feed-forward
    int block_node(Tape<T>& g, int x, int layer) const {
        const std::string p = "blk" + std::to_string(layer) + ".";
        const T eps = static_cast<T>(cfg_.norm_eps);
        const int a = g.rmsnorm_rows(x, g.param(p + "attn.norm"), eps);
        const int dh = cfg_.head_dim();
        const int q = g.rope(g.matmul_nt(a, g.param(p + "attn.wq")), dh, static_cast<T>(cfg_.rope_base));
        const int k = g.rope(g.matmul_nt(a, g.param(p + "attn.wk")), dh, static_cast<T>(cfg_.rope_base));
        const int v = g.matmul_nt(a, g.param(p + "attn.wv"));
        std::vector<int> ctx;
        ctx.reserve(static_cast<size_t>(cfg_.heads));
        const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
        for (int h = 0; h < cfg_.heads; ++h) {
            const int qh = g.slice_cols(q, h * dh, dh);
            const int kh = g.slice_cols(k, h * dh, dh);
            const int vh = g.slice_cols(v, h * dh, dh);
            const int probs = g.softmax_rows(g.scale(g.matmul_nt(qh, kh), inv_sqrt));
            ctx.push_back(g.matmul(probs, vh));
        }
        int out = g.add(x, g.matmul_nt(g.concat_cols(ctx), g.param(p + "attn.wo")));
        const int f = g.rmsnorm_rows(out, g.param(p + "ffn.norm"), eps);
        const int gated = g.mul(g.silu(g.matmul_nt(f, g.param(p + "ffn.w1"))), g.matmul_nt(f, g.param(p + "ffn.w3")));
        return g.add(out, g.matmul_nt(gated, g.param(p + "ffn.w2")));
    }

    // full forward from raw inputs (training path: encoders live in the graph)
    int forward_node(Tape<T>& g, const Mat<T>& z_t, double t, const CondInputs<T>& in,
                     std::vector<int>* block_outs = nullptr) const {
        const int l = z_t.rows;
        const int lyr = in.lyric_present ? lyric_encoder_node(g, in.grid) : g.tile_rows(g.param("lyric.null"), l);
        const int sty = in.style_present ? g.constant(in.style) : g.param("style.null");
        const int dur = duration_encoder_node(g, in.duration.t_target);
        return trunk_node(g, g.constant(z_t), t, lyr, sty, dur, in.pad_mask, block_outs);
    }

    // forward from pre-encoded conditions (inference path)
    int forward_node_encoded(Tape<T>& g, const Mat<T>& z_t, double t, const CondSet<T>& cond,
                             std::vector<int>* block_outs = nullptr) const {
        const int lyr = cond_lyric_node(g, cond, z_t.rows);
        const int sty = cond_style_node(g, cond);
        return trunk_node(g, g.constant(z_t), t, lyr, sty, g.constant(cond.dur), cond.pad_mask, block_outs);
    }

    Mat<T> evaluate(const LatentSeq<T>& z_t, TimeStep t, const CondSet<T>& cond) const override {
        Tape<T> g(&params_);
        return g.val(forward_node_encoded(g, z_t.values, t.t, cond));
    }

private:
    int cond_lyric_node(Tape<T>& g, const CondSet<T>& cond, int l) const {
        if (!cond.lyric_present) return g.tile_rows(g.param("lyric.null"), l);
        if (cond.lyric.rows != l || cond.lyric.cols != cfg_.lyric_dim)
            throw std::invalid_argument("forward: c_lyric shape mismatch");
        return g.constant(cond.lyric);
    }

    int cond_style_node(Tape<T>& g, const CondSet<T>& cond) const {
        if (!cond.style_present) return g.param("style.null");
        if (cond.style.rows != 1 || cond.style.cols != cfg_.style_dim)
            throw std::invalid_argument("forward: c_style shape mismatch");
        return g.constant(cond.style);
    }

    int trunk_node(Tape<T>& g, int z_t, double t, int c_lyric, int style_row, int dur_row, const PadMask& mask,
                   std::vector<int>* block_outs) const {
        if (g.val(z_t).cols != cfg_.channels) throw std::invalid_argument("forward: latent channel mismatch");
        int x = fuse_node(g, z_t, c_lyric, style_row, dur_row);
        const int tfeat = g.constant(sinusoid_features<T>(t, cfg_.time_feats, 0.01, 2.0));
        const int trow = g.add_rowvec(g.matmul_nt(tfeat, g.param("time.proj.w")), g.param("time.proj.b"));
        x = g.add_rowvec(x, trow);
        const int biased = residual_source_node(g, c_lyric, mask);
        for (int i = 0; i < cfg_.layers; ++i) {
            x = block_node(g, x, i);
            if (i < cfg_.residual_layers()) x = g.add(x, residual_inject_node(g, biased, i));
            g.check_finite(x, "velocity network layer " + std::to_string(i));
            if (block_outs) block_outs->push_back(x);
        }
        const int n = g.rmsnorm_rows(x, g.param("out.norm"), static_cast<T>(cfg_.norm_eps));
        return g.add_rowvec(g.matmul_nt(n, g.param("out.proj.w")), g.param("out.proj.b"));
    }

    ModelConfig cfg_;
    ParamStore<T> params_;
};

struct DropFlags {
    bool drop_style = false;
    bool drop_lyric = false;
};

// two-stage scheme: style drops with p_style; lyric can drop only inside the
// style-dropped branch, with p_lyric. Exactly one uniform is consumed per
// stage reached, so the stream is reproducible.
inline DropFlags sample_condition_dropout(Rng& rng, double p_style = 0.10, double p_lyric = 0.50) {
    DropFlags f;
    f.drop_style = rng.bernoulli(p_style);
    if (f.drop_style) f.drop_lyric = rng.bernoulli(p_lyric);
    return f;
}

template <typename T>
inline CondSet<T> dropout_conditions(Rng& rng, const CondSet<T>& cond, double p_style = 0.10,
                                     double p_lyric = 0.50) {
    const DropFlags f = sample_condition_dropout(rng, p_style, p_lyric);
    CondSet<T> out = cond;
    if (f.drop_style) out.style_present = false;
    if (f.drop_lyric) out.lyric_present = false;
    return out;
}

template <typename T>
inline void apply_dropout(const DropFlags& f, CondInputs<T>& in) {
    if (f.drop_style) in.style_present = false;
    if (f.drop_lyric) in.lyric_present = false;
}

// v = v(0,0) + a_s (v(s,0) - v(0,0)) + a_l (v(s,l) - v(s,0)); three evaluations
template <typename T>
inline Mat<T> cfg_velocity(const VelocityField<T>& field, const LatentSeq<T>& z_t, TimeStep t, const CondSet<T>& cond,
                           double alpha_style, double alpha_lyric) {
    if (!cond.lyric_present || !cond.style_present)
        throw std::invalid_argument("cfg_velocity: cond must carry both style and lyric");
    CondSet<T> uncond = cond;
    uncond.style_present = false;
    uncond.lyric_present = false;
    CondSet<T> style_only = cond;
    style_only.lyric_present = false;

    const Mat<T> v00 = field.evaluate(z_t, t, uncond);
    const Mat<T> vs0 = field.evaluate(z_t, t, style_only);
    const Mat<T> vsl = field.evaluate(z_t, t, cond);
    Mat<T> out(v00.rows, v00.cols);
    const T as = static_cast<T>(alpha_style), al = static_cast<T>(alpha_lyric);
    for (size_t i = 0; i < out.size(); ++i)
        out.v[i] = v00.v[i] + as * (vs0.v[i] - v00.v[i]) + al * (vsl.v[i] - vs0.v[i]);
    return out;
}

// flow-matching regression loss as a differentiable node: build z_t and the
// target velocity as constants, run the network in-graph, mean squared error
template <typename T>
inline int fm_loss_node(Tape<T>& g, const CondNet<T>& model, const LatentSeq<T>& z1, const Mat<T>& noise,
                        TimeStep t, const CondInputs<T>& in) {
    check_same_shape(z1.values, noise, "fm_loss_node");
    const T tt = static_cast<T>(t.t);
    Mat<T> z_t(z1.values.rows, z1.values.cols);
    Mat<T> v(z1.values.rows, z1.values.cols);
    for (size_t i = 0; i < z_t.size(); ++i) {
        z_t.v[i] = (T(1) - tt) * z1.values.v[i] + tt * noise.v[i];
        v.v[i] = noise.v[i] - z1.values.v[i];
    }
    const int u = model.forward_node(g, z_t, t.t, in);
    return g.mse(u, g.constant(std::move(v)));
}

// guidance wrapper usable with the Euler sampler; the cond passed in must
// carry both conditions and is expanded into the three variants internally
template <typename T>
class CfgField : public VelocityField<T> {
public:
    CfgField(const VelocityField<T>& inner, double alpha_style, double alpha_lyric)
        : inner_(inner), alpha_style_(alpha_style), alpha_lyric_(alpha_lyric) {}

    Mat<T> evaluate(const LatentSeq<T>& z_t, TimeStep t, const CondSet<T>& cond) const override {
        return cfg_velocity(inner_, z_t, t, cond, alpha_style_, alpha_lyric_);
    }

private:
    const VelocityField<T>& inner_;
    double alpha_style_;
    double alpha_lyric_;
};

}  // namespace jamflow
