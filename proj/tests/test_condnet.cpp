#include <catch2/catch_amalgamated.hpp>

#include "jamflow/condnet.hpp"
#include "jamflow/prefalign.hpp"
#include "test_util.hpp"

using namespace jamflow;
using namespace jamflow::testing;

namespace {

struct Fixture {
    WorldConfig wc = tiny_world_config();
    World<double> world{wc};
    ModelConfig mc = tiny_model_config(wc);
    CondNet<double> net{mc, 1};
    SyntheticSong<double> song = world.synth_song(5);
    int l = frames_for(wc.t_max, wc.frame_rate);
    CondInputs<double> in;

    Fixture() {
        randomize_params(net.params(), 99);
        in = condition_inputs(net, world, song.conditions());
    }
};

PhonemeGrid constant_grid(int cells, double f, int r, int l) {
    PhonemeGrid g;
    g.tokens.assign(static_cast<size_t>(cells), GridToken::song());
    g.upsample_rate = r;
    g.latent_len = l;
    g.frame_rate = f;
    return g;
}

}  // namespace

TEST_CASE("forward output has the latent shape across configurations") {
    Rng rng(7);
    for (int iter = 0; iter < 3; ++iter) {
        WorldConfig wc = tiny_world_config();
        ModelConfig mc = tiny_model_config(wc);
        mc.layers = 1 + iter;
        mc.hidden = 8 + 8 * iter;
        mc.heads = (iter == 1) ? 4 : 2;
        mc.ffn_dim = 16 + 4 * iter;
        World<double> world(wc);
        CondNet<double> net(mc, 10 + static_cast<uint64_t>(iter));
        randomize_params(net.params(), 50 + static_cast<uint64_t>(iter));
        const SyntheticSong<double> song = world.synth_song(rng.next_u64());
        const CondInputs<double> in = condition_inputs(net, world, song.conditions());
        const CondSet<double> cond = net.encode_conditions(in);
        const Mat<double> v = net.evaluate(song.latent, TimeStep(0.3), cond);
        CHECK(v.rows == song.latent.frames());
        CHECK(v.cols == wc.channels);
        CHECK(v.all_finite());
    }
}

TEST_CASE("lyric encoder with unit upsample and identity kernel returns raw embeddings") {
    WorldConfig wc = tiny_world_config();
    ModelConfig mc = tiny_model_config(wc);
    mc.upsample = 1;
    CondNet<double> net(mc, 3);
    // center tap identity, zero bias
    Mat<double>& w = net.params().value("lyric.conv.w");
    for (auto& x : w.v) x = 0.0;
    for (int co = 0; co < mc.lyric_dim; ++co) w.at(co, co * mc.lyric_kernel + 1) = 1.0;
    for (auto& x : net.params().value("lyric.conv.b").v) x = 0.0;

    const World<double> world(wc);
    const SyntheticSong<double> song = world.synth_song(21);
    const int l = frames_for(wc.t_max, wc.frame_rate);
    const PhonemeGrid grid = build_grid(song.lyrics, wc.frame_rate, 1, l, AlignStrategy::average_sparse);
    const Mat<double> enc = net.encode_lyrics(grid);

    Tape<double> g(&net.params());
    const Mat<double> emb = g.val(g.embed_rows(g.param("lyric.embed"), net.grid_ids(grid)));
    CHECK(enc == emb);
}

TEST_CASE("lyric encoder is local: one changed cell moves only its receptive field") {
    Fixture fx;
    PhonemeGrid a = fx.in.grid;
    PhonemeGrid b = a;
    const int cell = a.length() / 2;
    b.tokens[static_cast<size_t>(cell)] = GridToken::phon((a.tokens[static_cast<size_t>(cell)].is_phoneme())
                                                              ? (a.tokens[static_cast<size_t>(cell)].phoneme + 1) % fx.wc.alphabet
                                                              : 0);
    const Mat<double> ea = fx.net.encode_lyrics(a);
    const Mat<double> eb = fx.net.encode_lyrics(b);
    const int r = fx.mc.upsample, K = fx.mc.lyric_kernel, pad = (K - 1) / 2;
    bool any_diff = false;
    for (int t = 0; t < ea.rows; ++t) {
        const bool touches = (t * r - pad <= cell) && (cell < t * r - pad + K);
        bool row_diff = false;
        for (int j = 0; j < ea.cols; ++j) row_diff = row_diff || ea.at(t, j) != eb.at(t, j);
        if (!touches) REQUIRE_FALSE(row_diff);
        any_diff = any_diff || row_diff;
    }
    CHECK(any_diff);
}

TEST_CASE("all-filler grid encodes to one repeated interior row") {
    Fixture fx;
    const PhonemeGrid grid = constant_grid(fx.mc.upsample * fx.l, fx.wc.frame_rate, fx.mc.upsample, fx.l);
    const Mat<double> enc = fx.net.encode_lyrics(grid);
    for (int t = 2; t + 2 < enc.rows; ++t)
        for (int j = 0; j < enc.cols; ++j) REQUIRE(enc.at(t, j) == Catch::Approx(enc.at(1, j)).margin(1e-12));
}

TEST_CASE("lyric encoder rejects grids not divisible by the upsample rate") {
    Fixture fx;
    const PhonemeGrid odd = constant_grid(2 * fx.l + 1, fx.wc.frame_rate, fx.mc.upsample, fx.l);
    CHECK_THROWS_AS(fx.net.encode_lyrics(odd), std::invalid_argument);
    PhonemeGrid bad = constant_grid(fx.mc.upsample * fx.l, fx.wc.frame_rate, fx.mc.upsample, fx.l);
    bad.tokens[0] = GridToken::phon(fx.wc.alphabet + 5);
    CHECK_THROWS_AS(fx.net.encode_lyrics(bad), std::invalid_argument);
}

TEST_CASE("duration embedding is deterministic and separates distinct durations") {
    Fixture fx;
    const Mat<double> a = fx.net.encode_duration(10.0);
    const Mat<double> b = fx.net.encode_duration(10.0);
    CHECK(a == b);
    const Mat<double> c = fx.net.encode_duration(200.0);
    double dist = 0.0;
    for (size_t k = 0; k < a.size(); ++k) dist += (a.v[k] - c.v[k]) * (a.v[k] - c.v[k]);
    CHECK(dist > 0.0);
    CHECK_THROWS_AS(fx.net.encode_duration(0.0), std::invalid_argument);
}

TEST_CASE("fuse with zero weights leaves only the positional term") {
    Fixture fx;
    for (auto& x : fx.net.params().value("fuse.w").v) x = 0.0;
    for (auto& x : fx.net.params().value("fuse.b").v) x = 0.0;
    const CondSet<double> cond = fx.net.encode_conditions(fx.in);
    const Mat<double> out = fx.net.fuse(fx.song.latent, cond);
    const Mat<double>& cb = fx.net.params().value("convpos.b");
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) REQUIRE(out.at(i, j) == cb.at(0, j));
}

TEST_CASE("fuse is frame-local outside the positional receptive field") {
    Fixture fx;
    const CondSet<double> cond = fx.net.encode_conditions(fx.in);
    const int i = 1, j = 5;  // convpos kernel 3: radius 1

    LatentSeq<double> swapped = fx.song.latent;
    CondSet<double> cond_swapped = cond;
    for (int k = 0; k < swapped.channels(); ++k)
        std::swap(swapped.values.at(i, k), swapped.values.at(j, k));
    for (int k = 0; k < cond_swapped.lyric.cols; ++k)
        std::swap(cond_swapped.lyric.at(i, k), cond_swapped.lyric.at(j, k));

    const Mat<double> a = fx.net.fuse(fx.song.latent, cond);
    const Mat<double> b = fx.net.fuse(swapped, cond_swapped);
    for (int t = 0; t < a.rows; ++t) {
        if (std::abs(t - i) <= 1 || std::abs(t - j) <= 1) continue;
        for (int k = 0; k < a.cols; ++k) REQUIRE(a.at(t, k) == b.at(t, k));
    }
}

TEST_CASE("null-condition consistency is bit-for-bit") {
    Fixture fx;
    CondSet<double> present = fx.net.encode_conditions(fx.in);

    // dropped style vs style explicitly set to the null embedding
    CondSet<double> dropped = present;
    dropped.style_present = false;
    CondSet<double> nulled = present;
    nulled.style = fx.net.params().value("style.null");
    const Mat<double> a = fx.net.evaluate(fx.song.latent, TimeStep(0.4), dropped);
    const Mat<double> b = fx.net.evaluate(fx.song.latent, TimeStep(0.4), nulled);
    CHECK(a == b);

    // dropped lyric vs lyric rows tiled from the null embedding
    CondSet<double> ldrop = present;
    ldrop.lyric_present = false;
    CondSet<double> lnull = present;
    const Mat<double>& nl = fx.net.params().value("lyric.null");
    for (int i = 0; i < lnull.lyric.rows; ++i)
        for (int k = 0; k < lnull.lyric.cols; ++k) lnull.lyric.at(i, k) = nl.at(0, k);
    CHECK(fx.net.evaluate(fx.song.latent, TimeStep(0.4), ldrop) ==
          fx.net.evaluate(fx.song.latent, TimeStep(0.4), lnull));
}

TEST_CASE("style enters the fused projection only through its weight columns") {
    Fixture fx;
    // zero the style block of the fusion weights
    Mat<double>& w = fx.net.params().value("fuse.w");
    const int style_off = fx.mc.channels + fx.mc.lyric_dim;
    for (int row = 0; row < w.rows; ++row)
        for (int k = 0; k < fx.mc.style_dim; ++k) w.at(row, style_off + k) = 0.0;
    CondSet<double> cond = fx.net.encode_conditions(fx.in);
    CondSet<double> other = cond;
    for (auto& x : other.style.v) x += 3.0;
    CHECK(fx.net.evaluate(fx.song.latent, TimeStep(0.2), cond) ==
          fx.net.evaluate(fx.song.latent, TimeStep(0.2), other));
}

TEST_CASE("residual injection and the padding bias") {
    Fixture fx;
    const CondSet<double> cond = fx.net.encode_conditions(fx.in);
    PadMask none;
    none.beyond.assign(static_cast<size_t>(fx.l), 0);
    PadMask all;
    all.beyond.assign(static_cast<size_t>(fx.l), 1);

    SECTION("empty mask makes the injection independent of the bias") {
        Mat<double>& bias = fx.net.params().value("pad.bias");
        const Mat<double> a = fx.net.residual_inject(cond.lyric, none, 0);
        for (auto& x : bias.v) x += 2.5;
        const Mat<double> b = fx.net.residual_inject(cond.lyric, none, 0);
        CHECK(a == b);
    }

    SECTION("empty mask gives an exactly zero bias gradient") {
        for (auto& x : fx.net.params().value("pad.bias").v) x = 0.7;
        CondInputs<double> in = fx.in;
        in.pad_mask = none;
        Rng rng(3);
        const Mat<double> noise = random_mat<double>(rng, fx.l, fx.wc.channels);
        fx.net.params().zero_grads();
        Tape<double> g(&fx.net.params());
        const int loss = fm_loss_node(g, fx.net, fx.song.latent, noise, TimeStep(0.5), in);
        g.backward(loss);
        g.add_param_grads(fx.net.params());
        for (double x : fx.net.params().grad("pad.bias").v) REQUIRE(x == 0.0);
        // the same loss with a masked tail does reach the bias
        in.pad_mask = fx.in.pad_mask;
        REQUIRE(fx.in.pad_mask.any());
        fx.net.params().zero_grads();
        Tape<double> g2(&fx.net.params());
        const int loss2 = fm_loss_node(g2, fx.net, fx.song.latent, noise, TimeStep(0.5), in);
        g2.backward(loss2);
        g2.add_param_grads(fx.net.params());
        double sum = 0.0;
        for (double x : fx.net.params().grad("pad.bias").v) sum += std::abs(x);
        REQUIRE(sum > 0.0);
    }

    SECTION("full mask biases every frame") {
        for (auto& x : fx.net.params().value("pad.bias").v) x = 0.3;
        const Mat<double> got = fx.net.residual_inject(cond.lyric, all, 0);
        Tape<double> g(&fx.net.params());
        Mat<double> biased = cond.lyric;
        const Mat<double>& bias = fx.net.params().value("pad.bias");
        for (int i = 0; i < biased.rows; ++i)
            for (int k = 0; k < biased.cols; ++k) biased.at(i, k) += bias.at(0, k);
        const Mat<double> want = g.val(g.matmul_nt(g.constant(biased), g.param("blk0.inject.w")));
        for (size_t k = 0; k < got.size(); ++k) REQUIRE(got.v[k] == Catch::Approx(want.v[k]).margin(1e-12));
    }

    SECTION("layers outside the injected half are rejected") {
        CHECK_THROWS_AS(fx.net.residual_inject(cond.lyric, none, fx.mc.residual_layers()), std::invalid_argument);
    }
}

TEST_CASE("top layer applies no injection") {
    WorldConfig wc = tiny_world_config();
    ModelConfig mc = tiny_model_config(wc);
    mc.layers = 4;  // residual half = first 2 layers
    World<double> world(wc);
    CondNet<double> net(mc, 8);
    randomize_params(net.params(), 44);
    const SyntheticSong<double> song = world.synth_song(17);
    const CondInputs<double> in = condition_inputs(net, world, song.conditions());

    Tape<double> g(&net.params());
    std::vector<int> outs;
    net.forward_node(g, song.latent.values, 0.6, in, &outs);
    REQUIRE(outs.size() == 4);

    Tape<double> g2(&net.params());
    const int replay = net.block_node(g2, g2.constant(g.val(outs[2])), 3);
    CHECK(g2.val(replay) == g.val(outs[3]));

    // an injected layer is the block output plus the injection term
    Tape<double> g3(&net.params());
    const int blk = net.block_node(g3, g3.constant(g.val(outs[0])), 1);
    const int inj = net.residual_inject_node(
        g3, net.residual_source_node(g3, g3.constant(net.encode_lyrics(in.grid)), in.pad_mask), 1);
    const Mat<double> want = g3.val(g3.add(blk, inj));
    CHECK(want == g.val(outs[1]));
}

TEST_CASE("masked frames differ from unmasked ones only through the bias pathway") {
    Fixture fx;
    for (auto& x : fx.net.params().value("pad.bias").v) x = 0.0;
    const CondSet<double> cond = fx.net.encode_conditions(fx.in);
    CondSet<double> unmasked = cond;
    unmasked.pad_mask.beyond.assign(static_cast<size_t>(fx.l), 0);
    REQUIRE(cond.pad_mask.any());

    // bias at zero: outputs must match bit for bit
    const Mat<double> a = fx.net.evaluate(fx.song.latent, TimeStep(0.5), cond);
    const Mat<double> b = fx.net.evaluate(fx.song.latent, TimeStep(0.5), unmasked);
    CHECK(a == b);

    for (auto& x : fx.net.params().value("pad.bias").v) x = 0.4;
    const Mat<double> c = fx.net.evaluate(fx.song.latent, TimeStep(0.5), cond);
    const Mat<double> d = fx.net.evaluate(fx.song.latent, TimeStep(0.5), unmasked);
    CHECK_FALSE(c == d);
}

TEST_CASE("two-stage condition dropout") {
    SECTION("statistics over a long stream") {
        Rng rng(123);
        int style_drops = 0, lyric_drops = 0, violations = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i) {
            const DropFlags f = sample_condition_dropout(rng);
            style_drops += f.drop_style ? 1 : 0;
            lyric_drops += f.drop_lyric ? 1 : 0;
            violations += (f.drop_lyric && !f.drop_style) ? 1 : 0;
        }
        CHECK(violations == 0);
        CHECK(std::abs(style_drops / double(n) - 0.10) < 0.01);
        CHECK(std::abs(lyric_drops / double(n) - 0.05) < 0.008);
    }
    SECTION("identical seeds give identical patterns; zero probabilities are the identity") {
        Rng a(5), b(5), c(6);
        CondSet<double> cond;
        cond.lyric = Mat<double>(4, 2);
        cond.pad_mask.beyond.assign(4, 0);
        for (int i = 0; i < 200; ++i) {
            const CondSet<double> ca = dropout_conditions(a, cond);
            const CondSet<double> cb = dropout_conditions(b, cond);
            REQUIRE(ca.style_present == cb.style_present);
            REQUIRE(ca.lyric_present == cb.lyric_present);
            const CondSet<double> id = dropout_conditions(c, cond, 0.0, 0.0);
            REQUIRE(id.style_present);
            REQUIRE(id.lyric_present);
        }
    }
}

TEST_CASE("guidance telescoping identities") {
    Fixture fx;
    const CondSet<double> cond = fx.net.encode_conditions(fx.in);
    const TimeStep t(0.35);

    CondSet<double> uncond = cond;
    uncond.style_present = uncond.lyric_present = false;
    CondSet<double> style_only = cond;
    style_only.lyric_present = false;

    const Mat<double> v00 = fx.net.evaluate(fx.song.latent, t, uncond);
    const Mat<double> vs0 = fx.net.evaluate(fx.song.latent, t, style_only);
    const Mat<double> vsl = fx.net.evaluate(fx.song.latent, t, cond);

    const Mat<double> g11 = cfg_velocity(fx.net, fx.song.latent, t, cond, 1.0, 1.0);
    const Mat<double> g00 = cfg_velocity(fx.net, fx.song.latent, t, cond, 0.0, 0.0);
    const Mat<double> g10 = cfg_velocity(fx.net, fx.song.latent, t, cond, 1.0, 0.0);

    CHECK(g00 == v00);  // zero scales collapse exactly
    for (size_t k = 0; k < g11.size(); ++k) {
        REQUIRE(g11.v[k] == Catch::Approx(vsl.v[k]).margin(1e-12));
        REQUIRE(g10.v[k] == Catch::Approx(vs0.v[k]).margin(1e-12));
    }

    CHECK_THROWS_AS(cfg_velocity(fx.net, fx.song.latent, t, uncond, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("flow-matching loss gradient through the full network passes a spot check") {
    Fixture fx;
    Rng nrng(71);
    const Mat<double> noise = random_mat<double>(nrng, fx.l, fx.wc.channels);
    const TimeStep t(0.45);

    auto loss_value = [&] {
        Tape<double> g(&fx.net.params());
        return g.val(fm_loss_node(g, fx.net, fx.song.latent, noise, t, fx.in)).at(0, 0);
    };
    auto compute = [&] {
        fx.net.params().zero_grads();
        Tape<double> g(&fx.net.params());
        const int loss = fm_loss_node(g, fx.net, fx.song.latent, noise, t, fx.in);
        g.backward(loss);
        g.add_param_grads(fx.net.params());
    };
    Rng rng(17);
    for (int i = 0; i < 3; ++i) {
        const FdCheck c = fd_directional(fx.net.params(), loss_value, compute, rng);
        INFO("analytic " << c.analytic << " numeric " << c.numeric);
        CHECK(c.rel_err < 1e-5);
    }
}

TEST_CASE("graph loss value matches the field-level loss") {
    Fixture fx;
    Rng nrng(81);
    const Mat<double> noise = random_mat<double>(nrng, fx.l, fx.wc.channels);
    const TimeStep t(0.3);

    Tape<double> g(&fx.net.params());
    const double graph_val = g.val(fm_loss_node(g, fx.net, fx.song.latent, noise, t, fx.in)).at(0, 0);
    const double plain_val =
        fm_loss(fx.net, fx.song.latent, LatentSeq<double>(noise, fx.wc.frame_rate), t,
                fx.net.encode_conditions(fx.in));
    CHECK(graph_val == plain_val);
}

TEST_CASE("non-finite intermediates surface with the layer index") {
    Fixture fx;
    for (auto& x : fx.net.params().value("blk1.ffn.w2").v) x = std::numeric_limits<double>::infinity();
    const CondSet<double> cond = fx.net.encode_conditions(fx.in);
    try {
        fx.net.evaluate(fx.song.latent, TimeStep(0.5), cond);
        FAIL("expected a numeric error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}
