#include <catch2/catch_amalgamated.hpp>

#include "jamflow/evalkit.hpp"
#include "jamflow/prefalign.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace jamflow;
using namespace jamflow::testing;

namespace {

// latent synthesized directly from a per-frame token plan (silence = zeros)
LatentSeq<double> latent_from_tokens(const World<double>& world, const std::vector<int>& tokens) {
    const WorldConfig& wc = world.config();
    Mat<double> m(static_cast<int>(tokens.size()), wc.channels);
    for (size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] != kSilenceId)
            for (int k = 0; k < wc.channels; ++k) m.at(static_cast<int>(i), k) = world.codebook().phonemes.at(tokens[i], k);
    return LatentSeq<double>(std::move(m), wc.frame_rate);
}

}  // namespace

TEST_CASE("edit distance basics and metric properties") {
    CHECK(edit_distance<int>({1, 2, 3}, {1, 2, 3}) == 0);
    CHECK(edit_distance<int>({1, 2, 3}, {1, 3}) == 1);
    CHECK(edit_distance<int>({}, {1, 2}) == 2);

    Rng rng(2);
    for (int iter = 0; iter < 200; ++iter) {
        std::vector<int> a, b, c;
        for (int i = rng.uniform_int(0, 8); i > 0; --i) a.push_back(rng.uniform_int(0, 3));
        for (int i = rng.uniform_int(0, 8); i > 0; --i) b.push_back(rng.uniform_int(0, 3));
        for (int i = rng.uniform_int(0, 8); i > 0; --i) c.push_back(rng.uniform_int(0, 3));
        const int ab = edit_distance(a, b);
        CHECK(ab == oracle_edit_distance(a, b));
        CHECK(ab == edit_distance(b, a));
        CHECK(edit_distance(a, a) == 0);
        CHECK(ab <= edit_distance(a, c) + edit_distance(c, b));
    }
}

TEST_CASE("rms after the target duration") {
    const double f = 5.0;
    SECTION("silent tail reports zero absolute and zero percent") {
        Mat<double> m(20, 2);
        for (int i = 0; i < 10; ++i)
            for (int k = 0; k < 2; ++k) m.at(i, k) = 2.0;
        const RmsReport r = rms_after_duration(LatentSeq<double>(m, f), make_duration_spec(2.0, 4.0));
        CHECK(r.reference_rms == Catch::Approx(2.0));
        REQUIRE(r.tail.size() == 4);
        CHECK(r.tail[0].offset_seconds == 0.0);
        CHECK(r.tail[1].offset_seconds == 1.0);
        CHECK(r.tail[2].offset_seconds == 3.0);
        CHECK(r.tail[3].offset_seconds == 10.0);
        CHECK(r.tail[0].absolute == 0.0);
        CHECK(r.tail[0].percent == 0.0);
        CHECK(r.tail[0].percent_defined);
        CHECK(r.tail[1].has_frames);      // [15, 20)
        CHECK_FALSE(r.tail[2].has_frames);  // starts at frame 25, past the end
    }
    SECTION("tail of equal magnitude reports one hundred percent") {
        Mat<double> m = Mat<double>::filled(20, 2, 1.5);
        const RmsReport r = rms_after_duration(LatentSeq<double>(m, f), make_duration_spec(2.0, 4.0));
        CHECK(r.tail[0].percent == Catch::Approx(100.0));
    }
    SECTION("zero reference marks percentages undefined but reports absolutes") {
        Mat<double> m(20, 2);
        for (int i = 10; i < 20; ++i)
            for (int k = 0; k < 2; ++k) m.at(i, k) = 1.0;
        const RmsReport r = rms_after_duration(LatentSeq<double>(m, f), make_duration_spec(2.0, 4.0));
        CHECK(r.reference_rms == 0.0);
        CHECK_FALSE(r.tail[0].percent_defined);
        CHECK(r.tail[0].absolute == Catch::Approx(1.0));
    }
    SECTION("percentages are invariant to uniform scaling") {
        Rng rng(3);
        Mat<double> m = random_mat<double>(rng, 25, 3);
        const DurationSpec spec = make_duration_spec(3.0, 5.0);
        const RmsReport a = rms_after_duration(LatentSeq<double>(m, f), spec);
        for (auto& x : m.v) x *= 7.25;
        const RmsReport b = rms_after_duration(LatentSeq<double>(m, f), spec);
        for (size_t k = 0; k < a.tail.size(); ++k)
            if (a.tail[k].percent_defined) REQUIRE(a.tail[k].percent == Catch::Approx(b.tail[k].percent).epsilon(1e-12));
    }
}

TEST_CASE("proxy error rates") {
    WorldConfig wc;
    wc.noise_sigma = 0.0;
    const World<double> world(wc);

    SECTION("noiseless ground truth scores zero") {
        Rng rng(8);
        for (int iter = 0; iter < 20; ++iter) {
            const SyntheticSong<double> song = world.synth_song(rng.next_u64());
            if (song.lyrics.words.empty()) continue;
            const ErrorRates r = proxy_error_rates(song.latent, song.lyrics, world);
            REQUIRE(r.wer == 0.0);
            REQUIRE(r.per == 0.0);
        }
    }

    SECTION("zeroing one word's span deletes exactly that word") {
        Rng rng(9);
        SyntheticSong<double> song;
        do {
            song = world.synth_song(rng.next_u64());
        } while (song.lyrics.words.size() < 3);
        const Word& victim = song.lyrics.words[1];
        const int sf = static_cast<int>(std::floor(victim.t_start * wc.frame_rate));
        const int ef = static_cast<int>(std::floor(victim.t_end * wc.frame_rate));
        for (int i = sf; i < ef; ++i)
            for (int k = 0; k < wc.channels; ++k) song.latent.values.at(i, k) = 0.0;
        const ErrorRates r = proxy_error_rates(song.latent, song.lyrics, world);
        CHECK(r.wer == Catch::Approx(1.0 / static_cast<double>(song.lyrics.words.size())));
    }

    SECTION("an all-zero latent deletes every word") {
        const SyntheticSong<double> song = [&] {
            Rng rng(10);
            SyntheticSong<double> s;
            do {
                s = world.synth_song(rng.next_u64());
            } while (s.lyrics.words.empty());
            return s;
        }();
        const LatentSeq<double> silent(Mat<double>(song.latent.frames(), wc.channels), wc.frame_rate);
        const ErrorRates r = proxy_error_rates(silent, song.lyrics, world);
        CHECK(r.wer == 1.0);
        CHECK(r.per == 1.0);
    }

    SECTION("rates ignore the amount of silence between words") {
        Word w1, w2;
        w1.text = "ab";
        w1.phonemes = {0, 1};
        w1.t_start = 0.2;
        w1.t_end = 1.0;
        w2.text = "cd";
        w2.phonemes = {2, 3};
        w2.t_start = 1.4;
        w2.t_end = 2.2;
        const TimedLyrics ly = make_timed_lyrics({w1, w2});

        const std::vector<int> compact{-1, 0, 0, 1, -1, 2, 3, -1};
        std::vector<int> padded{-1, -1, 0, 0, 1};
        padded.insert(padded.end(), 7, -1);
        padded.insert(padded.end(), {2, 2, 3, -1, -1});
        const ErrorRates a = proxy_error_rates(latent_from_tokens(world, compact), ly, world);
        const ErrorRates b = proxy_error_rates(latent_from_tokens(world, padded), ly, world);
        CHECK(a.wer == b.wer);
        CHECK(a.per == b.per);
        CHECK(a.wer == 0.0);
    }

    SECTION("empty reference is rejected") {
        const LatentSeq<double> z(Mat<double>(5, wc.channels), wc.frame_rate);
        CHECK_THROWS_AS(proxy_error_rates(z, TimedLyrics{}, world), std::invalid_argument);
    }
}

TEST_CASE("run collapse and word grouping") {
    CHECK(collapse_runs({1, 1, 2, 2, 2, 1}) == std::vector<int>({1, 2, 1}));
    CHECK(collapse_runs({}) == std::vector<int>());
    const std::vector<std::vector<int>> words = group_words({-1, 1, 2, -1, -1, 3, -1});
    REQUIRE(words.size() == 2);
    CHECK(words[0] == std::vector<int>({1, 2}));
    CHECK(words[1] == std::vector<int>({3}));
}

TEST_CASE("evaluate_model aggregates per-sample results") {
    const WorldConfig wc = tiny_world_config();
    const World<float> world(wc);
    ModelConfig mc = tiny_model_config(wc);
    CondNet<float> net(mc, 6);
    randomize_params(net.params(), 12, 0.05);

    std::vector<uint64_t> seeds;
    Rng rng(13);
    for (int i = 0; i < 4; ++i) seeds.push_back(rng.next_u64());

    struct FixedOracle {
        std::array<double, 5> score(const LatentSeq<float>&, const SongConditions<float>&) const {
            return {3.0, 3.0, 3.0, 3.0, 3.0};
        }
    };
    EvalOptions opts;
    opts.euler_steps = 2;
    const EvalReport r = evaluate_model(net, world, seeds, FixedOracle{}, opts);
    REQUIRE(r.evaluated == 4);
    CHECK(r.failures == 0);
    CHECK(r.oracle_mean == Catch::Approx(3.0));

    // totals equal recomputation from the per-sample entries
    double wer = 0.0, per = 0.0;
    for (const SampleEval& s : r.per_sample) {
        wer += s.wer;
        per += s.per;
    }
    CHECK(r.wer == Catch::Approx(wer / 4.0).margin(1e-12));
    CHECK(r.per == Catch::Approx(per / 4.0).margin(1e-12));

    // byte-identical reports across runs
    const EvalReport r2 = evaluate_model(net, world, seeds, FixedOracle{}, opts);
    CHECK(eval_report_to_json(r).dump() == eval_report_to_json(r2).dump());
}

TEST_CASE("synthetic reward oracle is deterministic, bounded, and discriminative") {
    WorldConfig wc;
    wc.noise_sigma = 0.0;
    const World<double> world(wc);
    const SyntheticRewardOracle<double> oracle(world);
    Rng rng(21);
    SyntheticSong<double> song;
    do {
        song = world.synth_song(rng.next_u64());
    } while (song.lyrics.words.empty());

    const auto a = oracle.score(song.latent, song.conditions());
    const auto b = oracle.score(song.latent, song.conditions());
    CHECK(a == b);
    for (double c : a) {
        CHECK(c >= 1.0);
        CHECK(c <= 5.0);
    }

    // ground truth outranks pure noise
    Mat<double> noise_m = random_mat<double>(rng, song.latent.frames(), wc.channels);
    const auto n = oracle.score(LatentSeq<double>(noise_m, wc.frame_rate), song.conditions());
    CHECK(aggregate_score(a) > aggregate_score(n) + 0.5);
}
