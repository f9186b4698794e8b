#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "jamflow/songworld.hpp"
#include "test_util.hpp"

using namespace jamflow;
using namespace jamflow::testing;

TEST_CASE("make_duration_spec takes the minimum") {
    CHECK(make_duration_spec(120.0, 230.0).t_target == 120.0);
    CHECK(make_duration_spec(300.0, 230.0).t_target == 230.0);
    CHECK(make_duration_spec(90.0, 90.0).t_target == 90.0);
    CHECK_THROWS_AS(make_duration_spec(0.0, 10.0), std::invalid_argument);
    CHECK_THROWS_AS(make_duration_spec(10.0, -1.0), std::invalid_argument);
}

TEST_CASE("world config validation") {
    WorldConfig w;
    w.channels = 16;
    w.alphabet = 24;  // orthogonal codebook impossible
    CHECK_THROWS_AS(validate_world(w), std::invalid_argument);
}

TEST_CASE("codebook rows are orthonormal and the style basis is orthogonal to them") {
    const WorldConfig cfg;
    const Codebook<double> cb = make_codebook<double>(cfg);
    for (int i = 0; i < cfg.alphabet; ++i) {
        for (int j = i; j < cfg.alphabet; ++j) {
            double d = 0.0;
            for (int k = 0; k < cfg.channels; ++k) d += cb.phonemes.at(i, k) * cb.phonemes.at(j, k);
            if (i == j)
                CHECK(d == Catch::Approx(1.0).margin(1e-12));
            else
                CHECK(std::abs(d) < 1e-10);
        }
        double d = 0.0;
        for (int k = 0; k < cfg.channels; ++k) d += cb.phonemes.at(i, k) * cb.style_basis.at(0, k);
        CHECK(std::abs(d) < 1e-10);
    }
}

TEST_CASE("synth_song is deterministic in its seed") {
    const World<double> world{WorldConfig{}};
    const SyntheticSong<double> a = world.synth_song(1234);
    const SyntheticSong<double> b = world.synth_song(1234);
    CHECK(a.latent.values == b.latent.values);
    CHECK(a.duration.t_real == b.duration.t_real);
    CHECK(a.style.values == b.style.values);
    REQUIRE(a.lyrics.words.size() == b.lyrics.words.size());
    const SyntheticSong<double> c = world.synth_song(1235);
    CHECK_FALSE(a.latent.values == c.latent.values);
}

TEST_CASE("a song with no words is the style offset plus noise, silent beyond target") {
    WorldConfig cfg;
    cfg.noise_sigma = 0.0;
    cfg.t_real_min = 0.55;  // no room for any word
    cfg.t_real_max = 0.6;
    cfg.t_max = 2.0;
    const World<double> world(cfg);
    const SyntheticSong<double> song = world.synth_song(9);
    REQUIRE(song.lyrics.words.empty());

    const Mat<double> off = world.style_offset(song.style);
    const int content = static_cast<int>(std::floor(song.duration.t_target * cfg.frame_rate));
    REQUIRE(content >= 1);
    for (int i = 0; i < song.latent.frames(); ++i)
        for (int k = 0; k < cfg.channels; ++k) {
            if (i < content)
                CHECK(song.latent.values.at(i, k) == off.at(0, k));
            else
                CHECK(song.latent.values.at(i, k) == 0.0);
        }
}

TEST_CASE("noiseless songs decode to exactly the generating token sequence") {
    WorldConfig cfg;
    cfg.noise_sigma = 0.0;
    const World<double> world(cfg);
    auto check_roundtrip = [&](uint64_t seed) {
        const SyntheticSong<double> song = world.synth_song(seed);
        const std::vector<int> want = world.frame_tokens(song.lyrics, song.latent.frames());
        const int content = static_cast<int>(std::floor(song.duration.t_target * cfg.frame_rate));
        std::vector<int> expected(want.begin(), want.end());
        for (size_t i = static_cast<size_t>(content); i < expected.size(); ++i) expected[i] = kSilenceId;
        REQUIRE(world.decode_tokens(song.latent) == expected);
    };
    check_roundtrip(7);
    Rng rng(7);
    for (int iter = 0; iter < 1000; ++iter) check_roundtrip(rng.next_u64());
}

TEST_CASE("decode_tokens basics") {
    const WorldConfig cfg;
    const World<double> world(cfg);
    const int l = 6;

    LatentSeq<double> zeros(Mat<double>(l, cfg.channels), cfg.frame_rate);
    CHECK(world.decode_tokens(zeros) == std::vector<int>(l, kSilenceId));

    Mat<double> m(l, cfg.channels);
    for (int i = 0; i < l; ++i)
        for (int k = 0; k < cfg.channels; ++k) m.at(i, k) = world.codebook().phonemes.at(3, k);
    CHECK(world.decode_tokens(LatentSeq<double>(m, cfg.frame_rate)) == std::vector<int>(l, 3));

    LatentSeq<double> wrong(Mat<double>(l, cfg.channels + 1), cfg.frame_rate);
    CHECK_THROWS_AS(world.decode_tokens(wrong), std::invalid_argument);
}

TEST_CASE("silence contract holds for random seeds") {
    const World<double> world{WorldConfig{}};
    Rng rng(33);
    for (int iter = 0; iter < 100; ++iter) {
        const SyntheticSong<double> song = world.synth_song(rng.next_u64());
        const int content = static_cast<int>(std::floor(song.duration.t_target * song.latent.frame_rate));
        for (int i = content; i < song.latent.frames(); ++i)
            for (int k = 0; k < song.latent.channels(); ++k) REQUIRE(song.latent.values.at(i, k) == 0.0);
    }
}

TEST_CASE("pad_or_crop length and content") {
    Rng rng(4);
    const double f = 5.0;

    // identity
    Mat<double> same = random_mat<double>(rng, 10, 3);
    const LatentSeq<double> kept = pad_or_crop(LatentSeq<double>(same, f), 2.0);
    CHECK(kept.values == same);

    // right-padding with silence
    const LatentSeq<double> padded = pad_or_crop(LatentSeq<double>(same, f), 3.0);
    REQUIRE(padded.frames() == 15);
    for (int i = 0; i < 10; ++i)
        for (int k = 0; k < 3; ++k) CHECK(padded.values.at(i, k) == same.at(i, k));
    for (int i = 10; i < 15; ++i)
        for (int k = 0; k < 3; ++k) CHECK(padded.values.at(i, k) == 0.0);

    // cropping from an offset: a 23 s latent cut to [1 s, 10 s)
    Mat<double> big = random_mat<double>(rng, 115, 3);
    const LatentSeq<double> cropped = pad_or_crop(LatentSeq<double>(big, f), 9.0, 1.0);
    REQUIRE(cropped.frames() == 45);
    for (int i = 0; i < 45; ++i)
        for (int k = 0; k < 3; ++k) CHECK(cropped.values.at(i, k) == big.at(5 + i, k));

    CHECK_THROWS_AS(pad_or_crop(LatentSeq<double>(big, f), 9.0, 20.0), std::invalid_argument);

    for (int iter = 0; iter < 50; ++iter) {
        const int l = rng.uniform_int(1, 60);
        const double t_max = rng.uniform(0.3, 12.0);
        Mat<double> m = random_mat<double>(rng, l, 2);
        const int target = frames_for(t_max, f);
        if (l >= target) {
            CHECK(pad_or_crop(LatentSeq<double>(m, f), t_max).frames() == target);
        } else {
            CHECK(pad_or_crop(LatentSeq<double>(m, f), t_max).frames() == target);
        }
    }
}

TEST_CASE("lyrics jsonl round trip and validation") {
    const Phonemizer ph = default_phonemizer(24);
    std::stringstream ss;
    ss << R"({"w":"ab","s":0.5,"e":1.0})" << "\n" << R"({"w":"cd","s":1.5,"e":2.25})" << "\n";
    const TimedLyrics ly = read_lyrics_jsonl(ss, ph);
    REQUIRE(ly.words.size() == 2);
    CHECK(ly.words[0].phonemes == std::vector<int>({0, 1}));
    CHECK(ly.words[1].phonemes == std::vector<int>({2, 3}));
    CHECK(ly.words[1].t_end == 2.25);

    std::stringstream out;
    write_lyrics_jsonl(ly, out);
    const TimedLyrics again = read_lyrics_jsonl(out, ph);
    REQUIRE(again.words.size() == 2);
    CHECK(again.words[0].t_start == ly.words[0].t_start);
    CHECK(again.words[1].text == "cd");

    std::stringstream bad1("not json\n");
    CHECK_THROWS_AS(read_lyrics_jsonl(bad1, ph), std::invalid_argument);
    std::stringstream bad2(R"({"w":"x","s":0.1})" "\n");
    CHECK_THROWS_AS(read_lyrics_jsonl(bad2, ph), std::invalid_argument);
    std::stringstream bad3(R"({"w":"123","s":0.1,"e":0.5})" "\n");
    CHECK_THROWS_AS(read_lyrics_jsonl(bad3, ph), std::invalid_argument);
}

TEST_CASE("manifest round trip") {
    std::vector<ManifestEntry> entries{{42, 12.5, 7}, {43, 30.0, 8}};
    std::stringstream ss;
    write_manifest(entries, ss);
    const std::vector<ManifestEntry> got = read_manifest(ss);
    REQUIRE(got.size() == 2);
    CHECK(got[0].seed == 42);
    CHECK(got[0].duration == 12.5);
    CHECK(got[1].style_seed == 8);
}

TEST_CASE("style offset amplitude is strictly positive and bounded") {
    const WorldConfig cfg;
    const World<double> world(cfg);
    Rng rng(11);
    for (int iter = 0; iter < 50; ++iter) {
        const StyleVec<double> style = world.style_from_seed(rng.next_u64());
        const Mat<double> off = world.style_offset(style);
        double norm = 0.0;
        for (int k = 0; k < cfg.channels; ++k) norm += off.at(0, k) * off.at(0, k);
        norm = std::sqrt(norm);
        CHECK(norm > 0.5 * cfg.style_gain - 1e-12);
        CHECK(norm < 1.5 * cfg.style_gain + 1e-12);
    }
}
