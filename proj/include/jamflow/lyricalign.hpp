// lyricalign.hpp - word-level phoneme grid construction, padding masks,
// and beat-aligned timestamp quantization.
//
// Grid conventions (documented once, used everywhere): frames are 0-indexed,
// word spans are half-open [start_frame, end_frame) with
// start_frame = floor(t_start*f*r), end_frame = floor(t_end*f*r), and the
// j-th phoneme of a word (j = 0..m-1) is placed at span-relative index
// j*floor(word_frames/m) under the average-sparse strategy.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "types.hpp"

namespace jamflow {

struct GridToken {
    enum class Kind : uint8_t { song_filler, vocal_filler, phoneme };
    Kind kind = Kind::song_filler;
    int phoneme = -1;

    static GridToken song() { return GridToken{Kind::song_filler, -1}; }
    static GridToken vocal() { return GridToken{Kind::vocal_filler, -1}; }
    static GridToken phon(int id) {
        if (id < 0) throw std::invalid_argument("GridToken: negative phoneme id");
        return GridToken{Kind::phoneme, id};
    }

    bool is_phoneme() const { return kind == Kind::phoneme; }
    bool operator==(const GridToken& o) const { return kind == o.kind && phoneme == o.phoneme; }
};

struct PhonemeGrid {
    std::vector<GridToken> tokens;  // length L = r * l
    int upsample_rate = 1;          // r
    int latent_len = 0;             // l
    double frame_rate = 0.0;        // f

    int length() const { return static_cast<int>(tokens.size()); }
};

enum class AlignStrategy { average_sparse, pad_right };

// true = frame lies beyond t_target (padding region)
struct PadMask {
    std::vector<uint8_t> beyond;

    int length() const { return static_cast<int>(beyond.size()); }
    bool any() const {
        for (uint8_t b : beyond)
            if (b) return true;
        return false;
    }
};

inline std::pair<int, int> word_frame_span(const Word& w, double frame_rate, int upsample) {
    validate_word(w);
    if (!(frame_rate > 0.0) || upsample < 1) throw std::invalid_argument("word_frame_span: bad frame_rate/upsample");
    const int start = static_cast<int>(std::floor(w.t_start * frame_rate * upsample));
    const int end = static_cast<int>(std::floor(w.t_end * frame_rate * upsample));
    if (end <= start)
        throw std::invalid_argument("word_frame_span: word '" + w.text + "' shorter than one grid cell");
    return {start, end};
}

struct GridBuildStats {
    int short_span_words = 0;
    int dropped_phonemes = 0;
};

inline PhonemeGrid build_grid(const TimedLyrics& lyrics, double frame_rate, int upsample, int latent_len,
                              AlignStrategy strategy, GridBuildStats* stats = nullptr) {
    validate_lyrics(lyrics);
    if (latent_len < 0 || upsample < 1) throw std::invalid_argument("build_grid: bad grid dimensions");
    const int total = upsample * latent_len;

    PhonemeGrid grid;
    grid.tokens.assign(static_cast<size_t>(total), GridToken::song());
    grid.upsample_rate = upsample;
    grid.latent_len = latent_len;
    grid.frame_rate = frame_rate;

    int prev_end = -1;
    for (const Word& w : lyrics.words) {
        const auto [start, end] = word_frame_span(w, frame_rate, upsample);
        if (start < prev_end)
            throw std::invalid_argument("build_grid: overlapping frame spans at word '" + w.text + "'");
        if (end > total)
            throw std::invalid_argument("build_grid: word '" + w.text + "' extends past the grid");
        prev_end = end;

        const int word_frames = end - start;
        const int m = static_cast<int>(w.phonemes.size());
        for (int i = start; i < end; ++i) grid.tokens[static_cast<size_t>(i)] = GridToken::vocal();

        if (word_frames < m) {
            // more phonemes than cells: keep the first word_frames in order, drop the rest
            for (int j = 0; j < word_frames; ++j)
                grid.tokens[static_cast<size_t>(start + j)] = GridToken::phon(w.phonemes[static_cast<size_t>(j)]);
            if (stats) {
                stats->short_span_words += 1;
                stats->dropped_phonemes += m - word_frames;
            }
            continue;
        }

        switch (strategy) {
            case AlignStrategy::average_sparse: {
                const int avg = word_frames / m;
                for (int j = 0; j < m; ++j)
                    grid.tokens[static_cast<size_t>(start + j * avg)] = GridToken::phon(w.phonemes[static_cast<size_t>(j)]);
                break;
            }
            case AlignStrategy::pad_right: {
                for (int j = 0; j < m; ++j)
                    grid.tokens[static_cast<size_t>(start + j)] = GridToken::phon(w.phonemes[static_cast<size_t>(j)]);
                break;
            }
        }
    }
    return grid;
}

inline PadMask build_pad_mask(const DurationSpec& spec, double frame_rate, int latent_len) {
    const int content = static_cast<int>(std::floor(spec.t_target * frame_rate));
    if (latent_len < content)
        throw std::invalid_argument("build_pad_mask: latent shorter than the target duration");
    PadMask mask;
    mask.beyond.resize(static_cast<size_t>(latent_len));
    for (int i = 0; i < latent_len; ++i) mask.beyond[static_cast<size_t>(i)] = (i >= content) ? 1 : 0;
    return mask;
}

// tempo capped at 120 BPM by repeated halving
inline double effective_bpm(double bpm) {
    if (!(bpm > 0.0)) throw std::invalid_argument("effective_bpm: bpm must be positive");
    while (bpm > 120.0) bpm *= 0.5;
    return bpm;
}

inline double quarter_beat_seconds(double bpm) { return 60.0 / effective_bpm(bpm) / 4.0; }

// snap t >= 0 down to the quarter-beat grid: n_beat = floor(t / (60/BPM) * 4),
// t_hat = n_beat * (60/BPM/4). The post-floor fixup makes the result an exact
// fixed point under floating-point rounding.
inline double quantize_time(double t, double bpm) {
    if (t < 0.0) throw std::invalid_argument("quantize_time: negative timestamp");
    const double beat = 60.0 / effective_bpm(bpm);
    const double q = beat / 4.0;
    double n = std::floor(t / beat * 4.0);
    while ((n + 1.0) * q <= t) n += 1.0;
    while (n > 0.0 && n * q > t) n -= 1.0;
    return n * q;
}

// Lyrics-level quantization. Zero-length quantized spans are widened to one
// quarter-beat, and a left-to-right cursor keeps the result non-overlapping
// when neighbouring words collapse onto the same grid cell.
inline TimedLyrics quantize_timestamps(const TimedLyrics& lyrics, double bpm) {
    validate_lyrics(lyrics);
    const double q = quarter_beat_seconds(bpm);
    std::vector<Word> out;
    out.reserve(lyrics.words.size());
    double cursor = 0.0;
    for (const Word& w : lyrics.words) {
        Word nw = w;
        nw.t_start = std::max(quantize_time(w.t_start, bpm), cursor);
        nw.t_end = quantize_time(w.t_end, bpm);
        if (nw.t_end <= nw.t_start) {
            const double n = std::floor(nw.t_start / q + 0.5);  // t_start is grid-aligned
            nw.t_end = (n + 1.0) * q;
        }
        cursor = nw.t_end;
        out.push_back(std::move(nw));
    }
    return make_timed_lyrics(std::move(out));
}

}  // namespace jamflow
