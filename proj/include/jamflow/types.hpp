// types.hpp - core song-domain value types
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mat.hpp"

namespace jamflow {

// latent sequence: frames x channels at a fixed frame rate
template <typename T>
struct LatentSeq {
    Mat<T> values;
    double frame_rate = 0.0;

    LatentSeq() = default;
    LatentSeq(Mat<T> m, double f) : values(std::move(m)), frame_rate(f) {}

    int frames() const { return values.rows; }
    int channels() const { return values.cols; }
};

inline int frames_for(double seconds, double frame_rate) {
    return static_cast<int>(std::ceil(seconds * frame_rate));
}

struct Word {
    std::string text;
    std::vector<int> phonemes;
    double t_start = 0.0;
    double t_end = 0.0;
};

inline void validate_word(const Word& w) {
    if (!(w.t_start >= 0.0 && w.t_start < w.t_end))
        throw std::invalid_argument("Word '" + w.text + "': requires 0 <= t_start < t_end");
    if (w.phonemes.empty()) throw std::invalid_argument("Word '" + w.text + "': empty phoneme list");
    for (int p : w.phonemes)
        if (p < 0) throw std::invalid_argument("Word '" + w.text + "': negative phoneme id");
}

struct TimedLyrics {
    std::vector<Word> words;
};

// sorted by start time, pairwise non-overlapping (touching endpoints allowed)
inline void validate_lyrics(const TimedLyrics& ly) {
    for (const Word& w : ly.words) validate_word(w);
    for (size_t i = 1; i < ly.words.size(); ++i) {
        if (ly.words[i].t_start < ly.words[i - 1].t_start)
            throw std::invalid_argument("TimedLyrics: words not sorted by t_start");
        if (ly.words[i].t_start < ly.words[i - 1].t_end)
            throw std::invalid_argument("TimedLyrics: overlapping words '" + ly.words[i - 1].text + "' and '" +
                                        ly.words[i].text + "'");
    }
}

inline TimedLyrics make_timed_lyrics(std::vector<Word> words) {
    TimedLyrics ly{std::move(words)};
    validate_lyrics(ly);
    return ly;
}

struct DurationSpec {
    double t_real = 0.0;
    double t_max = 0.0;
    double t_target = 0.0;
};

inline DurationSpec make_duration_spec(double t_real, double t_max) {
    if (!(t_real > 0.0) || !(t_max > 0.0))
        throw std::invalid_argument("make_duration_spec: durations must be strictly positive");
    return DurationSpec{t_real, t_max, std::min(t_real, t_max)};
}

template <typename T>
struct StyleVec {
    Mat<T> values;  // 1 x c_s
};

}  // namespace jamflow
