// songworld.hpp - deterministic synthetic song world: a seeded generator and
// nearest-codebook decoder that stand in for the audio VAE and transcriber.
//
// Latent convention: per frame, the active phoneme's codebook vector plus a
// style-dependent offset plus seeded Gaussian noise; complete silence is the
// all-zero vector, and every frame at or beyond floor(t_target * f) is silent.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lyricalign.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace jamflow {

struct WorldConfig {
    double frame_rate = 5.0;   // f, frames per second
    int channels = 32;         // c, latent channel count
    int alphabet = 24;         // phoneme ids 0..alphabet-1
    int style_dim = 8;         // c_s
    double t_max = 30.0;       // seconds per padded latent
    double noise_sigma = 0.05;
    double style_gain = 0.2;
    double silence_threshold_factor = 0.5;  // tau = factor * min codebook norm
    uint64_t codebook_seed = 9001;

    // synthetic lyric generation
    double t_real_min = 8.0;
    double t_real_max = 28.0;
    double word_len_min = 0.4;
    double word_len_max = 1.2;
    double gap_min = 0.3;
    double gap_max = 1.2;
    int max_phonemes_per_word = 4;
    double trailing_instrumental_max = 0.0;  // vocal-free outro of random length before t_target
};

inline void validate_world(const WorldConfig& cfg) {
    if (!(cfg.frame_rate > 0.0)) throw std::invalid_argument("WorldConfig: frame_rate must be positive");
    if (cfg.alphabet < 1 || cfg.style_dim < 1) throw std::invalid_argument("WorldConfig: bad alphabet/style_dim");
    if (cfg.alphabet + 1 > cfg.channels)
        throw std::invalid_argument("WorldConfig: orthogonal codebook needs alphabet+1 <= channels");
    if (!(cfg.t_max > 0.0) || !(cfg.t_real_min > 0.0) || cfg.t_real_max < cfg.t_real_min)
        throw std::invalid_argument("WorldConfig: bad duration bounds");
    if (!(cfg.noise_sigma >= 0.0)) throw std::invalid_argument("WorldConfig: negative noise_sigma");
}

constexpr int kSilenceId = -1;

// orthonormal unit vectors: one per phoneme plus one style-offset basis,
// so nearest-neighbor decoding is unambiguous by construction
template <typename T>
struct Codebook {
    Mat<T> phonemes;     // alphabet x channels
    Mat<T> style_basis;  // 1 x channels
    Mat<T> style_probe;  // 1 x style_dim, unit; maps a style vector to an offset amplitude
};

template <typename T>
inline Codebook<T> make_codebook(const WorldConfig& cfg) {
    validate_world(cfg);
    Rng rng(cfg.codebook_seed);
    const int n = cfg.alphabet + 1;
    std::vector<std::vector<double>> basis(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<double> v(static_cast<size_t>(cfg.channels));
        double norm = 0.0;
        // Gram-Schmidt against the accepted rows; a fresh draw on near-degeneracy
        while (true) {
            for (auto& x : v) x = rng.normal();
            for (int j = 0; j < i; ++j) {
                double d = 0.0;
                for (int k = 0; k < cfg.channels; ++k) d += v[static_cast<size_t>(k)] * basis[static_cast<size_t>(j)][static_cast<size_t>(k)];
                for (int k = 0; k < cfg.channels; ++k) v[static_cast<size_t>(k)] -= d * basis[static_cast<size_t>(j)][static_cast<size_t>(k)];
            }
            norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 1e-6) break;
        }
        for (auto& x : v) x /= norm;
        basis[static_cast<size_t>(i)] = std::move(v);
    }

    Codebook<T> cb;
    cb.phonemes = Mat<T>(cfg.alphabet, cfg.channels);
    for (int i = 0; i < cfg.alphabet; ++i)
        for (int k = 0; k < cfg.channels; ++k) cb.phonemes.at(i, k) = static_cast<T>(basis[static_cast<size_t>(i)][static_cast<size_t>(k)]);
    cb.style_basis = Mat<T>(1, cfg.channels);
    for (int k = 0; k < cfg.channels; ++k) cb.style_basis.at(0, k) = static_cast<T>(basis[static_cast<size_t>(cfg.alphabet)][static_cast<size_t>(k)]);

    std::vector<double> probe(static_cast<size_t>(cfg.style_dim));
    double pn = 0.0;
    for (auto& x : probe) x = rng.normal();
    for (double x : probe) pn += x * x;
    pn = std::sqrt(pn);
    cb.style_probe = Mat<T>(1, cfg.style_dim);
    for (int k = 0; k < cfg.style_dim; ++k) cb.style_probe.at(0, k) = static_cast<T>(probe[static_cast<size_t>(k)] / pn);
    return cb;
}

// the conditioning triple a song is generated (and judged) against
template <typename T>
struct SongConditions {
    TimedLyrics lyrics;
    StyleVec<T> style;
    DurationSpec duration;
};

template <typename T>
struct SyntheticSong {
    LatentSeq<T> latent;
    TimedLyrics lyrics;
    StyleVec<T> style;
    DurationSpec duration;
    uint64_t seed = 0;

    SongConditions<T> conditions() const { return SongConditions<T>{lyrics, style, duration}; }
};

template <typename T>
class World {
public:
    explicit World(WorldConfig cfg) : cfg_(cfg), codebook_(make_codebook<T>(cfg)) {}

    const WorldConfig& config() const { return cfg_; }
    const Codebook<T>& codebook() const { return codebook_; }

    // offset = gain * (1 + 0.5*tanh(probe . style / sqrt(c_s))) * style_basis; strictly positive amplitude
    Mat<T> style_offset(const StyleVec<T>& style) const {
        if (style.values.cols != cfg_.style_dim) throw std::invalid_argument("style_offset: style dimension mismatch");
        double d = 0.0;
        for (int k = 0; k < cfg_.style_dim; ++k)
            d += static_cast<double>(style.values.at(0, k)) * static_cast<double>(codebook_.style_probe.at(0, k));
        const double amp = cfg_.style_gain * (1.0 + 0.5 * std::tanh(d / std::sqrt(static_cast<double>(cfg_.style_dim))));
        Mat<T> off(1, cfg_.channels);
        for (int k = 0; k < cfg_.channels; ++k) off.at(0, k) = static_cast<T>(amp * static_cast<double>(codebook_.style_basis.at(0, k)));
        return off;
    }

    StyleVec<T> style_from_seed(uint64_t style_seed) const {
        Rng rng(style_seed);
        Mat<T> v(1, cfg_.style_dim);
        for (int k = 0; k < cfg_.style_dim; ++k) v.at(0, k) = static_cast<T>(rng.normal());
        return StyleVec<T>{std::move(v)};
    }

    // words fully inside [0, t_window), each wide enough to host its phonemes
    TimedLyrics synth_lyrics(uint64_t lyric_seed, double t_window) const {
        Rng rng(lyric_seed);
        std::vector<Word> words;
        double cursor = 0.0;
        while (true) {
            const double gap = rng.uniform(cfg_.gap_min, cfg_.gap_max);
            const double len = rng.uniform(cfg_.word_len_min, cfg_.word_len_max);
            const double ts = cursor + gap;
            const double te = ts + len;
            if (te > t_window - 0.05) break;
            cursor = te;
            const int sf = static_cast<int>(std::floor(ts * cfg_.frame_rate));
            const int ef = static_cast<int>(std::floor(te * cfg_.frame_rate));
            const int span = ef - sf;
            if (span < 1) continue;
            const int m = rng.uniform_int(1, std::min(cfg_.max_phonemes_per_word, span));
            Word w;
            w.t_start = ts;
            w.t_end = te;
            for (int j = 0; j < m; ++j) {
                const int p = rng.uniform_int(0, cfg_.alphabet - 1);
                w.phonemes.push_back(p);
                w.text.push_back(static_cast<char>('a' + p));
            }
            words.push_back(std::move(w));
        }
        return make_timed_lyrics(std::move(words));
    }

    // per-frame active phoneme id (or kSilenceId) under the r=1 grid
    std::vector<int> frame_tokens(const TimedLyrics& lyrics, int latent_len) const {
        const PhonemeGrid grid = build_grid(lyrics, cfg_.frame_rate, 1, latent_len, AlignStrategy::average_sparse);
        std::vector<int> out(static_cast<size_t>(latent_len), kSilenceId);
        int current = kSilenceId;
        for (int i = 0; i < latent_len; ++i) {
            const GridToken& tok = grid.tokens[static_cast<size_t>(i)];
            switch (tok.kind) {
                case GridToken::Kind::song_filler: current = kSilenceId; break;
                case GridToken::Kind::phoneme: current = tok.phoneme; break;
                case GridToken::Kind::vocal_filler: break;  // phoneme sustains through transition cells
            }
            out[static_cast<size_t>(i)] = current;
        }
        return out;
    }

    SyntheticSong<T> synth_song(uint64_t seed) const {
        SyntheticSong<T> song;
        song.seed = seed;

        Rng drng(tag_seed(seed, "duration"));
        const double t_real = drng.uniform(cfg_.t_real_min, cfg_.t_real_max);
        song.duration = make_duration_spec(t_real, cfg_.t_max);

        song.style = style_from_seed(tag_seed(seed, "style"));
        Rng trng(tag_seed(seed, "trail"));
        const double trail = trng.uniform(0.0, cfg_.trailing_instrumental_max);
        song.lyrics = synth_lyrics(tag_seed(seed, "lyrics"), std::max(0.5, song.duration.t_target - trail));

        const int l = frames_for(cfg_.t_max, cfg_.frame_rate);
        const int content = static_cast<int>(std::floor(song.duration.t_target * cfg_.frame_rate));
        const std::vector<int> active = frame_tokens(song.lyrics, l);
        const Mat<T> offset = style_offset(song.style);

        Rng nrng(tag_seed(seed, "noise"));
        Mat<T> z(l, cfg_.channels);
        for (int i = 0; i < content; ++i) {
            T* row = z.row(i);
            const int p = active[static_cast<size_t>(i)];
            for (int k = 0; k < cfg_.channels; ++k) {
                double x = static_cast<double>(offset.at(0, k)) + cfg_.noise_sigma * nrng.normal();
                if (p != kSilenceId) x += static_cast<double>(codebook_.phonemes.at(p, k));
                row[k] = static_cast<T>(x);
            }
        }
        song.latent = LatentSeq<T>(std::move(z), cfg_.frame_rate);
        return song;
    }

    // nearest codebook entry per frame; silence id below the norm threshold
    std::vector<int> decode_tokens(const LatentSeq<T>& latent) const {
        if (latent.channels() != cfg_.channels)
            throw std::invalid_argument("decode_tokens: latent channels do not match the codebook");
        double min_norm2 = 1e300;
        for (int j = 0; j < cfg_.alphabet; ++j) {
            double n2 = 0.0;
            for (int k = 0; k < cfg_.channels; ++k) {
                const double x = static_cast<double>(codebook_.phonemes.at(j, k));
                n2 += x * x;
            }
            min_norm2 = std::min(min_norm2, n2);
        }
        const double tau2 = cfg_.silence_threshold_factor * cfg_.silence_threshold_factor * min_norm2;

        std::vector<int> out(static_cast<size_t>(latent.frames()), kSilenceId);
        for (int i = 0; i < latent.frames(); ++i) {
            const T* row = latent.values.row(i);
            double n2 = 0.0;
            for (int k = 0; k < cfg_.channels; ++k) n2 += static_cast<double>(row[k]) * static_cast<double>(row[k]);
            if (n2 < tau2) continue;
            int best = 0;
            double best_d = 1e300;
            for (int j = 0; j < cfg_.alphabet; ++j) {
                double d = 0.0;
                for (int k = 0; k < cfg_.channels; ++k) {
                    const double diff = static_cast<double>(row[k]) - static_cast<double>(codebook_.phonemes.at(j, k));
                    d += diff * diff;
                }
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            out[static_cast<size_t>(i)] = best;
        }
        return out;
    }

private:
    WorldConfig cfg_;
    Codebook<T> codebook_;
};

// exact ceil(t_max * f) frames: crop from a caller-supplied offset, or right-pad with silence
template <typename T>
inline LatentSeq<T> pad_or_crop(const LatentSeq<T>& latent, double t_max, double offset_seconds = 0.0) {
    if (!(t_max > 0.0)) throw std::invalid_argument("pad_or_crop: t_max must be positive");
    const int target = frames_for(t_max, latent.frame_rate);
    const int l = latent.frames();
    Mat<T> out(target, latent.channels());
    if (l >= target) {
        const int start = static_cast<int>(std::floor(offset_seconds * latent.frame_rate));
        if (start < 0 || start + target > l)
            throw std::invalid_argument("pad_or_crop: crop window [" + std::to_string(start) + ", " +
                                        std::to_string(start + target) + ") outside the latent");
        for (int i = 0; i < target; ++i)
            for (int k = 0; k < latent.channels(); ++k) out.at(i, k) = latent.values.at(start + i, k);
    } else {
        for (int i = 0; i < l; ++i)
            for (int k = 0; k < latent.channels(); ++k) out.at(i, k) = latent.values.at(i, k);
    }
    return LatentSeq<T>(std::move(out), latent.frame_rate);
}

// ---- lyric and manifest files --------------------------------------------

using Phonemizer = std::function<std::vector<int>(const std::string&)>;

inline Phonemizer default_phonemizer(int alphabet) {
    return [alphabet](const std::string& text) {
        std::vector<int> out;
        for (char ch : text) {
            char c = ch;
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
            if (c >= 'a' && c <= 'z') out.push_back((c - 'a') % alphabet);
        }
        return out;
    };
}

// JSON Lines, one word per line: {"w": string, "s": seconds, "e": seconds}
inline TimedLyrics read_lyrics_jsonl(std::istream& is, const Phonemizer& phonemize) {
    std::vector<Word> words;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("lyrics line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("w") || !j.contains("s") || !j.contains("e"))
            throw std::invalid_argument("lyrics line " + std::to_string(line_no) + ": expected keys w, s, e");
        Word w;
        w.text = j.at("w").get<std::string>();
        w.t_start = j.at("s").get<double>();
        w.t_end = j.at("e").get<double>();
        w.phonemes = phonemize(w.text);
        if (w.phonemes.empty())
            throw std::invalid_argument("lyrics line " + std::to_string(line_no) + ": word '" + w.text +
                                        "' produces no phonemes");
        words.push_back(std::move(w));
    }
    return make_timed_lyrics(std::move(words));
}

inline TimedLyrics read_lyrics_file(const std::string& path, const Phonemizer& phonemize) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open lyrics file: " + path);
    return read_lyrics_jsonl(is, phonemize);
}

inline void write_lyrics_jsonl(const TimedLyrics& lyrics, std::ostream& os) {
    for (const Word& w : lyrics.words) {
        nlohmann::ordered_json j;
        j["w"] = w.text;
        j["s"] = w.t_start;
        j["e"] = w.t_end;
        os << j.dump() << "\n";
    }
}

struct ManifestEntry {
    uint64_t seed = 0;
    double duration = 0.0;
    uint64_t style_seed = 0;
};

inline void write_manifest(const std::vector<ManifestEntry>& entries, std::ostream& os) {
    for (const ManifestEntry& e : entries) {
        nlohmann::ordered_json j;
        j["seed"] = e.seed;
        j["duration"] = e.duration;
        j["style_seed"] = e.style_seed;
        os << j.dump() << "\n";
    }
}

inline std::vector<ManifestEntry> read_manifest(std::istream& is) {
    std::vector<ManifestEntry> out;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        ManifestEntry e;
        e.seed = j.at("seed").get<uint64_t>();
        e.duration = j.value("duration", 0.0);
        e.style_seed = j.value("style_seed", uint64_t(0));
        out.push_back(e);
    }
    return out;
}

inline std::vector<ManifestEntry> read_manifest_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open manifest: " + path);
    return read_manifest(is);
}

}  // namespace jamflow
