// evalkit.hpp - objective evaluation: tail-RMS measurement after the target
// duration, proxy WER/PER via edit distance on decoded tokens, and
// machine-readable reports.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "condnet.hpp"
#include "flowcore.hpp"
#include "songworld.hpp"

namespace jamflow {

// ---- edit distance ---------------------------------------------------------

// Levenshtein with unit insert/delete/substitute costs
template <typename Tok>
inline int edit_distance(const std::vector<Tok>& ref, const std::vector<Tok>& hyp) {
    const size_t n = ref.size(), m = hyp.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= m; ++j) {
            const int sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// ---- RMS after the target duration ------------------------------------------

struct RmsEntry {
    double offset_seconds = 0.0;
    double absolute = 0.0;
    double percent = 0.0;
    bool has_frames = false;      // tail region overlaps the latent
    bool percent_defined = false; // reference RMS > 0
};

struct RmsReport {
    double reference_rms = 0.0;
    std::vector<RmsEntry> tail;
};

inline const std::vector<double>& default_rms_offsets() {
    static const std::vector<double> offsets{0.0, 1.0, 3.0, 10.0};
    return offsets;
}

// reference RMS over frames [0, floor(t_target*f)); each tail entry over
// frames [floor((t_target+offset)*f), end), all channels pooled
template <typename T>
inline RmsReport rms_after_duration(const LatentSeq<T>& latent, const DurationSpec& spec,
                                    const std::vector<double>& offsets = default_rms_offsets()) {
    const double f = latent.frame_rate;
    const int l = latent.frames();
    auto region_rms = [&](int lo, int hi) {
        double sum = 0.0;
        size_t n = 0;
        for (int i = std::max(lo, 0); i < std::min(hi, l); ++i) {
            const T* row = latent.values.row(i);
            for (int k = 0; k < latent.channels(); ++k) {
                const double x = static_cast<double>(row[k]);
                sum += x * x;
                ++n;
            }
        }
        return n == 0 ? 0.0 : std::sqrt(sum / static_cast<double>(n));
    };

    RmsReport report;
    const int content = static_cast<int>(std::floor(spec.t_target * f));
    report.reference_rms = region_rms(0, content);
    const bool percent_ok = report.reference_rms > 0.0;
    for (double o : offsets) {
        RmsEntry e;
        e.offset_seconds = o;
        const int start = static_cast<int>(std::floor((spec.t_target + o) * f));
        e.has_frames = start < l;
        if (e.has_frames) {
            e.absolute = region_rms(start, l);
            e.percent_defined = percent_ok;
            if (percent_ok) e.percent = 100.0 * e.absolute / report.reference_rms;
        }
        report.tail.push_back(e);
    }
    return report;
}

// ---- proxy transcription ----------------------------------------------------

inline std::vector<int> collapse_runs(const std::vector<int>& tokens) {
    std::vector<int> out;
    for (int t : tokens)
        if (out.empty() || out.back() != t) out.push_back(t);
    return out;
}

// silence-delimited groups of the run-collapsed stream; empty groups dropped
inline std::vector<std::vector<int>> group_words(const std::vector<int>& collapsed) {
    std::vector<std::vector<int>> words;
    std::vector<int> cur;
    for (int t : collapsed) {
        if (t == kSilenceId) {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(t);
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

struct ErrorRates {
    double wer = 0.0;
    double per = 0.0;
};

// Decoded frames are run-collapsed, so repeated phonemes inside one word are
// indistinguishable from a sustained one; reference words are collapsed the
// same way before comparison.
template <typename T>
inline ErrorRates proxy_error_rates(const LatentSeq<T>& generated, const TimedLyrics& lyrics, const World<T>& world) {
    if (lyrics.words.empty()) throw std::invalid_argument("proxy_error_rates: empty reference lyrics");

    std::vector<std::vector<int>> ref_words;
    std::vector<int> ref_phonemes;
    for (const Word& w : lyrics.words) {
        std::vector<int> collapsed = collapse_runs(w.phonemes);
        ref_phonemes.insert(ref_phonemes.end(), collapsed.begin(), collapsed.end());
        ref_words.push_back(std::move(collapsed));
    }

    const std::vector<int> collapsed = collapse_runs(world.decode_tokens(generated));
    const std::vector<std::vector<int>> hyp_words = group_words(collapsed);
    std::vector<int> hyp_phonemes;
    for (const auto& w : hyp_words) hyp_phonemes.insert(hyp_phonemes.end(), w.begin(), w.end());

    ErrorRates rates;
    rates.per = static_cast<double>(edit_distance(ref_phonemes, hyp_phonemes)) /
                static_cast<double>(ref_phonemes.size());
    rates.wer = static_cast<double>(edit_distance(ref_words, hyp_words)) / static_cast<double>(ref_words.size());
    return rates;
}

// ---- model evaluation harness -----------------------------------------------

struct EvalOptions {
    int euler_steps = 32;
    double alpha_style = 1.0;
    double alpha_lyric = 1.0;
    std::string run_id = "eval";
    std::string checkpoint_name;
};

struct SampleEval {
    uint64_t seed = 0;
    double wer = 0.0, per = 0.0;
    std::array<double, 5> criteria{};
    double oracle_mean = 0.0;
    RmsReport rms;
    bool failed = false;
    std::string error;
};

struct EvalReport {
    std::string run_id;
    std::string checkpoint_name;
    std::vector<SampleEval> per_sample;
    double wer = 0.0, per = 0.0;
    std::array<double, 5> criteria{};
    double oracle_mean = 0.0;
    std::vector<RmsEntry> rms_tail;  // aggregate, mean absolute/percent per offset
    double rms_reference = 0.0;
    int evaluated = 0, failures = 0;
};

// Oracle must expose: std::array<double,5> score(const LatentSeq<T>&, lyrics, style, duration).
// Per-sample errors are recorded, not fatal.
template <typename T, typename Oracle>
inline EvalReport evaluate_model(const CondNet<T>& policy, const World<T>& world,
                                 const std::vector<uint64_t>& eval_seeds, const Oracle& oracle,
                                 const EvalOptions& opts = {}) {
    EvalReport report;
    report.run_id = opts.run_id;
    report.checkpoint_name = opts.checkpoint_name;

    const WorldConfig& wc = world.config();
    const int l = frames_for(wc.t_max, wc.frame_rate);
    const bool plain = opts.alpha_style == 1.0 && opts.alpha_lyric == 1.0;
    const CfgField<T> guided(policy, opts.alpha_style, opts.alpha_lyric);
    const VelocityField<T>& field = plain ? static_cast<const VelocityField<T>&>(policy)
                                          : static_cast<const VelocityField<T>&>(guided);

    for (uint64_t seed : eval_seeds) {
        SampleEval s;
        s.seed = seed;
        try {
            const SyntheticSong<T> song = world.synth_song(seed);
            CondInputs<T> in;
            in.grid = build_grid(song.lyrics, wc.frame_rate, policy.config().upsample, l,
                                 AlignStrategy::average_sparse);
            in.style = song.style.values;
            in.duration = song.duration;
            in.pad_mask = build_pad_mask(song.duration, wc.frame_rate, l);
            const CondSet<T> cond = policy.encode_conditions(in);

            Rng noise_rng(tag_seed(seed, "eval_noise"));
            Mat<T> z0(l, wc.channels);
            for (auto& x : z0.v) x = static_cast<T>(noise_rng.normal());
            const LatentSeq<T> gen = euler_sample(field, LatentSeq<T>(std::move(z0), wc.frame_rate),
                                                  opts.euler_steps, cond);

            const ErrorRates rates = proxy_error_rates(gen, song.lyrics, world);
            s.wer = rates.wer;
            s.per = rates.per;
            s.criteria = oracle.score(gen, song.conditions());
            double mean = 0.0;
            for (double c : s.criteria) mean += c;
            s.oracle_mean = mean / 5.0;
            s.rms = rms_after_duration(gen, song.duration);
        } catch (const std::exception& e) {
            s.failed = true;
            s.error = e.what();
        }
        report.per_sample.push_back(std::move(s));
    }

    // aggregate over successful samples; RMS rows average only the samples
    // whose tail region exists (resp. whose percent is defined)
    int n = 0;
    std::vector<int> abs_n, pct_n;
    for (const SampleEval& s : report.per_sample) {
        if (s.failed) {
            ++report.failures;
            continue;
        }
        ++n;
        report.wer += s.wer;
        report.per += s.per;
        for (size_t k = 0; k < 5; ++k) report.criteria[k] += s.criteria[k];
        report.oracle_mean += s.oracle_mean;
        report.rms_reference += s.rms.reference_rms;
        if (report.rms_tail.empty()) {
            report.rms_tail.resize(s.rms.tail.size());
            abs_n.assign(s.rms.tail.size(), 0);
            pct_n.assign(s.rms.tail.size(), 0);
        }
        for (size_t k = 0; k < s.rms.tail.size(); ++k) {
            report.rms_tail[k].offset_seconds = s.rms.tail[k].offset_seconds;
            if (s.rms.tail[k].has_frames) {
                report.rms_tail[k].absolute += s.rms.tail[k].absolute;
                ++abs_n[k];
            }
            if (s.rms.tail[k].percent_defined) {
                report.rms_tail[k].percent += s.rms.tail[k].percent;
                ++pct_n[k];
            }
        }
    }
    report.evaluated = n;
    if (n > 0) {
        report.wer /= n;
        report.per /= n;
        for (double& c : report.criteria) c /= n;
        report.oracle_mean /= n;
        report.rms_reference /= n;
        for (size_t k = 0; k < report.rms_tail.size(); ++k) {
            report.rms_tail[k].has_frames = abs_n[k] > 0;
            report.rms_tail[k].percent_defined = pct_n[k] > 0;
            if (abs_n[k] > 0) report.rms_tail[k].absolute /= abs_n[k];
            if (pct_n[k] > 0) report.rms_tail[k].percent /= pct_n[k];
        }
    }
    return report;
}

inline nlohmann::ordered_json rms_to_json(const std::vector<RmsEntry>& tail, double reference) {
    nlohmann::ordered_json rms;
    rms["reference"] = reference;
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const RmsEntry& e : tail) {
        nlohmann::ordered_json je;
        je["offset_seconds"] = e.offset_seconds;
        je["absolute"] = e.absolute;
        if (e.percent_defined) je["percent"] = e.percent;
        je["has_frames"] = e.has_frames;
        arr.push_back(je);
    }
    rms["tail"] = arr;
    return rms;
}

inline nlohmann::ordered_json eval_report_to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["run_id"] = r.run_id;
    j["model_checkpoint"] = r.checkpoint_name;
    nlohmann::ordered_json samples = nlohmann::ordered_json::array();
    for (const SampleEval& s : r.per_sample) {
        nlohmann::ordered_json js;
        js["seed"] = s.seed;
        if (s.failed) {
            js["error"] = s.error;
        } else {
            js["wer"] = s.wer;
            js["per"] = s.per;
            js["oracle_criteria"] = s.criteria;
            js["oracle_mean"] = s.oracle_mean;
            js["rms"] = rms_to_json(s.rms.tail, s.rms.reference_rms);
        }
        samples.push_back(js);
    }
    j["per_sample"] = samples;
    nlohmann::ordered_json agg;
    agg["evaluated"] = r.evaluated;
    agg["failures"] = r.failures;
    agg["wer"] = r.wer;
    agg["per"] = r.per;
    agg["oracle_mean"] = r.oracle_mean;
    agg["oracle_criteria"] = r.criteria;
    agg["rms"] = rms_to_json(r.rms_tail, r.rms_reference);
    j["aggregate"] = agg;
    return j;
}

}  // namespace jamflow
