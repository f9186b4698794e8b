// prefalign.hpp - aesthetic preference alignment: candidate generation,
// reward-oracle scoring, win/loss pair construction with margin filtering,
// the preference and ground-truth-regularized preference losses, and the
// iterative round loop.
//
// Noise/time bookkeeping inside a pair: one timestep per pair, independent
// noises per win/loss branch, and the same noise reused between the policy
// and frozen-reference terms of a branch, so equal parameters give an
// exactly zero bracket and a loss of ln 2.
#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "condnet.hpp"
#include "evalkit.hpp"
#include "flowcore.hpp"
#include "optim.hpp"
#include "songworld.hpp"

namespace jamflow {

// ---- reward oracle -----------------------------------------------------------

// five criteria on a five-point scale, deterministic in its inputs
template <typename T>
class RewardOracle {
public:
    virtual ~RewardOracle() = default;
    virtual std::array<double, 5> score(const LatentSeq<T>& latent, const SongConditions<T>& cond) const = 0;
};

inline double aggregate_score(const std::array<double, 5>& criteria) {
    double sum = 0.0;
    for (double c : criteria) {
        if (!(c >= 1.0 && c <= 5.0)) throw std::invalid_argument("aggregate_score: criterion outside [1, 5]");
        sum += c;
    }
    return sum / 5.0;
}

// Deterministic stand-in scorer built from the synthetic world:
//   1. lyric adherence    - edit distance of decoded tokens to the prompt
//   2. smoothness         - mean squared frame-to-frame difference
//   3. silence compliance - RMS beyond the target duration
//   4. style adherence    - cosine to the expected style offset
//   5. energy regularity  - frame-to-frame energy variation
// each mapped onto [1, 5].
template <typename T>
class SyntheticRewardOracle : public RewardOracle<T> {
public:
    explicit SyntheticRewardOracle(const World<T>& world) : world_(world) {}

    std::array<double, 5> score(const LatentSeq<T>& latent, const SongConditions<T>& cond) const override {
        const double f = latent.frame_rate;
        const int l = latent.frames();
        const int c = latent.channels();
        const int content = std::min(l, static_cast<int>(std::floor(cond.duration.t_target * f)));

        // 1. lyric adherence
        std::vector<int> ref;
        for (const Word& w : cond.lyrics.words) {
            const std::vector<int> col = collapse_runs(w.phonemes);
            ref.insert(ref.end(), col.begin(), col.end());
        }
        std::vector<int> hyp;
        for (int tok : collapse_runs(world_.decode_tokens(latent)))
            if (tok != kSilenceId) hyp.push_back(tok);
        double per;
        if (ref.empty()) {
            per = hyp.empty() ? 0.0 : 1.0;
        } else {
            per = static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
        }
        const double s1 = clamp15(5.0 - 4.0 * std::min(1.0, per));

        // 2. smoothness
        double msd = 0.0;
        if (content >= 2) {
            for (int i = 0; i + 1 < content; ++i)
                for (int k = 0; k < c; ++k) {
                    const double d = static_cast<double>(latent.values.at(i + 1, k)) -
                                     static_cast<double>(latent.values.at(i, k));
                    msd += d * d;
                }
            msd /= static_cast<double>(content - 1) * static_cast<double>(c);
        }
        const double s2 = clamp15(1.0 + 4.0 * std::exp(-2.0 * msd));

        // 3. silence compliance
        double s3 = 5.0;
        if (content < l) {
            double sum = 0.0;
            for (int i = content; i < l; ++i)
                for (int k = 0; k < c; ++k) {
                    const double x = static_cast<double>(latent.values.at(i, k));
                    sum += x * x;
                }
            const double rms = std::sqrt(sum / (static_cast<double>(l - content) * c));
            s3 = clamp15(1.0 + 4.0 * std::exp(-8.0 * rms));
        }

        // 4. style adherence
        double s4 = 3.0;
        if (content > 0) {
            std::vector<double> mean(static_cast<size_t>(c), 0.0);
            for (int i = 0; i < content; ++i)
                for (int k = 0; k < c; ++k) mean[static_cast<size_t>(k)] += static_cast<double>(latent.values.at(i, k));
            const Mat<T> off = world_.style_offset(cond.style);
            double dot = 0.0, nm = 0.0, no = 0.0;
            for (int k = 0; k < c; ++k) {
                const double m = mean[static_cast<size_t>(k)] / content;
                const double o = static_cast<double>(off.at(0, k));
                dot += m * o;
                nm += m * m;
                no += o * o;
            }
            if (nm > 0.0 && no > 0.0) s4 = clamp15(3.0 + 2.0 * dot / std::sqrt(nm * no));
        }

        // 5. energy regularity
        double s5 = 5.0;
        if (content >= 2) {
            double var = 0.0;
            double prev = frame_norm(latent, 0);
            for (int i = 1; i < content; ++i) {
                const double cur = frame_norm(latent, i);
                var += std::abs(cur - prev);
                prev = cur;
            }
            var /= static_cast<double>(content - 1);
            s5 = clamp15(1.0 + 4.0 * std::exp(-2.0 * var));
        }

        return {s1, s2, s3, s4, s5};
    }

private:
    static double clamp15(double x) { return std::min(5.0, std::max(1.0, x)); }

    template <typename U>
    static double frame_norm(const LatentSeq<U>& z, int i) {
        double s = 0.0;
        for (int k = 0; k < z.channels(); ++k) {
            const double x = static_cast<double>(z.values.at(i, k));
            s += x * x;
        }
        return std::sqrt(s);
    }

    World<T> world_;
};

// ---- pairs ---------------------------------------------------------------------

template <typename T>
struct PreferencePair {
    LatentSeq<T> win;
    LatentSeq<T> loss;
    CondInputs<T> cond;  // shared prompt conditions, network-ready
    double win_score = 0.0;
    double loss_score = 0.0;
    uint64_t win_seed = 0;
    uint64_t loss_seed = 0;
    int sample_index = -1;
};

struct DpoConfig {
    double beta = 2000.0;
    double lambda = 0.2;
    int candidates_per_sample = 5;
    double margin = 0.15;
    int rounds = 3;
};

inline void validate_dpo(const DpoConfig& c) {
    if (!(c.beta > 0.0) || c.lambda < 0.0 || c.candidates_per_sample < 2 || c.margin < 0.0 || c.rounds < 0)
        throw std::invalid_argument("DpoConfig: beta > 0, lambda >= 0, candidates >= 2 required");
}

template <typename T>
struct CandidateSet {
    std::vector<LatentSeq<T>> latents;
    std::vector<uint64_t> seeds;
    CondInputs<T> cond;
};

template <typename T>
inline CondInputs<T> condition_inputs(const CondNet<T>& policy, const World<T>& world,
                                      const SongConditions<T>& sample) {
    const WorldConfig& wc = world.config();
    const int l = frames_for(wc.t_max, wc.frame_rate);
    CondInputs<T> in;
    in.grid = build_grid(sample.lyrics, wc.frame_rate, policy.config().upsample, l, AlignStrategy::average_sparse);
    in.style = sample.style.values;
    in.duration = sample.duration;
    in.pad_mask = build_pad_mask(sample.duration, wc.frame_rate, l);
    return in;
}

// k Euler samples under shared conditions with distinct seeded noise
template <typename T>
inline CandidateSet<T> generate_candidates(const CondNet<T>& policy, const World<T>& world,
                                           const SongConditions<T>& sample, int k, double alpha_style,
                                           double alpha_lyric, int euler_steps, Rng& rng) {
    if (k < 2) throw std::invalid_argument("generate_candidates: need at least two candidates");
    CandidateSet<T> out;
    out.cond = condition_inputs(policy, world, sample);
    const CondSet<T> cond = policy.encode_conditions(out.cond);

    const bool plain = alpha_style == 1.0 && alpha_lyric == 1.0;
    const CfgField<T> guided(policy, alpha_style, alpha_lyric);
    const VelocityField<T>& field =
        plain ? static_cast<const VelocityField<T>&>(policy) : static_cast<const VelocityField<T>&>(guided);

    const WorldConfig& wc = world.config();
    const int l = frames_for(wc.t_max, wc.frame_rate);
    for (int j = 0; j < k; ++j) {
        const uint64_t seed = rng.next_u64();
        Rng nr(seed);
        Mat<T> z0(l, wc.channels);
        for (auto& x : z0.v) x = static_cast<T>(nr.normal());
        out.latents.push_back(euler_sample(field, LatentSeq<T>(std::move(z0), wc.frame_rate), euler_steps, cond));
        out.seeds.push_back(seed);
    }
    return out;
}

// win = argmax mean score, loss = argmin (ties to the lowest index);
// discarded when the margin is not met
template <typename T>
inline std::optional<PreferencePair<T>> build_pair(const CandidateSet<T>& candidates, const RewardOracle<T>& oracle,
                                                   const SongConditions<T>& sample, double margin) {
    if (candidates.latents.size() < 2) throw std::invalid_argument("build_pair: need at least two candidates");
    std::vector<double> scores;
    scores.reserve(candidates.latents.size());
    for (const LatentSeq<T>& z : candidates.latents) scores.push_back(aggregate_score(oracle.score(z, sample)));

    size_t win = 0, loss = 0;
    for (size_t j = 1; j < scores.size(); ++j) {
        if (scores[j] > scores[win]) win = j;
        if (scores[j] < scores[loss]) loss = j;
    }
    if (scores[win] - scores[loss] < margin) return std::nullopt;

    PreferencePair<T> pair;
    pair.win = candidates.latents[win];
    pair.loss = candidates.latents[loss];
    pair.cond = candidates.cond;
    pair.win_score = scores[win];
    pair.loss_score = scores[loss];
    pair.win_seed = candidates.seeds[win];
    pair.loss_seed = candidates.seeds[loss];
    return pair;
}

// ---- losses --------------------------------------------------------------------

struct DpoTerms {
    double win_policy = 0.0;
    double loss_policy = 0.0;
    double win_ref = 0.0;
    double loss_ref = 0.0;
};

// -log sigmoid(-beta * [(Lw - Ll) - (Lw_ref - Ll_ref)]), computed stably
inline double dpo_logistic(const DpoTerms& t, double beta) {
    const double bracket = (t.win_policy - t.loss_policy) - (t.win_ref - t.loss_ref);
    const double x = beta * bracket;
    return x >= 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// value-level loss over abstract fields (works with stub/oracle fields)
template <typename T>
inline double dpo_fm_loss(const VelocityField<T>& policy, const VelocityField<T>& reference, const LatentSeq<T>& win,
                          const LatentSeq<T>& loss, const CondSet<T>& cond, TimeStep t, const Mat<T>& noise_w,
                          const Mat<T>& noise_l, double beta) {
    const LatentSeq<T> nw(noise_w, win.frame_rate), nl(noise_l, loss.frame_rate);
    DpoTerms terms;
    terms.win_policy = fm_loss(policy, win, nw, t, cond);
    terms.loss_policy = fm_loss(policy, loss, nl, t, cond);
    terms.win_ref = fm_loss(reference, win, nw, t, cond);
    terms.loss_ref = fm_loss(reference, loss, nl, t, cond);
    return dpo_logistic(terms, beta);
}

template <typename T>
inline double dpo_gt_loss(const VelocityField<T>& policy, const VelocityField<T>& reference, const LatentSeq<T>& win,
                          const LatentSeq<T>& loss, const CondSet<T>& cond, const LatentSeq<T>& gt,
                          const CondSet<T>& gt_cond, TimeStep t, const Mat<T>& noise_w, const Mat<T>& noise_l,
                          const Mat<T>& noise_gt, double beta, double lambda) {
    const double dpo = dpo_fm_loss(policy, reference, win, loss, cond, t, noise_w, noise_l, beta);
    const double gt_term = fm_loss(policy, gt, LatentSeq<T>(noise_gt, gt.frame_rate), t, gt_cond);
    return lambda * gt_term + dpo;
}

template <typename T>
struct DpoLossNodes {
    int loss = -1;  // differentiable scalar node on the policy tape
    DpoTerms terms;
};

// differentiable loss on the policy's tape; the frozen reference runs on a
// scratch tape with the identical op sequence, entering only as constants
template <typename T>
inline DpoLossNodes<T> dpo_fm_loss_node(Tape<T>& g, const CondNet<T>& policy, const CondNet<T>& reference,
                                        const PreferencePair<T>& pair, TimeStep t, const Mat<T>& noise_w,
                                        const Mat<T>& noise_l, double beta) {
    DpoLossNodes<T> out;
    const int lw = fm_loss_node(g, policy, pair.win, noise_w, t, pair.cond);
    const int ll = fm_loss_node(g, policy, pair.loss, noise_l, t, pair.cond);

    Tape<T> gr(&reference.params());
    const T lwr = gr.val(fm_loss_node(gr, reference, pair.win, noise_w, t, pair.cond)).at(0, 0);
    const T llr = gr.val(fm_loss_node(gr, reference, pair.loss, noise_l, t, pair.cond)).at(0, 0);

    out.terms.win_policy = static_cast<double>(g.val(lw).at(0, 0));
    out.terms.loss_policy = static_cast<double>(g.val(ll).at(0, 0));
    out.terms.win_ref = static_cast<double>(lwr);
    out.terms.loss_ref = static_cast<double>(llr);

    Mat<T> ref_diff(1, 1);
    ref_diff.at(0, 0) = lwr - llr;
    const int bracket = g.sub(g.sub(lw, ll), g.constant(std::move(ref_diff)));
    out.loss = g.scale(g.logsigmoid(g.scale(bracket, static_cast<T>(-beta))), T(-1));
    return out;
}

template <typename T>
inline DpoLossNodes<T> dpo_gt_loss_node(Tape<T>& g, const CondNet<T>& policy, const CondNet<T>& reference,
                                        const PreferencePair<T>& pair, const LatentSeq<T>& gt,
                                        const CondInputs<T>& gt_cond, TimeStep t, const Mat<T>& noise_w,
                                        const Mat<T>& noise_l, const Mat<T>& noise_gt, double beta, double lambda) {
    DpoLossNodes<T> out = dpo_fm_loss_node(g, policy, reference, pair, t, noise_w, noise_l, beta);
    const int gt_node = fm_loss_node(g, policy, gt, noise_gt, t, gt_cond);
    out.loss = g.add(g.scale(gt_node, static_cast<T>(lambda)), out.loss);
    return out;
}

// ---- round loop ----------------------------------------------------------------

struct DpoRoundOptions {
    AdamConfig adam{1e-5, 0.9, 0.999, 1e-8, 0.01};
    int steps = 200;
    int batch_pairs = 4;
    int euler_steps = 16;
    double alpha_style = 1.0;
    double alpha_lyric = 1.0;
    uint64_t seed = 0;
};

struct RoundStats {
    int round_index = 0;
    int samples = 0;
    int pairs_kept = 0;
    int pairs_rejected = 0;
    double mean_win_score = 0.0;
    double mean_loss_score = 0.0;
    double mean_loss_first = 0.0;  // mean optimization loss over the first and
    double mean_loss_last = 0.0;   // last quarter of steps
};

struct PrefRecord {
    int sample_id = 0;
    uint64_t win_seed = 0;
    uint64_t loss_seed = 0;
    double win_score = 0.0;
    double loss_score = 0.0;
    double alpha_style = 1.0;
    double alpha_lyric = 1.0;
};

inline void write_pref_records(const std::vector<PrefRecord>& records, std::ostream& os) {
    for (const PrefRecord& r : records) {
        nlohmann::ordered_json j;
        j["sample_id"] = r.sample_id;
        j["win_seed"] = r.win_seed;
        j["loss_seed"] = r.loss_seed;
        j["win_score"] = r.win_score;
        j["loss_score"] = r.loss_score;
        j["cfg_scales"] = {r.alpha_style, r.alpha_lyric};
        os << j.dump() << "\n";
    }
}

// One alignment round: freeze the policy as reference, generate and score
// candidates, filter pairs by margin, optimize the preference loss
// (ground-truth-regularized when lambda > 0). Updates the policy in place.
template <typename T>
inline RoundStats dpo_round(CondNet<T>& policy, const World<T>& world, const std::vector<SyntheticSong<T>>& dataset,
                            const RewardOracle<T>& oracle, const DpoConfig& cfg, const DpoRoundOptions& opts,
                            std::vector<PrefRecord>* records = nullptr, int round_index = 0) {
    validate_dpo(cfg);
    RoundStats stats;
    stats.round_index = round_index;
    stats.samples = static_cast<int>(dataset.size());

    const CondNet<T> reference = policy;  // frozen copy

    std::vector<PreferencePair<T>> pairs;
    Rng gen_rng(tag_seed(opts.seed, "dpo_candidates"));
    for (size_t i = 0; i < dataset.size(); ++i) {
        const SongConditions<T> sample = dataset[i].conditions();
        const CandidateSet<T> cand = generate_candidates(policy, world, sample, cfg.candidates_per_sample,
                                                         opts.alpha_style, opts.alpha_lyric, opts.euler_steps, gen_rng);
        std::optional<PreferencePair<T>> pair = build_pair(cand, oracle, sample, cfg.margin);
        if (!pair) {
            ++stats.pairs_rejected;
            continue;
        }
        pair->sample_index = static_cast<int>(i);
        stats.mean_win_score += pair->win_score;
        stats.mean_loss_score += pair->loss_score;
        if (records)
            records->push_back(PrefRecord{static_cast<int>(i), pair->win_seed, pair->loss_seed, pair->win_score,
                                          pair->loss_score, opts.alpha_style, opts.alpha_lyric});
        pairs.push_back(std::move(*pair));
    }
    stats.pairs_kept = static_cast<int>(pairs.size());
    if (pairs.empty())
        throw std::runtime_error("dpo_round " + std::to_string(round_index) +
                                 ": no preference pairs survived the margin filter");
    stats.mean_win_score /= stats.pairs_kept;
    stats.mean_loss_score /= stats.pairs_kept;

    AdamW<T> optimizer(opts.adam);
    Rng train_rng(tag_seed(opts.seed, "dpo_train"));
    const int l = pairs.front().win.frames();
    const int c = pairs.front().win.channels();
    const int quarter = std::max(1, opts.steps / 4);
    double first_sum = 0.0, last_sum = 0.0;
    int first_n = 0, last_n = 0;

    for (int step = 0; step < opts.steps; ++step) {
        policy.params().zero_grads();
        double batch_loss = 0.0;
        for (int j = 0; j < opts.batch_pairs; ++j) {
            const PreferencePair<T>& pair =
                pairs[(static_cast<size_t>(step) * opts.batch_pairs + j) % pairs.size()];
            const TimeStep t(train_rng.uniform());
            Mat<T> nw(l, c), nl(l, c);
            for (auto& x : nw.v) x = static_cast<T>(train_rng.normal());
            for (auto& x : nl.v) x = static_cast<T>(train_rng.normal());

            Tape<T> g(&policy.params());
            DpoLossNodes<T> node;
            if (cfg.lambda > 0.0) {
                Mat<T> ng(l, c);
                for (auto& x : ng.v) x = static_cast<T>(train_rng.normal());
                const SyntheticSong<T>& gt = dataset[static_cast<size_t>(pair.sample_index)];
                node = dpo_gt_loss_node(g, policy, reference, pair, gt.latent, pair.cond, t, nw, nl, ng, cfg.beta,
                                        cfg.lambda);
            } else {
                node = dpo_fm_loss_node(g, policy, reference, pair, t, nw, nl, cfg.beta);
            }
            g.backward(node.loss);
            g.add_param_grads(policy.params(), T(1) / T(opts.batch_pairs));
            batch_loss += static_cast<double>(g.val(node.loss).at(0, 0));
        }
        batch_loss /= opts.batch_pairs;
        if (!std::isfinite(batch_loss))
            throw std::runtime_error("dpo_round: non-finite loss at step " + std::to_string(step));
        if (step < quarter) {
            first_sum += batch_loss;
            ++first_n;
        }
        if (step >= opts.steps - quarter) {
            last_sum += batch_loss;
            ++last_n;
        }
        optimizer.step(policy.params());
    }
    stats.mean_loss_first = first_n ? first_sum / first_n : 0.0;
    stats.mean_loss_last = last_n ? last_sum / last_n : 0.0;
    return stats;
}

}  // namespace jamflow
