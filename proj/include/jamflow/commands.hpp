// commands.hpp - the workflows behind the CLI subcommands, callable
// in-process. Missing inputs raise UsageError (exit code 2); runtime
// failures raise std::runtime_error (exit code 1).
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "evalkit.hpp"
#include "prefalign.hpp"
#include "train.hpp"

namespace jamflow {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

inline void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

// ---- synth-data -----------------------------------------------------------------

// writes <out>/manifest.jsonl and one lyric file per sample under <out>/lyrics/
inline std::string cmd_synth_data(const RunConfig& cfg, const std::string& out_dir) {
    const World<float> world(cfg.world);
    fs::create_directories(fs::path(out_dir) / "lyrics");

    std::vector<ManifestEntry> entries;
    const uint64_t base = tag_seed(cfg.seed, "dataset");
    for (int i = 0; i < cfg.data_samples; ++i) {
        const uint64_t seed = mix_seed(base, static_cast<uint64_t>(i));
        const SyntheticSong<float> song = world.synth_song(seed);
        entries.push_back(ManifestEntry{seed, song.duration.t_real, tag_seed(seed, "style")});

        const fs::path lyric_path = fs::path(out_dir) / "lyrics" / (std::to_string(seed) + ".jsonl");
        std::ofstream ls(lyric_path);
        if (!ls) throw std::runtime_error("cannot write " + lyric_path.string());
        write_lyrics_jsonl(song.lyrics, ls);
    }
    const fs::path manifest_path = fs::path(out_dir) / "manifest.jsonl";
    std::ofstream ms(manifest_path);
    if (!ms) throw std::runtime_error("cannot write " + manifest_path.string());
    write_manifest(entries, ms);
    return manifest_path.string();
}

// ---- train ----------------------------------------------------------------------

struct TrainOutcome {
    TrainResult result;
    std::string checkpoint_path;
};

inline TrainOutcome cmd_train(const RunConfig& cfg, const std::string& manifest_path, const std::string& out_ckpt,
                              const std::string& resume_path = "", bool quiet = false, long stop_at = -1) {
    require_file(manifest_path, "dataset manifest");
    const std::vector<ManifestEntry> manifest = read_manifest_file(manifest_path);
    if (manifest.empty()) throw std::runtime_error("dataset manifest is empty: " + manifest_path);
    std::vector<uint64_t> seeds;
    seeds.reserve(manifest.size());
    for (const ManifestEntry& e : manifest) seeds.push_back(e.seed);

    const World<float> world(cfg.world);
    CondNet<float> model(cfg.model_config(), tag_seed(cfg.seed, "init"));
    AdamW<float> optimizer(AdamConfig{cfg.train_lr, 0.9, 0.999, 1e-8, cfg.train_weight_decay});
    Rng rng(tag_seed(cfg.seed, "train"));
    long start_step = 0;

    if (!resume_path.empty()) {
        require_file(resume_path, "checkpoint");
        const Checkpoint ck = load_checkpoint_file(resume_path);
        if (ck.model_config != model_to_json(cfg.model_config()))
            throw UsageError("resume: config does not match the checkpoint's model configuration");
        if (ck.world_config != world_to_json(cfg.world))
            throw UsageError("resume: config does not match the checkpoint's world configuration");
        if (!ck.has_optimizer || ck.rng_state.empty())
            throw UsageError("resume: checkpoint carries no optimizer/rng state");
        model = model_from_checkpoint(ck);
        optimizer.set_step_count(ck.adam_step);
        rng.load_state(ck.rng_state);
        start_step = ck.train_step;
    }

    TrainOptions opts;
    opts.steps = cfg.train_steps;
    opts.stop_at = stop_at;
    opts.batch = cfg.train_batch;
    opts.grad_accum = cfg.train_grad_accum;
    opts.lr = cfg.train_lr;
    opts.warmup = cfg.train_warmup;
    opts.weight_decay = cfg.train_weight_decay;
    opts.p_style = cfg.dropout_style;
    opts.p_lyric = cfg.dropout_lyric;

    std::ofstream log(out_ckpt + ".log");
    if (!log) throw std::runtime_error("cannot write " + out_ckpt + ".log");

    const long until = stop_at < 0 ? cfg.train_steps : std::min<long>(stop_at, cfg.train_steps);
    TrainOutcome outcome;
    outcome.result = train_flow_matching(model, world, seeds, opts, optimizer, rng, start_step, &log);
    if (!quiet && !outcome.result.losses.empty())
        std::cout << "trained steps " << start_step << ".." << until << ", final loss "
                  << outcome.result.losses.back() << "\n";

    const Checkpoint ck = checkpoint_from_model(model, cfg.world, &optimizer, &rng, until);
    save_checkpoint_file(ck, out_ckpt);
    outcome.checkpoint_path = out_ckpt;
    return outcome;
}

// ---- sample ---------------------------------------------------------------------

struct SampleArgs {
    std::string checkpoint;
    std::string lyrics;
    std::string out;
    uint64_t style_seed = 0;
    uint64_t noise_seed = 0;
    double duration = 30.0;
    int steps = 32;
    double alpha_style = 1.0;
    double alpha_lyric = 1.0;
};

inline void cmd_sample(const SampleArgs& args) {
    require_file(args.checkpoint, "checkpoint");
    const Checkpoint ck = load_checkpoint_file(args.checkpoint);
    const CondNet<float> model = model_from_checkpoint(ck);
    const World<float> world(world_from_json(ck.world_config));
    const WorldConfig& wc = world.config();

    require_file(args.lyrics, "lyrics file");
    const TimedLyrics lyrics = read_lyrics_file(args.lyrics, default_phonemizer(wc.alphabet));
    for (const Word& w : lyrics.words)
        if (w.t_end > args.duration)
            throw std::runtime_error("lyric timings exceed the requested duration: word '" + w.text +
                                     "' ends at " + std::to_string(w.t_end) + " s > " +
                                     std::to_string(args.duration) + " s");

    const DurationSpec spec = make_duration_spec(args.duration, wc.t_max);
    const int l = frames_for(args.duration, wc.frame_rate);
    CondInputs<float> in;
    in.grid = build_grid(lyrics, wc.frame_rate, model.config().upsample, l, AlignStrategy::average_sparse);
    in.style = world.style_from_seed(args.style_seed).values;
    in.duration = spec;
    in.pad_mask = build_pad_mask(spec, wc.frame_rate, l);
    const CondSet<float> cond = model.encode_conditions(in);

    Rng nr(tag_seed(args.noise_seed, "sample_noise"));
    Mat<float> z0(l, wc.channels);
    for (auto& x : z0.v) x = static_cast<float>(nr.normal());

    // unit guidance scales telescope to the plain conditional velocity, so the
    // three-evaluation guidance path is skipped there
    const bool plain = args.alpha_style == 1.0 && args.alpha_lyric == 1.0;
    const CfgField<float> guided(model, args.alpha_style, args.alpha_lyric);
    const VelocityField<float>& field =
        plain ? static_cast<const VelocityField<float>&>(model) : static_cast<const VelocityField<float>&>(guided);
    const LatentSeq<float> gen =
        euler_sample(field, LatentSeq<float>(std::move(z0), wc.frame_rate), args.steps, cond);

    Checkpoint out;
    out.kind = "latent";
    out.model_config = ck.model_config;
    out.world_config = ck.world_config;
    out.arrays.emplace_back("latent", gen.values);
    out.meta["frame_rate"] = wc.frame_rate;
    out.meta["duration"] = args.duration;
    out.meta["style_seed"] = args.style_seed;
    out.meta["noise_seed"] = args.noise_seed;
    out.meta["steps"] = args.steps;
    out.meta["alpha_style"] = args.alpha_style;
    out.meta["alpha_lyric"] = args.alpha_lyric;
    save_checkpoint_file(out, args.out);

    std::ofstream ts(args.out + ".tokens.txt");
    if (!ts) throw std::runtime_error("cannot write " + args.out + ".tokens.txt");
    bool first = true;
    for (int tok : world.decode_tokens(gen)) {
        if (!first) ts << ' ';
        first = false;
        if (tok == kSilenceId)
            ts << 's';
        else
            ts << tok;
    }
    ts << '\n';
}

// ---- dpo ------------------------------------------------------------------------

inline void cmd_dpo(const RunConfig& cfg, const std::string& ckpt_path, const std::string& manifest_path,
                    const std::string& out_ckpt, bool quiet = false) {
    require_file(ckpt_path, "checkpoint");
    require_file(manifest_path, "dataset manifest");

    if (cfg.dpo_rounds == 0) {
        // nothing to do; the output checkpoint is the input, byte for byte
        std::ifstream src(ckpt_path, std::ios::binary);
        std::ofstream dst(out_ckpt, std::ios::binary);
        if (!src || !dst) throw std::runtime_error("cannot copy checkpoint to " + out_ckpt);
        dst << src.rdbuf();
        std::ofstream rs(out_ckpt + ".rounds.json");
        rs << "[]\n";
        return;
    }

    const Checkpoint ck = load_checkpoint_file(ckpt_path);
    CondNet<float> model = model_from_checkpoint(ck);
    const World<float> world(world_from_json(ck.world_config));

    const std::vector<ManifestEntry> manifest = read_manifest_file(manifest_path);
    const int n = std::min<int>(cfg.dpo_samples, static_cast<int>(manifest.size()));
    if (n == 0) throw std::runtime_error("dpo: dataset manifest is empty");
    std::vector<SyntheticSong<float>> dataset;
    dataset.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) dataset.push_back(world.synth_song(manifest[static_cast<size_t>(i)].seed));

    const SyntheticRewardOracle<float> oracle(world);
    const DpoConfig dcfg = cfg.dpo_config();

    nlohmann::ordered_json rounds = nlohmann::ordered_json::array();
    for (int round = 0; round < cfg.dpo_rounds; ++round) {
        DpoRoundOptions opts;
        opts.adam = AdamConfig{cfg.dpo_lr, 0.9, 0.999, 1e-8, cfg.train_weight_decay};
        opts.steps = cfg.dpo_steps;
        opts.batch_pairs = cfg.dpo_batch_pairs * cfg.dpo_grad_accum;
        opts.euler_steps = cfg.dpo_euler_steps;
        opts.alpha_style = cfg.cfg_alpha_style;
        opts.alpha_lyric = cfg.cfg_alpha_lyric;
        opts.seed = mix_seed(tag_seed(cfg.seed, "dpo_round"), static_cast<uint64_t>(round));

        std::vector<PrefRecord> records;
        const RoundStats stats = dpo_round(model, world, dataset, oracle, dcfg, opts, &records, round);

        std::ofstream ps(out_ckpt + ".round" + std::to_string(round) + ".prefs.jsonl");
        if (!ps) throw std::runtime_error("cannot write preference records for round " + std::to_string(round));
        write_pref_records(records, ps);

        nlohmann::ordered_json js;
        js["round"] = stats.round_index;
        js["samples"] = stats.samples;
        js["pairs_kept"] = stats.pairs_kept;
        js["pairs_rejected"] = stats.pairs_rejected;
        js["mean_win_score"] = stats.mean_win_score;
        js["mean_loss_score"] = stats.mean_loss_score;
        js["mean_loss_first"] = stats.mean_loss_first;
        js["mean_loss_last"] = stats.mean_loss_last;
        rounds.push_back(js);
        if (!quiet)
            std::cout << "round " << round << ": kept " << stats.pairs_kept << "/" << stats.samples
                      << " pairs, win " << stats.mean_win_score << " vs loss " << stats.mean_loss_score << "\n";
    }

    std::ofstream rs(out_ckpt + ".rounds.json");
    if (!rs) throw std::runtime_error("cannot write " + out_ckpt + ".rounds.json");
    rs << rounds.dump(2) << "\n";

    const Checkpoint out = checkpoint_from_model(model, world.config(), nullptr, nullptr, ck.train_step);
    save_checkpoint_file(out, out_ckpt);
}

// ---- eval -----------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string eval_set;
    std::string out;
    int steps = 32;
    double alpha_style = 1.0;
    double alpha_lyric = 1.0;
};

inline void cmd_eval(const EvalArgs& args) {
    require_file(args.checkpoint, "checkpoint");
    require_file(args.eval_set, "eval manifest");
    const Checkpoint ck = load_checkpoint_file(args.checkpoint);
    const CondNet<float> model = model_from_checkpoint(ck);
    const World<float> world(world_from_json(ck.world_config));

    std::vector<uint64_t> seeds;
    for (const ManifestEntry& e : read_manifest_file(args.eval_set)) seeds.push_back(e.seed);
    if (seeds.empty()) throw std::runtime_error("eval: manifest is empty");

    EvalOptions opts;
    opts.euler_steps = args.steps;
    opts.alpha_style = args.alpha_style;
    opts.alpha_lyric = args.alpha_lyric;
    opts.run_id = "eval:" + fs::path(args.checkpoint).filename().string();
    opts.checkpoint_name = args.checkpoint;

    const SyntheticRewardOracle<float> oracle(world);
    const EvalReport report = evaluate_model(model, world, seeds, oracle, opts);

    std::ofstream os(args.out);
    if (!os) throw std::runtime_error("cannot write " + args.out);
    os << eval_report_to_json(report).dump(2) << "\n";
}

// ---- align / quantize -------------------------------------------------------------

inline void cmd_align(const std::string& lyrics_path, double frame_rate, int upsample, double duration,
                      const std::string& strategy, int alphabet, std::ostream& os) {
    require_file(lyrics_path, "lyrics file");
    const TimedLyrics lyrics = read_lyrics_file(lyrics_path, default_phonemizer(alphabet));
    AlignStrategy strat;
    if (strategy == "average-sparse")
        strat = AlignStrategy::average_sparse;
    else if (strategy == "pad-right")
        strat = AlignStrategy::pad_right;
    else
        throw UsageError("unknown strategy '" + strategy + "' (want average-sparse or pad-right)");

    const int l = frames_for(duration, frame_rate);
    GridBuildStats stats;
    const PhonemeGrid grid = build_grid(lyrics, frame_rate, upsample, l, strat, &stats);
    bool first = true;
    for (const GridToken& tok : grid.tokens) {
        if (!first) os << ' ';
        first = false;
        switch (tok.kind) {
            case GridToken::Kind::song_filler: os << 's'; break;
            case GridToken::Kind::vocal_filler: os << 'v'; break;
            case GridToken::Kind::phoneme: os << tok.phoneme; break;
        }
    }
    os << '\n';
    if (stats.dropped_phonemes > 0)
        std::cerr << "warning: " << stats.dropped_phonemes << " phoneme(s) dropped in " << stats.short_span_words
                  << " short word span(s)\n";
}

inline void cmd_quantize(const std::string& lyrics_path, double bpm, const std::string& out_path, int alphabet) {
    require_file(lyrics_path, "lyrics file");
    const TimedLyrics lyrics = read_lyrics_file(lyrics_path, default_phonemizer(alphabet));
    const TimedLyrics quantized = quantize_timestamps(lyrics, bpm);
    if (out_path.empty() || out_path == "-") {
        write_lyrics_jsonl(quantized, std::cout);
    } else {
        std::ofstream os(out_path);
        if (!os) throw std::runtime_error("cannot write " + out_path);
        write_lyrics_jsonl(quantized, os);
    }
}

}  // namespace jamflow
