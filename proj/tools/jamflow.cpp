// jamflow - synthetic lyrics-to-song flow-matching workbench CLI
#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "jamflow/commands.hpp"

using namespace jamflow;

int main(int argc, char** argv) {
    CLI::App app{"jamflow: lyric-conditioned rectified-flow song sandbox"};
    app.require_subcommand(1);

    std::string config_path, out_path, manifest_path, ckpt_path, lyrics_path, resume_path;
    uint64_t seed_override = 0;
    bool has_seed_override = false;

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate a deterministic synthetic dataset");
    synth->add_option("--config", config_path, "run config (flat JSON)")->required();
    synth->add_option("--out", out_path, "output directory")->required();
    synth->add_option("--seed", seed_override, "override the config seed")->each([&](const std::string&) {
        has_seed_override = true;
    });

    // train
    long stop_at = -1;
    auto* train = app.add_subcommand("train", "flow-matching training (pretrain or sft stage)");
    train->add_option("--config", config_path, "run config (flat JSON)")->required();
    train->add_option("--data", manifest_path, "dataset manifest (JSONL)")->required();
    train->add_option("--out", out_path, "output checkpoint")->required();
    train->add_option("--resume", resume_path, "resume from checkpoint");
    train->add_option("--stop-at", stop_at, "interrupt after this step (schedule keeps the configured horizon)");
    train->add_option("--seed", seed_override, "override the config seed")->each([&](const std::string&) {
        has_seed_override = true;
    });

    // sample
    SampleArgs sargs;
    auto* sample = app.add_subcommand("sample", "generate one song latent with guidance");
    sample->add_option("--checkpoint", sargs.checkpoint, "model checkpoint")->required();
    sample->add_option("--lyrics", sargs.lyrics, "word timing file (JSONL: w/s/e)")->required();
    sample->add_option("--out", sargs.out, "output latent container")->required();
    sample->add_option("--style-seed", sargs.style_seed, "style vector seed");
    sample->add_option("--seed", sargs.noise_seed, "noise seed");
    sample->add_option("--duration", sargs.duration, "target duration in seconds");
    sample->add_option("--steps", sargs.steps, "Euler steps");
    sample->add_option("--alpha-style", sargs.alpha_style, "style guidance scale");
    sample->add_option("--alpha-lyric", sargs.alpha_lyric, "lyric guidance scale");

    // dpo
    auto* dpo = app.add_subcommand("dpo", "iterative preference alignment rounds");
    dpo->add_option("--config", config_path, "run config (flat JSON)")->required();
    dpo->add_option("--checkpoint", ckpt_path, "starting checkpoint")->required();
    dpo->add_option("--data", manifest_path, "dataset manifest (JSONL)")->required();
    dpo->add_option("--out", out_path, "output checkpoint")->required();
    dpo->add_option("--seed", seed_override, "override the config seed")->each([&](const std::string&) {
        has_seed_override = true;
    });

    // eval
    EvalArgs eargs;
    auto* evalc = app.add_subcommand("eval", "objective evaluation report");
    evalc->add_option("--checkpoint", eargs.checkpoint, "model checkpoint")->required();
    evalc->add_option("--data", eargs.eval_set, "eval manifest (JSONL)")->required();
    evalc->add_option("--out", eargs.out, "output report (JSON)")->required();
    evalc->add_option("--steps", eargs.steps, "Euler steps");
    evalc->add_option("--alpha-style", eargs.alpha_style, "style guidance scale");
    evalc->add_option("--alpha-lyric", eargs.alpha_lyric, "lyric guidance scale");

    // align
    double align_f = 5.0, align_duration = 30.0;
    int align_r = 2, align_alphabet = 24;
    std::string align_strategy = "average-sparse";
    auto* align = app.add_subcommand("align", "print the phoneme grid for a lyric file");
    align->add_option("--lyrics", lyrics_path, "word timing file (JSONL: w/s/e)")->required();
    align->add_option("--frame-rate", align_f, "latent frames per second");
    align->add_option("--upsample", align_r, "grid cells per latent frame");
    align->add_option("--duration", align_duration, "grid duration in seconds");
    align->add_option("--strategy", align_strategy, "average-sparse | pad-right");
    align->add_option("--alphabet", align_alphabet, "phoneme alphabet size");

    // quantize
    double bpm = 120.0;
    std::string quant_out;
    int quant_alphabet = 24;
    auto* quant = app.add_subcommand("quantize", "snap word timings to the quarter-beat grid");
    quant->add_option("--lyrics", lyrics_path, "word timing file (JSONL: w/s/e)")->required();
    quant->add_option("--bpm", bpm, "tempo in beats per minute")->required();
    quant->add_option("--out", quant_out, "output file ('-' for stdout)");
    quant->add_option("--alphabet", quant_alphabet, "phoneme alphabet size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        auto load_cfg = [&]() {
            require_file(config_path, "config");
            RunConfig cfg = load_run_config(config_path);
            if (has_seed_override) cfg.seed = seed_override;
            return cfg;
        };

        if (synth->parsed()) {
            const std::string manifest = cmd_synth_data(load_cfg(), out_path);
            std::cout << "wrote " << manifest << "\n";
        } else if (train->parsed()) {
            cmd_train(load_cfg(), manifest_path, out_path, resume_path, false, stop_at);
            std::cout << "wrote " << out_path << "\n";
        } else if (sample->parsed()) {
            cmd_sample(sargs);
            std::cout << "wrote " << sargs.out << "\n";
        } else if (dpo->parsed()) {
            cmd_dpo(load_cfg(), ckpt_path, manifest_path, out_path);
            std::cout << "wrote " << out_path << "\n";
        } else if (evalc->parsed()) {
            cmd_eval(eargs);
            std::cout << "wrote " << eargs.out << "\n";
        } else if (align->parsed()) {
            cmd_align(lyrics_path, align_f, align_r, align_duration, align_strategy, align_alphabet, std::cout);
        } else if (quant->parsed()) {
            cmd_quantize(lyrics_path, bpm, quant_out, quant_alphabet);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
