// train.hpp - the flow-matching training loop: logit-normal timesteps,
// condition dropout, AdamW with linear warmup and linear decay, per-step
// loss logging, and state capture for exact resume.
#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "condnet.hpp"
#include "flowcore.hpp"
#include "optim.hpp"
#include "prefalign.hpp"
#include "songworld.hpp"

namespace jamflow {

struct TrainOptions {
    long steps = 2000;   // schedule horizon (the run's configured length)
    long stop_at = -1;   // interrupt after this step; -1 runs to the horizon
    int batch = 4;
    int grad_accum = 1;
    double lr = 3e-4;
    long warmup = 100;
    double weight_decay = 0.01;
    double p_style = 0.10;
    double p_lyric = 0.50;
};

struct TrainResult {
    std::vector<double> losses;  // one per optimizer step
    long first_step = 0;
};

// One training step consumes rng in a fixed order (per micro-sample: dataset
// index, timestep, noise, dropout), so a run resumed from saved optimizer and
// rng state reproduces the unbroken loss trace exactly.
template <typename T>
inline TrainResult train_flow_matching(CondNet<T>& model, const World<T>& world,
                                       const std::vector<uint64_t>& dataset_seeds, const TrainOptions& opts,
                                       AdamW<T>& optimizer, Rng& rng, long start_step = 0,
                                       std::ostream* log = nullptr) {
    if (dataset_seeds.empty()) throw std::invalid_argument("train: empty dataset");
    if (start_step < 0 || start_step > opts.steps) throw std::invalid_argument("train: bad start step");
    const long until = opts.stop_at < 0 ? opts.steps : std::min(opts.stop_at, opts.steps);

    const WorldConfig& wc = world.config();
    const int l = frames_for(wc.t_max, wc.frame_rate);
    const int n = static_cast<int>(dataset_seeds.size());
    const int micro = opts.batch * opts.grad_accum;

    TrainResult result;
    result.first_step = start_step;
    for (long step = start_step; step < until; ++step) {
        model.params().zero_grads();
        double step_loss = 0.0;
        for (int b = 0; b < micro; ++b) {
            const int idx = rng.uniform_int(0, n - 1);
            const SyntheticSong<T> song = world.synth_song(dataset_seeds[static_cast<size_t>(idx)]);
            const TimeStep t = sample_timestep(rng);
            Mat<T> noise(l, wc.channels);
            for (auto& x : noise.v) x = static_cast<T>(rng.normal());
            const DropFlags drop = sample_condition_dropout(rng, opts.p_style, opts.p_lyric);

            CondInputs<T> in = condition_inputs(model, world, song.conditions());
            apply_dropout(drop, in);

            Tape<T> g(&model.params());
            const int loss = fm_loss_node(g, model, song.latent, noise, t, in);
            g.backward(loss);
            g.add_param_grads(model.params(), T(1) / T(micro));
            step_loss += static_cast<double>(g.val(loss).at(0, 0));
        }
        step_loss /= micro;
        if (!std::isfinite(step_loss))
            throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));

        const double lr = scheduled_lr(opts.lr, step, opts.warmup, opts.steps);
        optimizer.step(model.params(), lr);
        result.losses.push_back(step_loss);
        if (log) {
            log->precision(17);
            (*log) << step << "," << step_loss << "," << lr << "\n";
        }
    }
    return result;
}

}  // namespace jamflow
