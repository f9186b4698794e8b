// config.hpp - run configuration: one flat JSON object, schema-validated
// with explicit error paths. Every run states its seed explicitly.
#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "condnet.hpp"
#include "prefalign.hpp"
#include "songworld.hpp"

namespace jamflow {

struct RunConfig {
    std::string stage = "pretrain";  // pretrain | sft | dpo | eval
    uint64_t seed = 0;

    WorldConfig world;

    // model
    int model_layers = 4;
    int model_hidden = 64;
    int model_heads = 4;
    int model_lyric_dim = 32;
    int model_dur_dim = 8;
    int model_upsample = 2;
    int model_lyric_kernel = 3;
    int model_convpos_kernel = 7;
    int model_ffn_dim = 128;
    int model_time_feats = 16;
    int model_dur_feats = 16;
    bool model_use_tdc = true;

    // flow-matching training
    long train_steps = 2000;
    int train_batch = 4;
    int train_grad_accum = 1;
    double train_lr = 3e-4;
    long train_warmup = 100;
    double train_weight_decay = 0.01;
    double dropout_style = 0.10;
    double dropout_lyric = 0.50;

    // dataset synthesis
    int data_samples = 256;

    // sampling / evaluation
    int sample_steps = 32;
    double cfg_alpha_style = 1.0;
    double cfg_alpha_lyric = 1.0;

    // preference alignment
    double dpo_beta = 2000.0;
    double dpo_lambda = 0.2;
    int dpo_candidates = 5;
    double dpo_margin = 0.15;
    int dpo_rounds = 3;
    int dpo_steps = 200;
    double dpo_lr = 1e-5;
    int dpo_batch_pairs = 4;
    int dpo_grad_accum = 1;
    int dpo_euler_steps = 16;
    int dpo_samples = 64;

    ModelConfig model_config() const {
        ModelConfig m;
        m.layers = model_layers;
        m.hidden = model_hidden;
        m.heads = model_heads;
        m.channels = world.channels;
        m.lyric_dim = model_lyric_dim;
        m.style_dim = world.style_dim;
        m.dur_dim = model_dur_dim;
        m.upsample = model_upsample;
        m.lyric_vocab = world.alphabet + 2;
        m.lyric_kernel = model_lyric_kernel;
        m.convpos_kernel = model_convpos_kernel;
        m.ffn_dim = model_ffn_dim;
        m.time_feats = model_time_feats;
        m.dur_feats = model_dur_feats;
        m.use_tdc = model_use_tdc;
        return m;
    }

    DpoConfig dpo_config() const {
        DpoConfig d;
        d.beta = dpo_beta;
        d.lambda = dpo_lambda;
        d.candidates_per_sample = dpo_candidates;
        d.margin = dpo_margin;
        d.rounds = dpo_rounds;
        return d;
    }
};

namespace detail {

class ConfigReader {
public:
    explicit ConfigReader(const nlohmann::json& j) : j_(j) {
        if (!j.is_object()) throw std::invalid_argument("config: expected a flat JSON object");
    }

    double num(const char* key, double def) {
        mark(key);
        if (!j_.contains(key)) return def;
        require_number(key);
        return j_.at(key).get<double>();
    }

    long integer(const char* key, long def) {
        mark(key);
        if (!j_.contains(key)) return def;
        require_number(key);
        const double x = j_.at(key).get<double>();
        const long i = static_cast<long>(x);
        if (static_cast<double>(i) != x) throw std::invalid_argument(std::string("config key '") + key + "': expected an integer");
        return i;
    }

    uint64_t uinteger(const char* key, uint64_t def, bool required = false) {
        mark(key);
        if (!j_.contains(key)) {
            if (required) throw std::invalid_argument(std::string("config key '") + key + "' is required");
            return def;
        }
        if (!j_.at(key).is_number_integer() && !j_.at(key).is_number_unsigned())
            throw std::invalid_argument(std::string("config key '") + key + "': expected an integer");
        return j_.at(key).get<uint64_t>();
    }

    bool boolean(const char* key, bool def) {
        mark(key);
        if (!j_.contains(key)) return def;
        if (!j_.at(key).is_boolean()) throw std::invalid_argument(std::string("config key '") + key + "': expected a boolean");
        return j_.at(key).get<bool>();
    }

    std::string str(const char* key, const std::string& def) {
        mark(key);
        if (!j_.contains(key)) return def;
        if (!j_.at(key).is_string()) throw std::invalid_argument(std::string("config key '") + key + "': expected a string");
        return j_.at(key).get<std::string>();
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw std::invalid_argument("config: unknown key '" + it.key() + "'");
    }

private:
    void mark(const char* key) { seen_.insert(key); }
    void require_number(const char* key) {
        if (!j_.at(key).is_number()) throw std::invalid_argument(std::string("config key '") + key + "': expected a number");
    }

    const nlohmann::json& j_;
    std::set<std::string> seen_;
};

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    detail::ConfigReader r(j);
    RunConfig c;
    c.stage = r.str("stage", c.stage);
    if (c.stage != "pretrain" && c.stage != "sft" && c.stage != "dpo" && c.stage != "eval")
        throw std::invalid_argument("config key 'stage': must be one of pretrain, sft, dpo, eval");
    c.seed = r.uinteger("seed", 0, /*required=*/true);

    c.world.frame_rate = r.num("world_frame_rate", c.world.frame_rate);
    c.world.channels = static_cast<int>(r.integer("world_channels", c.world.channels));
    c.world.alphabet = static_cast<int>(r.integer("world_alphabet", c.world.alphabet));
    c.world.style_dim = static_cast<int>(r.integer("world_style_dim", c.world.style_dim));
    c.world.t_max = r.num("world_t_max", c.world.t_max);
    c.world.noise_sigma = r.num("world_noise_sigma", c.world.noise_sigma);
    c.world.style_gain = r.num("world_style_gain", c.world.style_gain);
    c.world.silence_threshold_factor = r.num("world_silence_threshold_factor", c.world.silence_threshold_factor);
    c.world.codebook_seed = r.uinteger("world_codebook_seed", c.world.codebook_seed);
    c.world.t_real_min = r.num("world_t_real_min", c.world.t_real_min);
    c.world.t_real_max = r.num("world_t_real_max", c.world.t_real_max);
    c.world.word_len_min = r.num("world_word_len_min", c.world.word_len_min);
    c.world.word_len_max = r.num("world_word_len_max", c.world.word_len_max);
    c.world.gap_min = r.num("world_gap_min", c.world.gap_min);
    c.world.gap_max = r.num("world_gap_max", c.world.gap_max);
    c.world.max_phonemes_per_word = static_cast<int>(r.integer("world_max_phonemes", c.world.max_phonemes_per_word));
    c.world.trailing_instrumental_max = r.num("world_trailing_max", c.world.trailing_instrumental_max);

    c.model_layers = static_cast<int>(r.integer("model_layers", c.model_layers));
    c.model_hidden = static_cast<int>(r.integer("model_hidden", c.model_hidden));
    c.model_heads = static_cast<int>(r.integer("model_heads", c.model_heads));
    c.model_lyric_dim = static_cast<int>(r.integer("model_lyric_dim", c.model_lyric_dim));
    c.model_dur_dim = static_cast<int>(r.integer("model_dur_dim", c.model_dur_dim));
    c.model_upsample = static_cast<int>(r.integer("model_upsample", c.model_upsample));
    c.model_lyric_kernel = static_cast<int>(r.integer("model_lyric_kernel", c.model_lyric_kernel));
    c.model_convpos_kernel = static_cast<int>(r.integer("model_convpos_kernel", c.model_convpos_kernel));
    c.model_ffn_dim = static_cast<int>(r.integer("model_ffn_dim", c.model_ffn_dim));
    c.model_time_feats = static_cast<int>(r.integer("model_time_feats", c.model_time_feats));
    c.model_dur_feats = static_cast<int>(r.integer("model_dur_feats", c.model_dur_feats));
    c.model_use_tdc = r.boolean("model_use_tdc", c.model_use_tdc);

    c.train_steps = r.integer("train_steps", c.train_steps);
    c.train_batch = static_cast<int>(r.integer("train_batch", c.train_batch));
    c.train_grad_accum = static_cast<int>(r.integer("train_grad_accum", c.train_grad_accum));
    c.train_lr = r.num("train_lr", c.train_lr);
    c.train_warmup = r.integer("train_warmup", c.train_warmup);
    c.train_weight_decay = r.num("train_weight_decay", c.train_weight_decay);
    c.dropout_style = r.num("dropout_style", c.dropout_style);
    c.dropout_lyric = r.num("dropout_lyric", c.dropout_lyric);

    c.data_samples = static_cast<int>(r.integer("data_samples", c.data_samples));

    c.sample_steps = static_cast<int>(r.integer("sample_steps", c.sample_steps));
    c.cfg_alpha_style = r.num("cfg_alpha_style", c.cfg_alpha_style);
    c.cfg_alpha_lyric = r.num("cfg_alpha_lyric", c.cfg_alpha_lyric);

    c.dpo_beta = r.num("dpo_beta", c.dpo_beta);
    c.dpo_lambda = r.num("dpo_lambda", c.dpo_lambda);
    c.dpo_candidates = static_cast<int>(r.integer("dpo_candidates", c.dpo_candidates));
    c.dpo_margin = r.num("dpo_margin", c.dpo_margin);
    c.dpo_rounds = static_cast<int>(r.integer("dpo_rounds", c.dpo_rounds));
    c.dpo_steps = static_cast<int>(r.integer("dpo_steps", c.dpo_steps));
    c.dpo_lr = r.num("dpo_lr", c.dpo_lr);
    c.dpo_batch_pairs = static_cast<int>(r.integer("dpo_batch_pairs", c.dpo_batch_pairs));
    c.dpo_grad_accum = static_cast<int>(r.integer("dpo_grad_accum", c.dpo_grad_accum));
    c.dpo_euler_steps = static_cast<int>(r.integer("dpo_euler_steps", c.dpo_euler_steps));
    c.dpo_samples = static_cast<int>(r.integer("dpo_samples", c.dpo_samples));
    r.finish();

    validate_world(c.world);
    validate_model(c.model_config());
    if (c.train_steps < 0 || c.train_batch < 1 || c.train_grad_accum < 1)
        throw std::invalid_argument("config: bad training settings");
    if (c.dropout_style < 0.0 || c.dropout_style > 1.0 || c.dropout_lyric < 0.0 || c.dropout_lyric > 1.0)
        throw std::invalid_argument("config: dropout probabilities must lie in [0, 1]");
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

}  // namespace jamflow
