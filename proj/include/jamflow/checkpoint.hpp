// checkpoint.hpp - the float32 array container: a JSON header followed by
// named little-endian float32 arrays in manifest order. Used for model
// checkpoints (parameters, optimizer moments, rng state) and latent dumps.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "condnet.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "songworld.hpp"

namespace jamflow {

constexpr char kContainerMagic[8] = {'J', 'A', 'M', 'F', 'C', '0', '1', '\n'};

struct Checkpoint {
    int format_version = 1;
    std::string kind = "checkpoint";  // or "latent"
    nlohmann::ordered_json model_config;
    nlohmann::ordered_json world_config;
    nlohmann::ordered_json meta;  // free-form extras (latent dumps)
    std::vector<std::pair<std::string, Mat<float>>> arrays;
    long train_step = 0;
    long adam_step = 0;
    bool has_optimizer = false;
    std::string rng_state;  // empty when absent

    const Mat<float>& array(const std::string& name) const {
        for (const auto& [n, m] : arrays)
            if (n == name) return m;
        throw std::invalid_argument("Checkpoint: no array named '" + name + "'");
    }
};

// ---- config serialization ----------------------------------------------------

inline nlohmann::ordered_json world_to_json(const WorldConfig& w) {
    nlohmann::ordered_json j;
    j["frame_rate"] = w.frame_rate;
    j["channels"] = w.channels;
    j["alphabet"] = w.alphabet;
    j["style_dim"] = w.style_dim;
    j["t_max"] = w.t_max;
    j["noise_sigma"] = w.noise_sigma;
    j["style_gain"] = w.style_gain;
    j["silence_threshold_factor"] = w.silence_threshold_factor;
    j["codebook_seed"] = w.codebook_seed;
    j["t_real_min"] = w.t_real_min;
    j["t_real_max"] = w.t_real_max;
    j["word_len_min"] = w.word_len_min;
    j["word_len_max"] = w.word_len_max;
    j["gap_min"] = w.gap_min;
    j["gap_max"] = w.gap_max;
    j["max_phonemes_per_word"] = w.max_phonemes_per_word;
    j["trailing_instrumental_max"] = w.trailing_instrumental_max;
    return j;
}

inline WorldConfig world_from_json(const nlohmann::json& j) {
    WorldConfig w;
    w.frame_rate = j.at("frame_rate").get<double>();
    w.channels = j.at("channels").get<int>();
    w.alphabet = j.at("alphabet").get<int>();
    w.style_dim = j.at("style_dim").get<int>();
    w.t_max = j.at("t_max").get<double>();
    w.noise_sigma = j.at("noise_sigma").get<double>();
    w.style_gain = j.at("style_gain").get<double>();
    w.silence_threshold_factor = j.at("silence_threshold_factor").get<double>();
    w.codebook_seed = j.at("codebook_seed").get<uint64_t>();
    w.t_real_min = j.at("t_real_min").get<double>();
    w.t_real_max = j.at("t_real_max").get<double>();
    w.word_len_min = j.at("word_len_min").get<double>();
    w.word_len_max = j.at("word_len_max").get<double>();
    w.gap_min = j.at("gap_min").get<double>();
    w.gap_max = j.at("gap_max").get<double>();
    w.max_phonemes_per_word = j.at("max_phonemes_per_word").get<int>();
    w.trailing_instrumental_max = j.value("trailing_instrumental_max", 0.0);
    return w;
}

inline nlohmann::ordered_json model_to_json(const ModelConfig& m) {
    nlohmann::ordered_json j;
    j["layers"] = m.layers;
    j["hidden"] = m.hidden;
    j["heads"] = m.heads;
    j["channels"] = m.channels;
    j["lyric_dim"] = m.lyric_dim;
    j["style_dim"] = m.style_dim;
    j["dur_dim"] = m.dur_dim;
    j["upsample"] = m.upsample;
    j["lyric_vocab"] = m.lyric_vocab;
    j["lyric_kernel"] = m.lyric_kernel;
    j["convpos_kernel"] = m.convpos_kernel;
    j["ffn_dim"] = m.ffn_dim;
    j["time_feats"] = m.time_feats;
    j["dur_feats"] = m.dur_feats;
    j["use_tdc"] = m.use_tdc;
    j["rope_base"] = m.rope_base;
    j["norm_eps"] = m.norm_eps;
    return j;
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.layers = j.at("layers").get<int>();
    m.hidden = j.at("hidden").get<int>();
    m.heads = j.at("heads").get<int>();
    m.channels = j.at("channels").get<int>();
    m.lyric_dim = j.at("lyric_dim").get<int>();
    m.style_dim = j.at("style_dim").get<int>();
    m.dur_dim = j.at("dur_dim").get<int>();
    m.upsample = j.at("upsample").get<int>();
    m.lyric_vocab = j.at("lyric_vocab").get<int>();
    m.lyric_kernel = j.at("lyric_kernel").get<int>();
    m.convpos_kernel = j.at("convpos_kernel").get<int>();
    m.ffn_dim = j.at("ffn_dim").get<int>();
    m.time_feats = j.at("time_feats").get<int>();
    m.dur_feats = j.at("dur_feats").get<int>();
    m.use_tdc = j.at("use_tdc").get<bool>();
    m.rope_base = j.at("rope_base").get<double>();
    m.norm_eps = j.at("norm_eps").get<double>();
    return m;
}

// ---- binary io -----------------------------------------------------------------

inline void write_f32_le(std::ostream& os, float x) {
    uint32_t bits;
    std::memcpy(&bits, &x, 4);
    const char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                       static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
    os.write(b, 4);
}

inline float read_f32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    const uint32_t bits = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                          (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    float x;
    std::memcpy(&x, &bits, 4);
    return x;
}

inline void save_checkpoint(const Checkpoint& ck, std::ostream& os) {
    nlohmann::ordered_json header;
    header["format_version"] = ck.format_version;
    header["kind"] = ck.kind;
    header["model_config"] = ck.model_config;
    header["world_config"] = ck.world_config;
    nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
    for (const auto& [name, m] : ck.arrays) {
        nlohmann::ordered_json e;
        e["name"] = name;
        e["rows"] = m.rows;
        e["cols"] = m.cols;
        manifest.push_back(e);
    }
    header["manifest"] = manifest;
    header["train_step"] = ck.train_step;
    header["adam_step"] = ck.adam_step;
    header["has_optimizer"] = ck.has_optimizer;
    header["rng_state"] = ck.rng_state;
    header["meta"] = ck.meta;

    const std::string hs = header.dump();
    os.write(kContainerMagic, 8);
    const uint32_t len = static_cast<uint32_t>(hs.size());
    const char lb[4] = {static_cast<char>(len & 0xff), static_cast<char>((len >> 8) & 0xff),
                        static_cast<char>((len >> 16) & 0xff), static_cast<char>((len >> 24) & 0xff)};
    os.write(lb, 4);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, m] : ck.arrays)
        for (float x : m.v) write_f32_le(os, x);
}

inline void save_checkpoint_file(const Checkpoint& ck, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    save_checkpoint(ck, os);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kContainerMagic, 8) != 0)
        throw std::runtime_error("not a jamflow container (bad magic)");
    unsigned char lb[4];
    is.read(reinterpret_cast<char*>(lb), 4);
    const uint32_t len = static_cast<uint32_t>(lb[0]) | (static_cast<uint32_t>(lb[1]) << 8) |
                         (static_cast<uint32_t>(lb[2]) << 16) | (static_cast<uint32_t>(lb[3]) << 24);
    std::string hs(len, '\0');
    is.read(hs.data(), len);
    if (!is) throw std::runtime_error("truncated container header");
    // ordered parse keeps header key order stable across load/save cycles
    const nlohmann::ordered_json header = nlohmann::ordered_json::parse(hs);

    Checkpoint ck;
    ck.format_version = header.at("format_version").get<int>();
    if (ck.format_version != 1)
        throw std::runtime_error("unsupported container version " + std::to_string(ck.format_version));
    ck.kind = header.at("kind").get<std::string>();
    ck.model_config = header.at("model_config");
    ck.world_config = header.at("world_config");
    ck.train_step = header.at("train_step").get<long>();
    ck.adam_step = header.at("adam_step").get<long>();
    ck.has_optimizer = header.at("has_optimizer").get<bool>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    ck.meta = header.at("meta");

    for (const auto& e : header.at("manifest")) {
        const std::string name = e.at("name").get<std::string>();
        const int rows = e.at("rows").get<int>();
        const int cols = e.at("cols").get<int>();
        Mat<float> m(rows, cols);
        for (auto& x : m.v) x = read_f32_le(is);
        if (!is) throw std::runtime_error("truncated array data for '" + name + "'");
        ck.arrays.emplace_back(name, std::move(m));
    }
    return ck;
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    return load_checkpoint(is);
}

// ---- model binding ---------------------------------------------------------------

inline Checkpoint checkpoint_from_model(const CondNet<float>& model, const WorldConfig& world,
                                        const AdamW<float>* optimizer, const Rng* rng, long train_step) {
    Checkpoint ck;
    ck.model_config = model_to_json(model.config());
    ck.world_config = world_to_json(world);
    ck.train_step = train_step;
    const ParamStore<float>& params = model.params();
    for (int i = 0; i < params.count(); ++i) ck.arrays.emplace_back(params.entry(i).name, params.entry(i).value);
    if (optimizer) {
        ck.has_optimizer = true;
        ck.adam_step = optimizer->step_count();
        for (int i = 0; i < params.count(); ++i) ck.arrays.emplace_back("adam_m:" + params.entry(i).name, params.entry(i).adam_m);
        for (int i = 0; i < params.count(); ++i) ck.arrays.emplace_back("adam_v:" + params.entry(i).name, params.entry(i).adam_v);
    }
    if (rng) ck.rng_state = rng->save_state();
    return ck;
}

// rebuilds the model (and optionally optimizer moments) from a checkpoint;
// every model parameter must be present with a matching shape
inline CondNet<float> model_from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "checkpoint") throw std::runtime_error("container is not a model checkpoint");
    CondNet<float> model(model_from_json(ck.model_config), 0);
    ParamStore<float>& params = model.params();
    for (int i = 0; i < params.count(); ++i) {
        auto& e = params.entry(i);
        const Mat<float>& src = ck.array(e.name);
        if (src.rows != e.value.rows || src.cols != e.value.cols)
            throw std::runtime_error("checkpoint array '" + e.name + "' has mismatched shape");
        e.value = src;
        if (ck.has_optimizer) {
            e.adam_m = ck.array("adam_m:" + e.name);
            e.adam_v = ck.array("adam_v:" + e.name);
        }
    }
    return model;
}

}  // namespace jamflow
