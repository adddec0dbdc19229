#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "trainer.hpp"

namespace ff {

using KvPairs = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline int64_t cfg_int(const std::string& key, const std::string& v) {
    size_t used = 0;
    int64_t out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("config key '" + key + "': bad integer '" + v + "'");
    return out;
}

inline double cfg_double(const std::string& key, const std::string& v) {
    size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad number '" + v + "'");
    }
    if (used != v.size()) throw ConfigError("config key '" + key + "': bad number '" + v + "'");
    return out;
}

inline bool cfg_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw ConfigError("config key '" + key + "': bad boolean '" + v + "'");
}

inline std::vector<int64_t> cfg_int_list(const std::string& key, const std::string& v) {
    std::vector<int64_t> out;
    if (trim(v).empty()) return out;
    size_t start = 0;
    while (start <= v.size()) {
        const size_t c = v.find(',', start);
        out.push_back(cfg_int(key, trim(v.substr(start, c == std::string::npos ? c : c - start))));
        if (c == std::string::npos) break;
        start = c + 1;
    }
    return out;
}

} // namespace detail

// key=value lines; '#' starts a comment; blank lines skipped
inline KvPairs parse_config_text(const std::string& text, const std::string& origin) {
    KvPairs out;
    size_t line_no = 0, start = 0;
    while (start <= text.size()) {
        const size_t nl = text.find('\n', start);
        std::string line = text.substr(start, nl == std::string::npos ? nl : nl - start);
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (!line.empty()) {
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(line_no) +
                                  ": expected key=value, got '" + line + "'");
            const auto key = detail::trim(line.substr(0, eq));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            out.emplace_back(key, detail::trim(line.substr(eq + 1)));
        }
        if (nl == std::string::npos) break;
        start = nl + 1;
    }
    return out;
}

inline KvPairs parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text, path);
}

// Route one key onto TrainConfig (training fields, sampler.* and model.*).
// Unknown keys are errors that name the key.
inline void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& v) {
    using detail::cfg_bool;
    using detail::cfg_double;
    using detail::cfg_int;
    using detail::cfg_int_list;
    if (key == "stage1_iters") cfg.stage1_iters = cfg_int(key, v);
    else if (key == "stage2_iters") cfg.stage2_iters = cfg_int(key, v);
    else if (key == "batch") cfg.batch = cfg_int(key, v);
    else if (key == "lr_max") cfg.lr_max = cfg_double(key, v);
    else if (key == "lr_min") cfg.lr_min = cfg_double(key, v);
    else if (key == "cosine_period") cfg.cosine_period = cfg_int(key, v);
    else if (key == "seed") cfg.seed = static_cast<uint64_t>(cfg_int(key, v));
    else if (key == "eval_every") cfg.eval_every = cfg_int(key, v);
    else if (key == "charbonnier_eps") cfg.charbonnier_eps = cfg_double(key, v);
    else if (key == "window") cfg.window = cfg_int(key, v);
    else if (key == "val_scale") cfg.val_scale = cfg_double(key, v);
    else if (key == "out_dir") cfg.out_dir = v;
    else if (key == "sampler.patch") cfg.sampler.patch = cfg_int(key, v);
    else if (key == "sampler.stage1_scale") cfg.sampler.stage1_scale = cfg_double(key, v);
    else if (key == "sampler.scale_min") cfg.sampler.scale_min = cfg_double(key, v);
    else if (key == "sampler.scale_max") cfg.sampler.scale_max = cfg_double(key, v);
    else if (key == "sampler.num_targets") cfg.sampler.num_targets = cfg_int(key, v);
    else if (key == "sampler.short_target_pool") cfg.sampler.short_target_pool = cfg_bool(key, v);
    else if (key == "sampler.fixed_targets") cfg.sampler.fixed_targets = cfg_int_list(key, v);
    else if (key == "sampler.augment") cfg.sampler.augment = cfg_bool(key, v);
    else if (key == "model.in_channels") cfg.model.encoder.in_channels = cfg_int(key, v);
    else if (key == "model.feat_channels") cfg.model.encoder.feat_channels = cfg_int(key, v);
    else if (key == "model.num_blocks") cfg.model.encoder.num_blocks = cfg_int(key, v);
    else if (key == "model.spatial_channels") cfg.model.spatial_channels = cfg_int(key, v);
    else if (key == "model.spatial_hidden") cfg.model.spatial_hidden = cfg_int_list(key, v);
    else if (key == "model.temporal_hidden") cfg.model.temporal_hidden = cfg_int_list(key, v);
    else if (key == "model.decoder_hidden") cfg.model.decoder_hidden = cfg_int_list(key, v);
    else if (key == "model.dual_flow") cfg.model.dual_flow = cfg_bool(key, v);
    else if (key == "model.local_ensemble") cfg.model.local_ensemble = cfg_bool(key, v);
    else if (key == "model.cell_decode") cfg.model.cell_decode = cfg_bool(key, v);
    else if (key == "model.use_flow") cfg.model.flags.use_flow = cfg_bool(key, v);
    else if (key == "model.use_multiscale") cfg.model.flags.use_multiscale = cfg_bool(key, v);
    else if (key == "model.single_network") cfg.model.flags.single_network = cfg_bool(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

inline void apply_config(TrainConfig& cfg, const KvPairs& kv) {
    for (const auto& [k, v] : kv) apply_config_entry(cfg, k, v);
}

} // namespace ff
