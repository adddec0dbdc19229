#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "nn.hpp"
#include "renderer.hpp"
#include "rng.hpp"

namespace ff {

static_assert(std::endian::native == std::endian::little,
              "checkpoint files are little-endian; big-endian hosts need byte swapping");

// Binary checkpoint, all integers and floats little-endian:
//   magic   4 bytes "FFCK"
//   version u32 (currently 1)
//   config  u32 count, then count x { u32 klen, key, u32 vlen, value }
//   params  u32 count, then count x { u32 nlen, name, u32 rank, rank x i64 dims, f64 x numel }
//   trainer u8 flag; when 1:
//             i64 iter, i64 adam_step, f64 beta1, f64 beta2, f64 adam_eps,
//             u32 count (== param count), count x { u64 n, f64 x n m, f64 x n v },
//             u32 rng_len, rng state bytes
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

struct ByteWriter {
    std::string buf;
    void raw(const void* p, size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u32(uint32_t v) { raw(&v, 4); }
    void i64(int64_t v) { raw(&v, 8); }
    void u64(uint64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
};

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;
    std::string what;
    void raw(void* p, size_t n) {
        if (pos + n > buf.size()) throw DataError(what + ": truncated checkpoint");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
    int64_t i64() { int64_t v; raw(&v, 8); return v; }
    uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
    double f64() { double v; raw(&v, 8); return v; }
    std::string str() {
        const uint32_t n = u32();
        if (pos + n > buf.size()) throw DataError(what + ": truncated checkpoint");
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
    bool done() const { return pos == buf.size(); }
};

inline std::string join_dims(const std::vector<int64_t>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::vector<int64_t> split_dims(const std::string& s, const std::string& key) {
    std::vector<int64_t> out;
    size_t start = 0;
    while (start <= s.size()) {
        const size_t c = s.find(',', start);
        const std::string tok = s.substr(start, c == std::string::npos ? c : c - start);
        if (tok.empty()) throw DataError("checkpoint header: empty entry in list '" + key + "'");
        size_t used = 0;
        int64_t v = 0;
        try {
            v = std::stoll(tok, &used);
        } catch (const std::exception&) {
            throw DataError("checkpoint header: bad integer '" + tok + "' in '" + key + "'");
        }
        if (used != tok.size())
            throw DataError("checkpoint header: bad integer '" + tok + "' in '" + key + "'");
        out.push_back(v);
        if (c == std::string::npos) break;
        start = c + 1;
    }
    return out;
}

} // namespace detail

inline std::vector<std::pair<std::string, std::string>> model_config_to_kv(const ModelConfig& cfg) {
    auto b = [](bool v) { return std::string(v ? "1" : "0"); };
    return {
        {"cell_decode", b(cfg.cell_decode)},
        {"decoder_hidden", detail::join_dims(cfg.decoder_hidden)},
        {"dual_flow", b(cfg.dual_flow)},
        {"feat_channels", std::to_string(cfg.encoder.feat_channels)},
        {"in_channels", std::to_string(cfg.encoder.in_channels)},
        {"local_ensemble", b(cfg.local_ensemble)},
        {"num_blocks", std::to_string(cfg.encoder.num_blocks)},
        {"single_network", b(cfg.flags.single_network)},
        {"spatial_channels", std::to_string(cfg.spatial_channels)},
        {"spatial_hidden", detail::join_dims(cfg.spatial_hidden)},
        {"temporal_hidden", detail::join_dims(cfg.temporal_hidden)},
        {"use_flow", b(cfg.flags.use_flow)},
        {"use_multiscale", b(cfg.flags.use_multiscale)},
    };
}

inline ModelConfig model_config_from_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
    ModelConfig cfg;
    auto as_int = [](const std::string& k, const std::string& v) {
        const auto d = detail::split_dims(v, k);
        if (d.size() != 1) throw DataError("checkpoint header: '" + k + "' is not a single integer");
        return d[0];
    };
    auto as_bool = [&](const std::string& k, const std::string& v) {
        if (v == "0") return false;
        if (v == "1") return true;
        throw DataError("checkpoint header: '" + k + "' must be 0 or 1, got '" + v + "'");
    };
    for (const auto& [k, v] : kv) {
        if (k == "cell_decode") cfg.cell_decode = as_bool(k, v);
        else if (k == "decoder_hidden") cfg.decoder_hidden = detail::split_dims(v, k);
        else if (k == "dual_flow") cfg.dual_flow = as_bool(k, v);
        else if (k == "feat_channels") cfg.encoder.feat_channels = as_int(k, v);
        else if (k == "in_channels") cfg.encoder.in_channels = as_int(k, v);
        else if (k == "local_ensemble") cfg.local_ensemble = as_bool(k, v);
        else if (k == "num_blocks") cfg.encoder.num_blocks = as_int(k, v);
        else if (k == "single_network") cfg.flags.single_network = as_bool(k, v);
        else if (k == "spatial_channels") cfg.spatial_channels = as_int(k, v);
        else if (k == "spatial_hidden") cfg.spatial_hidden = detail::split_dims(v, k);
        else if (k == "temporal_hidden") cfg.temporal_hidden = detail::split_dims(v, k);
        else if (k == "use_flow") cfg.flags.use_flow = as_bool(k, v);
        else if (k == "use_multiscale") cfg.flags.use_multiscale = as_bool(k, v);
        else throw DataError("checkpoint header: unknown config key '" + k + "'");
    }
    return cfg;
}

template <class T = double>
struct TrainerStateT {
    int64_t iter = 0;
    AdamStateT<T> adam;
    std::string rng_state;
};

template <class T>
void save_checkpoint(const std::string& path, const ModelT<T>& model,
                     const TrainerStateT<T>* trainer = nullptr) {
    detail::ByteWriter w;
    w.raw("FFCK", 4);
    w.u32(kCheckpointVersion);

    const auto kv = model_config_to_kv(model.cfg);
    w.u32(static_cast<uint32_t>(kv.size()));
    for (const auto& [k, v] : kv) {
        w.str(k);
        w.str(v);
    }

    const auto params = model.params();
    w.u32(static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
        w.str(p.name);
        const auto& shape = p.tensor.shape();
        w.u32(static_cast<uint32_t>(shape.size()));
        for (int64_t d : shape) w.i64(d);
        for (T v : p.tensor.values()) w.f64(static_cast<double>(v));
    }

    if (trainer) {
        const uint8_t one = 1;
        w.raw(&one, 1);
        w.i64(trainer->iter);
        w.i64(trainer->adam.step);
        w.f64(static_cast<double>(trainer->adam.beta1));
        w.f64(static_cast<double>(trainer->adam.beta2));
        w.f64(static_cast<double>(trainer->adam.eps));
        if (!trainer->adam.m.empty() && trainer->adam.m.size() != params.size())
            throw UsageError("save_checkpoint: optimizer tracks " +
                             std::to_string(trainer->adam.m.size()) + " params, model has " +
                             std::to_string(params.size()));
        w.u32(static_cast<uint32_t>(trainer->adam.m.size()));
        for (size_t p = 0; p < trainer->adam.m.size(); ++p) {
            w.u64(trainer->adam.m[p].size());
            for (T v : trainer->adam.m[p]) w.f64(static_cast<double>(v));
            for (T v : trainer->adam.v[p]) w.f64(static_cast<double>(v));
        }
        w.str(trainer->rng_state);
    } else {
        const uint8_t zero = 0;
        w.raw(&zero, 1);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("save_checkpoint: cannot open '" + path + "' for writing");
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!out) throw DataError("save_checkpoint: write to '" + path + "' failed");
}

template <class T = double>
ModelT<T> load_checkpoint(const std::string& path, TrainerStateT<T>* trainer = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    detail::ByteReader r{buf, 0, "load_checkpoint('" + path + "')"};
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, "FFCK", 4) != 0)
        throw DataError(r.what + ": bad magic, not a checkpoint file");
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError(r.what + ": format version " + std::to_string(version) + ", expected " +
                        std::to_string(kCheckpointVersion));

    std::vector<std::pair<std::string, std::string>> kv(r.u32());
    for (auto& [k, v] : kv) {
        k = r.str();
        v = r.str();
    }
    const ModelConfig cfg = model_config_from_kv(kv);

    Rng init_rng(0); // initialization is discarded; every value is overwritten below
    ModelT<T> model = ModelT<T>::make(cfg, init_rng);
    auto params = model.params();

    const uint32_t np = r.u32();
    if (np != params.size())
        throw DataError(r.what + ": " + std::to_string(np) + " stored params, model wants " +
                        std::to_string(params.size()));
    for (auto& p : params) {
        const std::string name = r.str();
        if (name != p.name)
            throw DataError(r.what + ": stored param '" + name + "' where '" + p.name + "' expected");
        std::vector<int64_t> shape(r.u32());
        for (auto& d : shape) d = r.i64();
        if (shape != p.tensor.shape())
            throw DataError(r.what + ": shape mismatch for '" + name + "'");
        for (T& v : p.tensor.values()) v = static_cast<T>(r.f64());
    }

    uint8_t has_trainer = 0;
    r.raw(&has_trainer, 1);
    if (has_trainer != 0 && has_trainer != 1)
        throw DataError(r.what + ": corrupt trainer-state flag");
    if (has_trainer) {
        TrainerStateT<T> ts;
        ts.iter = r.i64();
        ts.adam.step = r.i64();
        ts.adam.beta1 = static_cast<T>(r.f64());
        ts.adam.beta2 = static_cast<T>(r.f64());
        ts.adam.eps = static_cast<T>(r.f64());
        const uint32_t nm = r.u32();
        if (nm != 0 && nm != params.size())
            throw DataError(r.what + ": optimizer state for " + std::to_string(nm) +
                            " params, model has " + std::to_string(params.size()));
        ts.adam.m.resize(nm);
        ts.adam.v.resize(nm);
        for (uint32_t p = 0; p < nm; ++p) {
            const uint64_t n = r.u64();
            if (n != static_cast<uint64_t>(params[p].tensor.size()))
                throw DataError(r.what + ": optimizer moment size mismatch for '" + params[p].name + "'");
            ts.adam.m[p].resize(n);
            ts.adam.v[p].resize(n);
            for (auto& v : ts.adam.m[p]) v = static_cast<T>(r.f64());
            for (auto& v : ts.adam.v[p]) v = static_cast<T>(r.f64());
        }
        ts.rng_state = r.str();
        if (trainer) *trainer = std::move(ts);
    } else if (trainer) {
        throw DataError(r.what + ": no trainer state stored, cannot resume");
    }
    if (!r.done()) throw DataError(r.what + ": trailing bytes after checkpoint payload");
    return model;
}

} // namespace ff
