#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "prefopt/io.hpp"
#include "prefopt/model.hpp"

namespace prefopt {

// Checkpoint layout, all integers little-endian:
//   magic "DNAC", format version u32,
//   tensor count u32,
//   per tensor: name length u32, name bytes, rank u32, dims u32 each,
//   then the weight arrays as little-endian doubles in manifest order.
// The first manifest entry is "meta.config": vocab_size, d_model, n_layers,
// n_heads, max_seq_len, init_seed hi/lo stored as doubles so the model can
// be reconstructed from the file alone.

namespace detail {

constexpr uint32_t checkpoint_version = 1;
constexpr char checkpoint_magic[4] = {'D', 'N', 'A', 'C'};

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& data;
    size_t pos = 0;
    const std::string& path;

    void require(size_t n) const {
        if (pos + n > data.size()) throw ParseError("truncated checkpoint: " + path);
    }
    uint32_t u32() {
        require(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(data[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        require(8);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<unsigned char>(data[pos++])) << (8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(size_t n) {
        require(n);
        std::string s = data.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace detail

inline std::string serialize_checkpoint(const ModelParameters& p) {
    using namespace detail;
    const auto& cfg = p.config;
    std::vector<std::pair<std::string, std::vector<int>>> manifest;
    manifest.push_back({"meta.config", {7}});
    auto named = p.named();
    for (auto& [name, t] : named) manifest.push_back({name, t->shape});

    std::string out;
    out.append(checkpoint_magic, 4);
    put_u32(out, checkpoint_version);
    put_u32(out, static_cast<uint32_t>(manifest.size()));
    for (auto& [name, shape] : manifest) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.append(name);
        put_u32(out, static_cast<uint32_t>(shape.size()));
        for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
    }
    put_f64(out, static_cast<double>(cfg.vocab_size));
    put_f64(out, static_cast<double>(cfg.d_model));
    put_f64(out, static_cast<double>(cfg.n_layers));
    put_f64(out, static_cast<double>(cfg.n_heads));
    put_f64(out, static_cast<double>(cfg.max_seq_len));
    put_f64(out, static_cast<double>(cfg.init_seed >> 32));
    put_f64(out, static_cast<double>(cfg.init_seed & 0xffffffffull));
    for (auto& [name, t] : named) {
        for (double v : t->values) put_f64(out, v);
    }
    return out;
}

inline void save_checkpoint(const ModelParameters& p, const std::string& path) {
    atomic_write_file(path, serialize_checkpoint(p));
}

inline ModelParameters load_checkpoint(const std::string& path) {
    using namespace detail;
    std::string data = read_file_text(path);
    Reader r{data, 0, path};
    if (r.bytes(4) != std::string(checkpoint_magic, 4)) {
        throw ParseError("bad checkpoint magic in " + path);
    }
    uint32_t version = r.u32();
    if (version != checkpoint_version) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    }
    uint32_t count = r.u32();
    std::vector<std::pair<std::string, std::vector<int>>> manifest;
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u32());
        uint32_t rank = r.u32();
        std::vector<int> shape;
        for (uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.u32()));
        manifest.push_back({std::move(name), std::move(shape)});
    }
    if (manifest.empty() || manifest[0].first != "meta.config" || manifest[0].second != std::vector<int>{7}) {
        throw ParseError("checkpoint missing meta.config entry: " + path);
    }

    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(r.f64());
    cfg.d_model = static_cast<int>(r.f64());
    cfg.n_layers = static_cast<int>(r.f64());
    cfg.n_heads = static_cast<int>(r.f64());
    cfg.max_seq_len = static_cast<int>(r.f64());
    uint64_t hi = static_cast<uint64_t>(r.f64());
    uint64_t lo = static_cast<uint64_t>(r.f64());
    cfg.init_seed = (hi << 32) | lo;
    cfg.validate();

    // Rebuild the skeleton, then overwrite weights in manifest order while
    // checking names and shapes.
    ModelParameters p = init_model(cfg);
    auto named = p.named();
    if (named.size() + 1 != manifest.size()) {
        throw ParseError("checkpoint manifest has " + std::to_string(manifest.size() - 1) +
                         " weight tensors, expected " + std::to_string(named.size()) + ": " + path);
    }
    for (size_t i = 0; i < named.size(); ++i) {
        auto& [want_name, tensor] = named[i];
        auto& [got_name, got_shape] = manifest[i + 1];
        if (got_name != want_name || got_shape != tensor->shape) {
            throw ParseError("checkpoint manifest mismatch at entry " + std::to_string(i + 1) + " (" +
                             got_name + "): " + path);
        }
        for (double& v : tensor->values) v = r.f64();
        tensor->zero_grad();
    }
    if (r.pos != data.size()) throw ParseError("trailing bytes in checkpoint: " + path);
    return p;
}

} // namespace prefopt
