#include "tinygrpo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace tinygrpo {
namespace {

// Distinct magics so a policy snapshot can't be mistaken for a full
// training checkpoint (or vice versa) from the first eight bytes.
constexpr char kParamsMagic[8] = {'T', 'G', 'P', 'O', 'L', 'I', 'C', '1'};
constexpr char kCkptMagic[8] = {'T', 'G', 'T', 'R', 'A', 'I', 'N', '1'};

void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw std::runtime_error("checkpoint write failed");
}

void get_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw std::runtime_error("checkpoint truncated or unreadable");
}

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(os, b, 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    get_bytes(is, b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(os, b, 8);
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    get_bytes(is, b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_f64_vec(std::ostream& os, const std::vector<double>& v) {
    for (double d : v) put_u64(os, std::bit_cast<uint64_t>(d));
}

void get_f64_vec(std::istream& is, std::vector<double>& v, size_t n) {
    v.resize(n);
    for (size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(get_u64(is));
}

struct TensorShapes {
    size_t emb, w1, b1, w2, b2;
};

TensorShapes shapes_of(const PolicyConfig& c) {
    const size_t V = c.vocab_size, d = c.embed_dim, W = c.window, h = c.hidden_dim;
    return {(V + 1) * d, W * d * h, h, h * V, V};
}

void check_shapes(const PolicyParams& p, const char* what) {
    TensorShapes s = shapes_of(p.cfg);
    if (p.t.embedding.size() != s.emb || p.t.w1.size() != s.w1 ||
        p.t.b1.size() != s.b1 || p.t.w2.size() != s.w2 || p.t.b2.size() != s.b2)
        throw std::invalid_argument(std::string(what) +
                                    ": tensor shapes do not match config");
}

void put_tensors(std::ostream& os, const ParamTensors& t) {
    put_f64_vec(os, t.embedding);
    put_f64_vec(os, t.w1);
    put_f64_vec(os, t.b1);
    put_f64_vec(os, t.w2);
    put_f64_vec(os, t.b2);
}

ParamTensors get_tensors(std::istream& is, const PolicyConfig& cfg) {
    TensorShapes s = shapes_of(cfg);
    ParamTensors t;
    get_f64_vec(is, t.embedding, s.emb);
    get_f64_vec(is, t.w1, s.w1);
    get_f64_vec(is, t.b1, s.b1);
    get_f64_vec(is, t.w2, s.w2);
    get_f64_vec(is, t.b2, s.b2);
    return t;
}

} // namespace

void save_params(std::ostream& os, const PolicyParams& params) {
    check_shapes(params, "save_params");
    put_bytes(os, kParamsMagic, 8);
    put_u32(os, static_cast<uint32_t>(params.cfg.vocab_size));
    put_u32(os, static_cast<uint32_t>(params.cfg.embed_dim));
    put_u32(os, static_cast<uint32_t>(params.cfg.window));
    put_u32(os, static_cast<uint32_t>(params.cfg.hidden_dim));
    put_u32(os, static_cast<uint32_t>(params.cfg.eos_id));
    put_u32(os, static_cast<uint32_t>(params.cfg.vocab_size)); // pad index
    put_tensors(os, params.t);
}

PolicyParams load_params(std::istream& is) {
    char magic[8];
    get_bytes(is, magic, 8);
    if (std::memcmp(magic, kParamsMagic, 8) != 0)
        throw std::runtime_error("not a policy snapshot (bad magic)");
    PolicyConfig cfg;
    cfg.vocab_size = static_cast<int>(get_u32(is));
    cfg.embed_dim = static_cast<int>(get_u32(is));
    cfg.window = static_cast<int>(get_u32(is));
    cfg.hidden_dim = static_cast<int>(get_u32(is));
    cfg.eos_id = static_cast<TokenId>(get_u32(is));
    const uint32_t pad = get_u32(is);
    if (cfg.vocab_size <= 0 || cfg.embed_dim <= 0 || cfg.window <= 0 ||
        cfg.hidden_dim <= 0)
        throw std::runtime_error("policy snapshot: invalid dimensions");
    if (pad != static_cast<uint32_t>(cfg.vocab_size))
        throw std::runtime_error("policy snapshot: pad index != vocab size");
    if (cfg.eos_id < 0 || cfg.eos_id >= cfg.vocab_size)
        throw std::runtime_error("policy snapshot: eos id out of range");
    PolicyParams p;
    p.cfg = cfg;
    p.t = get_tensors(is, cfg);
    return p;
}

void save_params_file(const std::string& path, const PolicyParams& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    save_params(os, params);
    os.flush();
    if (!os) throw std::runtime_error("write failed: " + path);
}

PolicyParams load_params_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return load_params(is);
}

void save_checkpoint(std::ostream& os, const TrainerCheckpoint& ckpt) {
    check_shapes(ckpt.theta, "save_checkpoint (theta)");
    check_shapes(ckpt.ref, "save_checkpoint (ref)");
    if (!(ckpt.ref.cfg == ckpt.theta.cfg))
        throw std::invalid_argument("save_checkpoint: theta/ref config mismatch");
    if (!same_shape(ckpt.opt.m, ckpt.theta.t) || !same_shape(ckpt.opt.v, ckpt.theta.t))
        throw std::invalid_argument(
            "save_checkpoint: optimizer moments do not match theta");
    put_bytes(os, kCkptMagic, 8);
    put_u64(os, ckpt.master_seed);
    put_u32(os, ckpt.stage_index);
    put_u64(os, ckpt.step_in_stage);
    put_u32(os, ckpt.entropy_enabled ? 1u : 0u);
    save_params(os, ckpt.theta);
    save_params(os, ckpt.ref);
    put_u64(os, ckpt.opt.step);
    put_tensors(os, ckpt.opt.m);
    put_tensors(os, ckpt.opt.v);
}

TrainerCheckpoint load_checkpoint(std::istream& is) {
    char magic[8];
    get_bytes(is, magic, 8);
    if (std::memcmp(magic, kCkptMagic, 8) != 0)
        throw std::runtime_error("not a training checkpoint (bad magic)");
    TrainerCheckpoint c;
    c.master_seed = get_u64(is);
    c.stage_index = get_u32(is);
    c.step_in_stage = get_u64(is);
    c.entropy_enabled = get_u32(is) != 0;
    c.theta = load_params(is);
    c.ref = load_params(is);
    if (!(c.ref.cfg == c.theta.cfg))
        throw std::runtime_error("training checkpoint: theta/ref config mismatch");
    c.opt.step = get_u64(is);
    c.opt.m = get_tensors(is, c.theta.cfg);
    c.opt.v = get_tensors(is, c.theta.cfg);
    return c;
}

void save_checkpoint_file(const std::string& path, const TrainerCheckpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    save_checkpoint(os, ckpt);
    os.flush();
    if (!os) throw std::runtime_error("write failed: " + path);
}

TrainerCheckpoint load_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return load_checkpoint(is);
}

} // namespace tinygrpo
