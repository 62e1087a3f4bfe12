#include "mmpt/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mmpt {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'P', 'T', 'C', 'K', 'P', '1'};

void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(os, b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(os, b, 8);
}

void put_f64s(std::ostream& os, const std::vector<Real>& vs) {
    for (Real x : vs) {
        uint64_t bits;
        std::memcpy(&bits, &x, 8);
        put_u64(os, bits);
    }
}

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    put_bytes(os, s.data(), s.size());
}

void get_bytes(std::istream& is, void* p, size_t n, const std::string& path) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n) {
        throw DataError("checkpoint '" + path + "' is truncated");
    }
}

uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    get_bytes(is, b, 4, path);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is, const std::string& path) {
    unsigned char b[8];
    get_bytes(is, b, 8, path);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

std::vector<Real> get_f64s(std::istream& is, size_t n, const std::string& path) {
    std::vector<Real> out(n);
    for (size_t i = 0; i < n; ++i) {
        const uint64_t bits = get_u64(is, path);
        std::memcpy(&out[i], &bits, 8);
    }
    return out;
}

std::string get_string(std::istream& is, const std::string& path) {
    const uint32_t n = get_u32(is, path);
    if (n > (1u << 20)) throw DataError("checkpoint '" + path + "' has an oversized string");
    std::string s(n, '\0');
    if (n) get_bytes(is, s.data(), n, path);
    return s;
}

}  // namespace

void write_raw_checkpoint(const std::string& path, const RawCheckpoint& ckpt) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot open '" + tmp + "' for writing");
        put_bytes(os, kMagic, 8);
        put_u32(os, ckpt.opt ? 1u : 0u);
        put_u32(os, static_cast<uint32_t>(ckpt.grid_rows));
        put_u32(os, static_cast<uint32_t>(ckpt.grid_cols));
        put_u64(os, ckpt.params.size());
        for (const RawParam& p : ckpt.params) {
            put_string(os, p.name);
            const unsigned char frozen = p.frozen ? 1 : 0;
            put_bytes(os, &frozen, 1);
            put_u32(os, static_cast<uint32_t>(p.shape.size()));
            for (int64_t d : p.shape) put_u64(os, static_cast<uint64_t>(d));
            put_f64s(os, p.data);
        }
        if (ckpt.opt) {
            put_u64(os, ckpt.opt->step_count);
            put_u64(os, ckpt.opt->slots.size());
            for (const RawOptSlot& s : ckpt.opt->slots) {
                put_string(os, s.name);
                put_u64(os, s.m.size());
                put_f64s(os, s.m);
                put_f64s(os, s.v);
            }
        }
        if (!os) throw Error("write to '" + tmp + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

RawCheckpoint read_raw_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint '" + path + "'");
    char magic[8];
    get_bytes(is, magic, 8, path);
    if (std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("'" + path + "' is not a checkpoint file");
    }
    RawCheckpoint ckpt;
    const uint32_t flags = get_u32(is, path);
    ckpt.grid_rows = static_cast<int>(get_u32(is, path));
    ckpt.grid_cols = static_cast<int>(get_u32(is, path));
    const uint64_t count = get_u64(is, path);
    ckpt.params.resize(count);
    for (uint64_t i = 0; i < count; ++i) {
        RawParam& p = ckpt.params[i];
        p.name = get_string(is, path);
        unsigned char frozen = 0;
        get_bytes(is, &frozen, 1, path);
        p.frozen = frozen != 0;
        const uint32_t rank = get_u32(is, path);
        p.shape.resize(rank);
        for (uint32_t r = 0; r < rank; ++r) p.shape[r] = static_cast<int64_t>(get_u64(is, path));
        p.data = get_f64s(is, static_cast<size_t>(shape_numel(p.shape)), path);
    }
    if (flags & 1u) {
        RawOptState opt;
        opt.step_count = get_u64(is, path);
        const uint64_t slots = get_u64(is, path);
        opt.slots.resize(slots);
        for (uint64_t i = 0; i < slots; ++i) {
            RawOptSlot& s = opt.slots[i];
            s.name = get_string(is, path);
            const uint64_t n = get_u64(is, path);
            s.m = get_f64s(is, n, path);
            s.v = get_f64s(is, n, path);
        }
        ckpt.opt = std::move(opt);
    }
    return ckpt;
}

void save_checkpoint(const std::string& path, const ParamStore& params, int grid_rows,
                     int grid_cols, const AdamW* opt) {
    RawCheckpoint ckpt;
    ckpt.grid_rows = grid_rows;
    ckpt.grid_cols = grid_cols;
    for (const auto& up : params.all()) {
        ckpt.params.push_back({up->name, up->value.shape(), up->value.data(), up->frozen});
    }
    if (opt) {
        RawOptState state;
        state.step_count = opt->step_count();
        std::vector<std::string> names;
        for (const auto& [name, slot] : opt->slots()) names.push_back(name);
        std::sort(names.begin(), names.end());
        for (const std::string& name : names) {
            const AdamW::Slot& slot = opt->slots().at(name);
            state.slots.push_back({name, slot.m, slot.v});
        }
        ckpt.opt = std::move(state);
    }
    write_raw_checkpoint(path, ckpt);
}

void load_checkpoint(const std::string& path, ParamStore& params, AdamW* opt) {
    const RawCheckpoint ckpt = read_raw_checkpoint(path);
    if (ckpt.params.size() != params.size()) {
        throw ConfigError("checkpoint '" + path + "' holds " +
                          std::to_string(ckpt.params.size()) + " parameters, model has " +
                          std::to_string(params.size()));
    }
    for (const RawParam& p : ckpt.params) {
        Parameter* dst = params.find(p.name);
        if (!dst) throw ConfigError("checkpoint parameter '" + p.name + "' not in model");
        if (dst->value.shape() != p.shape) {
            throw ConfigError("parameter '" + p.name + "' has shape " +
                              shape_str(p.shape) + " in checkpoint, " +
                              shape_str(dst->value.shape()) + " in model");
        }
        if (dst->frozen != p.frozen) {
            throw ConfigError("parameter '" + p.name + "' frozen flag differs from checkpoint");
        }
        dst->value.mutable_data() = p.data;
    }
    if (opt) {
        if (ckpt.opt) {
            std::unordered_map<std::string, AdamW::Slot> slots;
            for (const RawOptSlot& s : ckpt.opt->slots) {
                if (!params.find(s.name)) {
                    throw ConfigError("optimizer state for unknown parameter '" + s.name + "'");
                }
                slots[s.name] = {s.m, s.v};
            }
            opt->set_state(ckpt.opt->step_count, std::move(slots));
        } else {
            opt->set_state(0, {});
        }
    }
}

void write_model_card(const std::string& path, const std::map<std::string, std::string>& kv) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw Error("cannot open '" + tmp + "' for writing");
        for (const auto& [k, v] : kv) os << k << " " << v << "\n";
    }
    std::filesystem::rename(tmp, path);
}

std::map<std::string, std::string> read_model_card(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open model card '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const size_t sp = line.find(' ');
        if (sp == std::string::npos) {
            throw DataError("model card '" + path + "': bad line '" + line + "'");
        }
        kv[line.substr(0, sp)] = line.substr(sp + 1);
    }
    return kv;
}

void require_card_match(const std::map<std::string, std::string>& expected,
                        const std::map<std::string, std::string>& found) {
    std::ostringstream bad;
    for (const auto& [k, v] : expected) {
        auto it = found.find(k);
        if (it == found.end()) {
            bad << " missing:" << k;
        } else if (it->second != v) {
            bad << " " << k << "='" << it->second << "' expected '" << v << "'";
        }
    }
    for (const auto& [k, v] : found) {
        if (!expected.count(k)) bad << " unexpected:" << k;
    }
    if (!bad.str().empty()) {
        throw ConfigError("model card mismatch:" + bad.str());
    }
}

}  // namespace mmpt
