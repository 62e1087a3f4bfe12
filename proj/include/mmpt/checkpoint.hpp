#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmpt/optim.hpp"
#include "mmpt/param.hpp"

namespace mmpt {

// Binary checkpoint layout (all integers little-endian):
//   magic "MMPTCKP1"
//   u32  flags (bit 0: optimizer state present)
//   u32  grid_rows, u32 grid_cols (vision positional grid)
//   u64  parameter count
//   per parameter: u32 name length, name bytes, u8 frozen,
//                  u32 rank, u64 dims[rank], f64 values[numel]
//   optimizer state: u64 step count, u64 slot count,
//                  per slot: u32 name length, name bytes, u64 n, f64 m[n], f64 v[n]

struct RawParam {
    std::string name;
    Shape shape;
    std::vector<Real> data;
    bool frozen = false;
};

struct RawOptSlot {
    std::string name;
    std::vector<Real> m;
    std::vector<Real> v;
};

struct RawOptState {
    uint64_t step_count = 0;
    std::vector<RawOptSlot> slots;
};

struct RawCheckpoint {
    int grid_rows = 0;
    int grid_cols = 0;
    std::vector<RawParam> params;
    std::optional<RawOptState> opt;
};

// Writes are atomic: a temp file is renamed over the target.
void write_raw_checkpoint(const std::string& path, const RawCheckpoint& ckpt);
RawCheckpoint read_raw_checkpoint(const std::string& path);

void save_checkpoint(const std::string& path, const ParamStore& params, int grid_rows,
                     int grid_cols, const AdamW* opt = nullptr);
// Restores parameter values into an already-built store. The file must carry
// exactly the store's parameters with matching shapes and frozen flags.
void load_checkpoint(const std::string& path, ParamStore& params, AdamW* opt = nullptr);

// Model card: a "key value" text file describing the configuration a
// checkpoint was built with, so a reload can refuse a mismatched model.
void write_model_card(const std::string& path, const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> read_model_card(const std::string& path);
// Throws ConfigError naming every differing key.
void require_card_match(const std::map<std::string, std::string>& expected,
                        const std::map<std::string, std::string>& found);

}  // namespace mmpt
