#pragma once

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "vsocc/params.hpp"

namespace vsocc {

// Binary container formats. All integers little-endian; floats are IEEE-754
// binary64 written little-endian. Three magics:
//   "SSOCTEN1"  dense feature tensor: 5 x u32 dims (B,C,X,Y,Z), then payload
//   "SSOCLAB1"  label grid: 4 x u32 dims (B,X,Y,Z), then u8 labels
//   "SSOCCKP1"  checkpoint: named parameter tensors + embedded config text
// Readers validate magic, dimension sanity, and exact byte length, throwing
// ValidationError on anything malformed.

void write_tensor(const std::string& path, const DenseTensor& t);
DenseTensor read_tensor(const std::string& path);

void write_labels(const std::string& path, const OccupancyGrid& g);
OccupancyGrid read_labels(const std::string& path);

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<Real> value;
};

struct Checkpoint {
  std::uint64_t seed = 0;       // parameter-init seed of the saved store
  std::string config_text;      // effective config, verbatim
  std::vector<CheckpointEntry> entries;  // registration order
};

// Snapshot of a parameter store (values only; gradients are transient).
Checkpoint snapshot(const ModuleParams& params, const std::string& config_text);

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// Copies checkpoint values into an existing store. Entry set, shapes, and
// counts must match exactly in both directions; gradients are zeroed.
void load_into(ModuleParams& params, const Checkpoint& ckpt);

// FNV-1a 64-bit content digest, and its fixed-width hex form.
std::uint64_t fnv1a64(const void* data, std::size_t n);
std::uint64_t fnv1a64_file(const std::string& path);
std::string digest_hex(std::uint64_t h);

// Whole-file helpers (binary, exact; ValidationError on open/IO failure).
std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const void* data, std::size_t n);
std::string read_file_text(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);

}  // namespace vsocc
