#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fssd/optim.hpp"
#include "fssd/tensor.hpp"

namespace fssd {

// On-disk layout (little-endian):
//   magic "FSSD" | u32 version | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 rank | u32 dims[rank] | f32 values
//   trailing CRC32 over all preceding bytes
// Step counter, config hash and the full config JSON ride along as reserved
// tensor records under the "meta/" prefix.
struct TensorRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct Checkpoint {
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const;

  void set_step(int step);
  int step() const;
  void set_config_hash(std::uint32_t hash);
  std::uint32_t config_hash() const;
  void set_config_json(const std::string& json);
  std::string config_json() const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Throws on magic/version mismatch, truncation (naming the byte offset) or bad CRC.
Checkpoint load_checkpoint(const std::string& path);

// Capture named tensors (single precision). Optimizer velocities are stored as
// "optim/velocity/<param name>" so a resumed run continues the same trajectory.
Checkpoint snapshot_state(const std::vector<ParamRef>& params,
                          const std::vector<std::pair<std::string, Tensor>>& buffers,
                          const std::vector<std::vector<double>>* velocities = nullptr);

struct RestoreReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing_in_checkpoint;  // model tensors left at init
  std::vector<std::string> unmatched_in_checkpoint;
  std::vector<std::string> shape_mismatch;  // matched by name, skipped
};

// Partial, name-matched restore ("meta/" records ignored). `name_prefix` restricts
// which model tensors are touched (e.g. "backbone." for a warm start).
RestoreReport restore_state(const Checkpoint& ckpt, std::vector<ParamRef>& params,
                            std::vector<std::pair<std::string, Tensor>>& buffers,
                            std::vector<std::vector<double>>* velocities = nullptr,
                            const std::string& name_prefix = "");

// Round every value to its float32 representation in place. Saving quantizes live
// training state the same way, so a resumed run and an uninterrupted one that
// passed through the same save agree bitwise.
void quantize_to_f32(std::vector<ParamRef>& params,
                     std::vector<std::pair<std::string, Tensor>>* buffers = nullptr,
                     std::vector<std::vector<double>>* velocities = nullptr);

}  // namespace fssd
