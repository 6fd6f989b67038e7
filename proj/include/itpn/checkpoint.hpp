#pragma once

// Binary bundle of named tensor groups.
//
//   magic    8 bytes  "ITPNCK1\0"
//   version  u32
//   groups   u32 count, then per group:
//     name     u32 length + bytes
//     tensors  u32 count, then per tensor:
//       name     u32 length + bytes
//       dtype    u8 (1 = f64)
//       rank     u8, then rank x u64 extents
//       payload  u64 byte count + raw values
//
// All integers and values are little-endian.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "itpn/layers.hpp"

namespace itpn {

class AdamW;
struct ItpnModel;
struct TeacherState;

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<Scalar> values;
};

struct CheckpointGroup {
  std::string name;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& tensor) const;
};

struct CheckpointBundle {
  std::uint32_t version = kCheckpointVersion;
  std::vector<CheckpointGroup> groups;

  const CheckpointGroup* find(const std::string& group) const;
  std::set<std::string> group_names() const;
};

CheckpointGroup make_group(const std::string& name, const ParamList& params);

std::string encode_checkpoint(const CheckpointBundle& bundle);
CheckpointBundle decode_checkpoint(const std::string& bytes);

// Written to a sibling temporary and renamed into place.
void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path);
// An empty selection keeps every group. Selecting a group the file lacks is a
// missing_tensor load error.
CheckpointBundle load_checkpoint(const std::filesystem::path& path, const std::set<std::string>& select = {});

// Copies every tensor of `group` into the matching live parameter. All names
// and shapes are checked first; on any mismatch nothing is written and the
// error lists every offending tensor.
void apply_group(const CheckpointGroup& group, const ParamList& live);

// Full bundle of a model; teacher and optimizer groups when given.
CheckpointBundle capture(const ItpnModel& model, const TeacherState* teacher = nullptr, const AdamW* optim = nullptr);

// Restores the selected groups. Every selected group is validated against the
// live objects before the first write.
void restore(const CheckpointBundle& bundle, const std::set<std::string>& select, ItpnModel& model,
             TeacherState* teacher = nullptr, AdamW* optim = nullptr);

// "backbone", "backbone,neck" or "all".
std::set<std::string> parse_load_groups(const std::string& text);

}  // namespace itpn
