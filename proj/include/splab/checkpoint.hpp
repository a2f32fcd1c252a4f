#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "splab/model.hpp"
#include "splab/tensor.hpp"

namespace splab {

/// One record of the "SPLB1" container. Names ending in ".mask" carry a u8
/// payload; all others carry f64.
struct ContainerRecord {
  std::string name;
  Shape extents;
  std::vector<double> f64;
  std::vector<std::uint8_t> u8;

  bool is_mask() const;
};

inline constexpr char kContainerMagic[] = "SPLB1";
inline constexpr std::uint32_t kContainerVersion = 1;

/// Layout, all little-endian: magic "SPLB1", version u32, then per record:
/// name length u16, name bytes, rank u8, extents u32 each, payload.
std::vector<std::uint8_t> encode_container(const std::vector<ContainerRecord>& records);
std::vector<ContainerRecord> decode_container(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path, const std::vector<ContainerRecord>& records);
std::vector<ContainerRecord> read_container(const std::filesystem::path& path);

/// Parameters, BN running statistics and, when present, masks as "<block>.mask".
std::vector<ContainerRecord> model_records(const Model& model);
/// Restores values, running stats and masks whose names match blocks of `model`.
void load_model_records(Model& model, const std::vector<ContainerRecord>& records);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
void load_checkpoint(const std::filesystem::path& path, Model& model);

}  // namespace splab
