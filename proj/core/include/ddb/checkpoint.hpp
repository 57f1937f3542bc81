#pragma once

#include <string>
#include <vector>

#include "ddb/model.hpp"
#include "ddb/rng.hpp"
#include "ddb/tensor.hpp"

namespace ddb {

// On-disk container: 8-byte magic "DDBCKPT\0", u32 version, then
// length-prefixed records of (name, shape, f64 payload). Everything is
// little-endian regardless of host byte order.
struct NamedTensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

void write_record_file(const std::string& path,
                       const std::vector<NamedTensorRecord>& records);
std::vector<NamedTensorRecord> read_record_file(const std::string& path);

struct CheckpointMeta {
  int round = 0;
  int sequence = 0;  // monotone stage counter within a run
  std::string stage;
  uint64_t rng_seed = 0;
  uint64_t rng_stream = 0;
  uint64_t rng_counter = 0;
};

struct Checkpoint {
  SegModel model;
  CheckpointMeta meta;
};

void save_checkpoint(const std::string& path, const SegModel& model,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ddb
