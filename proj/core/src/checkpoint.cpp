#include "ddb/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "ddb/errors.hpp"

namespace ddb {

namespace {

constexpr char kMagic[8] = {'D', 'D', 'B', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  const uint64_t bits = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  std::ifstream in;
  std::string path;

  void need(char* dst, size_t n) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) {
      throw FormatError("truncated checkpoint: " + path);
    }
  }

  bool at_eof() { return in.peek() == std::ifstream::traits_type::eof(); }

  uint32_t u32() {
    char b[4];
    need(b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(b[i])) << (8 * i);
    return v;
  }

  double f64() {
    char b[8];
    need(b, 8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<uint8_t>(b[i])) << (8 * i);
    return std::bit_cast<double>(bits);
  }
};

constexpr uint32_t kMaxName = 1 << 16;
constexpr uint32_t kMaxRank = 8;
constexpr uint64_t kMaxElements = uint64_t{1} << 28;

}  // namespace

void write_record_file(const std::string& path,
                       const std::vector<NamedTensorRecord>& records) {
  std::string buf(kMagic, sizeof kMagic);
  put_u32(buf, kVersion);
  for (const NamedTensorRecord& r : records) {
    put_u32(buf, static_cast<uint32_t>(r.name.size()));
    buf += r.name;
    put_u32(buf, static_cast<uint32_t>(r.shape.size()));
    uint64_t count = 1;
    for (int d : r.shape) {
      put_u32(buf, static_cast<uint32_t>(d));
      count *= static_cast<uint64_t>(d);
    }
    if (count != r.data.size()) {
      throw std::invalid_argument("record shape does not match payload: " + r.name);
    }
    for (double v : r.data) put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

std::vector<NamedTensorRecord> read_record_file(const std::string& path) {
  Reader r{std::ifstream(path, std::ios::binary), path};
  if (!r.in) throw FormatError("cannot open: " + path);
  char magic[8];
  r.need(magic, 8);
  if (!std::equal(magic, magic + 8, kMagic)) {
    throw FormatError("bad checkpoint magic: " + path);
  }
  if (r.u32() != kVersion) throw FormatError("unsupported checkpoint version: " + path);

  std::vector<NamedTensorRecord> records;
  while (!r.at_eof()) {
    NamedTensorRecord rec;
    const uint32_t name_len = r.u32();
    if (name_len > kMaxName) throw FormatError("oversized record name: " + path);
    rec.name.resize(name_len);
    r.need(rec.name.data(), name_len);
    const uint32_t rank = r.u32();
    if (rank > kMaxRank) throw FormatError("oversized record rank: " + path);
    uint64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint32_t d = r.u32();
      if (d == 0 || count * d > kMaxElements) {
        throw FormatError("bad record shape: " + path);
      }
      rec.shape.push_back(static_cast<int>(d));
      count *= d;
    }
    rec.data.resize(count);
    for (uint64_t i = 0; i < count; ++i) rec.data[i] = r.f64();
    records.push_back(std::move(rec));
  }
  return records;
}

namespace {

std::vector<double> pack_u64(std::initializer_list<uint64_t> values) {
  std::vector<double> out;
  for (uint64_t v : values) {
    out.push_back(static_cast<double>(v >> 32));
    out.push_back(static_cast<double>(v & 0xffffffffu));
  }
  return out;
}

uint64_t unpack_u64(const std::vector<double>& v, size_t i) {
  return (static_cast<uint64_t>(v[2 * i]) << 32) | static_cast<uint64_t>(v[2 * i + 1]);
}

}  // namespace

void save_checkpoint(const std::string& path, const SegModel& model,
                     const CheckpointMeta& meta) {
  std::vector<NamedTensorRecord> records;

  const ArchDescriptor& arch = model.arch();
  NamedTensorRecord arch_rec;
  arch_rec.name = "__meta.arch";
  arch_rec.data = {static_cast<double>(arch.in_channels),
                   static_cast<double>(arch.blocks.size())};
  for (const ConvBlockSpec& b : arch.blocks) {
    arch_rec.data.push_back(static_cast<double>(b.out_channels));
    arch_rec.data.push_back(static_cast<double>(b.kernel));
    arch_rec.data.push_back(static_cast<double>(b.stride));
  }
  arch_rec.shape = {static_cast<int>(arch_rec.data.size())};
  records.push_back(std::move(arch_rec));

  records.push_back({"__meta.counts",
                     {3},
                     {static_cast<double>(model.num_classes()),
                      static_cast<double>(meta.round),
                      static_cast<double>(meta.sequence)}});
  records.push_back({"__meta.rng",
                     {6},
                     pack_u64({meta.rng_seed, meta.rng_stream, meta.rng_counter})});

  NamedTensorRecord stage;
  stage.name = "__meta.stage";
  for (char c : meta.stage) stage.data.push_back(static_cast<double>(static_cast<uint8_t>(c)));
  stage.shape = {static_cast<int>(std::max<size_t>(stage.data.size(), 1))};
  if (stage.data.empty()) stage.data.push_back(0.0);
  records.push_back(std::move(stage));

  for (const auto& [name, tensor] : model.params()) {
    records.push_back({name, tensor.shape(), tensor.raw()});
  }
  write_record_file(path, records);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<NamedTensorRecord> records = read_record_file(path);
  auto find = [&](const std::string& name) -> const NamedTensorRecord& {
    for (const NamedTensorRecord& r : records) {
      if (r.name == name) return r;
    }
    throw FormatError("checkpoint missing record '" + name + "': " + path);
  };

  const NamedTensorRecord& arch_rec = find("__meta.arch");
  if (arch_rec.data.size() < 2) throw FormatError("bad arch record: " + path);
  ArchDescriptor arch;
  arch.in_channels = static_cast<int>(arch_rec.data[0]);
  const size_t nblocks = static_cast<size_t>(arch_rec.data[1]);
  if (arch_rec.data.size() != 2 + 3 * nblocks) {
    throw FormatError("bad arch record: " + path);
  }
  arch.blocks.clear();
  for (size_t i = 0; i < nblocks; ++i) {
    arch.blocks.push_back({static_cast<int>(arch_rec.data[2 + 3 * i]),
                           static_cast<int>(arch_rec.data[3 + 3 * i]),
                           static_cast<int>(arch_rec.data[4 + 3 * i])});
  }

  const NamedTensorRecord& counts = find("__meta.counts");
  if (counts.data.size() != 3) throw FormatError("bad counts record: " + path);
  const NamedTensorRecord& rng = find("__meta.rng");
  if (rng.data.size() != 6) throw FormatError("bad rng record: " + path);
  const NamedTensorRecord& stage = find("__meta.stage");

  Checkpoint out;
  out.meta.round = static_cast<int>(counts.data[1]);
  out.meta.sequence = static_cast<int>(counts.data[2]);
  out.meta.rng_seed = unpack_u64(rng.data, 0);
  out.meta.rng_stream = unpack_u64(rng.data, 1);
  out.meta.rng_counter = unpack_u64(rng.data, 2);
  for (double v : stage.data) {
    if (v != 0.0) out.meta.stage.push_back(static_cast<char>(static_cast<uint8_t>(v)));
  }

  RngState scratch(0);
  out.model = SegModel(arch, static_cast<int>(counts.data[0]), scratch);
  for (auto& [name, tensor] : out.model.params()) {
    const NamedTensorRecord& rec = find(name);
    if (rec.shape != tensor.shape()) {
      throw FormatError("checkpoint shape mismatch for '" + name + "': " + path);
    }
    std::copy(rec.data.begin(), rec.data.end(), tensor.raw().begin());
  }
  return out;
}

}  // namespace ddb
