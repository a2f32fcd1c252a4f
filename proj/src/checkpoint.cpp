#include "splab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "splab/error.hpp"

namespace splab {

bool ContainerRecord::is_mask() const {
  constexpr std::string_view suffix = ".mask";
  return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  bool done() const { return pos_ == b_.size(); }
  std::size_t pos() const { return pos_; }

  template <typename T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) throw FormatError(std::string("truncated container while reading ") + what, pos_);
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_container(const std::vector<ContainerRecord>& records) {
  std::vector<std::uint8_t> out(kContainerMagic, kContainerMagic + 5);
  put_le<std::uint32_t>(out, kContainerVersion);
  for (const auto& r : records) {
    if (r.name.size() > 0xFFFF) throw ArgumentError("record name too long: " + r.name.substr(0, 32));
    if (r.extents.size() > 0xFF) throw ArgumentError("record rank too large");
    const std::size_t n = shape_numel(r.extents);
    if (r.is_mask() ? r.u8.size() != n : r.f64.size() != n)
      throw ArgumentError("record '" + r.name + "' payload does not match its extents");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<std::uint8_t>(r.extents.size()));
    for (auto e : r.extents) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    if (r.is_mask()) {
      out.insert(out.end(), r.u8.begin(), r.u8.end());
    } else {
      for (double v : r.f64) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

std::vector<ContainerRecord> decode_container(const std::vector<std::uint8_t>& bytes) {
  Reader rd(bytes);
  if (rd.get_str(5, "magic") != std::string(kContainerMagic, 5)) throw FormatError("bad container magic", 0);
  const auto version = rd.get_le<std::uint32_t>("version");
  if (version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(version), 5);
  std::vector<ContainerRecord> out;
  while (!rd.done()) {
    ContainerRecord r;
    const auto len = rd.get_le<std::uint16_t>("name length");
    r.name = rd.get_str(len, "name");
    const auto rank = rd.get_le<std::uint8_t>("rank");
    for (std::uint8_t i = 0; i < rank; ++i) r.extents.push_back(rd.get_le<std::uint32_t>("extent"));
    const std::size_t n = shape_numel(r.extents);
    if (r.is_mask()) {
      rd.need(n, "mask payload");
      for (std::size_t i = 0; i < n; ++i) r.u8.push_back(rd.get_le<std::uint8_t>("mask payload"));
    } else {
      rd.need(n * 8, "f64 payload");
      r.f64.reserve(n);
      for (std::size_t i = 0; i < n; ++i) r.f64.push_back(std::bit_cast<double>(rd.get_le<std::uint64_t>("f64 payload")));
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_container(const std::filesystem::path& path, const std::vector<ContainerRecord>& records) {
  const auto bytes = encode_container(records);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<ContainerRecord> read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

std::vector<ContainerRecord> model_records(const Model& model) {
  std::vector<ContainerRecord> out;
  for (const auto& b : model.blocks()) {
    out.push_back({.name = b.name, .extents = b.value.shape(), .f64 = b.value.values(), .u8 = {}});
    if (!b.mask.empty()) out.push_back({.name = b.name + ".mask", .extents = b.value.shape(), .f64 = {}, .u8 = b.mask});
  }
  for (const auto& [group, rs] : model.running_stats()) {
    out.push_back({.name = group + ".running_mean", .extents = rs.mean.shape(), .f64 = rs.mean.values(), .u8 = {}});
    out.push_back({.name = group + ".running_var", .extents = rs.var.shape(), .f64 = rs.var.values(), .u8 = {}});
  }
  return out;
}

void load_model_records(Model& model, const std::vector<ContainerRecord>& records) {
  auto& stats = model.running_stats();
  for (const auto& r : records) {
    if (r.is_mask()) {
      ParamBlock& b = model.block(r.name.substr(0, r.name.size() - 5));
      if (r.extents != b.value.shape()) throw ArgumentError("mask '" + r.name + "' is incongruent with its block");
      b.mask = r.u8;
      continue;
    }
    if (auto i = model.find_block(r.name)) {
      ParamBlock& b = model.blocks()[*i];
      if (r.extents != b.value.shape()) throw ArgumentError("record '" + r.name + "' has shape " + shape_str(r.extents));
      b.value = Tensor(r.extents, r.f64);
      continue;
    }
    for (const char* suffix : {".running_mean", ".running_var"}) {
      const std::string s = suffix;
      if (r.name.size() > s.size() && r.name.ends_with(s)) {
        auto it = stats.find(r.name.substr(0, r.name.size() - s.size()));
        if (it == stats.end()) break;
        Tensor& t = s == ".running_mean" ? it->second.mean : it->second.var;
        if (r.extents != t.shape()) throw ArgumentError("record '" + r.name + "' has shape " + shape_str(r.extents));
        t = Tensor(r.extents, r.f64);
      }
    }
  }
  for (auto& b : model.blocks())
    for (std::size_t i = 0; i < b.value.size(); ++i)
      if (b.masked(i)) {
        b.value[i] = 0.0;
        b.momentum[i] = 0.0;
      }
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  write_container(path, model_records(model));
}

void load_checkpoint(const std::filesystem::path& path, Model& model) {
  load_model_records(model, read_container(path));
}

}  // namespace splab
