#include "dpt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dpt {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'T', 'K'};
constexpr uint32_t kVersion = 1;

void put_u16(std::ostream& os, uint16_t v) {
  char b[2] = {char(v & 0xff), char((v >> 8) & 0xff)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  os.write(b, 4);
}

void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

uint16_t get_u16(std::istream& is, const std::string& origin) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  DPT_CHECK(is.good(), origin << ": truncated while reading u16");
  return uint16_t(b[0] | (uint16_t(b[1]) << 8));
}

uint32_t get_u32(std::istream& is, const std::string& origin) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  DPT_CHECK(is.good(), origin << ": truncated while reading u32");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

}  // namespace

void write_records(std::ostream& os, const std::vector<Parameter>& records) {
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, uint32_t(records.size()));
  for (const Parameter& p : records) {
    DPT_CHECK(p.tensor.defined(), "write_records: undefined tensor for '" << p.name << "'");
    DPT_CHECK(p.name.size() <= 0xffff, "write_records: name too long: '" << p.name << "'");
    const Shape& s = p.tensor.shape();
    DPT_CHECK(s.size() <= 0xff, "write_records: rank too large for '" << p.name << "'");
    put_u16(os, uint16_t(p.name.size()));
    os.write(p.name.data(), std::streamsize(p.name.size()));
    os.put(char(s.size()));
    for (size_t d : s) put_u32(os, uint32_t(d));
    const double* data = p.tensor.data();
    for (size_t i = 0; i < p.tensor.numel(); ++i) put_f32(os, float(data[i]));
  }
}

std::vector<Parameter> read_records(std::istream& is, const std::string& origin) {
  char magic[4];
  is.read(magic, 4);
  DPT_CHECK(is.good() && std::memcmp(magic, kMagic, 4) == 0,
            origin << ": bad magic, not a DPTK record file");
  uint32_t version = get_u32(is, origin);
  DPT_CHECK(version == kVersion, origin << ": unsupported version " << version);
  uint32_t count = get_u32(is, origin);

  std::vector<Parameter> out;
  out.reserve(count);
  for (uint32_t r = 0; r < count; ++r) {
    uint16_t name_len = get_u16(is, origin);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    DPT_CHECK(is.good(), origin << ": truncated while reading record name");
    int rank = is.get();
    DPT_CHECK(rank != EOF, origin << ": truncated while reading rank of '" << name << "'");
    Shape shape(static_cast<size_t>(rank));
    for (size_t i = 0; i < shape.size(); ++i) shape[i] = get_u32(is, origin);
    size_t n = shape_numel(shape);
    std::vector<double> data(n);
    for (size_t i = 0; i < n; ++i) {
      uint32_t bits = get_u32(is, origin + ": payload of '" + name + "'");
      float f;
      std::memcpy(&f, &bits, 4);
      data[i] = double(f);
    }
    out.push_back(Parameter{std::move(name), Tensor::from_data(std::move(shape), std::move(data))});
  }
  return out;
}

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params) {
  std::ofstream os(path, std::ios::binary);
  DPT_CHECK(os.good(), "save_checkpoint: cannot open '" << path << "' for writing");
  write_records(os, params);
  DPT_CHECK(os.good(), "save_checkpoint: write to '" << path << "' failed");
}

void load_checkpoint(const std::string& path, std::vector<Parameter>& params) {
  std::ifstream is(path, std::ios::binary);
  DPT_CHECK(is.good(), "load_checkpoint: cannot open '" << path << "'");
  std::vector<Parameter> records = read_records(is, path);

  std::map<std::string, Parameter*> by_name;
  for (Parameter& r : records) {
    DPT_CHECK(by_name.emplace(r.name, &r).second,
              path << ": duplicate record '" << r.name << "'");
  }
  for (Parameter& p : params) {
    auto it = by_name.find(p.name);
    DPT_CHECK(it != by_name.end(), path << ": missing parameter '" << p.name << "'");
    const Tensor& src = it->second->tensor;
    DPT_CHECK(src.shape() == p.tensor.shape(),
              path << ": parameter '" << p.name << "' has shape " << shape_str(src.shape())
                   << ", expected " << shape_str(p.tensor.shape()));
    std::copy_n(src.data(), src.numel(), p.tensor.data());
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    std::ostringstream os;
    os << path << ": file contains " << by_name.size() << " unexpected record(s):";
    for (auto& [name, _] : by_name) os << " '" << name << "'";
    fail(os.str());
  }
}

}  // namespace dpt
