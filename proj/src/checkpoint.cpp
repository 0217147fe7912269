#include "vlac/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vlac {

namespace {

void put_u64_le(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32_le(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const std::string& buf, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[off + i])) << (8 * i);
  return v;
}

uint32_t get_u32_le(const std::string& buf, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[off + i])) << (8 * i);
  return v;
}

size_t dtype_width(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64" || dtype == "u64") return 8;
  throw std::runtime_error("checkpoint: unknown dtype '" + dtype + "'");
}

std::string shape_csv(const Shape& s) {
  std::ostringstream os;
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  return os.str();
}

Shape parse_shape(const std::string& csv) {
  Shape s;
  if (csv.empty()) return s;
  std::istringstream is(csv);
  std::string part;
  while (std::getline(is, part, ',')) s.push_back(std::stoll(part));
  return s;
}

}  // namespace

void Checkpoint::put_array(const std::string& name, const Array& a, Precision p) {
  if (has(name)) throw std::logic_error("checkpoint: duplicate entry '" + name + "'");
  CheckpointEntry e;
  e.dtype = p == Precision::f32 ? "f32" : "f64";
  e.shape = a.shape;
  e.f64 = a.data;
  if (p == Precision::f32)
    for (double& v : e.f64) v = static_cast<double>(static_cast<float>(v));
  order_.push_back(name);
  entries_.emplace(name, std::move(e));
}

void Checkpoint::put_u64(const std::string& name, std::vector<uint64_t> v) {
  if (has(name)) throw std::logic_error("checkpoint: duplicate entry '" + name + "'");
  CheckpointEntry e;
  e.dtype = "u64";
  e.shape = {static_cast<int64_t>(v.size())};
  e.u64 = std::move(v);
  order_.push_back(name);
  entries_.emplace(name, std::move(e));
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("checkpoint: no entry '" + name + "'");
  return it->second;
}

Array Checkpoint::get_array(const std::string& name) const {
  const CheckpointEntry& e = entry(name);
  if (e.dtype == "u64")
    throw std::runtime_error("checkpoint: entry '" + name + "' is u64, not an array");
  return Array(e.shape, e.f64);
}

std::vector<uint64_t> Checkpoint::get_u64(const std::string& name) const {
  const CheckpointEntry& e = entry(name);
  if (e.dtype != "u64")
    throw std::runtime_error("checkpoint: entry '" + name + "' is " + e.dtype + ", not u64");
  return e.u64;
}

void Checkpoint::save(const std::string& prefix) const {
  std::string blob;
  std::ostringstream manifest;
  for (const std::string& name : order_) {
    const CheckpointEntry& e = entries_.at(name);
    manifest << name << '\t' << e.dtype << '\t' << blob.size() << '\t' << shape_csv(e.shape)
             << '\n';
    if (e.dtype == "u64") {
      for (uint64_t v : e.u64) put_u64_le(blob, v);
    } else if (e.dtype == "f32") {
      for (double v : e.f64)
        put_u32_le(blob, std::bit_cast<uint32_t>(static_cast<float>(v)));
    } else {
      for (double v : e.f64) put_u64_le(blob, std::bit_cast<uint64_t>(v));
    }
  }
  std::ofstream mf(prefix + ".manifest", std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write '" + prefix + ".manifest'");
  mf << manifest.str();
  std::ofstream bf(prefix + ".blob", std::ios::binary | std::ios::trunc);
  if (!bf) throw std::runtime_error("cannot write '" + prefix + ".blob'");
  bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!mf.good() || !bf.good()) throw std::runtime_error("short checkpoint write to '" + prefix + "'");
}

Checkpoint Checkpoint::load(const std::string& prefix) {
  std::ifstream mf(prefix + ".manifest");
  if (!mf) throw std::runtime_error("cannot read '" + prefix + ".manifest'");
  std::ifstream bf(prefix + ".blob", std::ios::binary);
  if (!bf) throw std::runtime_error("cannot read '" + prefix + ".blob'");
  std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

  Checkpoint ck;
  std::string line;
  int lineno = 0;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    for (size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        fields.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (fields.size() != 4)
      throw std::runtime_error("checkpoint manifest '" + prefix + ".manifest' line " +
                               std::to_string(lineno) + ": expected 4 fields");
    CheckpointEntry e;
    e.dtype = fields[1];
    e.shape = parse_shape(fields[3]);
    const size_t offset = std::stoull(fields[2]);
    const size_t width = dtype_width(e.dtype);
    const size_t count = static_cast<size_t>(numel(e.shape));
    if (offset + count * width > blob.size())
      throw std::runtime_error("checkpoint blob '" + prefix + ".blob' truncated at entry '" +
                               fields[0] + "' (need " + std::to_string(offset + count * width) +
                               " bytes, have " + std::to_string(blob.size()) + ")");
    if (e.dtype == "u64") {
      e.u64.resize(count);
      for (size_t i = 0; i < count; ++i) e.u64[i] = get_u64_le(blob, offset + 8 * i);
    } else if (e.dtype == "f32") {
      e.f64.resize(count);
      for (size_t i = 0; i < count; ++i)
        e.f64[i] = static_cast<double>(std::bit_cast<float>(get_u32_le(blob, offset + 4 * i)));
    } else {
      e.f64.resize(count);
      for (size_t i = 0; i < count; ++i)
        e.f64[i] = std::bit_cast<double>(get_u64_le(blob, offset + 8 * i));
    }
    if (ck.has(fields[0]))
      throw std::runtime_error("checkpoint manifest: duplicate entry '" + fields[0] + "'");
    ck.order_.push_back(fields[0]);
    ck.entries_.emplace(fields[0], std::move(e));
  }
  return ck;
}

}  // namespace vlac
