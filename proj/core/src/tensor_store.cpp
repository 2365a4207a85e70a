#include "grapam/tensor_store.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace grapam {

namespace {

constexpr char kMagic[8] = {'G', 'R', 'A', 'P', 'A', 'M', 'C', '1'};
constexpr uint32_t kVersion = 1;
constexpr size_t kHeaderBytes = 32;
constexpr uint64_t kMaxTensorBytes = 1ull << 48;

// CRC32C (Castagnoli), reflected, table-driven.
const uint32_t* crc32c_table() {
  static uint32_t table[256];
  static bool init = [] {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1) ? (0x82F63B78u ^ (c >> 1)) : (c >> 1);
      table[i] = c;
    }
    return true;
  }();
  (void)init;
  return table;
}

void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}
void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}

  void need(size_t n, const char* what) {
    if (pos + n > buf.size())
      throw FormatError(std::string("truncated checkpoint file while reading ") + what);
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = uint16_t(uint8_t(buf[pos])) | uint16_t(uint8_t(buf[pos + 1])) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return uint8_t(buf[pos++]);
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

uint32_t crc32c(const void* data, size_t len) {
  const uint32_t* table = crc32c_table();
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i)
    crc = table[(crc ^ p[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

uint64_t shape_element_count(const std::vector<uint64_t>& shape) {
  uint64_t n = 1;
  for (uint64_t e : shape) n *= e;
  return n;
}

Tensor::Tensor(std::vector<uint64_t> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  if (shape_element_count(shape) != data.size())
    throw Error("tensor shape/data size mismatch");
}

Tensor Tensor::scalar(float v) {
  Tensor t;
  t.data = {v};
  return t;
}

uint64_t Tensor::element_count() const { return shape_element_count(shape); }

bool Tensor::same_schema(const Tensor& other) const {
  return dtype == other.dtype && shape == other.shape;
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (!same_schema(other)) return false;
  return std::memcmp(data.data(), other.data.data(), data.size() * sizeof(float)) == 0;
}

bool valid_param_name(const std::string& name) {
  if (name.empty()) return false;
  size_t i = 0;
  while (i < name.size()) {
    uint8_t c = uint8_t(name[i]);
    if (c < 0x20 || c == 0x7f) return false;
    size_t extra;
    if (c < 0x80) extra = 0;
    else if ((c & 0xE0) == 0xC0) extra = 1;
    else if ((c & 0xF0) == 0xE0) extra = 2;
    else if ((c & 0xF8) == 0xF0) extra = 3;
    else return false;
    if (i + extra >= name.size()) return false;
    for (size_t k = 1; k <= extra; ++k)
      if ((uint8_t(name[i + k]) & 0xC0) != 0x80) return false;
    i += extra + 1;
  }
  return true;
}

void Checkpoint::put(const std::string& name, Tensor t) {
  if (!valid_param_name(name))
    throw Error("invalid parameter name: \"" + name + "\"");
  if (shape_element_count(t.shape) != t.data.size())
    throw Error("tensor shape/data size mismatch for \"" + name + "\"");
  entries[name] = std::move(t);
}

const Tensor& Checkpoint::at(const std::string& name) const {
  auto it = entries.find(name);
  if (it == entries.end()) throw Error("no such parameter: \"" + name + "\"");
  return it->second;
}

bool Checkpoint::contains(const std::string& name) const {
  return entries.count(name) != 0;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& [k, v] : entries) out.push_back(k);
  return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string index;
  std::string data;

  // Index size is needed to compute absolute data offsets; lay it out twice.
  size_t index_bytes = 0;
  for (const auto& [name, t] : ckpt.entries) {
    if (name.size() > 0xFFFF) throw Error("parameter name too long: \"" + name + "\"");
    index_bytes += 2 + name.size() + 1 + 1 + 8 * t.shape.size() + 8 + 8 + 4;
  }
  size_t data_start = kHeaderBytes + index_bytes;
  // data region starts 8-byte aligned
  size_t aligned_start = (data_start + 7) & ~size_t(7);

  uint64_t offset = aligned_start;
  for (const auto& [name, t] : ckpt.entries) {
    uint64_t byte_len = t.data.size() * sizeof(float);
    if (byte_len >= kMaxTensorBytes)
      throw Error("tensor too large: \"" + name + "\"");
    put_u16(index, uint16_t(name.size()));
    index.append(name);
    index.push_back(char(uint8_t(t.dtype)));
    index.push_back(char(uint8_t(t.shape.size())));
    for (uint64_t e : t.shape) put_u64(index, e);
    put_u64(index, offset);
    put_u64(index, byte_len);
    put_u32(index, crc32c(t.data.data(), byte_len));

    size_t pad = offset - (aligned_start + data.size());
    data.append(pad, '\0');
    data.append(reinterpret_cast<const char*>(t.data.data()), byte_len);
    offset = (offset + byte_len + 7) & ~uint64_t(7);
  }

  std::string out;
  out.append(kMagic, 8);
  put_u32(out, kVersion);
  put_u32(out, uint32_t(ckpt.entries.size()));
  out.append(kHeaderBytes - out.size(), '\0');
  out.append(index);
  out.append(aligned_start - data_start, '\0');
  out.append(data);

  // Write to a temp file then rename so readers never see a partial file.
  std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp.string());
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw IoError("rename failed: " + target.string() + ": " + ec.message());

  // metadata lives in a sidecar; the binary format carries tensors only
  std::filesystem::path meta_path = target;
  meta_path += ".meta.json";
  if (!ckpt.meta.empty()) {
    std::string meta = nlohmann::json(ckpt.meta).dump();
    std::filesystem::path meta_tmp = meta_path;
    meta_tmp += ".tmp";
    std::ofstream mf(meta_tmp, std::ios::trunc);
    if (!mf) throw IoError("cannot write meta sidecar: " + meta_tmp.string());
    mf << meta;
    mf.close();
    std::filesystem::rename(meta_tmp, meta_path, ec);
    if (ec) throw IoError("rename failed: " + meta_path.string());
  } else {
    std::filesystem::remove(meta_path, ec);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < kHeaderBytes || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw FormatError("bad magic: not a GRAPAM-CKPT file: " + path);
  Reader r(buf);
  r.pos = 8;
  uint32_t version = r.u32("version");
  if (version != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  uint32_t count = r.u32("tensor count");
  r.pos = kHeaderBytes;

  struct Rec {
    std::string name;
    std::vector<uint64_t> shape;
    uint64_t offset, byte_len;
    uint32_t crc;
  };
  std::vector<Rec> recs;
  recs.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Rec rec;
    uint16_t name_len = r.u16("name length");
    rec.name = r.bytes(name_len, "name");
    uint8_t dtype_tag = r.u8("dtype");
    if (dtype_tag != 0)
      throw FormatError("unknown dtype tag for tensor \"" + rec.name + "\"");
    uint8_t rank = r.u8("rank");
    for (uint8_t k = 0; k < rank; ++k) rec.shape.push_back(r.u64("extent"));
    rec.offset = r.u64("offset");
    rec.byte_len = r.u64("byte length");
    rec.crc = r.u32("crc");
    recs.push_back(std::move(rec));
  }

  Checkpoint ckpt;
  for (const auto& rec : recs) {
    uint64_t want = shape_element_count(rec.shape) * sizeof(float);
    if (rec.byte_len != want)
      throw FormatError("byte length disagrees with shape for tensor \"" + rec.name + "\"");
    if (rec.offset + rec.byte_len > buf.size())
      throw FormatError("truncated file: tensor \"" + rec.name + "\" out of bounds");
    const char* p = buf.data() + rec.offset;
    if (crc32c(p, rec.byte_len) != rec.crc)
      throw FormatError("checksum mismatch for tensor \"" + rec.name + "\"");
    Tensor t;
    t.shape = rec.shape;
    t.data.resize(rec.byte_len / sizeof(float));
    std::memcpy(t.data.data(), p, rec.byte_len);
    ckpt.put(rec.name, std::move(t));
  }

  std::ifstream mf(path + ".meta.json");
  if (mf) {
    nlohmann::json j = nlohmann::json::parse(mf, nullptr, false);
    if (!j.is_discarded() && j.is_object())
      for (auto& [k, v] : j.items())
        if (v.is_string()) ckpt.meta[k] = v.get<std::string>();
  }
  return ckpt;
}

bool schema_equal(const Checkpoint& a, const Checkpoint& b) {
  if (a.entries.size() != b.entries.size()) return false;
  auto ia = a.entries.begin();
  auto ib = b.entries.begin();
  for (; ia != a.entries.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    if (!ia->second.same_schema(ib->second)) return false;
  }
  return true;
}

uint64_t content_hash(const Checkpoint& ckpt) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : ckpt.entries) {
    mix(name.data(), name.size());
    uint8_t sep = 0;
    mix(&sep, 1);
    uint8_t rank = uint8_t(t.shape.size());
    mix(&rank, 1);
    for (uint64_t e : t.shape) mix(&e, 8);
    mix(t.data.data(), t.data.size() * sizeof(float));
  }
  return h;
}

}  // namespace grapam
