#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace grapam {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

enum class Dtype : uint8_t { F32 = 0 };

/// Dense row-major tensor. Only f32 elements in checkpoint format v1.
struct Tensor {
  Dtype dtype = Dtype::F32;
  std::vector<uint64_t> shape;  // empty shape means scalar
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<uint64_t> shape_, std::vector<float> data_);
  static Tensor scalar(float v);

  uint64_t element_count() const;
  bool same_schema(const Tensor& other) const;
  bool bit_equal(const Tensor& other) const;
};

uint64_t shape_element_count(const std::vector<uint64_t>& shape);

/// Ordered named-tensor map. Iteration is lexicographic by name, which is
/// the canonical order for hashing, serialization and merging.
struct Checkpoint {
  std::map<std::string, Tensor> entries;
  std::map<std::string, std::string> meta;

  void put(const std::string& name, Tensor t);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  size_t size() const { return entries.size(); }
  std::vector<std::string> names() const;
};

/// Parameter names must be non-empty valid UTF-8 without control characters.
bool valid_param_name(const std::string& name);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// True iff key sets match and every shared key has identical dtype and shape.
bool schema_equal(const Checkpoint& a, const Checkpoint& b);

/// FNV-1a over names, shapes and raw element bits in canonical order.
/// Used for lineage and content addressing, not security.
uint64_t content_hash(const Checkpoint& ckpt);

uint32_t crc32c(const void* data, size_t len);

}  // namespace grapam
