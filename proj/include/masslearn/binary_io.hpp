#pragma once

// Little-endian binary containers shared by the dataset cache and the model
// checkpoint. Values are written in host byte order; every supported
// platform is little-endian.

#include "masslearn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace masslearn::io {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path);
  void bytes(const void* data, std::size_t n);
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void i32(std::int32_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void string(const std::string& s);
  // rank (u32), dims (u64 each), values (f64 each)
  void tensor(const Tensor& t);
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);
  void bytes(void* data, std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32();
  double f64();
  std::string string();
  Tensor tensor();
  std::uint64_t offset() const { return offset_; }
  bool at_end();

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t offset_ = 0;
};

}  // namespace masslearn::io
