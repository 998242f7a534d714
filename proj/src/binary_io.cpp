#include "masslearn/binary_io.hpp"

#include <stdexcept>

namespace masslearn::io {

namespace {

constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint64_t kMaxString = 1u << 20;

}  // namespace

Writer::Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
}

void Writer::bytes(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out_) throw std::runtime_error("write failed on '" + path_.string() + "'");
}

void Writer::string(const std::string& s) {
  u64(s.size());
  bytes(s.data(), s.size());
}

void Writer::tensor(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) u64(d);
  bytes(t.data().data(), t.size() * sizeof(double));
}

void Writer::close() {
  out_.close();
  if (!out_) throw std::runtime_error("closing '" + path_.string() + "' failed");
}

Reader::Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
}

void Reader::bytes(void* data, std::size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) {
    throw std::runtime_error("'" + path_.string() + "' is truncated at byte offset " +
                             std::to_string(offset_ + static_cast<std::uint64_t>(in_.gcount())) +
                             " (needed " + std::to_string(n) + " bytes from offset " +
                             std::to_string(offset_) + ")");
  }
  offset_ += n;
}

std::uint32_t Reader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}

std::uint64_t Reader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return v;
}

std::int32_t Reader::i32() {
  std::int32_t v;
  bytes(&v, sizeof v);
  return v;
}

double Reader::f64() {
  double v;
  bytes(&v, sizeof v);
  return v;
}

std::string Reader::string() {
  const std::uint64_t n = u64();
  if (n > kMaxString) {
    throw std::runtime_error("'" + path_.string() + "': implausible string length at byte offset " +
                             std::to_string(offset_ - 8));
  }
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

Tensor Reader::tensor() {
  const std::uint32_t rank = u32();
  if (rank > kMaxRank) {
    throw std::runtime_error("'" + path_.string() + "': implausible tensor rank at byte offset " +
                             std::to_string(offset_ - 4));
  }
  Shape shape(rank);
  for (auto& d : shape) d = u64();
  std::vector<double> values(shape_size(shape));
  bytes(values.data(), values.size() * sizeof(double));
  return Tensor(std::move(shape), std::move(values));
}

bool Reader::at_end() { return in_.peek() == std::char_traits<char>::eof(); }

}  // namespace masslearn::io
