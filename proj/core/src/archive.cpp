#include "sparseattn/archive.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>

#include "sparseattn/errors.hpp"

namespace sparseattn {

namespace {

constexpr std::array<char, 4> kArchiveMagic = {'S', 'A', 'C', 'P'};

void write_string(std::ostream& out, const std::string& s) {
  detail::write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const std::uint32_t n = detail::read_u32(in);
  if (n > (1u << 24)) throw DataError("archive string too long");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw DataError("unexpected end of archive");
  return s;
}

}  // namespace

const Tensor& Archive::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw DataError("checkpoint is missing tensor '" + name + "'");
}

void write_archive(std::ostream& out, const Archive& a) {
  out.write(kArchiveMagic.data(), kArchiveMagic.size());
  detail::write_u32(out, Archive::kVersion);
  write_string(out, a.kind);
  detail::write_u32(out, static_cast<std::uint32_t>(a.meta.size()));
  for (const auto& [k, v] : a.meta) {
    write_string(out, k);
    write_string(out, v);
  }
  detail::write_u32(out, static_cast<std::uint32_t>(a.tensors.size()));
  for (const auto& [name, t] : a.tensors) {
    write_string(out, name);
    write_tensor(out, t);
  }
  if (!out) throw DataError("failed writing checkpoint");
}

Archive read_archive(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kArchiveMagic) {
    throw DataError("not a checkpoint (bad magic)");
  }
  const std::uint32_t version = detail::read_u32(in);
  if (version != Archive::kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  Archive a;
  a.kind = read_string(in);
  const std::uint32_t meta = detail::read_u32(in);
  for (std::uint32_t i = 0; i < meta; ++i) {
    std::string k = read_string(in);
    a.meta[k] = read_string(in);
  }
  const std::uint32_t count = detail::read_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(in);
    a.tensors.emplace_back(std::move(name), read_tensor(in));
  }
  return a;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw Error("format_double failed");
  return std::string(buf.data(), end);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw ConfigError("invalid number '" + s + "' for " + what);
  }
  return v;
}

long parse_long(const std::string& s, const std::string& what) {
  long v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw ConfigError("invalid integer '" + s + "' for " + what);
  }
  return v;
}

}  // namespace sparseattn
