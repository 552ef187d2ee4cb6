#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sparseattn/tensor.hpp"

namespace sparseattn {

/// Checkpoint container: "SACP", u32 version, a kind string, sorted key/value
/// metadata, then named tensors each stored in the SATN tensor format. All
/// strings are u32-length-prefixed.
struct Archive {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

void write_archive(std::ostream& out, const Archive& a);
Archive read_archive(std::istream& in);

// Round-trip exact decimal form of a double.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& what);
long parse_long(const std::string& s, const std::string& what);

}  // namespace sparseattn
