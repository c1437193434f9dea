#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "json.hpp"
#include "maskdiff/denoiser.hpp"
#include "maskdiff/errors.hpp"

// Checkpoint layout: one line of JSON header, a newline, then the parameter
// vector as little-endian IEEE-754 doubles.
namespace maskdiff {

inline void write_checkpoint(std::ostream& os, const AnyDenoiser& den) {
  const auto dims = den.dims();
  nlohmann::json header = {{"kind", to_string(den.kind())},
                           {"vocab", dims.vocab},
                           {"length", dims.length},
                           {"hidden", dims.hidden},
                           {"seed", den.seed()},
                           {"count", den.num_params()}};
  os << header.dump() << '\n';
  for (double v : den.params()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    os.write(bytes, 8);
  }
  if (!os) throw FormatError("failed to write checkpoint");
}

inline AnyDenoiser read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("checkpoint: missing header", 1);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
    const auto kind = parse_denoiser_kind(header.at("kind").get<std::string>());
    const DenoiserDims dims{header.at("vocab").get<int>(), header.at("length").get<std::size_t>(),
                            header.at("hidden").get<std::size_t>()};
    AnyDenoiser den = init(kind, dims, header.at("seed").get<std::uint64_t>());
    if (header.at("count").get<std::size_t>() != den.num_params())
      throw FormatError("checkpoint: parameter count does not match dims", 1);
    for (double& v : den.params()) {
      unsigned char bytes[8];
      if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw FormatError("checkpoint: truncated parameter block");
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
      v = std::bit_cast<double>(bits);
    }
    return den;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what(), 1);
  } catch (const PreconditionError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what(), 1);
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const AnyDenoiser& den) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, den);
}

inline AnyDenoiser load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(is);
}

}  // namespace maskdiff
