#include "winnorm/wt4.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <vector>

namespace winnorm {

namespace {

constexpr std::array<char, 4> kMagic{'W', 'T', '4', '\0'};

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_wt4(std::ostream& os, const Tensor4<float>& t) {
  const Dims d = t.dims();
  for (std::size_t v : {d.n, d.c, d.h, d.w}) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw ShapeError("WT4 dims must fit in uint32: " + d.str());
  }
  std::vector<unsigned char> buf;
  buf.reserve(wt4_size(d));
  buf.insert(buf.end(), kMagic.begin(), kMagic.end());
  for (std::size_t v : {d.n, d.c, d.h, d.w}) put_u32(buf, static_cast<std::uint32_t>(v));
  for (float f : t.data()) put_u32(buf, std::bit_cast<std::uint32_t>(f));
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IntegrityError("failed writing WT4 stream");
}

Tensor4<float> read_wt4(std::istream& is) {
  std::array<unsigned char, 20> header{};
  is.read(reinterpret_cast<char*>(header.data()), header.size());
  if (is.gcount() != static_cast<std::streamsize>(header.size())) throw IntegrityError("truncated WT4 header");
  if (std::memcmp(header.data(), kMagic.data(), kMagic.size()) != 0) throw IntegrityError("bad WT4 magic");
  const Dims d{get_u32(header.data() + 4), get_u32(header.data() + 8), get_u32(header.data() + 12),
               get_u32(header.data() + 16)};
  std::vector<unsigned char> raw(4 * d.numel());
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (is.gcount() != static_cast<std::streamsize>(raw.size())) throw IntegrityError("truncated WT4 payload for " + d.str());
  std::vector<float> values(d.numel());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::bit_cast<float>(get_u32(raw.data() + 4 * i));
  return Tensor4<float>(d, std::move(values));
}

void save_wt4(const std::filesystem::path& path, const Tensor4<float>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IntegrityError("cannot open " + path.string() + " for writing");
  write_wt4(os, t);
}

Tensor4<float> load_wt4(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("cannot open " + path.string());
  return read_wt4(is);
}

}  // namespace winnorm
