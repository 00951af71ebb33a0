#include "fetrack/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fetrack/errors.hpp"

namespace fetrack {

namespace {

constexpr char kMagic[4] = {'F', 'E', 'T', 'W'};

void put_u16(std::ostream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint16_t get_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const NamedTensor& nt : entries) {
    if (nt.name.size() > 0xffff) throw ConfigError("parameter name too long: " + nt.name);
    put_u16(out, static_cast<std::uint16_t>(nt.name.size()));
    out.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    const Shape& shape = nt.tensor.shape();
    out.put(static_cast<char>(shape.size()));
    for (std::int64_t d : shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : nt.tensor.data()) put_f64(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

std::map<std::string, CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("bad checkpoint magic in " + path.string());
  }
  const std::uint32_t count = get_u32(in);
  std::map<std::string, CheckpointEntry> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = get_u16(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const int rank = in.get();
    if (rank < 0) throw ParseError("truncated checkpoint " + path.string());
    CheckpointEntry entry;
    std::int64_t numel = 1;
    for (int r = 0; r < rank; ++r) {
      const std::uint32_t d = get_u32(in);
      entry.shape.push_back(static_cast<std::int64_t>(d));
      numel *= d;
    }
    entry.data.resize(static_cast<std::size_t>(numel));
    for (double& v : entry.data) v = get_f64(in);
    if (!in) throw ParseError("truncated checkpoint " + path.string());
    out.emplace(std::move(name), std::move(entry));
  }
  return out;
}

void load_state(Module& module, const std::filesystem::path& path) {
  const auto entries = load_checkpoint(path);
  auto state = module.named_state();
  if (entries.size() != state.size()) {
    throw DataError("checkpoint " + path.string() + " holds " + std::to_string(entries.size()) +
                    " entries, model expects " + std::to_string(state.size()));
  }
  for (NamedTensor& nt : state) {
    auto it = entries.find(nt.name);
    if (it == entries.end()) throw DataError("checkpoint missing entry " + nt.name);
    if (it->second.shape != nt.tensor.shape()) {
      throw DataError("checkpoint entry " + nt.name + " has shape " +
                      shape_str(it->second.shape) + ", model expects " +
                      shape_str(nt.tensor.shape()));
    }
    auto dst = nt.tensor.data();
    std::copy(it->second.data.begin(), it->second.data.end(), dst.begin());
  }
}

}  // namespace fetrack
