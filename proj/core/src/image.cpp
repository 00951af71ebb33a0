#include "fetrack/image.hpp"

#include <cstdio>
#include <fstream>

#include "fetrack/errors.hpp"

namespace fetrack {

namespace {

// Skips whitespace and '#' comments in a PGM header.
int next_header_int(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c)) throw ParseError("bad PGM header in " + path);
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}

}  // namespace

Image8 read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') throw ParseError("not a binary PGM: " + path.string());
  const int w = next_header_int(in, path.string());
  const int h = next_header_int(in, path.string());
  const int maxval = next_header_int(in, path.string());
  if (maxval != 255) throw ParseError("unsupported PGM maxval in " + path.string());
  Image8 img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw ParseError("truncated PGM data in " + path.string());
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Image8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void write_ppm(const std::filesystem::path& path, int width, int height,
               const std::vector<Rgb>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size() * 3));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace fetrack
