#include "owodlab/image.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace owodlab {

namespace {

// Skips whitespace and '#' comment lines between header fields.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      while ((c = in.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
      return tok;
    }
  }
  throw std::runtime_error("ppm: truncated header");
}

}  // namespace

RasterImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("ppm: cannot open " + path);
  if (next_token(in) != "P6") throw std::runtime_error("ppm: not a P6 file: " + path);
  const std::size_t w = std::stoul(next_token(in));
  const std::size_t h = std::stoul(next_token(in));
  const std::size_t maxval = std::stoul(next_token(in));
  if (maxval != 255) throw std::runtime_error("ppm: only 8-bit maxval supported: " + path);
  RasterImage img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw std::runtime_error("ppm: truncated pixel data: " + path);
  return img;
}

void write_ppm(const RasterImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("ppm: cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw std::runtime_error("ppm: write failed: " + path);
}

}  // namespace owodlab
