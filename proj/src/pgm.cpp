#include "dircr/pgm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "dircr/errors.hpp"

namespace dircr::pgm {

void write(const std::filesystem::path& path, const Image& img) {
  if (img.width < 1 || img.height < 1 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height)) {
    throw ConfigError("pgm: pixel count does not match " + std::to_string(img.width) + "x" +
                      std::to_string(img.height));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("cannot write " + path.string());
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string token(const std::string& s, std::size_t& pos) {
  while (pos < s.size()) {
    if (s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(s[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  return s.substr(start, pos - start);
}

int number(const std::string& s, std::size_t& pos, const std::filesystem::path& path) {
  const std::string t = token(s, pos);
  try {
    std::size_t used = 0;
    const int v = std::stoi(t, &used);
    if (used == t.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw FormatError(path.string() + ": bad PGM header field '" + t + "'");
}

}  // namespace

Image read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), {}};
  std::size_t pos = 0;
  if (token(bytes, pos) != "P5") throw FormatError(path.string() + " is not a binary PGM");
  Image img;
  img.width = number(bytes, pos, path);
  img.height = number(bytes, pos, path);
  if (number(bytes, pos, path) != 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  if (bytes.size() < pos + n) throw FormatError(path.string() + ": raster is short");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

}  // namespace dircr::pgm
