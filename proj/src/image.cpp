#include "fetrack/image.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

namespace fetrack {
namespace {

// Reads the next header token, skipping whitespace and '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

std::int64_t header_int(std::istream& in, const std::string& path, const char* what) {
  const std::string tok = next_token(in);
  std::int64_t v = 0;
  try {
    std::size_t used = 0;
    v = std::stoll(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
  } catch (const std::exception&) {
    throw IoError(path + ": bad pixmap " + what);
  }
  return v;
}

}  // namespace

DenseArray<double> read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  const std::string magic = next_token(in);
  std::int64_t c = 0;
  if (magic == "P5") c = 1;
  else if (magic == "P6") c = 3;
  else throw IoError(path + ": not a raw P5/P6 pixmap");
  const std::int64_t w = header_int(in, path, "width");
  const std::int64_t h = header_int(in, path, "height");
  const std::int64_t maxval = header_int(in, path, "maxval");
  if (w <= 0 || h <= 0) throw IoError(path + ": bad pixmap size");
  if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
  // The maxval is followed by exactly one whitespace byte, then raw samples.
  std::vector<unsigned char> raw(static_cast<std::size_t>(h * w * c));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw IoError(path + ": truncated pixel data");
  DenseArray<double> img({h, w, c});
  for (std::int64_t i = 0; i < h * w * c; ++i)
    img.data()[i] = double(raw[static_cast<std::size_t>(i)]) / 255.0;
  return img;
}

void write_image(const std::string& path, const DenseArray<double>& img) {
  FETRACK_CHECK_DIM(img.ndim() == 3, "write_image: want (H, W, C)");
  const std::int64_t h = img.extent(0), w = img.extent(1), c = img.extent(2);
  FETRACK_CHECK_DIM(c == 1 || c == 3, "write_image: want 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(h * w * c));
  for (std::int64_t i = 0; i < h * w * c; ++i) {
    const double v = std::min(std::max(img.data()[i], 0.0), 1.0);
    raw[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace fetrack
