#include "dcnet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "dcnet/errors.hpp"

namespace dcnet::io {

namespace {

void write_pnm(const std::filesystem::path& path, const Tensor& image, std::int64_t channels, const char* magic) {
  if (image.rank() != 3 || image.dim(0) != channels) {
    throw InvalidArgument("netpbm writer expects [" + std::to_string(channels) + ",H,W], got " +
                          shape_str(image.shape()));
  }
  const std::int64_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << magic << '\n' << w << ' ' << h << "\n255\n";
  const auto d = image.data();
  std::string row;
  for (std::int64_t y = 0; y < h; ++y) {
    row.clear();
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < channels; ++c) {
        const double v = std::clamp(d[static_cast<std::size_t>((c * h + y) * w + x)], 0.0, 1.0);
        row.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

std::int64_t read_int(std::istream& in) {
  in >> std::ws;
  while (in.peek() == '#') {
    std::string skip;
    std::getline(in, skip);
    in >> std::ws;
  }
  std::int64_t v = -1;
  if (!(in >> v)) throw ConfigError("malformed netpbm header");
  return v;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& image) { write_pnm(path, image, 3, "P6"); }
void write_pgm(const std::filesystem::path& path, const Tensor& image) { write_pnm(path, image, 1, "P5"); }

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  std::int64_t channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw ConfigError("not a binary netpbm file: " + path.string());
  const std::int64_t w = read_int(in), h = read_int(in), maxval = read_int(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw ConfigError("unsupported netpbm dimensions or depth");
  in.get();
  std::string bytes(static_cast<std::size_t>(w * h * channels), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ConfigError("truncated netpbm file");
  std::vector<double> v(bytes.size());
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < channels; ++c)
        v[static_cast<std::size_t>((c * h + y) * w + x)] =
            static_cast<unsigned char>(bytes[static_cast<std::size_t>((y * w + x) * channels + c)]) / 255.0;
  return Tensor(Shape{channels, h, w}, std::move(v));
}

}  // namespace dcnet::io
