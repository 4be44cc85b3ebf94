#include "lumia/image.hpp"

#include <cctype>
#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "lumia/error.hpp"

namespace lumia::bias {

GrayImage make_image(std::size_t width, std::size_t height, std::uint8_t fill) {
  return GrayImage{width, height, std::vector<std::uint8_t>(width * height, fill)};
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  std::size_t pos = 0;
  const auto fail = [&](const std::string& why) -> void {
    throw FormatError("PGM " + path.string() + ": " + why);
  };
  const auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  const auto number = [&]() -> std::size_t {
    skip_ws();
    std::size_t v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (++digits > 9) fail("header number too large");
    }
    if (digits == 0) fail("expected a number in header");
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("not a binary (P5) PGM");
  pos = 2;
  GrayImage img;
  img.width = number();
  img.height = number();
  const std::size_t maxval = number();
  if (maxval == 0 || maxval > 255) fail("only 8-bit PGM is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("missing separator after header");
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos < n) throw CorruptionError("PGM " + path.string() + " pixel data truncated", pos);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::lround(p * 255.0 / static_cast<double>(maxval)));
  }
  return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  detail::write_file(path, out);
}

std::vector<double> block_mean(const GrayImage& image, std::size_t out_w, std::size_t out_h) {
  if (image.pixels.size() != image.width * image.height) throw ValidationError("image pixel count does not match dims");
  if (out_w == 0 || out_h == 0 || out_w > image.width || out_h > image.height) {
    throw ValidationError("cannot downscale " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                          " to " + std::to_string(out_w) + "x" + std::to_string(out_h));
  }
  std::vector<double> out(out_w * out_h);
  for (std::size_t by = 0; by < out_h; ++by) {
    const std::size_t y0 = by * image.height / out_h;
    const std::size_t y1 = (by + 1) * image.height / out_h;
    for (std::size_t bx = 0; bx < out_w; ++bx) {
      const std::size_t x0 = bx * image.width / out_w;
      const std::size_t x1 = (bx + 1) * image.width / out_w;
      std::uint64_t sum = 0;
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) sum += image.at(x, y);
      }
      out[by * out_w + bx] = static_cast<double>(sum) / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return out;
}

GrayImage resize_block_mean(const GrayImage& image, std::size_t out_w, std::size_t out_h) {
  if (out_w == image.width && out_h == image.height) return image;
  const auto means = block_mean(image, out_w, out_h);
  GrayImage out = make_image(out_w, out_h);
  for (std::size_t i = 0; i < means.size(); ++i) out.pixels[i] = static_cast<std::uint8_t>(std::lround(means[i]));
  return out;
}

}  // namespace lumia::bias
