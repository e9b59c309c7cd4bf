#include "capslab/image_io.hpp"

#include <cmath>
#include <fstream>

namespace capslab {

unsigned char quantize_unit_pixel(double v) {
  const double clipped = std::min(1.0, std::max(0.0, v));
  const double scaled = std::floor(clipped * 255.0 + 0.5);  // round half up
  return static_cast<unsigned char>(std::min(255.0, scaled));
}

void write_pgm(const std::string& path, const Tensor& image) {
  if (image.ndim() != 2) throw ShapeError("write_pgm", "expected [H,W], got " + shape_str(image.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write image " + path);
  os << "P5\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    const unsigned char b = quantize_unit_pixel(image[i]);
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!os) throw IoError("short write on image " + path);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw IoError("unsupported image format in " + path);
  std::int64_t w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  if (maxval != 255) throw IoError("unsupported max value in " + path);
  is.get();  // single whitespace after the header
  Tensor out = Tensor::uninit({h, w});
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    unsigned char b = 0;
    is.read(reinterpret_cast<char*>(&b), 1);
    out[i] = b / 255.0;
  }
  if (!is) throw IoError("truncated image " + path);
  return out;
}

void export_images(const AttackResult& result, const std::string& stem) {
  if (result.original.empty()) throw Error("export_images: result has no image data");
  write_pgm(stem + "_original.pgm", result.original);
  write_pgm(stem + "_adversarial.pgm", clip01_add(result.original, result.delta));

  // min-max rescale the perturbation so small deltas stay visible
  Tensor vis = Tensor::uninit(result.delta.shape());
  double lo = result.delta[0], hi = result.delta[0];
  for (std::int64_t i = 0; i < result.delta.numel(); ++i) {
    lo = std::min(lo, result.delta[i]);
    hi = std::max(hi, result.delta[i]);
  }
  const double span = hi - lo;
  for (std::int64_t i = 0; i < result.delta.numel(); ++i)
    vis[i] = span > 0.0 ? (result.delta[i] - lo) / span : 0.5;
  write_pgm(stem + "_perturbation.pgm", vis);
}

}  // namespace capslab
