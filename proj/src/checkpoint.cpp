#include "capslab/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "capslab/capsnet.hpp"
#include "capslab/convnet.hpp"

namespace capslab {
namespace {

constexpr char kMagic[5] = {'C', 'F', 'M', 'L', '1'};

void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 4);
}

void put_i64(std::ostream& os, std::int64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(static_cast<std::uint64_t>(v) >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 8);
}

std::uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::int64_t get_i64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<std::int64_t>(v);
}

}  // namespace

void save_checkpoint(TrainableModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path);
  os.write(kMagic, 5);
  const std::uint8_t kind = model.kind() == "convnet" ? 0 : 1;
  os.write(reinterpret_cast<const char*>(&kind), 1);
  const std::string cfg = model.config_json();
  put_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto blocks = model.state_blocks();
  put_u32(os, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, tensor] : blocks) {
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const std::uint8_t nd = static_cast<std::uint8_t>(tensor->ndim());
    os.write(reinterpret_cast<const char*>(&nd), 1);
    for (const auto d : tensor->shape()) put_i64(os, d);
    os.write(reinterpret_cast<const char*>(tensor->data()),
             static_cast<std::streamsize>(sizeof(double) * tensor->values().size()));
  }
  if (!os) throw IoError("short write on checkpoint " + path);
}

std::unique_ptr<TrainableModel> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kMagic, 5) != 0)
    throw IoError("bad checkpoint magic in " + path);
  std::uint8_t kind = 0;
  is.read(reinterpret_cast<char*>(&kind), 1);
  const std::uint32_t cfg_len = get_u32(is);
  std::string cfg(cfg_len, '\0');
  is.read(cfg.data(), cfg_len);
  if (!is) throw IoError("truncated checkpoint header in " + path);

  std::unique_ptr<TrainableModel> model;
  if (kind == 0) {
    model = std::make_unique<ConvNetModel>(ConvNetConfig::from_json(cfg), /*init_seed=*/0);
  } else if (kind == 1) {
    model = std::make_unique<CapsNetModel>(CapsNetConfig::from_json(cfg), /*init_seed=*/0);
  } else {
    throw IoError("unknown model kind in " + path);
  }

  const std::uint32_t count = get_u32(is);
  auto blocks = model->state_blocks();
  if (count != blocks.size())
    throw IoError("checkpoint block count mismatch in " + path + ": file has " +
                  std::to_string(count) + ", model expects " + std::to_string(blocks.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = get_u16(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint8_t nd = 0;
    is.read(reinterpret_cast<char*>(&nd), 1);
    Shape shape(nd);
    for (auto& d : shape) d = get_i64(is);
    if (name != blocks[i].first)
      throw IoError("checkpoint block '" + name + "' does not match expected '" +
                    blocks[i].first + "'");
    Tensor& dst = *blocks[i].second;
    if (shape != dst.shape())
      throw IoError("checkpoint block '" + name + "' has shape " + shape_str(shape) +
                    ", expected " + shape_str(dst.shape()));
    is.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(sizeof(double) * dst.values().size()));
    if (!is) throw IoError("truncated checkpoint data in " + path);
  }
  return model;
}

}  // namespace capslab
