#include "capslab/attack_io.hpp"

#include <fstream>

#include "json.hpp"

namespace capslab {
namespace {

constexpr char kDeltaMagic[5] = {'C', 'F', 'D', 'L', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_delta_file(const std::string& path, const Shape& shape,
                      const std::vector<std::pair<std::uint64_t, const Tensor*>>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write sidecar " + path);
  os.write(kDeltaMagic, 5);
  put_u32(os, static_cast<std::uint32_t>(records.size()));
  const std::uint8_t nd = static_cast<std::uint8_t>(shape.size());
  os.write(reinterpret_cast<const char*>(&nd), 1);
  for (const auto d : shape) put_u64(os, static_cast<std::uint64_t>(d));
  for (const auto& [index, t] : records) {
    if (t->shape() != shape) throw ShapeError("delta sidecar", t->shape(), shape);
    put_u64(os, index);
    os.write(reinterpret_cast<const char*>(t->data()),
             static_cast<std::streamsize>(sizeof(double) * t->values().size()));
  }
  if (!os) throw IoError("short write on sidecar " + path);
}

std::vector<std::pair<std::uint64_t, Tensor>> read_delta_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open sidecar " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::string(magic, 5) != std::string(kDeltaMagic, 5))
    throw IoError("bad sidecar magic in " + path);
  const std::uint32_t count = get_u32(is);
  std::uint8_t nd = 0;
  is.read(reinterpret_cast<char*>(&nd), 1);
  Shape shape(nd);
  for (auto& d : shape) d = static_cast<std::int64_t>(get_u64(is));
  std::vector<std::pair<std::uint64_t, Tensor>> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint64_t index = get_u64(is);
    Tensor t = Tensor::uninit(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * t.values().size()));
    if (!is) throw IoError("truncated sidecar " + path);
    out.emplace_back(index, std::move(t));
  }
  return out;
}

}  // namespace

void write_results_jsonl(const std::string& path, const std::vector<AttackResult>& results) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  for (const AttackResult& r : results) {
    nlohmann::ordered_json j;
    j["index"] = r.sample_index;
    j["true_label"] = r.true_label;
    j["predicted_label"] = r.predicted_label;
    j["target_label"] = r.target_label;
    j["norm"] = r.norm;
    j["success"] = r.success;
    j["iterations"] = r.iterations;
    os << j.dump() << "\n";
  }
  if (!os) throw IoError("short write on " + path);
}

std::vector<AttackResult> read_results_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<AttackResult> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    AttackResult r;
    r.sample_index = j.at("index");
    r.true_label = j.at("true_label");
    r.predicted_label = j.at("predicted_label");
    r.target_label = j.at("target_label");
    r.norm = j.at("norm");
    r.success = j.at("success");
    r.iterations = j.at("iterations");
    out.push_back(std::move(r));
  }
  return out;
}

void write_delta_sidecar(const std::string& path, const std::vector<AttackResult>& results) {
  if (results.empty()) throw Error("write_delta_sidecar: no records");
  std::vector<std::pair<std::uint64_t, const Tensor*>> records;
  records.reserve(results.size());
  for (const AttackResult& r : results)
    records.emplace_back(static_cast<std::uint64_t>(r.sample_index), &r.delta);
  write_delta_file(path, results.front().delta.shape(), records);
}

void read_delta_sidecar(const std::string& path, std::vector<AttackResult>& results) {
  const auto records = read_delta_file(path);
  if (records.size() != results.size())
    throw IoError("sidecar record count " + std::to_string(records.size()) +
                  " does not match results " + std::to_string(results.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].first != results[i].sample_index)
      throw IoError("sidecar index mismatch at record " + std::to_string(i));
    results[i].delta = records[i].second;
  }
}

void write_deltas(const std::string& path, const std::vector<Tensor>& deltas) {
  if (deltas.empty()) throw Error("write_deltas: no tensors");
  std::vector<std::pair<std::uint64_t, const Tensor*>> records;
  records.reserve(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i)
    records.emplace_back(static_cast<std::uint64_t>(i), &deltas[i]);
  write_delta_file(path, deltas.front().shape(), records);
}

std::vector<Tensor> read_deltas(const std::string& path) {
  const auto records = read_delta_file(path);
  std::vector<Tensor> out;
  out.reserve(records.size());
  for (const auto& [index, t] : records) out.push_back(t);
  return out;
}

}  // namespace capslab
