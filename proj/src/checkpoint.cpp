#include "fssd/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "fssd/check.hpp"

namespace fssd {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'S', 'D'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    FSSD_CHECK(pos + n <= bytes.size(), "checkpoint: truncated while reading "
                                            << what << " at offset " << pos << " (file has "
                                            << bytes.size() << " bytes)");
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint8_t>(bytes[pos]) |
                      (static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void Checkpoint::set_step(int step) {
  tensors.erase(std::remove_if(tensors.begin(), tensors.end(),
                               [](const TensorRecord& t) { return t.name == "meta/step"; }),
                tensors.end());
  tensors.push_back({"meta/step", {1}, {static_cast<float>(step)}});
}

int Checkpoint::step() const {
  const TensorRecord* t = find("meta/step");
  return t && !t->values.empty() ? static_cast<int>(t->values[0]) : 0;
}

void Checkpoint::set_config_hash(std::uint32_t hash) {
  tensors.erase(
      std::remove_if(tensors.begin(), tensors.end(),
                     [](const TensorRecord& t) { return t.name == "meta/config_hash"; }),
      tensors.end());
  // two 16-bit halves; float32 represents either exactly
  tensors.push_back({"meta/config_hash",
                     {2},
                     {static_cast<float>(hash >> 16), static_cast<float>(hash & 0xFFFF)}});
}

std::uint32_t Checkpoint::config_hash() const {
  const TensorRecord* t = find("meta/config_hash");
  if (!t || t->values.size() != 2) return 0;
  return (static_cast<std::uint32_t>(t->values[0]) << 16) |
         static_cast<std::uint32_t>(t->values[1]);
}

void Checkpoint::set_config_json(const std::string& json) {
  tensors.erase(
      std::remove_if(tensors.begin(), tensors.end(),
                     [](const TensorRecord& t) { return t.name == "meta/config_json"; }),
      tensors.end());
  TensorRecord rec;
  rec.name = "meta/config_json";
  rec.dims = {static_cast<std::uint32_t>(json.size())};
  rec.values.reserve(json.size());
  for (unsigned char c : json) rec.values.push_back(static_cast<float>(c));
  tensors.push_back(std::move(rec));
}

std::string Checkpoint::config_json() const {
  const TensorRecord* t = find("meta/config_json");
  if (!t) return {};
  std::string out;
  out.reserve(t->values.size());
  for (float v : t->values) out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return out;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string bytes;
  bytes.append(kMagic, 4);
  put_u32(bytes, kVersion);
  put_u32(bytes, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    FSSD_CHECK(t.name.size() <= 0xFFFF, "checkpoint: tensor name too long");
    FSSD_CHECK(t.dims.size() <= 0xFF, "checkpoint: tensor rank too large");
    std::size_t count = 1;
    for (std::uint32_t d : t.dims) count *= d;
    FSSD_CHECK(count == t.values.size(), "checkpoint: '" << t.name << "' dims disagree with "
                                                         << t.values.size() << " values");
    put_u16(bytes, static_cast<std::uint16_t>(t.name.size()));
    bytes.append(t.name);
    bytes.push_back(static_cast<char>(t.dims.size()));
    for (std::uint32_t d : t.dims) put_u32(bytes, d);
    for (float v : t.values) put_f32(bytes, v);
  }
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
  put_u32(bytes, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  FSSD_CHECK(out, "checkpoint: cannot open '" << path << "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  FSSD_CHECK(out.good(), "checkpoint: short write to '" << path << "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FSSD_CHECK(in, "checkpoint: cannot open '" << path << "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  FSSD_CHECK(bytes.size() >= 12, "checkpoint: file too short (" << bytes.size() << " bytes)");
  FSSD_CHECK(std::memcmp(bytes.data(), kMagic, 4) == 0, "checkpoint: bad magic");
  const std::size_t payload = bytes.size() - 4;
  const std::uint32_t stored_crc =
      static_cast<std::uint8_t>(bytes[payload]) |
      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[payload + 1])) << 8) |
      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[payload + 2])) << 16) |
      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[payload + 3])) << 24);
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(payload)));
  FSSD_CHECK(crc == stored_crc, "checkpoint: CRC mismatch (stored "
                                    << stored_crc << ", computed " << crc << ")");

  Reader r{bytes, 4};
  const std::uint32_t version = r.u32("version");
  FSSD_CHECK(version == kVersion, "checkpoint: unsupported version " << version);
  const std::uint32_t count = r.u32("tensor count");

  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord rec;
    const std::uint16_t name_len = r.u16("name length");
    r.need(name_len, "tensor name");
    rec.name.assign(bytes, r.pos, name_len);
    r.pos += name_len;
    r.need(1, "rank");
    const int rank = static_cast<std::uint8_t>(bytes[r.pos++]);
    std::size_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      rec.dims.push_back(r.u32("dimension"));
      numel *= rec.dims.back();
    }
    rec.values.reserve(numel);
    for (std::size_t v = 0; v < numel; ++v) rec.values.push_back(r.f32("tensor values"));
    ckpt.tensors.push_back(std::move(rec));
  }
  FSSD_CHECK(r.pos == payload, "checkpoint: " << payload - r.pos
                                              << " unexpected trailing bytes at offset "
                                              << r.pos);
  return ckpt;
}

namespace {

TensorRecord record_of(const std::string& name, const Tensor& t) {
  const Shape s = t.shape();
  TensorRecord rec;
  rec.name = name;
  rec.dims = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
              static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  rec.values.reserve(t.numel());
  for (double v : t.data()) rec.values.push_back(static_cast<float>(v));
  return rec;
}

}  // namespace

Checkpoint snapshot_state(const std::vector<ParamRef>& params,
                          const std::vector<std::pair<std::string, Tensor>>& buffers,
                          const std::vector<std::vector<double>>* velocities) {
  Checkpoint ckpt;
  for (const auto& p : params) ckpt.tensors.push_back(record_of(p.name, p.tensor));
  for (const auto& [name, tensor] : buffers) ckpt.tensors.push_back(record_of(name, tensor));
  if (velocities) {
    FSSD_CHECK(velocities->size() == params.size(), "snapshot: velocity count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      TensorRecord rec;
      rec.name = "optim/velocity/" + params[i].name;
      rec.dims = {static_cast<std::uint32_t>((*velocities)[i].size())};
      rec.values.reserve((*velocities)[i].size());
      for (double v : (*velocities)[i]) rec.values.push_back(static_cast<float>(v));
      ckpt.tensors.push_back(std::move(rec));
    }
  }
  return ckpt;
}

namespace {

bool restore_one(const Checkpoint& ckpt, const std::string& name, Tensor& tensor,
                 RestoreReport& report) {
  const TensorRecord* rec = ckpt.find(name);
  if (!rec) {
    report.missing_in_checkpoint.push_back(name);
    return false;
  }
  if (rec->values.size() != tensor.numel()) {
    report.shape_mismatch.push_back(name);
    return false;
  }
  auto data = tensor.data_mut();
  for (std::size_t i = 0; i < rec->values.size(); ++i) data[i] = rec->values[i];
  report.loaded.push_back(name);
  return true;
}

}  // namespace

RestoreReport restore_state(const Checkpoint& ckpt, std::vector<ParamRef>& params,
                            std::vector<std::pair<std::string, Tensor>>& buffers,
                            std::vector<std::vector<double>>* velocities,
                            const std::string& name_prefix) {
  RestoreReport report;
  auto wanted = [&](const std::string& name) {
    return name_prefix.empty() || name.rfind(name_prefix, 0) == 0;
  };
  std::vector<std::string> touched;
  for (auto& p : params) {
    if (!wanted(p.name)) continue;
    touched.push_back(p.name);
    restore_one(ckpt, p.name, p.tensor, report);
  }
  for (auto& [name, tensor] : buffers) {
    if (!wanted(name)) continue;
    touched.push_back(name);
    restore_one(ckpt, name, tensor, report);
  }
  if (velocities) {
    velocities->assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      (*velocities)[i].assign(params[i].tensor.numel(), 0.0);
      const TensorRecord* rec = ckpt.find("optim/velocity/" + params[i].name);
      if (!rec || !wanted(params[i].name)) continue;
      if (rec->values.size() != (*velocities)[i].size()) continue;
      for (std::size_t j = 0; j < rec->values.size(); ++j) (*velocities)[i][j] = rec->values[j];
    }
  }
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind("meta/", 0) == 0 || t.name.rfind("optim/", 0) == 0) continue;
    if (std::find(touched.begin(), touched.end(), t.name) == touched.end())
      report.unmatched_in_checkpoint.push_back(t.name);
  }
  return report;
}

void quantize_to_f32(std::vector<ParamRef>& params,
                     std::vector<std::pair<std::string, Tensor>>* buffers,
                     std::vector<std::vector<double>>* velocities) {
  for (auto& p : params)
    for (auto& v : p.tensor.data_mut()) v = static_cast<double>(static_cast<float>(v));
  if (buffers)
    for (auto& [name, tensor] : *buffers)
      for (auto& v : tensor.data_mut()) v = static_cast<double>(static_cast<float>(v));
  if (velocities)
    for (auto& vel : *velocities)
      for (auto& v : vel) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace fssd
