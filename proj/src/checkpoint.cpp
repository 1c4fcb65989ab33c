#include "demr/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <vector>

namespace demr {

namespace {

constexpr char kMagic[9] = "DEMRCK01";
constexpr std::uint8_t kDtypeF32 = 0;

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k)
      c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 24));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::vector<unsigned char>& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(out, v);
}

struct Reader {
  const std::vector<unsigned char>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw ValidationError("checkpoint file truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = static_cast<std::uint32_t>(buf[pos]) |
                      (static_cast<std::uint32_t>(buf[pos + 1]) << 8) |
                      (static_cast<std::uint32_t>(buf[pos + 2]) << 16) |
                      (static_cast<std::uint32_t>(buf[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    const std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  float f32() {
    const std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(&buf[pos]), n);
    pos += n;
    return s;
  }
};

void append_tensor(std::vector<unsigned char>& out, const std::string& name,
                   const Tensor2D& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  out.push_back(kDtypeF32);
  put_u32(out, static_cast<std::uint32_t>(t.rows));
  put_u32(out, static_cast<std::uint32_t>(t.cols));
  for (double x : t.data) put_f32(out, static_cast<float>(x));
}

void read_tensor_into(Reader& r, const std::string& expect_name, Tensor2D& t) {
  const std::uint32_t name_len = r.u32();
  const std::string name = r.str(name_len);
  if (name != expect_name)
    throw ValidationError("checkpoint tensor '" + name +
                          "' does not match model parameter '" + expect_name +
                          "'");
  r.need(1);
  const std::uint8_t dtype = r.buf[r.pos++];
  if (dtype != kDtypeF32)
    throw ValidationError("checkpoint tensor '" + name + "': unknown dtype");
  const int rows = static_cast<int>(r.u32());
  const int cols = static_cast<int>(r.u32());
  if (rows != t.rows || cols != t.cols)
    throw ValidationError("checkpoint tensor '" + name + "' has shape " +
                          std::to_string(rows) + "x" + std::to_string(cols) +
                          ", model expects " + t.shape_str());
  for (double& x : t.data) x = static_cast<double>(r.f32());
}

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const auto table = make_crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i)
    c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void save_checkpoint(const ParamStore& store, std::uint64_t cfg_hash,
                     const std::string& path) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kMagic, kMagic + 8);
  put_u32(buf, static_cast<std::uint32_t>(store.entries().size()) * 3);
  put_u64(buf, static_cast<std::uint64_t>(store.step()));
  put_u64(buf, cfg_hash);
  for (const auto& e : store.entries()) {
    append_tensor(buf, e.name, e.value);
    append_tensor(buf, e.name + "#m", e.adam_m);
    append_tensor(buf, e.name + "#v", e.adam_v);
  }
  put_u32(buf, crc32(buf.data(), buf.size()));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (!f) throw ValidationError("write failed for '" + path + "'");
}

std::uint64_t load_checkpoint(ParamStore& store, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw ValidationError("'" + path + "' is not a checkpoint (bad magic)");

  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(buf[buf.size() - 4]) |
      (static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8) |
      (static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16) |
      (static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    throw ValidationError("checkpoint '" + path + "' failed its CRC check");

  Reader r{buf, 8};
  const std::uint32_t tensor_count = r.u32();
  const std::uint64_t step = r.u64();
  const std::uint64_t cfg_hash = r.u64();
  if (tensor_count != store.entries().size() * 3)
    throw ValidationError(
        "checkpoint holds " + std::to_string(tensor_count) +
        " tensors, model expects " +
        std::to_string(store.entries().size() * 3));
  for (auto& e : store.entries()) {
    read_tensor_into(r, e.name, e.value);
    read_tensor_into(r, e.name + "#m", e.adam_m);
    read_tensor_into(r, e.name + "#v", e.adam_v);
  }
  store.set_step(static_cast<std::int64_t>(step));
  return cfg_hash;
}

}  // namespace demr
