#include "dmat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace dmat {

namespace {

constexpr char kMagic[8] = {'D', 'M', 'A', 'T', 'C', 'K', 'P', '1'};

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw ValueError("checkpoint: " + path + " is truncated");
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= uint64_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= uint32_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  nlohmann::json header;
  header["iteration"] = c.iteration;
  header["seed"] = c.seed;
  header["config_hash"] = c.config_hash;
  header["gen_opt_steps"] = c.gen_opt_steps;
  header["disc_opt_steps"] = c.disc_opt_steps;
  header["arrays"] = c.arrays.size();
  std::string hj = header.dump();

  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u64(out, hj.size());
  out += hj;
  put_u64(out, c.arrays.size());
  for (const auto& a : c.arrays) {
    int64_t numel = 1;
    for (int64_t d : a.shape) numel *= d;
    if (numel != int64_t(a.data.size()))
      throw ValueError("checkpoint: array '" + a.name + "' shape disagrees "
                       "with its data length");
    put_u32(out, uint32_t(a.name.size()));
    out += a.name;
    put_u32(out, uint32_t(a.shape.size()));
    for (int64_t d : a.shape) put_u64(out, uint64_t(d));
    out.reserve(out.size() + a.data.size() * 4);
    for (float v : a.data) put_f32(out, v);
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot read " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  Reader r{buf, 0, path};
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw ValueError("checkpoint: " + path + " has no checkpoint signature");
  uint64_t hlen = r.u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ValueError("checkpoint: bad header in " + path + ": " + e.what());
  }
  Checkpoint c;
  c.iteration = header.at("iteration").get<int64_t>();
  c.seed = header.at("seed").get<uint64_t>();
  c.config_hash = header.at("config_hash").get<uint64_t>();
  c.gen_opt_steps = header.at("gen_opt_steps").get<int64_t>();
  c.disc_opt_steps = header.at("disc_opt_steps").get<int64_t>();
  uint64_t count = r.u64();
  if (count != header.at("arrays").get<uint64_t>())
    throw ValueError("checkpoint: header/body array count mismatch in " +
                     path);
  c.arrays.resize(count);
  for (auto& a : c.arrays) {
    a.name = r.bytes(r.u32());
    uint32_t ndim = r.u32();
    a.shape.resize(ndim);
    int64_t numel = 1;
    for (auto& d : a.shape) {
      d = int64_t(r.u64());
      numel *= d;
    }
    a.data.resize(size_t(numel));
    r.need(size_t(numel) * 4);
    for (auto& v : a.data) v = r.f32();
  }
  if (r.pos != buf.size())
    throw ValueError("checkpoint: trailing bytes in " + path);
  return c;
}

}  // namespace dmat
