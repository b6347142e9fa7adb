#include "gridda/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace gridda::checkpoint {

namespace {

template <typename T>
void write_raw(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& f, const std::string& path) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError("checkpoint: truncated file " + path);
  return v;
}

}  // namespace

void save(const std::string& path, const std::vector<ad::Parameter<float>*>& params) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
  f.write("GDCK", 4);
  write_raw(f, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    if (p->name.size() > 0xffff) throw IoError("checkpoint: parameter name too long: " + p->name);
    write_raw(f, static_cast<std::uint16_t>(p->name.size()));
    f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_raw(f, static_cast<std::uint8_t>(0));  // dtype f32
    write_raw(f, static_cast<std::uint8_t>(p->value.ndim()));
    for (int d = 0; d < p->value.ndim(); ++d) write_raw(f, static_cast<std::uint32_t>(p->value.dim(d)));
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.numel() * sizeof(float)));
  }
  if (!f) throw IoError("checkpoint: failed writing " + path);
}

std::map<std::string, ad::TensorF> load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "GDCK", 4) != 0) throw IoError("checkpoint: bad magic in " + path);
  const auto count = read_raw<std::uint32_t>(f, path);
  std::map<std::string, ad::TensorF> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<std::uint16_t>(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (!f) throw IoError("checkpoint: truncated name in " + path);
    const auto dtype = read_raw<std::uint8_t>(f, path);
    if (dtype != 0) throw IoError("checkpoint: unsupported dtype tag " + std::to_string(dtype) + " in " + path);
    const auto ndim = read_raw<std::uint8_t>(f, path);
    std::vector<int> shape(ndim);
    for (int d = 0; d < ndim; ++d) shape[static_cast<std::size_t>(d)] = static_cast<int>(read_raw<std::uint32_t>(f, path));
    ad::TensorF t(shape);
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw IoError("checkpoint: truncated payload for '" + name + "' in " + path);
    if (out.count(name)) throw IoError("checkpoint: duplicate entry '" + name + "' in " + path);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

void assign(const std::vector<ad::Parameter<float>*>& params, const std::map<std::string, ad::TensorF>& entries,
            bool allow_extra, const std::vector<std::string>& optional_prefixes) {
  std::size_t used = 0;
  for (auto* p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end()) {
      bool optional = false;
      for (const auto& pre : optional_prefixes)
        if (p->name.rfind(pre, 0) == 0) optional = true;
      if (optional) continue;
      throw IoError("checkpoint: missing entry '" + p->name + "'");
    }
    if (it->second.shape() != p->value.shape())
      throw IoError("checkpoint: shape mismatch for '" + p->name + "'");
    p->value = it->second;
    p->zero_grad();
    ++used;
  }
  if (!allow_extra && used != entries.size()) throw IoError("checkpoint: file contains unknown entries");
}

}  // namespace gridda::checkpoint
