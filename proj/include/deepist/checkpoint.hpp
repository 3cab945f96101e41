#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "deepist/common.hpp"
#include "deepist/tensor.hpp"

namespace deepist {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

constexpr char kCheckpointMagic[8] = {'D', 'P', 'I', 'S', 'T', 'C', 'K', '1'};

namespace detail {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

inline void write_tensor(std::ofstream& out, const Tensor& t) {
  write_pod(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape)
    write_pod(out, static_cast<std::uint64_t>(e));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

inline Tensor read_tensor(std::ifstream& in) {
  std::uint32_t rank = 0;
  read_pod(in, rank);
  std::vector<std::size_t> shape(rank);
  for (auto& e : shape) {
    std::uint64_t v = 0;
    read_pod(in, v);
    e = static_cast<std::size_t>(v);
  }
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  return t;
}

}  // namespace detail

/// Versioned binary checkpoint: every parameter's name, shape and 64-bit
/// values, with Adam moments and the step counter, for byte-exact resume.
inline void save_checkpoint(const std::string& path,
                            const std::vector<Parameter*>& params,
                            std::int64_t adam_t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod(out, static_cast<std::int64_t>(adam_t));
  detail::write_pod(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    detail::write_pod(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(),
              static_cast<std::streamsize>(p->name.size()));
    detail::write_tensor(out, p->value);
    detail::write_tensor(out, p->adam_m);
    detail::write_tensor(out, p->adam_v);
  }
  if (!out) throw IoError("write failed for " + path);
}

/// Loads a checkpoint into an existing parameter set; names and shapes must
/// match exactly.
inline std::int64_t load_checkpoint(const std::string& path,
                                    std::vector<Parameter*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError(path + " is not a checkpoint file");
  std::int64_t adam_t = 0;
  detail::read_pod(in, adam_t);
  std::uint32_t count = 0;
  detail::read_pod(in, count);
  if (count != params.size())
    throw IoError(path + ": parameter count mismatch");
  for (Parameter* p : params) {
    std::uint32_t name_len = 0;
    detail::read_pod(in, name_len);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (name != p->name)
      throw IoError(path + ": expected parameter " + p->name + ", found " +
                    name);
    Tensor value = detail::read_tensor(in);
    Tensor m = detail::read_tensor(in);
    Tensor v = detail::read_tensor(in);
    if (!in) throw IoError(path + ": truncated checkpoint");
    if (value.shape != p->value.shape)
      throw IoError(path + ": shape mismatch for " + p->name);
    p->value = std::move(value);
    p->adam_m = std::move(m);
    p->adam_v = std::move(v);
    p->zero_grad();
  }
  return adam_t;
}

}  // namespace deepist
