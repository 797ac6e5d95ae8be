#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mqma/model.hpp"

namespace mqma {

// Binary checkpoint: format tag, config JSON, vocabulary token list, then
// every parameter as raw little-endian doubles. Round trips are bit exact.
inline constexpr char kCheckpointMagic[8] = {'M', 'Q', 'M', 'A', 'C', 'K', 'P', '1'};

namespace detail {

inline void write_u32(std::ostream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_str(std::ostream& f, const std::string& s) {
  write_u32(f, static_cast<std::uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::uint32_t read_u32(std::istream& f) {
  std::uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline std::uint64_t read_u64(std::istream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
inline std::string read_str(std::istream& f) {
  const auto n = read_u32(f);
  std::string s(n, '\0');
  f.read(s.data(), n);
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, Model& model) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_str(f, model.config().to_json().dump());
  const auto& tokens = model.vocab().tokens();
  detail::write_u32(f, static_cast<std::uint32_t>(tokens.size()));
  for (const auto& t : tokens) detail::write_str(f, t);
  detail::write_u64(f, model.params().count());
  for (auto& p : model.params()) {
    detail::write_str(f, p->name);
    detail::write_u64(f, static_cast<std::uint64_t>(p->value.rows()));
    detail::write_u64(f, static_cast<std::uint64_t>(p->value.cols()));
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
  }
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("load_checkpoint: bad format tag in " + path);
  const auto cfg = ModelConfig::from_json(nlohmann::json::parse(detail::read_str(f)));
  const auto n_tokens = detail::read_u32(f);
  std::vector<std::string> tokens;
  tokens.reserve(n_tokens);
  for (std::uint32_t i = 0; i < n_tokens; ++i) tokens.push_back(detail::read_str(f));
  auto model = std::make_unique<Model>(cfg, Vocab::from_tokens(tokens));
  const auto n_params = detail::read_u64(f);
  if (n_params != model->params().count())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::string name = detail::read_str(f);
    const auto rows = static_cast<Eigen::Index>(detail::read_u64(f));
    const auto cols = static_cast<Eigen::Index>(detail::read_u64(f));
    Param* p = model->params().find(name);
    if (!p) throw std::runtime_error("load_checkpoint: unknown parameter " + name);
    if (p->value.rows() != rows || p->value.cols() != cols)
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(p->value.data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
  }
  if (!f) throw std::runtime_error("load_checkpoint: truncated file " + path);
  return model;
}

}  // namespace mqma
