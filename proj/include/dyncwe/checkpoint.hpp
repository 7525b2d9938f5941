#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyncwe/model.hpp"

namespace dyncwe {

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_str(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
inline double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
inline std::string read_str(std::istream& in) {
  const std::uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

}  // namespace detail

struct Checkpoint {
  std::map<std::string, std::string> config;
  std::string vocab_blob;  // tab-separated vocabulary listing
  std::vector<std::string> social_nodes;
  std::int64_t epoch = 0;
  double dev_metric = 0.0;
};

inline constexpr char kCheckpointMagic[4] = {'D', 'C', 'W', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Single binary file: versioned header, flat config table, vocabulary blob,
// social node list, then the parameter name/shape/value table with raw
// doubles so reloads reproduce forward passes bit for bit.
inline void save_checkpoint(const std::filesystem::path& path, const DynamicModel& model,
                            std::int64_t epoch, double dev_metric,
                            std::map<std::string, std::string> extra_config = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path.string());
  out.write(kCheckpointMagic, 4);
  detail::write_u32(out, kCheckpointVersion);

  std::map<std::string, std::string> config = std::move(extra_config);
  const EncoderConfig& ec = model.encoder_config();
  config["task"] = task_name(model.task());
  config["variant"] = variant_name(model.variant());
  config["d_e"] = std::to_string(ec.d_e);
  config["layers"] = std::to_string(ec.layers);
  config["heads"] = std::to_string(ec.heads);
  config["d_ff"] = std::to_string(ec.d_ff);
  config["max_len"] = std::to_string(ec.max_len);
  config["dropout"] = std::to_string(ec.dropout);
  config["d_s"] = std::to_string(model.widths().d_s);
  config["d_t"] = std::to_string(model.widths().d_t);
  config["d_r"] = std::to_string(model.widths().d_r);
  config["t_min"] = std::to_string(model.bounds().t_min);
  config["t_max"] = std::to_string(model.bounds().t_max);
  config["seed"] = std::to_string(model.seed());
  config["freeze_embeddings"] = model.embeddings_frozen() ? "true" : "false";
  detail::write_u64(out, config.size());
  for (const auto& [k, v] : config) {
    detail::write_str(out, k);
    detail::write_str(out, v);
  }

  detail::write_str(out, model.vocab().to_blob());

  detail::write_u64(out, model.social_nodes().size());
  for (const auto& n : model.social_nodes()) detail::write_str(out, n);

  detail::write_u64(out, static_cast<std::uint64_t>(epoch));
  detail::write_f64(out, dev_metric);

  ParamList params = model.parameters();
  detail::write_u64(out, params.items.size());
  for (const auto& [name, t] : params.items) {
    detail::write_str(out, name);
    detail::write_u32(out, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) detail::write_u64(out, d);
    out.write(reinterpret_cast<const char*>(t.values().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

struct LoadedCheckpoint {
  DynamicModel model;
  Checkpoint meta;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
  const std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));

  Checkpoint meta;
  const std::uint64_t n_config = detail::read_u64(in);
  for (std::uint64_t i = 0; i < n_config; ++i) {
    std::string k = detail::read_str(in);
    meta.config[k] = detail::read_str(in);
  }
  meta.vocab_blob = detail::read_str(in);
  const std::uint64_t n_nodes = detail::read_u64(in);
  for (std::uint64_t i = 0; i < n_nodes; ++i) meta.social_nodes.push_back(detail::read_str(in));
  meta.epoch = static_cast<std::int64_t>(detail::read_u64(in));
  meta.dev_metric = detail::read_f64(in);

  auto want = [&](const std::string& key) {
    auto it = meta.config.find(key);
    if (it == meta.config.end())
      throw std::runtime_error("load_checkpoint: missing config key '" + key + "'");
    return it->second;
  };

  Vocabulary vocab = Vocabulary::from_blob(meta.vocab_blob);

  EncoderConfig ec;
  ec.d_e = std::stoull(want("d_e"));
  ec.layers = std::stoull(want("layers"));
  ec.heads = std::stoull(want("heads"));
  ec.d_ff = std::stoull(want("d_ff"));
  ec.max_len = std::stoull(want("max_len"));
  ec.dropout = std::stod(want("dropout"));
  DynWidths widths;
  widths.d_s = std::stoull(want("d_s"));
  widths.d_t = std::stoull(want("d_t"));
  widths.d_r = std::stoull(want("d_r"));
  TimeBounds bounds{std::stoll(want("t_min")), std::stoll(want("t_max"))};

  DynamicModel model =
      DynamicModel::create(vocab, ec, widths, parse_task(want("task")),
                           parse_variant(want("variant")), meta.social_nodes, bounds,
                           std::stoull(want("seed")));
  model.set_freeze_embeddings(want("freeze_embeddings") == "true");

  ParamList params = model.parameters();
  const std::uint64_t n_params = detail::read_u64(in);
  if (n_params != params.items.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::string name = detail::read_str(in);
    Tensor t = params.find(name);
    const std::uint32_t ndim = detail::read_u32(in);
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(detail::read_u64(in));
    if (shape != t.shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + name + "'");
    in.read(reinterpret_cast<char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated file " + path.string());
  return {std::move(model), std::move(meta)};
}

}  // namespace dyncwe
