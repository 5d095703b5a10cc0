/* Copyright 2026 The melvec Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Single-file checkpoints: little-endian, versioned header, JSON metadata,
// named float32 tensor blobs, and a trailing CRC-32 that rejects corruption.

#ifndef MELVEC_CHECKPOINT_HPP_
#define MELVEC_CHECKPOINT_HPP_

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "melvec/binio.hpp"
#include "melvec/config.hpp"
#include "melvec/tensor.hpp"

namespace melvec {

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr char kMagic[9] = "MELVCKPT";

  Json meta;  // model config, schedule position, rng state, feature stats,...
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ostringstream body(std::ios::binary);
  binio::write_bytes(body, Checkpoint::kMagic, 8);
  binio::write_le<std::uint32_t>(body, Checkpoint::kFormatVersion);
  const std::string meta = ckpt.meta.dump();
  binio::write_le<std::uint64_t>(body, meta.size());
  binio::write_bytes(body, meta.data(), meta.size());
  binio::write_le<std::uint32_t>(body,
                                 static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    binio::write_le<std::uint32_t>(body,
                                   static_cast<std::uint32_t>(name.size()));
    binio::write_bytes(body, name.data(), name.size());
    binio::write_le<std::uint32_t>(body,
                                   static_cast<std::uint32_t>(tensor.ndim()));
    for (std::size_t i = 0; i < tensor.ndim(); ++i) {
      binio::write_le<std::uint64_t>(body, tensor.dim(i));
    }
    for (const float v : tensor.values()) binio::write_f32(body, v);
  }
  const std::string payload = body.str();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(str_cat("save_checkpoint: cannot open ", path));
  binio::write_bytes(os, payload.data(), payload.size());
  binio::write_le<std::uint32_t>(os, binio::crc32_of(payload));
  if (!os) throw IoError(str_cat("save_checkpoint: write failed: ", path));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(str_cat("load_checkpoint: cannot open ", path));
  std::string raw((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());
  if (raw.size() < 16) {
    throw IntegrityError(str_cat("load_checkpoint: ", path,
                                 " is truncated (", raw.size(), " bytes)"));
  }
  const std::string payload = raw.substr(0, raw.size() - 4);
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) {
    stored_crc |= static_cast<std::uint32_t>(
                      static_cast<unsigned char>(raw[raw.size() - 4 + i]))
                  << (8 * i);
  }
  if (binio::crc32_of(payload) != stored_crc) {
    throw IntegrityError(str_cat("load_checkpoint: checksum mismatch in ",
                                 path, " (file corrupt)"));
  }

  std::istringstream body(payload, std::ios::binary);
  char magic[8];
  binio::read_bytes(body, magic, 8);
  if (std::string(magic, 8) != Checkpoint::kMagic) {
    throw IntegrityError(str_cat("load_checkpoint: bad magic in ", path));
  }
  const std::uint32_t version = binio::read_le<std::uint32_t>(body);
  if (version != Checkpoint::kFormatVersion) {
    throw IntegrityError(str_cat("load_checkpoint: format version ", version,
                                 " unsupported (expected ",
                                 Checkpoint::kFormatVersion, ")"));
  }
  Checkpoint ckpt;
  const std::uint64_t meta_len = binio::read_le<std::uint64_t>(body);
  std::string meta(meta_len, '\0');
  binio::read_bytes(body, meta.data(), meta_len);
  try {
    ckpt.meta = Json::parse(meta);
  } catch (const Json::exception& e) {
    throw IntegrityError(str_cat("load_checkpoint: bad metadata in ", path,
                                 ": ", e.what()));
  }
  const std::uint32_t count = binio::read_le<std::uint32_t>(body);
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = binio::read_le<std::uint32_t>(body);
    std::string name(name_len, '\0');
    binio::read_bytes(body, name.data(), name_len);
    const std::uint32_t ndim = binio::read_le<std::uint32_t>(body);
    Shape shape(ndim);
    for (auto& d : shape) {
      d = static_cast<std::size_t>(binio::read_le<std::uint64_t>(body));
    }
    std::vector<float> data(shape_numel(shape));
    for (auto& v : data) v = binio::read_f32(body);
    ckpt.tensors.emplace_back(std::move(name),
                              Tensor<float>::from_data(std::move(shape),
                                                       std::move(data)));
  }
  return ckpt;
}

/// Copies a model's parameters into the checkpoint as detached tensors.
template <typename Model>
void add_model_tensors(Checkpoint& ckpt, Model& model) {
  model.visit_params([&](const std::string& name, Tensor<float>& t) {
    ckpt.tensors.emplace_back(name, t.detach());
  });
}

/// Restores parameters by name. Missing tensors are an integrity error;
/// shape disagreements are a config conflict.
template <typename Model>
void restore_model(const Checkpoint& ckpt, Model& model) {
  model.visit_params([&](const std::string& name, Tensor<float>& t) {
    const Tensor<float>* stored = ckpt.find(name);
    if (stored == nullptr) {
      throw IntegrityError(str_cat("checkpoint: missing tensor '", name, "'"));
    }
    if (stored->shape() != t.shape()) {
      throw ConfigError(str_cat("checkpoint: config conflict on '", name,
                                "': stored ", shape_str(stored->shape()),
                                " vs model ", shape_str(t.shape())));
    }
    auto dst = t.mutable_values();
    auto src = stored->values();
    std::copy(src.begin(), src.end(), dst.begin());
  });
}

inline Json feature_stats_to_json(const FeatureStats& stats) {
  return Json{{"mean", stats.mean},
              {"std", stats.std_dev},
              {"num_frames_used", stats.num_frames_used}};
}

inline FeatureStats feature_stats_from_json(const Json& j) {
  FeatureStats stats;
  stats.mean = j.at("mean").get<std::vector<float>>();
  stats.std_dev = j.at("std").get<std::vector<float>>();
  stats.num_frames_used = j.at("num_frames_used").get<std::size_t>();
  if (stats.mean.size() != stats.std_dev.size()) {
    throw IntegrityError("checkpoint: inconsistent feature stats");
  }
  return stats;
}

}  // namespace melvec

#endif  // MELVEC_CHECKPOINT_HPP_
