// Copyright 2026 The gplq Authors
// Licensed under the Apache License, Version 2.0

#include "gplq/cli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include <zlib.h>

#include "gplq/error.hpp"

namespace gplq::cli {

using nd::Tensor;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr std::size_t kMaxRank = 8;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) { bytes(&v, 4); }

  std::vector<std::uint8_t> out;
};

class Parser {
 public:
  explicit Parser(std::span<const std::uint8_t> b) : b_(b) {}

  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::size_t pos() const noexcept { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

Tensor scalar_vec(std::vector<double> v) { return Tensor::from_values(std::move(v)); }

// Quantizer metadata: bits, granularity, role, lsq_grad_scale,
// per_tensor_observer, p_low, p_high, frozen, learnable.
Tensor quantizer_meta(const quant::Quantizer& q) {
  const auto& c = q.config;
  return scalar_vec({static_cast<double>(c.bits), static_cast<double>(c.granularity),
                     static_cast<double>(c.role), c.lsq_grad_scale ? 1.0 : 0.0,
                     static_cast<double>(c.per_tensor_observer), c.p_low, c.p_high,
                     q.state.frozen ? 1.0 : 0.0, q.state.learnable ? 1.0 : 0.0});
}

quant::Quantizer quantizer_from(const Tensor& meta, Tensor scale, const std::string& name) {
  if (meta.size() != 9) throw IoError("bad quantizer metadata for '" + name + "'");
  quant::Quantizer q;
  q.config.bits = static_cast<int>(meta[0]);
  q.config.granularity = static_cast<quant::Granularity>(static_cast<int>(meta[1]));
  q.config.role = static_cast<quant::Role>(static_cast<int>(meta[2]));
  q.config.lsq_grad_scale = meta[3] != 0.0;
  q.config.per_tensor_observer = static_cast<quant::ObserverKind>(static_cast<int>(meta[4]));
  q.config.p_low = meta[5];
  q.config.p_high = meta[6];
  q.state.frozen = meta[7] != 0.0;
  q.state.learnable = meta[8] != 0.0;
  q.state.scale = std::move(scale);
  try {
    q.config.validate();
  } catch (const Error& e) {
    throw IoError("bad quantizer metadata for '" + name + "': " + e.what());
  }
  return q;
}

bool strip(const std::string& s, const std::string& prefix, const std::string& suffix,
           std::string& middle) {
  if (s.size() < prefix.size() + suffix.size() || !s.starts_with(prefix) || !s.ends_with(suffix)) {
    return false;
  }
  middle = s.substr(prefix.size(), s.size() - prefix.size() - suffix.size());
  return true;
}

}  // namespace

std::vector<std::uint8_t> encode_entries(const std::vector<Entry>& entries) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  std::set<std::string> names;
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) throw PreconditionError("duplicate checkpoint entry '" + e.name + "'");
    if (e.tensor.rank() > kMaxRank) throw PreconditionError("tensor rank too large for '" + e.name + "'");
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.dtype));
    w.u8(static_cast<std::uint8_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    if (e.dtype == DType::f64) {
      w.bytes(e.tensor.data(), e.tensor.size() * sizeof(double));
    } else {
      for (double v : e.tensor.values()) {
        const float f = static_cast<float>(v);
        w.bytes(&f, sizeof f);
      }
    }
  }
  w.u32(crc_of(w.out));
  return std::move(w.out);
}

std::vector<Entry> decode_entries(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kCheckpointMagic + 12) throw IoError("checkpoint too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw IoError("not a gplq checkpoint (bad magic)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc_of(body) != stored) throw IoError("checkpoint CRC mismatch");

  Parser p(body);
  char magic[8];
  p.bytes(magic, 8);
  const std::uint32_t version = p.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = p.u32();
  std::vector<Entry> out;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const std::uint32_t len = p.u32();
    p.need(len);
    e.name.resize(len);
    p.bytes(e.name.data(), len);
    if (!names.insert(e.name).second) throw IoError("duplicate checkpoint entry '" + e.name + "'");
    const std::uint8_t dtype = p.u8();
    if (dtype > 1) throw IoError("unknown dtype tag for '" + e.name + "'");
    e.dtype = static_cast<DType>(dtype);
    const std::uint8_t rank = p.u8();
    if (rank > kMaxRank) throw IoError("rank too large for '" + e.name + "'");
    nd::Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = p.u32();
      if (d != 0 && n > body.size() / d) throw IoError("checkpoint truncated in '" + e.name + "'");
      n *= d;
    }
    const std::size_t width = e.dtype == DType::f64 ? 8 : 4;
    if (n > (body.size() - p.pos()) / width) throw IoError("checkpoint truncated in '" + e.name + "'");
    std::vector<double> values(n);
    if (e.dtype == DType::f64) {
      p.bytes(values.data(), n * 8);
    } else {
      for (auto& v : values) {
        float f;
        p.bytes(&f, 4);
        v = f;
      }
    }
    e.tensor = Tensor(std::move(shape), std::move(values));
    out.push_back(std::move(e));
  }
  if (p.pos() != body.size()) throw IoError("trailing bytes after checkpoint entries");
  return out;
}

std::vector<Entry> bundle_entries(const Bundle& b) {
  std::vector<Entry> out;
  const auto& c = b.model.config();
  out.push_back({"meta.model",
                 scalar_vec({double(c.image_size), double(c.patch_size), double(c.in_channels),
                             double(c.embed_dim), double(c.depth), double(c.heads),
                             double(c.mlp_ratio), double(c.num_classes)})});
  for (const auto& [name, t] : b.model.params()) out.push_back({"param." + name, t});
  for (const auto& [site, q] : b.hooks.activations) {
    out.push_back({"act." + site + ".scale", q.state.scale});
    out.push_back({"act." + site + ".meta", quantizer_meta(q)});
  }
  for (const auto& [layer, q] : b.hooks.weights) {
    out.push_back({"weight." + layer + ".scale", q.state.scale});
    out.push_back({"weight." + layer + ".meta", quantizer_meta(q)});
  }
  for (const auto& [layer, comp] : b.hooks.compensations) {
    out.push_back({layer + ".qwt.w_star", comp.w_star});
    out.push_back({layer + ".qwt.lambda", scalar_vec({comp.lambda_used})});
    if (comp.augmented_bias) out.push_back({layer + ".qwt.bias", *comp.augmented_bias});
  }
  if (b.pca) {
    out.push_back({"pca.mean", b.pca->mean});
    out.push_back({"pca.components", b.pca->components});
    out.push_back({"pca.explained_ratio", b.pca->explained_ratio});
    out.push_back({"pca.cumulative_explained", scalar_vec({b.pca->cumulative_explained})});
  }
  return out;
}

Bundle bundle_from_entries(const std::vector<Entry>& entries) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e.tensor;
  auto get = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint is missing '" + name + "'");
    return *it->second;
  };

  const Tensor& meta = get("meta.model");
  if (meta.size() != 8) throw IoError("bad model metadata");
  vit::ModelConfig c;
  std::size_t* fields[] = {&c.image_size, &c.patch_size, &c.in_channels, &c.embed_dim,
                           &c.depth,      &c.heads,      &c.mlp_ratio,   &c.num_classes};
  for (std::size_t i = 0; i < 8; ++i) *fields[i] = static_cast<std::size_t>(meta[i]);
  Bundle b;
  try {
    b.model = vit::Model(c);
  } catch (const Error& e) {
    throw IoError(std::string("bad model metadata: ") + e.what());
  }
  for (auto& [name, t] : b.model.params()) {
    const Tensor& stored = get("param." + name);
    if (stored.shape() != t.shape()) throw IoError("shape mismatch for parameter '" + name + "'");
    t = stored;
  }

  std::string mid;
  for (const auto& e : entries) {
    if (strip(e.name, "act.", ".scale", mid)) {
      b.hooks.activations.emplace(mid, quantizer_from(get("act." + mid + ".meta"), e.tensor, mid));
    } else if (strip(e.name, "weight.", ".scale", mid)) {
      b.hooks.weights.emplace(mid, quantizer_from(get("weight." + mid + ".meta"), e.tensor, mid));
    } else if (strip(e.name, "", ".qwt.w_star", mid)) {
      qwt::CompensationLayer comp;
      comp.w_star = e.tensor;
      comp.lambda_used = get(mid + ".qwt.lambda")[0];
      comp.target_layer = mid;
      if (by_name.count(mid + ".qwt.bias")) comp.augmented_bias = get(mid + ".qwt.bias");
      b.hooks.compensations.emplace(mid, std::move(comp));
    }
  }
  if (by_name.count("pca.mean")) {
    mimic::PcaSubspace pca;
    pca.mean = get("pca.mean");
    pca.components = get("pca.components");
    pca.explained_ratio = get("pca.explained_ratio");
    pca.cumulative_explained = get("pca.cumulative_explained")[0];
    b.pca = std::move(pca);
  }
  for (const auto& [site, q] : b.hooks.activations) {
    if (!b.model.has_site(site)) throw IoError("checkpoint hooks unknown site '" + site + "'");
  }
  for (const auto& [layer, q] : b.hooks.weights) {
    if (!b.model.has_linear(layer)) throw IoError("checkpoint hooks unknown layer '" + layer + "'");
  }
  for (const auto& [layer, comp] : b.hooks.compensations) {
    if (!b.model.has_linear(layer)) throw IoError("compensation for unknown layer '" + layer + "'");
  }
  return b;
}

void save_checkpoint(const Bundle& bundle, const std::filesystem::path& path) {
  const auto bytes = encode_entries(bundle_entries(bundle));
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint '" + path.string() + "'");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Bundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return bundle_from_entries(decode_entries(bytes));
  } catch (const IoError& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace gplq::cli
