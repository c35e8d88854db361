#pragma once

// Single-file checkpoint container. Byte layout (all integers little-endian):
//
//   magic "NESHCKP1" | u32 version | u64 payload size | u64 FNV-1a of payload
//   payload: u32 array count, then per array:
//     u16 name length, name bytes, u8 dtype (0 f64, 1 i64, 2 u8),
//     u8 rank, u64 dims[rank], raw data (column-major)
//
// Save/load is lossless and the write order is fixed, so writing a loaded
// checkpoint reproduces the file byte for byte.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nesh/common.hpp"
#include "nesh/inference.hpp"

namespace nesh::checkpoint {

constexpr char kMagic[8] = {'N', 'E', 'S', 'H', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

struct Array {
  std::uint8_t dtype = 0;  // 0 f64, 1 i64, 2 u8
  std::vector<std::uint64_t> dims;
  std::string data;

  std::uint64_t elements() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

class Writer {
 public:
  template <typename T>
  void raw(T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    payload_.append(buf, sizeof(T));
  }

  void array(const std::string& name, const Array& a) {
    raw<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    payload_.append(name);
    raw<std::uint8_t>(a.dtype);
    raw<std::uint8_t>(static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) raw<std::uint64_t>(d);
    payload_.append(a.data);
    ++count_;
  }

  void matrix(const std::string& name, const Eigen::MatrixXd& m) {
    Array a;
    a.dtype = 0;
    a.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    a.data.assign(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size());
    array(name, a);
  }

  void vector(const std::string& name, const Eigen::VectorXd& v) {
    Array a;
    a.dtype = 0;
    a.dims = {static_cast<std::uint64_t>(v.size())};
    a.data.assign(reinterpret_cast<const char*>(v.data()), sizeof(double) * v.size());
    array(name, a);
  }

  void scalar(const std::string& name, double v) {
    vector(name, Eigen::VectorXd::Constant(1, v));
  }

  void ints(const std::string& name, const std::vector<std::int64_t>& v) {
    Array a;
    a.dtype = 1;
    a.dims = {static_cast<std::uint64_t>(v.size())};
    a.data.assign(reinterpret_cast<const char*>(v.data()), sizeof(std::int64_t) * v.size());
    array(name, a);
  }

  void integer(const std::string& name, std::int64_t v) { ints(name, {v}); }

  void text(const std::string& name, const std::string& v) {
    Array a;
    a.dtype = 2;
    a.dims = {static_cast<std::uint64_t>(v.size())};
    a.data = v;
    array(name, a);
  }

  std::string finish() const {
    std::string header(kMagic, sizeof(kMagic));
    std::string counted;
    {
      char buf[4];
      std::uint32_t c = count_;
      std::memcpy(buf, &c, 4);
      counted.assign(buf, 4);
    }
    counted += payload_;
    auto append = [&](auto value) {
      char buf[sizeof(value)];
      std::memcpy(buf, &value, sizeof(value));
      header.append(buf, sizeof(value));
    };
    append(kVersion);
    append(static_cast<std::uint64_t>(counted.size()));
    append(fnv1a(counted));
    return header + counted;
  }

 private:
  std::string payload_;
  std::uint32_t count_ = 0;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) {
    if (bytes.size() < 28 || std::memcmp(bytes.data(), kMagic, 8) != 0)
      throw Error("checkpoint: not a checkpoint file");
    std::uint32_t version;
    std::uint64_t size, checksum;
    std::memcpy(&version, bytes.data() + 8, 4);
    std::memcpy(&size, bytes.data() + 12, 8);
    std::memcpy(&checksum, bytes.data() + 20, 8);
    if (version > kVersion)
      throw Error("checkpoint: version " + std::to_string(version) +
                  " is newer than supported version " + std::to_string(kVersion));
    if (bytes.size() != 28 + size) throw Error("checkpoint: truncated file");
    std::string payload = bytes.substr(28);
    if (fnv1a(payload) != checksum) throw Error("checkpoint: checksum mismatch");

    std::size_t at = 0;
    auto need = [&](std::size_t n) {
      if (at + n > payload.size()) throw Error("checkpoint: corrupt manifest");
    };
    auto read_u16 = [&]() {
      need(2);
      std::uint16_t v;
      std::memcpy(&v, payload.data() + at, 2);
      at += 2;
      return v;
    };
    auto read_u8 = [&]() {
      need(1);
      return static_cast<std::uint8_t>(payload[at++]);
    };
    auto read_u64 = [&]() {
      need(8);
      std::uint64_t v;
      std::memcpy(&v, payload.data() + at, 8);
      at += 8;
      return v;
    };
    need(4);
    std::uint32_t count;
    std::memcpy(&count, payload.data() + at, 4);
    at += 4;
    for (std::uint32_t i = 0; i < count; ++i) {
      auto name_len = read_u16();
      need(name_len);
      std::string name = payload.substr(at, name_len);
      at += name_len;
      Array a;
      a.dtype = read_u8();
      auto rank = read_u8();
      for (int r = 0; r < rank; ++r) a.dims.push_back(read_u64());
      std::size_t width = a.dtype == 2 ? 1 : 8;
      std::size_t bytes_needed = a.elements() * width;
      need(bytes_needed);
      a.data = payload.substr(at, bytes_needed);
      at += bytes_needed;
      arrays_.emplace(std::move(name), std::move(a));
    }
  }

  const Array& get(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end())
      throw Error("checkpoint: missing field '" + name + "'");
    return it->second;
  }

  Eigen::MatrixXd matrix(const std::string& name) const {
    const Array& a = get(name);
    if (a.dtype != 0 || a.dims.size() != 2)
      throw Error("checkpoint: field '" + name + "' is not a matrix");
    Eigen::MatrixXd m(a.dims[0], a.dims[1]);
    std::memcpy(m.data(), a.data.data(), a.data.size());
    return m;
  }

  Eigen::VectorXd vector(const std::string& name) const {
    const Array& a = get(name);
    if (a.dtype != 0 || a.dims.size() != 1)
      throw Error("checkpoint: field '" + name + "' is not a vector");
    Eigen::VectorXd v(a.dims[0]);
    std::memcpy(v.data(), a.data.data(), a.data.size());
    return v;
  }

  double scalar(const std::string& name) const {
    auto v = vector(name);
    if (v.size() != 1) throw Error("checkpoint: field '" + name + "' is not a scalar");
    return v[0];
  }

  std::vector<std::int64_t> ints(const std::string& name) const {
    const Array& a = get(name);
    if (a.dtype != 1) throw Error("checkpoint: field '" + name + "' is not integer");
    std::vector<std::int64_t> v(a.elements());
    std::memcpy(v.data(), a.data.data(), a.data.size());
    return v;
  }

  std::int64_t integer(const std::string& name) const {
    auto v = ints(name);
    if (v.size() != 1) throw Error("checkpoint: field '" + name + "' is not a scalar");
    return v[0];
  }

  std::string text(const std::string& name) const {
    const Array& a = get(name);
    if (a.dtype != 2) throw Error("checkpoint: field '" + name + "' is not text");
    return a.data;
  }

 private:
  std::map<std::string, Array> arrays_;
};

}  // namespace detail

inline std::string serialize(const inference::Checkpoint& ck) {
  detail::Writer w;
  w.integer("model/num_modes", ck.state.num_modes);
  w.integer("model/rank", ck.state.rank);
  w.scalar("model/alpha", ck.state.alpha);
  w.text("model/prior", inference::to_string(ck.state.prior));
  w.scalar("model/horizon", ck.state.horizon);
  w.scalar("model/eps_f", ck.state.eps_f);
  std::vector<std::int64_t> sizes;
  for (const auto& m : ck.state.embed_params) sizes.push_back(m.rows());
  w.ints("model/mode_sizes", sizes);
  for (std::size_t k = 0; k < ck.state.embed_params.size(); ++k)
    w.matrix("embed/k" + std::to_string(k), ck.state.embed_params[k]);

  w.vector("kernel/log_lengthscales", ck.state.svgp.kernel.log_lengthscales);
  Eigen::VectorXd variances(2);
  variances << ck.state.svgp.kernel.log_variance1, ck.state.svgp.kernel.log_variance2;
  w.vector("kernel/log_variance", variances);
  w.scalar("kernel/jitter", ck.state.svgp.kernel.jitter);
  w.matrix("gp/inducing", ck.state.svgp.inducing);
  w.vector("gp/mean", ck.state.svgp.mean);
  w.matrix("gp/chol_raw", ck.state.svgp.chol_raw);
  w.vector("bn/mean", ck.state.bn.mean);
  w.vector("bn/log_sigma", ck.state.bn.log_sigma);
  w.scalar("bn/epsilon", ck.state.bn.epsilon);

  for (std::size_t k = 0; k < ck.state.embed_params.size(); ++k) {
    std::vector<std::int64_t> ids =
        k < ck.raw_ids.size() ? ck.raw_ids[k] : std::vector<std::int64_t>();
    w.ints("map/raw_ids/k" + std::to_string(k), ids);
  }

  w.vector("opt/first", ck.opt.first);
  w.vector("opt/second", ck.opt.second);
  w.integer("opt/step", ck.opt.step);
  w.vector("train/history",
           Eigen::Map<const Eigen::VectorXd>(ck.history.data(), ck.history.size()));
  w.integer("train/rejected_steps", ck.rejected_steps);
  w.integer("train/aborted", ck.aborted ? 1 : 0);

  w.integer("config/rank", ck.config.rank);
  w.scalar("config/alpha", ck.config.alpha);
  w.integer("config/inducing_count", ck.config.inducing_count);
  w.integer("config/batch_size", ck.config.batch_size);
  w.integer("config/epochs", ck.config.epochs);
  w.scalar("config/learning_rate", ck.config.learning_rate);
  w.integer("config/event_samples", ck.config.event_samples);
  w.integer("config/time_samples", ck.config.time_samples);
  w.integer("config/seed", static_cast<std::int64_t>(ck.config.seed));
  w.text("config/prior", inference::to_string(ck.config.prior));
  w.scalar("config/jitter", ck.config.jitter);
  w.scalar("config/eps_f", ck.config.eps_f);
  w.scalar("config/bn_eps", ck.config.bn_eps);
  return w.finish();
}

inline inference::Checkpoint deserialize(const std::string& bytes) {
  detail::Reader r(bytes);
  inference::Checkpoint ck;
  ck.version = kVersion;
  ck.state.num_modes = static_cast<int>(r.integer("model/num_modes"));
  ck.state.rank = static_cast<int>(r.integer("model/rank"));
  ck.state.alpha = r.scalar("model/alpha");
  ck.state.prior = inference::prior_mode_from_string(r.text("model/prior"));
  ck.state.horizon = r.scalar("model/horizon");
  ck.state.eps_f = r.scalar("model/eps_f");
  auto sizes = r.ints("model/mode_sizes");
  if (static_cast<int>(sizes.size()) != ck.state.num_modes)
    throw Error("checkpoint: inconsistent mode count");
  for (int k = 0; k < ck.state.num_modes; ++k) {
    auto m = r.matrix("embed/k" + std::to_string(k));
    if (m.rows() != sizes[k] || m.cols() != ck.state.rank)
      throw Error("checkpoint: inconsistent embedding shape");
    ck.state.embed_params.push_back(std::move(m));
  }

  ck.state.svgp.kernel.log_lengthscales = r.vector("kernel/log_lengthscales");
  auto variances = r.vector("kernel/log_variance");
  if (variances.size() != 2) throw Error("checkpoint: bad kernel variances");
  ck.state.svgp.kernel.log_variance1 = variances[0];
  ck.state.svgp.kernel.log_variance2 = variances[1];
  ck.state.svgp.kernel.jitter = r.scalar("kernel/jitter");
  ck.state.svgp.inducing = r.matrix("gp/inducing");
  ck.state.svgp.mean = r.vector("gp/mean");
  ck.state.svgp.chol_raw = r.matrix("gp/chol_raw");
  if (ck.state.svgp.inducing.cols() != ck.state.input_dim() + 1 ||
      ck.state.svgp.chol_raw.rows() != ck.state.svgp.inducing.rows())
    throw Error("checkpoint: inconsistent GP shapes");
  ck.state.bn.mean = r.vector("bn/mean");
  ck.state.bn.log_sigma = r.vector("bn/log_sigma");
  ck.state.bn.epsilon = r.scalar("bn/epsilon");

  for (int k = 0; k < ck.state.num_modes; ++k)
    ck.raw_ids.push_back(r.ints("map/raw_ids/k" + std::to_string(k)));

  ck.opt.first = r.vector("opt/first");
  ck.opt.second = r.vector("opt/second");
  ck.opt.step = r.integer("opt/step");
  auto history = r.vector("train/history");
  ck.history.assign(history.data(), history.data() + history.size());
  ck.rejected_steps = r.integer("train/rejected_steps");
  ck.aborted = r.integer("train/aborted") != 0;

  ck.config.rank = static_cast<int>(r.integer("config/rank"));
  ck.config.alpha = r.scalar("config/alpha");
  ck.config.inducing_count = static_cast<int>(r.integer("config/inducing_count"));
  ck.config.batch_size = static_cast<int>(r.integer("config/batch_size"));
  ck.config.epochs = static_cast<int>(r.integer("config/epochs"));
  ck.config.learning_rate = r.scalar("config/learning_rate");
  ck.config.event_samples = static_cast<int>(r.integer("config/event_samples"));
  ck.config.time_samples = static_cast<int>(r.integer("config/time_samples"));
  ck.config.seed = static_cast<std::uint64_t>(r.integer("config/seed"));
  ck.config.prior = inference::prior_mode_from_string(r.text("config/prior"));
  ck.config.jitter = r.scalar("config/jitter");
  ck.config.eps_f = r.scalar("config/eps_f");
  ck.config.bn_eps = r.scalar("config/bn_eps");
  return ck;
}

inline void save_checkpoint(const std::string& path, const inference::Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot write '" + path + "'");
  auto bytes = serialize(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("checkpoint: write failed for '" + path + "'");
}

inline inference::Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace nesh::checkpoint
