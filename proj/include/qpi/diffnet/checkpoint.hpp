#pragma once

// QPIW checkpoint layout (little-endian):
//   "QPIW" u32 version, str architecture, u32 component count
//   per component: str name, u8 frozen, u32 block count,
//                  per block: str name, u32 rank, u32 dims[rank], f64 values
//   u8 has_optimizer; if set: f64 lr, f64 beta1, f64 beta2, f64 eps, u64 step,
//                  u32 entry count, per entry: str key, f64 m[n], f64 v[n]
// where str is u32 length + bytes and n is the size of the keyed block.

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "qpi/blob.hpp"
#include "qpi/diffnet/adam.hpp"
#include "qpi/diffnet/tensor.hpp"
#include "qpi/error.hpp"

namespace qpi::diffnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointComponent {
  std::string name;
  bool frozen = false;
  std::vector<Param> blocks;

  friend bool operator==(const CheckpointComponent&, const CheckpointComponent&) = default;
};

struct OptimizerEntry {
  std::string key;  // "<component>/<block>"
  Tensor first_moment;
  Tensor second_moment;

  friend bool operator==(const OptimizerEntry&, const OptimizerEntry&) = default;
};

struct OptimizerSection {
  double learning_rate = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double epsilon = 0.0;
  std::uint64_t step = 0;
  std::vector<OptimizerEntry> entries;

  friend bool operator==(const OptimizerSection&, const OptimizerSection&) = default;
};

struct Checkpoint {
  std::string architecture;
  std::vector<CheckpointComponent> components;
  std::optional<OptimizerSection> optimizer;

  const CheckpointComponent* find(const std::string& name) const {
    for (const auto& c : components)
      if (c.name == name) return &c;
    return nullptr;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline void put_string(std::string& out, const std::string& s) {
  qpi::detail::put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

inline void put_values(std::string& out, const std::vector<double>& v) {
  for (double x : v) qpi::detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
}

class Reader {
public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CorruptFile("corrupt checkpoint: truncated");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    const auto v = qpi::detail::get_u32(ptr());
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    const auto v = qpi::detail::get_u64(ptr());
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> values(std::size_t n) {
    need(8 * n);
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

private:
  const unsigned char* ptr() const { return reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_; }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out = "QPIW";
  qpi::detail::put_u32(out, kCheckpointVersion);
  detail::put_string(out, ck.architecture);
  qpi::detail::put_u32(out, static_cast<std::uint32_t>(ck.components.size()));
  for (const auto& c : ck.components) {
    detail::put_string(out, c.name);
    out.push_back(c.frozen ? '\1' : '\0');
    qpi::detail::put_u32(out, static_cast<std::uint32_t>(c.blocks.size()));
    for (const auto& b : c.blocks) {
      detail::put_string(out, b.name);
      qpi::detail::put_u32(out, static_cast<std::uint32_t>(b.value.dims.size()));
      for (int d : b.value.dims) qpi::detail::put_u32(out, static_cast<std::uint32_t>(d));
      detail::put_values(out, b.value.values);
    }
  }
  out.push_back(ck.optimizer ? '\1' : '\0');
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    for (double x : {o.learning_rate, o.beta1, o.beta2, o.epsilon})
      qpi::detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
    qpi::detail::put_u64(out, o.step);
    qpi::detail::put_u32(out, static_cast<std::uint32_t>(o.entries.size()));
    for (const auto& e : o.entries) {
      detail::put_string(out, e.key);
      qpi::detail::put_u32(out, static_cast<std::uint32_t>(e.first_moment.dims.size()));
      for (int d : e.first_moment.dims) qpi::detail::put_u32(out, static_cast<std::uint32_t>(d));
      detail::put_values(out, e.first_moment.values);
      detail::put_values(out, e.second_moment.values);
    }
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "QPIW") != 0) throw CorruptFile("corrupt checkpoint: bad magic");
  detail::Reader r(bytes);
  r.u32();  // magic
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CorruptFile("unsupported checkpoint version " + std::to_string(version));

  auto read_dims = [&r]() {
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw CorruptFile("corrupt checkpoint: bad tensor rank");
    std::vector<int> dims;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t d = r.u32();
      if (d == 0 || d > (1u << 24)) throw CorruptFile("corrupt checkpoint: bad tensor dim");
      dims.push_back(static_cast<int>(d));
    }
    return dims;
  };

  Checkpoint ck;
  ck.architecture = r.str();
  const std::uint32_t ncomp = r.u32();
  for (std::uint32_t i = 0; i < ncomp; ++i) {
    CheckpointComponent c;
    c.name = r.str();
    c.frozen = r.u8() != 0;
    const std::uint32_t nblocks = r.u32();
    for (std::uint32_t b = 0; b < nblocks; ++b) {
      Param p;
      p.name = r.str();
      auto dims = read_dims();
      const std::size_t n = Tensor::count(dims);
      p.value = Tensor(std::move(dims), r.values(n));
      p.frozen = c.frozen;
      c.blocks.push_back(std::move(p));
    }
    ck.components.push_back(std::move(c));
  }
  if (r.u8() != 0) {
    OptimizerSection o;
    o.learning_rate = r.f64();
    o.beta1 = r.f64();
    o.beta2 = r.f64();
    o.epsilon = r.f64();
    o.step = r.u64();
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      OptimizerEntry e;
      e.key = r.str();
      auto dims = read_dims();
      const std::size_t cnt = Tensor::count(dims);
      e.first_moment = Tensor(dims, r.values(cnt));
      e.second_moment = Tensor(dims, r.values(cnt));
      o.entries.push_back(std::move(e));
    }
    ck.optimizer = std::move(o);
  }
  if (!r.done()) throw CorruptFile("corrupt checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  qpi::detail::write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(qpi::detail::read_file(path));
}

} // namespace qpi::diffnet
