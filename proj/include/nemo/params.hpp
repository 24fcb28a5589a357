#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nemo/tensor.hpp"

namespace nemo {

// Registry of named parameter tensors with matching gradient slots.
// Iteration order is registration order, which makes optimizer updates and
// checkpoints deterministic. Buffers (e.g. batchnorm running stats) are
// saved/loaded but never updated by the optimizer.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;  // null for buffers
    bool trainable = true;
  };

  void add(const std::string& name, Tensor<T>* value, Tensor<T>* grad) {
    entries_.push_back({name, value, grad, true});
  }
  void add_buffer(const std::string& name, Tensor<T>* value) {
    entries_.push_back({name, value, nullptr, false});
  }

  void zero_grads() {
    for (auto& e : entries_)
      if (e.grad) e.grad->zero();
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value->numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-7;
};

// Per-parameter first/second moments, aligned with the store's trainable
// entries by registration order.
template <typename T>
struct AdamState {
  AdamConfig cfg;
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

// Classic Adam with bias correction. Weight decay enters as an L2 term added
// to the gradient (not decoupled).
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state) {
  std::vector<typename ParamStore<T>::Entry*> trainables;
  for (auto& e : params.entries())
    if (e.trainable) trainables.push_back(&e);

  if (state.m.empty()) {
    for (auto* e : trainables) {
      state.m.emplace_back(e->value->shape());
      state.v.emplace_back(e->value->shape());
    }
  }
  if (state.m.size() != trainables.size())
    throw std::invalid_argument("adam state does not match parameter store");

  state.step += 1;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  for (size_t i = 0; i < trainables.size(); ++i) {
    Tensor<T>& w = *trainables[i]->value;
    const Tensor<T>& g = *trainables[i]->grad;
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    for (std::int64_t j = 0; j < w.numel(); ++j) {
      const double grad =
          static_cast<double>(g[j]) +
          state.cfg.weight_decay * static_cast<double>(w[j]);
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * grad;
      const double vj =
          b2 * static_cast<double>(v[j]) + (1.0 - b2) * grad * grad;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / corr1;
      const double vhat = vj / corr2;
      w[j] = static_cast<T>(static_cast<double>(w[j]) -
                            state.cfg.lr * mhat / (std::sqrt(vhat) +
                                                   state.cfg.eps));
    }
  }
}

// Parameter checkpoint ("NEMP"): magic, version u8, then repeated records of
// (name length u16, name bytes, rank u8, dims u32 x rank, f32 LE payload).
namespace nemp {

inline constexpr char kMagic[4] = {'N', 'E', 'M', 'P'};
inline constexpr std::uint8_t kVersion = 1;

template <typename T>
void save(const ParamStore<T>& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for write: " + path);
  f.write(kMagic, 4);
  f.put(static_cast<char>(kVersion));
  for (const auto& e : params.entries()) {
    const std::uint16_t name_len = static_cast<std::uint16_t>(e.name.size());
    f.write(reinterpret_cast<const char*>(&name_len), 2);
    f.write(e.name.data(), name_len);
    const std::uint8_t rank = static_cast<std::uint8_t>(e.value->rank());
    f.put(static_cast<char>(rank));
    for (int d = 0; d < e.value->rank(); ++d) {
      const std::uint32_t dim = static_cast<std::uint32_t>(e.value->dim(d));
      f.write(reinterpret_cast<const char*>(&dim), 4);
    }
    for (std::int64_t i = 0; i < e.value->numel(); ++i) {
      const float v = static_cast<float>((*e.value)[i]);
      f.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

// Loads records into the store by name; every store entry must be present
// in the file with a matching shape.
template <typename T>
void load(ParamStore<T>& params, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const int version = f.get();
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version");

  std::vector<bool> seen(params.entries().size(), false);
  while (true) {
    std::uint16_t name_len = 0;
    f.read(reinterpret_cast<char*>(&name_len), 2);
    if (f.eof()) break;
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const int rank = f.get();
    std::vector<std::int64_t> dims(static_cast<size_t>(rank));
    for (int d = 0; d < rank; ++d) {
      std::uint32_t dim = 0;
      f.read(reinterpret_cast<char*>(&dim), 4);
      dims[static_cast<size_t>(d)] = dim;
    }
    std::int64_t n = Tensor<float>::numel_of(dims);
    std::vector<float> payload(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(payload.data()),
           static_cast<std::streamsize>(n * 4));
    if (!f) throw std::runtime_error("truncated checkpoint payload: " + path);

    bool matched = false;
    for (size_t i = 0; i < params.entries().size(); ++i) {
      auto& e = params.entries()[i];
      if (e.name != name) continue;
      if (e.value->shape() != dims)
        throw std::runtime_error("checkpoint shape mismatch for " + name);
      for (std::int64_t j = 0; j < n; ++j)
        (*e.value)[j] = static_cast<T>(payload[static_cast<size_t>(j)]);
      seen[i] = true;
      matched = true;
      break;
    }
    (void)matched;  // unknown records are tolerated
  }
  for (size_t i = 0; i < seen.size(); ++i)
    if (!seen[i])
      throw std::runtime_error("checkpoint missing tensor: " +
                               params.entries()[i].name);
}

}  // namespace nemp
}  // namespace nemo
