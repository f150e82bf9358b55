#pragma once

#include <cstring>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "hourglass/nn.hpp"

namespace hgtest {

using hourglass::Shape;
using hourglass::Tensor;

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& x : t.data()) x = scale * hourglass::standard_normal(rng);
  return t;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

inline hourglass::TokenBatch random_tokens(std::size_t batch, std::size_t length, std::size_t vocab,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  hourglass::TokenBatch t{batch, length, std::vector<std::int32_t>(batch * length)};
  for (auto& x : t.tokens) x = static_cast<std::int32_t>(rng() % vocab);
  return t;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("hourglass-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
}

// Natural-language bytes for training tests: HOURGLASS_CORPUS if set,
// otherwise the sorted Perl documentation pages shipped with the system,
// capped at `limit` bytes. Returns an empty vector when neither exists.
inline std::vector<std::uint8_t> desk_corpus(std::size_t limit = 1000000) {
  std::vector<std::uint8_t> out;
  if (const char* env = std::getenv("HOURGLASS_CORPUS"); env && *env) {
    std::ifstream f(env, std::ios::binary);
    out.assign(std::istreambuf_iterator<char>(f), {});
    if (out.size() > limit) out.resize(limit);
    return out;
  }
  std::vector<std::filesystem::path> pods;
  for (const char* root : {"/usr/share/perl/5.34.0", "/usr/lib/x86_64-linux-gnu/perl/5.34.0"}) {
    std::error_code ec;
    if (!std::filesystem::is_directory(root, ec)) continue;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root, ec)) {
      if (e.is_regular_file() && e.path().extension() == ".pod") pods.push_back(e.path());
    }
  }
  std::sort(pods.begin(), pods.end());
  for (const auto& p : pods) {
    std::ifstream f(p, std::ios::binary);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), {});
    out.insert(out.end(), bytes.begin(), bytes.end());
    if (out.size() >= limit) break;
  }
  if (out.size() > limit) out.resize(limit);
  return out;
}

}  // namespace hgtest
