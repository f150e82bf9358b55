#include "hourglass/data.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <random>

namespace hourglass {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

double byte_entropy_bits(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return 0.0;
  std::array<std::size_t, 256> counts{};
  for (auto b : bytes) ++counts[b];
  double h = 0;
  const double n = static_cast<double>(bytes.size());
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log2(p);
  }
  return h;
}

std::span<const std::uint8_t> Corpus::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw UsageError("unknown split '" + name + "' (expected train, valid or test)");
}

Corpus split_corpus(std::vector<std::uint8_t> bytes, std::string source, const SplitRatios& r) {
  if (bytes.empty()) throw IoError("corpus '" + source + "' is empty");
  if (r.train < 0 || r.valid < 0 || r.test < 0 || std::abs(r.train + r.valid + r.test - 1.0) > 1e-9) {
    throw UsageError("split ratios must be nonnegative and sum to 1");
  }
  const std::size_t n = bytes.size();
  const auto n_train = static_cast<std::size_t>(std::floor(r.train * static_cast<double>(n)));
  const auto n_valid = static_cast<std::size_t>(std::floor(r.valid * static_cast<double>(n)));
  Corpus c;
  c.source = std::move(source);
  c.hash = fnv1a64(bytes);
  c.train.assign(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n_train));
  c.valid.assign(bytes.begin() + static_cast<std::ptrdiff_t>(n_train),
                 bytes.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  c.test.assign(bytes.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), bytes.end());
  return c;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error while reading '" + path.string() + "'");
  return bytes;
}

Corpus load_corpus(const std::filesystem::path& path, const SplitRatios& ratios) {
  return split_corpus(read_bytes(path), path.string(), ratios);
}

BatchStream::BatchStream(std::span<const std::uint8_t> data, std::size_t length, std::size_t batch,
                         std::uint64_t seed)
    : data_(data), length_(length), batch_(batch), seed_(seed), windows_(0) {
  if (length < 2) throw UsageError("window length must be at least 2");
  if (batch == 0) throw UsageError("batch size must be positive");
  windows_ = data.size() > 0 ? (data.size() - 1) / length : 0;
  if (windows_ < batch) {
    throw UsageError("split of " + std::to_string(data.size()) + " bytes holds " + std::to_string(windows_) +
                     " windows of length " + std::to_string(length) + ", fewer than one batch of " +
                     std::to_string(batch));
  }
}

std::vector<std::size_t> BatchStream::order(std::size_t epoch) const {
  std::vector<std::size_t> idx(windows_);
  for (std::size_t i = 0; i < windows_; ++i) idx[i] = i;
  // Fisher-Yates on raw engine output keeps the order identical across
  // standard libraries.
  std::mt19937_64 rng(seed_ + epoch);
  for (std::size_t i = windows_; i-- > 1;) std::swap(idx[i], idx[static_cast<std::size_t>(rng() % (i + 1))]);
  return idx;
}

Batch BatchStream::at(std::size_t n) const {
  const std::size_t per_epoch = batches_per_epoch();
  Batch b;
  b.epoch = n / per_epoch;
  const std::size_t first = (n % per_epoch) * batch_;
  const auto idx = order(b.epoch);
  b.input = TokenBatch{batch_, length_, std::vector<std::int32_t>(batch_ * length_)};
  b.target = b.input;
  for (std::size_t r = 0; r < batch_; ++r) {
    const std::size_t start = idx[first + r] * length_;
    for (std::size_t t = 0; t < length_; ++t) {
      b.input.tokens[r * length_ + t] = data_[start + t];
      b.target.tokens[r * length_ + t] = data_[start + t + 1];
    }
  }
  return b;
}

std::string to_string(PositionClass c) {
  switch (c) {
    case PositionClass::chunk_start: return "chunk_start";
    case PositionClass::separator: return "separator";
    case PositionClass::chunk_end: return "chunk_end";
  }
  return "?";
}

RepeatsData gen_repeats(const RepeatsTask& task, std::size_t n_sequences, std::uint64_t seed) {
  if (task.alphabet == 0) throw UsageError("repeats task needs a nonempty alphabet");
  if (task.length == 0 || task.length % 3 != 0) {
    throw UsageError("repeats task length must be a positive multiple of 3, got " + std::to_string(task.length));
  }
  RepeatsData out;
  out.tokens = TokenBatch{n_sequences, task.length, std::vector<std::int32_t>(n_sequences * task.length)};
  for (std::size_t p = 0; p < task.length; ++p) {
    out.classes.push_back(p % 3 == 0 ? PositionClass::chunk_start
                          : p % 3 == 1 ? PositionClass::separator
                                       : PositionClass::chunk_end);
  }
  std::mt19937_64 rng(seed);
  for (std::size_t s = 0; s < n_sequences; ++s) {
    std::int32_t* row = out.tokens.tokens.data() + s * task.length;
    for (std::size_t c = 0; c < task.length; c += 3) {
      const auto letter = static_cast<std::int32_t>(rng() % task.alphabet);
      row[c] = letter;
      row[c + 1] = task.separator();
      row[c + 2] = letter;
    }
  }
  return out;
}

}  // namespace hourglass
