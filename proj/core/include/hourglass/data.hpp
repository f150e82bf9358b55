#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hourglass/nn.hpp"

namespace hourglass {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
inline std::uint64_t fnv1a64(std::string_view text) {
  return fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Order-0 (unigram) entropy of a byte stream in bits per byte.
double byte_entropy_bits(std::span<const std::uint8_t> bytes);

struct SplitRatios {
  double train = 0.90;
  double valid = 0.05;
  double test = 0.05;
};

// Byte corpus split contiguously in file order. Train and valid sizes are
// floor(ratio * n); test takes the rest.
struct Corpus {
  std::vector<std::uint8_t> train;
  std::vector<std::uint8_t> valid;
  std::vector<std::uint8_t> test;
  std::string source;
  std::uint64_t hash = 0;
  std::size_t vocab_size = 256;

  std::span<const std::uint8_t> split(const std::string& name) const;
};

Corpus split_corpus(std::vector<std::uint8_t> bytes, std::string source, const SplitRatios& ratios = {});
Corpus load_corpus(const std::filesystem::path& path, const SplitRatios& ratios = {});
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

struct Batch {
  TokenBatch input;
  TokenBatch target;  // target[b, t] == input[b, t + 1]
  std::size_t epoch = 0;
};

// Contiguous windows of `length + 1` bytes starting at multiples of
// `length`, visited in a per-epoch shuffled order; each batch takes the
// next `batch` windows and an incomplete final batch is dropped. Batch n
// is a pure function of (data, length, batch, seed, n).
class BatchStream {
 public:
  BatchStream(std::span<const std::uint8_t> data, std::size_t length, std::size_t batch, std::uint64_t seed);

  std::size_t windows() const { return windows_; }
  std::size_t batches_per_epoch() const { return windows_ / batch_; }
  Batch at(std::size_t n) const;
  Batch next() { return at(cursor_++); }

 private:
  std::vector<std::size_t> order(std::size_t epoch) const;

  std::span<const std::uint8_t> data_;
  std::size_t length_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::size_t windows_;
  std::size_t cursor_ = 0;
};

enum class PositionClass : std::uint8_t { chunk_start, separator, chunk_end };

std::string to_string(PositionClass c);

// Sequences of three-token chunks `x # x` with letters drawn uniformly
// from [0, alphabet); the separator is token id `alphabet`.
struct RepeatsTask {
  std::size_t alphabet = 4;
  std::size_t length = 384;

  std::size_t vocab_size() const { return alphabet + 1; }
  std::int32_t separator() const { return static_cast<std::int32_t>(alphabet); }
};

struct RepeatsData {
  TokenBatch tokens;                    // [n_sequences, length]
  std::vector<PositionClass> classes;  // per position, shared by all sequences
};

RepeatsData gen_repeats(const RepeatsTask& task, std::size_t n_sequences, std::uint64_t seed);

}  // namespace hourglass
