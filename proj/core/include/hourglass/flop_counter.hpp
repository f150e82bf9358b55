#pragma once

#include <cstdint>

namespace hourglass {

// Instrumented tally of floating-point work done by forward kernels on the
// current thread. Products count 2 per multiply-add, bias additions 1 per
// element. Backward kernels never count.
class FlopCounter {
 public:
  static void add(std::uint64_t flops) noexcept {
    if (state().enabled) state().total += flops;
  }
  static std::uint64_t total() noexcept { return state().total; }

  // RAII scope: resets and enables counting until destroyed.
  class Scope {
   public:
    Scope() noexcept : saved_{state().enabled, state().total} { state() = {true, 0}; }
    ~Scope() { state() = {saved_.enabled, saved_.total}; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    std::uint64_t flops() const noexcept { return state().total; }

   private:
    struct Saved {
      bool enabled;
      std::uint64_t total;
    } saved_;
  };

 private:
  struct State {
    bool enabled = false;
    std::uint64_t total = 0;
  };
  static State& state() noexcept {
    thread_local State s;
    return s;
  }
};

}  // namespace hourglass
