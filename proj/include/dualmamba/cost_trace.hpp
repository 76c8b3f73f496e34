#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dualmamba::trace {

struct Counts {
  std::uint64_t flops = 0;
  std::uint64_t macs = 0;
};

/// Collects per-scope FLOP/MAC counts reported by tensor ops while alive.
///
/// Ops call count() with their analytic cost; modules open Scope objects so
/// the cost lands under a dotted hierarchical name (e.g. "block0.dpe").
/// Only one recorder may be active per thread.
class CostRecorder {
 public:
  CostRecorder();
  ~CostRecorder();
  CostRecorder(const CostRecorder&) = delete;
  CostRecorder& operator=(const CostRecorder&) = delete;

  // Scopes in first-touched order.
  const std::vector<std::pair<std::string, Counts>>& entries() const { return entries_; }

 private:
  friend class Scope;
  friend void count(std::uint64_t, std::uint64_t);

  void add(std::uint64_t flops, std::uint64_t macs);

  std::vector<std::string> path_;
  std::vector<std::pair<std::string, Counts>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  CostRecorder* previous_ = nullptr;
};

class Scope {
 public:
  explicit Scope(std::string_view name);
  ~Scope();
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

 private:
  bool pushed_ = false;
};

// Suspends the active recorder, e.g. for parameter-side work that does not
// scale with the batch and would be cached at inference time.
class Pause {
 public:
  Pause();
  ~Pause();
  Pause(const Pause&) = delete;
  Pause& operator=(const Pause&) = delete;

 private:
  CostRecorder* saved_;
};

bool recording();
void count(std::uint64_t flops, std::uint64_t macs);

}  // namespace dualmamba::trace
