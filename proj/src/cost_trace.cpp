#include "dualmamba/cost_trace.hpp"

#include "dualmamba/error.hpp"

namespace dualmamba::trace {
namespace {
thread_local CostRecorder* g_active = nullptr;
}

CostRecorder::CostRecorder() : previous_(g_active) {
  if (previous_ != nullptr) {
    throw AutodiffError("CostRecorder: a recorder is already active on this thread");
  }
  g_active = this;
}

CostRecorder::~CostRecorder() { g_active = previous_; }

void CostRecorder::add(std::uint64_t flops, std::uint64_t macs) {
  std::string key;
  for (const auto& part : path_) {
    if (!key.empty()) key += '.';
    key += part;
  }
  if (key.empty()) key = "(root)";
  auto [it, inserted] = index_.try_emplace(key, entries_.size());
  if (inserted) entries_.emplace_back(key, Counts{});
  auto& c = entries_[it->second].second;
  c.flops += flops;
  c.macs += macs;
}

Scope::Scope(std::string_view name) {
  if (g_active != nullptr) {
    g_active->path_.emplace_back(name);
    pushed_ = true;
  }
}

Scope::~Scope() {
  if (pushed_ && g_active != nullptr) g_active->path_.pop_back();
}

Pause::Pause() : saved_(g_active) { g_active = nullptr; }

Pause::~Pause() { g_active = saved_; }

bool recording() { return g_active != nullptr; }

void count(std::uint64_t flops, std::uint64_t macs) {
  if (g_active != nullptr) g_active->add(flops, macs);
}

}  // namespace dualmamba::trace
