#include "dualmamba/profile.hpp"

#include <cstdio>
#include <sstream>

#include "dualmamba/cost_trace.hpp"

namespace dualmamba {

std::string report_line_name(const std::string& name) {
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  if (name.rfind("block", 0) == 0) {
    const auto second = name.find('.', first + 1);
    return name.substr(0, second);
  }
  return name.substr(0, first);
}

std::uint64_t CostReport::total_params() const {
  std::uint64_t n = 0;
  for (const auto& l : lines) n += l.params;
  return n;
}

std::uint64_t CostReport::total_flops() const {
  std::uint64_t n = 0;
  for (const auto& l : lines) n += l.flops;
  return n;
}

std::uint64_t CostReport::total_macs() const {
  std::uint64_t n = 0;
  for (const auto& l : lines) n += l.macs;
  return n;
}

const CostReport::Line* CostReport::find(const std::string& name) const {
  for (const auto& l : lines) {
    if (l.name == name) return &l;
  }
  return nullptr;
}

std::string CostReport::table() const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-22s %12s %14s %14s\n", "module", "params", "flops", "macs");
  os << buf;
  for (const auto& l : lines) {
    std::snprintf(buf, sizeof buf, "%-22s %12llu %14llu %14llu\n", l.name.c_str(),
                  static_cast<unsigned long long>(l.params), static_cast<unsigned long long>(l.flops),
                  static_cast<unsigned long long>(l.macs));
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-22s %12llu %14llu %14llu\n", "total",
                static_cast<unsigned long long>(total_params()), static_cast<unsigned long long>(total_flops()),
                static_cast<unsigned long long>(total_macs()));
  os << buf;
  std::snprintf(buf, sizeof buf, "params %.2fK, flops %.2fM (MAC = 2 FLOPs), macs %.2fM\n",
                static_cast<double>(total_params()) / 1e3, static_cast<double>(total_flops()) / 1e6,
                static_cast<double>(total_macs()) / 1e6);
  os << buf;
  os << "selective scan: " << kScanMacsPerState << " MACs per (token, channel, state)\n";
  return os.str();
}

std::string CostReport::key_values() const {
  std::ostringstream os;
  for (const auto& l : lines) os << "params." << l.name << '=' << l.params << '\n';
  for (const auto& l : lines) os << "flops." << l.name << '=' << l.flops << '\n';
  for (const auto& l : lines) os << "macs." << l.name << '=' << l.macs << '\n';
  os << "params.total=" << total_params() << '\n';
  os << "flops.total=" << total_flops() << '\n';
  os << "macs.total=" << total_macs() << '\n';
  os << "scan_macs_per_state=" << kScanMacsPerState << '\n';
  return os.str();
}

namespace {

CostReport::Line& line_for(CostReport& r, const std::string& name) {
  for (auto& l : r.lines) {
    if (l.name == name) return l;
  }
  r.lines.push_back({name, 0, 0, 0});
  return r.lines.back();
}

}  // namespace

CostReport count_params(DualMamba<float>& model) {
  CostReport r;
  model.visit([&](const std::string& name, Tensor<float>& t, ParamKind kind) {
    auto& line = line_for(r, report_line_name(name));
    if (kind == ParamKind::weight) line.params += t.numel();
  });
  return r;
}

CostReport count_flops(DualMamba<float>& model) {
  const auto& c = model.config();
  const Tensor<float> x(Shape{1, c.patch, c.patch, c.bands});
  CostReport r;
  trace::CostRecorder recorder;
  model.forward(x, Mode::eval);
  for (const auto& [scope, counts] : recorder.entries()) {
    auto& line = line_for(r, report_line_name(scope));
    line.flops += counts.flops;
    line.macs += counts.macs;
  }
  return r;
}

CostReport profile(const ModelConfig& config) {
  Rng rng = Rng::stream(0, "init");
  DualMamba<float> model(config, rng);
  CostReport r = count_flops(model);
  for (const auto& l : count_params(model).lines) line_for(r, l.name).params += l.params;
  return r;
}

}  // namespace dualmamba
