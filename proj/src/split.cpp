#include "dualmamba/split.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "dualmamba/log.hpp"
#include "dualmamba/rng.hpp"

namespace dualmamba {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

SplitSpec SplitSpec::parse(std::string_view text) {
  text = trim(text);
  SplitSpec spec;
  constexpr std::string_view prefix = "counts:";
  if (text.substr(0, prefix.size()) == prefix) {
    spec.kind = Kind::counts;
    std::string_view rest = text.substr(prefix.size());
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto item = trim(rest.substr(0, comma));
      std::size_t v = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
      if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
        throw ConfigError("split: bad count '" + std::string(item) + "'");
      }
      spec.counts.push_back(v);
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
    }
    if (spec.counts.empty()) throw ConfigError("split: counts list is empty");
    return spec;
  }
  spec.kind = Kind::proportion;
  try {
    std::size_t used = 0;
    spec.proportion = std::stod(std::string(text), &used);
    if (used != text.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("split: expected a proportion like 0.1 or counts:5,143,..., got '" + std::string(text) + "'");
  }
  if (!(spec.proportion > 0.0 && spec.proportion < 1.0)) {
    throw ConfigError("split: proportion must lie in (0, 1), got " + std::string(text));
  }
  return spec;
}

std::string SplitSpec::to_string() const {
  std::ostringstream os;
  if (kind == Kind::proportion) {
    os << proportion;
  } else {
    os << "counts:";
    for (std::size_t i = 0; i < counts.size(); ++i) os << (i ? "," : "") << counts[i];
  }
  return os.str();
}

std::vector<Pixel> SampleSplit::train() const {
  std::vector<Pixel> out;
  for (const auto& c : train_by_class) out.insert(out.end(), c.begin(), c.end());
  return out;
}

std::vector<Pixel> SampleSplit::test() const {
  std::vector<Pixel> out;
  for (const auto& c : test_by_class) out.insert(out.end(), c.begin(), c.end());
  return out;
}

SampleSplit split_samples(const std::vector<std::uint16_t>& labels, std::size_t width, std::size_t num_classes,
                          const SplitSpec& spec, std::uint64_t seed) {
  if (width == 0 || labels.size() % width != 0) throw ConfigError("split: label raster width does not divide its size");
  if (spec.kind == SplitSpec::Kind::counts && spec.counts.size() != num_classes) {
    throw ConfigError("split: " + std::to_string(spec.counts.size()) + " counts given for " +
                      std::to_string(num_classes) + " classes");
  }
  std::vector<std::vector<Pixel>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto k = labels[i];
    if (k == 0) continue;
    if (k > num_classes) throw ConfigError("split: label " + std::to_string(k) + " exceeds class count");
    by_class[k - 1].push_back({i / width, i % width});
  }

  Rng rng = Rng::stream(seed, "split");
  SampleSplit out;
  out.seed = seed;
  out.train_by_class.resize(num_classes);
  out.test_by_class.resize(num_classes);
  for (std::size_t k = 0; k < num_classes; ++k) {
    auto pool = by_class[k];
    const std::size_t n = pool.size();
    if (n == 0) continue;
    rng.shuffle(pool.begin(), pool.end());
    std::size_t n_train = 0;
    if (n == 1) {
      warn("class " + std::to_string(k + 1) + " has a single labeled pixel; it is used for training only");
      n_train = 1;
    } else if (spec.kind == SplitSpec::Kind::proportion) {
      const double want = std::ceil(spec.proportion * static_cast<double>(n) - 1e-9);
      n_train = std::clamp<std::size_t>(static_cast<std::size_t>(want), 1, n - 1);
    } else {
      n_train = spec.counts[k];
      if (n_train == 0 || n_train >= n) {
        throw ConfigError("split: class " + std::to_string(k + 1) + " has " + std::to_string(n) +
                          " labeled pixels; its training count must be in [1, " + std::to_string(n - 1) + "], got " +
                          std::to_string(n_train));
      }
    }
    out.train_by_class[k].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test_by_class[k].assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
  }
  return out;
}

}  // namespace dualmamba
