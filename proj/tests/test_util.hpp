#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>

#include "doctest.h"
#include "mocnn/random.hpp"
#include "mocnn/tensor.hpp"

namespace testutil {

inline mocnn::Tensord random_tensor(mocnn::Shape shape, mocnn::Rng& rng, double lo = -1, double hi = 1) {
  mocnn::Tensord t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mocnn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Central-difference gradient of f with respect to every entry of x.
inline std::vector<double> numeric_gradient(mocnn::Tensord& x, const std::function<double()>& f, double eps = 1e-4) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f();
    x[i] = keep - eps;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

/// ||a - n|| / (||a|| + ||n||), zero when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> n) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nn);
  return denom == 0 ? 0 : std::sqrt(diff) / denom;
}

}  // namespace testutil
