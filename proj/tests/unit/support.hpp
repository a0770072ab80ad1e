// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <algorithm>
#include <functional>
#include <string>

#include <unistd.h>

#include "avssl/core/rng.hpp"
#include "avssl/nn/autograd.hpp"

namespace avssl::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("avssl_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

/// Largest |analytic - central difference| / max(|a|, |fd|, floor) over
/// every element of the leaf.
inline double max_rel_error(const nn::Var<double>& leaf, const std::function<double()>& f, double h = 1e-6,
                            double floor = 1e-7) {
  double worst = 0.0;
  auto& v = leaf->value.storage();
  const auto& g = leaf->grad().storage();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f();
    v[i] = keep - h;
    const double down = f();
    v[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(g[i] - fd) / std::max({std::abs(g[i]), std::abs(fd), floor}));
  }
  return worst;
}

}  // namespace avssl::test
