#pragma once

// Shared fixtures for the unit and acceptance tests.

#include "hyperpersona/encoder.hpp"
#include "hyperpersona/nn.hpp"
#include "hyperpersona/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace hptest {

using namespace hyperpersona;

// d = 8, one layer; small enough that every parameter can be probed.
inline EncoderConfig micro_config(int layers = 1) {
  EncoderConfig c;
  c.vocab_size = 32;
  c.hidden_dim = 8;
  c.num_layers = layers;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.max_seq_len = 100;
  c.num_classes = 2;
  return c;
}

inline std::vector<int> random_tokens(Rng& rng, int vocab, int min_len, int max_len) {
  const auto n = static_cast<int>(rng.between(min_len, max_len));
  std::vector<int> out(static_cast<std::size_t>(n));
  for (auto& t : out) t = static_cast<int>(rng.between(1, vocab - 1));
  return out;
}

// Moves every entry by a small random amount so that no parameter sits on a
// degenerate point (zero B factors, unit gains).
template <typename Scalar>
void jitter(const std::vector<ParamView<Scalar>>& params, Rng& rng, double scale) {
  for (const auto& p : params) {
    for (Index k = 0; k < p.size(); ++k) p.data[k] += static_cast<Scalar>(scale * rng.normal());
  }
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// Central differences over every entry of `params` against the analytic
// gradients in `grads` (same order and shapes). Relative error is
// |a - n| / max(|a|, |n|, floor).
inline GradCheck finite_difference_check(const std::vector<ParamView<double>>& params,
                                         const std::vector<ParamView<double>>& grads,
                                         const std::function<double()>& loss, double h = 1e-6,
                                         double floor = 1e-8) {
  GradCheck out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    for (Index k = 0; k < p.size(); ++k) {
      const double saved = p.data[k];
      p.data[k] = saved + h;
      const double up = loss();
      p.data[k] = saved - h;
      const double down = loss();
      p.data[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[i].data[k];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = p.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("hp_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace hptest
