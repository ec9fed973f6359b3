#pragma once

#include <map>
#include <string>
#include <vector>

#include "wv/autodiff.hpp"
#include "wv/rng.hpp"

namespace wv {

/// Ordered collection of named trainable tensors.
class ParamStore {
 public:
  /// Registers a parameter; names must be unique.
  ad::Var add(const std::string& name, Shape shape, std::vector<double> values);
  ad::Var add_normal(const std::string& name, Shape shape, double stddev, RandomStream& rng);
  ad::Var add_zeros(const std::string& name, Shape shape);

  const ad::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, ad::Var>>& entries() const { return entries_; }

  void zero_grad();
  /// Copies values from `other` for every name present in both. Shapes must match.
  /// Returns the number of copied tensors.
  std::size_t load_values(const std::map<std::string, Tensor>& tensors, bool require_all);
  std::map<std::string, Tensor> to_tensors() const;

  /// Replaces every value with a small random perturbation. Test helper to
  /// escape zero-initialised gates when checking gradients.
  void randomize(RandomStream& rng, double stddev);

  std::int64_t total_elements() const;

 private:
  std::vector<std::pair<std::string, ad::Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam. Parameters that received no gradient in a
/// step are left untouched (their moments are not advanced either).
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params);
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }

  /// Moments keyed "m.<name>" / "v.<name>", plus per-parameter step counts under "t.<name>".
  std::map<std::string, Tensor> state_tensors() const;
  void load_state(const std::map<std::string, Tensor>& state, std::int64_t steps);

 private:
  struct Slot {
    std::vector<double> m, v;
    std::int64_t t = 0;
  };
  AdamWConfig cfg_;
  std::map<std::string, Slot> slots_;
  std::int64_t t_ = 0;
};

struct GradientReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::int64_t coordinates_checked = 0;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double gradient_rel_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `loss_fn` against central differences on
/// a deterministic subsample of at least `min_coords` coordinates per tensor
/// (all coordinates for smaller tensors).
GradientReport finite_diff_gradcheck(const std::function<ad::Var()>& loss_fn,
                                     const std::vector<std::pair<std::string, ad::Var>>& params, double epsilon,
                                     int min_coords = 32, std::uint64_t seed = 0x9C4ECC);

}  // namespace wv
