#include "wv/params.hpp"

#include <algorithm>
#include <cmath>

namespace wv {

ad::Var ParamStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  require(!contains(name), "duplicate parameter name: " + name);
  auto v = ad::Var::parameter(std::move(shape), std::move(values));
  index_[name] = entries_.size();
  entries_.emplace_back(name, v);
  return v;
}

ad::Var ParamStore::add_normal(const std::string& name, Shape shape, double stddev, RandomStream& rng) {
  std::vector<double> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = stddev * rng.normal();
  return add(name, std::move(shape), std::move(values));
}

ad::Var ParamStore::add_zeros(const std::string& name, Shape shape) {
  const auto n = static_cast<std::size_t>(numel(shape));
  return add(name, std::move(shape), std::vector<double>(n, 0.0));
}

const ad::Var& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].second;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

std::size_t ParamStore::load_values(const std::map<std::string, Tensor>& tensors, bool require_all) {
  std::size_t copied = 0;
  for (auto& [name, v] : entries_) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      if (require_all) throw ConfigError("checkpoint is missing parameter " + name);
      continue;
    }
    if (it->second.shape() != v.shape())
      throw ConfigError("parameter " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(v.shape()));
    const auto src = it->second.to_f64();
    std::copy(src.begin(), src.end(), v.mutable_value().begin());
    ++copied;
  }
  return copied;
}

std::map<std::string, Tensor> ParamStore::to_tensors() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : entries_) out.emplace(name, v.to_tensor());
  return out;
}

void ParamStore::randomize(RandomStream& rng, double stddev) {
  for (auto& [name, v] : entries_)
    for (auto& x : v.mutable_value()) x += stddev * rng.normal();
}

std::int64_t ParamStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [name, v] : entries_) n += v.numel();
  return n;
}

void AdamW::step(ParamStore& params) {
  ++t_;
  for (auto& [name, var] : params.entries()) {
    const auto g = var.grad();
    if (g.empty()) continue;
    auto& slot = slots_[name];
    if (slot.m.empty()) {
      slot.m.assign(g.size(), 0.0);
      slot.v.assign(g.size(), 0.0);
    }
    ++slot.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
    auto p = ad::Var(var).mutable_value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      p[i] *= 1.0 - cfg_.lr * cfg_.weight_decay;
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

std::map<std::string, Tensor> AdamW::state_tensors() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, slot] : slots_) {
    const auto n = static_cast<std::int64_t>(slot.m.size());
    out.emplace("m." + name, Tensor::f64({n}, slot.m));
    out.emplace("v." + name, Tensor::f64({n}, slot.v));
    out.emplace("t." + name, Tensor::f64({1}, {static_cast<double>(slot.t)}));
  }
  return out;
}

void AdamW::load_state(const std::map<std::string, Tensor>& state, std::int64_t steps) {
  slots_.clear();
  for (const auto& [key, tensor] : state) {
    if (key.rfind("m.", 0) != 0) continue;
    const std::string name = key.substr(2);
    auto v = state.find("v." + name);
    auto t = state.find("t." + name);
    if (v == state.end() || t == state.end()) throw ConfigError("optimizer state incomplete for " + name);
    Slot slot;
    slot.m = tensor.to_f64();
    slot.v = v->second.to_f64();
    slot.t = static_cast<std::int64_t>(t->second.to_f64().at(0));
    slots_.emplace(name, std::move(slot));
  }
  t_ = steps;
}

double gradient_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

GradientReport finite_diff_gradcheck(const std::function<ad::Var()>& loss_fn,
                                     const std::vector<std::pair<std::string, ad::Var>>& params, double epsilon,
                                     int min_coords, std::uint64_t seed) {
  for (const auto& [name, p] : params) ad::Var(p).zero_grad();
  ad::Var loss = loss_fn();
  ad::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, p] : params) {
    const auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(static_cast<std::size_t>(p.numel()), 0.0);
  }

  GradientReport report;
  RandomStream rng(seed, 0);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ad::Var p = params[pi].second;
    const std::int64_t n = p.numel();
    std::vector<std::int64_t> coords;
    if (n <= min_coords) {
      for (std::int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < min_coords; ++i) coords.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))));
    }
    for (std::int64_t idx : coords) {
      auto values = p.mutable_value();
      const double orig = values[idx];
      double up = 0.0, down = 0.0;
      {
        ad::NoGradGuard guard;
        values[idx] = orig + epsilon;
        up = loss_fn().item();
        values[idx] = orig - epsilon;
        down = loss_fn().item();
      }
      values[idx] = orig;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[pi][static_cast<std::size_t>(idx)];
      const double err = gradient_rel_error(a, numeric);
      ++report.coordinates_checked;
      if (err > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = err;
        report.worst_param = params[pi].first;
        report.worst_index = idx;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace wv
