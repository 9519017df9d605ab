#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dsp/nn/graph.hpp"
#include "dsp/nn/model.hpp"
#include "dsp/random.hpp"

namespace dsp::nn {

struct GradCheckOptions {
  double epsilon = 1e-4;
  std::size_t samples_per_param = 6;
  std::uint64_t seed = 1;
  /// Parameter-name prefixes to check, e.g. "gate" or "enc.0"; empty checks all.
  std::vector<std::string> groups;
  /// Coordinates whose analytic gradient is below this are sampled only when
  /// an array has no larger ones; their finite differences are mostly noise.
  double min_gradient = 1e-6;
};

struct GradCheckEntry {
  std::string param;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::vector<GradCheckEntry> entries;
  std::map<std::string, double> per_group;  // keyed by name up to the first '.'
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

inline std::string param_group(const std::string& name) { return name.substr(0, name.find('.')); }

/// Compares reverse-mode gradients of `loss` with central differences on
/// sampled coordinates of `params`. `loss(graph)` must build the loss from
/// the live values of `params`.
template <typename LossFn>
GradCheckResult grad_check(ParameterSet<double>& params, LossFn&& loss, const GradCheckOptions& options = {}) {
  if (options.epsilon < 1e-5 || options.epsilon > 1e-3)
    throw Error(Errc::ConfigError, "gradient check epsilon must be in [1e-5, 1e-3]");
  std::vector<Matrix<double>> analytic(params.size());
  {
    Graph<double> g(params.size());
    Var l = loss(g);
    g.backward(l);
    g.for_each_param_grad([&](int i, const Matrix<double>& gi) { analytic[static_cast<std::size_t>(i)] = gi; });
  }
  auto evaluate = [&] {
    Graph<double> g(params.size());
    return g.scalar(loss(g));
  };

  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& prm = params[p];
    if (!options.groups.empty() &&
        std::none_of(options.groups.begin(), options.groups.end(),
                     [&](const std::string& g) { return prm.name.rfind(g, 0) == 0; }))
      continue;
    Matrix<double> a = analytic[p].size() ? analytic[p] : Matrix<double>::Zero(prm.value.rows(), prm.value.cols());
    std::vector<Eigen::Index> strong, all;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      all.push_back(i);
      if (std::abs(a.data()[i]) >= options.min_gradient) strong.push_back(i);
    }
    const auto& pool = strong.empty() ? all : strong;
    for (std::size_t s = 0; s < std::min(options.samples_per_param, pool.size()); ++s) {
      Eigen::Index flat = pool[rng.below(pool.size())];
      double& x = prm.value.data()[flat];
      const double saved = x;
      x = saved + options.epsilon;
      double up = evaluate();
      x = saved - options.epsilon;
      double down = evaluate();
      x = saved;
      GradCheckEntry e;
      e.param = prm.name;
      e.row = flat % prm.value.rows();
      e.col = flat / prm.value.rows();
      e.analytic = a.data()[flat];
      e.numeric = (up - down) / (2 * options.epsilon);
      e.rel_error = relative_error(e.analytic, e.numeric);
      result.max_rel_error = std::max(result.max_rel_error, e.rel_error);
      auto& group = result.per_group[param_group(prm.name)];
      group = std::max(group, e.rel_error);
      result.entries.push_back(std::move(e));
    }
  }
  return result;
}

/// Gradient check of the summed sequence loss of a model over `batch`.
inline GradCheckResult grad_check(PointerGenerator<double>& model, const std::vector<Example>& batch,
                                  const GradCheckOptions& options = {}) {
  return grad_check(
      model.params(),
      [&](Graph<double>& g) {
        std::vector<Var> losses;
        for (const auto& ex : batch) losses.push_back(model.sequence_nll(g, ex.source, ex.target));
        return losses.size() == 1 ? losses.front() : g.add_all(losses);
      },
      options);
}

}  // namespace dsp::nn
