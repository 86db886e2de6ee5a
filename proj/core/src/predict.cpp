#include "cdyn/predict.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "cdyn/rng.hpp"

namespace cdyn {

ConditionResolution resolve_condition(const ModelParams& params, const SnapshotDataset& ds,
                                      const std::string& condition) {
  ConditionResolution r{condition, condition, false, 0};
  if (params.has_condition(condition)) return r;
  const std::size_t ci = ds.condition_index(condition);
  const std::set<std::string> want(ds.conditions[ci].targets.begin(), ds.conditions[ci].targets.end());
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (const auto& id : params.config().conditions) {
    std::set<std::string> have;
    for (const auto& c : ds.conditions) {
      if (c.id == id) have.insert(c.targets.begin(), c.targets.end());
    }
    std::size_t dist = 0;
    for (const auto& t : want) dist += have.count(t) ? 0 : 1;
    for (const auto& t : have) dist += want.count(t) ? 0 : 1;
    if (dist < best) {
      best = dist;
      r.used = id;
    }
  }
  if (best == std::numeric_limits<std::size_t>::max()) {
    throw ValidationError("predict: model has no conditions to fall back on");
  }
  r.fallback = true;
  r.distance = best;
  return r;
}

Rollout rollout(const ModelParams& params, const Matrix& x_start, const std::string& condition,
                int start_time, int horizon, std::uint64_t seed) {
  if (horizon <= 0) throw ValidationError("predict: horizon must be >= 1, got " + std::to_string(horizon));
  if (x_start.rows() == 0) throw ValidationError("predict: no starting cells");
  Matrix zi = encode_invariant(params, x_start).mean;
  Matrix zn = encode_responsive(params, x_start, condition, start_time).mean;
  Rng rng(seed);
  Rollout out;
  for (int h = 1; h <= horizon; ++h) {
    const TransitionBatch prior = transition_prior(params, zi, zn, condition);
    auto draw = [&](const GaussianBatch& g) {
      Matrix z = g.mean;
      for (std::size_t k = 0; k < z.size(); ++k) {
        const double sd = std::exp(0.5 * g.logvar.data()[k]);
        z.data()[k] += sd * rng.normal();
      }
      return z;
    };
    zi = draw(prior.iota);
    zn = draw(prior.nu);
    const Matrix parts[] = {zi, zn};
    Matrix z = hstack(parts);
    out.x.push_back(decode(params, z));
    out.z.push_back(std::move(z));
    out.times.push_back(start_time + h);
  }
  return out;
}

Matrix encode_dataset(const ModelParams& params, const SnapshotDataset& ds) {
  const std::size_t d = params.config().latent_dim();
  Matrix out(ds.num_cells(), d);
  for (std::size_t c = 0; c < ds.conditions.size(); ++c) {
    const std::string used = resolve_condition(params, ds, ds.conditions[c].id).used;
    for (int t : ds.times()) {
      const auto rows = ds.cells_of(c, t);
      if (rows.empty()) continue;
      const Matrix x = ds.expression.select_rows(rows);
      const Matrix zi = encode_invariant(params, x).mean;
      const Matrix zn = encode_responsive(params, x, used, t).mean;
      for (std::size_t k = 0; k < rows.size(); ++k) {
        auto dst = out.row_span(rows[k]);
        std::copy(zi.row_span(k).begin(), zi.row_span(k).end(), dst.begin());
        std::copy(zn.row_span(k).begin(), zn.row_span(k).end(), dst.begin() + static_cast<std::ptrdiff_t>(zi.cols()));
      }
    }
  }
  return out;
}

}  // namespace cdyn
