#include "cdyn/batches.hpp"

#include <algorithm>

#include "cdyn/rng.hpp"

namespace cdyn {

namespace {

std::vector<std::size_t> subsample(const std::vector<std::size_t>& rows, std::size_t k, Rng& rng) {
  if (rows.size() <= k) return rows;
  auto perm = rng.permutation(rows.size());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = rows[perm[i]];
  return out;
}

// Pairs (src rows, dst rows) of a population pair, n pairs total.
CouplingPlan couple(const Matrix& src, const Matrix& dst, CouplingMethod method, const CrossfitOptions& base,
                    std::size_t n, std::uint64_t seed) {
  CrossfitOptions o = base;
  o.method = method;
  o.n_pairs = n;
  return crossfit_coupling(src, dst, o, seed);
}

}  // namespace

BatchStream build_pair_batches(const SnapshotDataset& ds, const std::vector<std::string>& training,
                               const BatchOptions& options, std::uint64_t seed) {
  if (options.batch_size == 0) throw ValidationError("build_pair_batches: batch size must be >= 1");
  if (options.coupling_pool == 0) throw ValidationError("build_pair_batches: coupling pool must be >= 1");
  const std::size_t ctrl = ds.control_index();
  const auto times = ds.times();
  Rng rng(seed);
  BatchStream stream;
  std::uint64_t group = 0;
  for (const auto& id : training) {
    const std::size_t c = ds.condition_index(id);
    for (std::size_t k = 1; k < times.size(); ++k) {
      const int t = times[k];
      const auto prev_rows = ds.cells_of(c, times[k - 1]);
      const auto curr_rows = ds.cells_of(c, t);
      ++group;
      if (prev_rows.empty() || curr_rows.empty() || times[k - 1] != t - 1) {
        stream.skipped.push_back(id + "@t" + std::to_string(t));
        continue;
      }
      const std::size_t n = options.pairs_per_group == 0 ? std::min(prev_rows.size(), curr_rows.size())
                                                         : options.pairs_per_group;
      const std::uint64_t gseed = derive_seed(seed, group);

      // Temporal pairs, coupled on subsampled pools when Sinkhorn is used.
      std::vector<std::size_t> src_pool = prev_rows, dst_pool = curr_rows;
      if (options.temporal == CouplingMethod::kSinkhorn) {
        src_pool = subsample(prev_rows, options.coupling_pool, rng);
        dst_pool = subsample(curr_rows, options.coupling_pool, rng);
      }
      const CouplingPlan tp = couple(ds.expression.select_rows(src_pool), ds.expression.select_rows(dst_pool),
                                     options.temporal, options.align, n, derive_seed(gseed, 1));

      std::optional<CouplingPlan> ap;
      std::vector<std::size_t> pert_pool, ctrl_pool;
      if (options.with_alignment && c != ctrl) {
        const auto ctrl_rows = ds.cells_of(ctrl, t);
        if (!ctrl_rows.empty()) {
          pert_pool = subsample(curr_rows, options.coupling_pool, rng);
          ctrl_pool = subsample(ctrl_rows, options.coupling_pool, rng);
          ap = couple(ds.expression.select_rows(pert_pool), ds.expression.select_rows(ctrl_pool),
                      options.align.method, options.align, n, derive_seed(gseed, 2));
        }
      }

      for (std::size_t start = 0; start < n; start += options.batch_size) {
        const std::size_t len = std::min(options.batch_size, n - start);
        std::vector<std::size_t> a(len), b(len);
        for (std::size_t i = 0; i < len; ++i) {
          a[i] = src_pool[tp.src[start + i]];
          b[i] = dst_pool[tp.dst[start + i]];
        }
        TrainingStep step;
        step.pairs = PairBatch{ds.expression.select_rows(a), ds.expression.select_rows(b), id, t};
        if (ap) {
          std::vector<std::size_t> p(len), q(len);
          for (std::size_t i = 0; i < len; ++i) {
            p[i] = pert_pool[ap->src[start + i]];
            q[i] = ctrl_pool[ap->dst[start + i]];
          }
          step.align = AlignBatch{ds.expression.select_rows(p), ds.expression.select_rows(q), id, t};
        }
        stream.steps.push_back(std::move(step));
      }
    }
  }
  const auto order = rng.permutation(stream.steps.size());
  std::vector<TrainingStep> shuffled;
  shuffled.reserve(order.size());
  for (std::size_t i : order) shuffled.push_back(std::move(stream.steps[i]));
  stream.steps = std::move(shuffled);
  return stream;
}

}  // namespace cdyn
