#include "cdyn/objective.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include <json.hpp>

#include "cdyn/rng.hpp"

namespace cdyn {

namespace {

std::uint64_t hash_rows(std::span<const double> a, std::span<const double> b) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::span<const double> values) {
    for (double v : values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      for (int k = 0; k < 8; ++k) {
        h ^= (bits >> (8 * k)) & 0xFF;
        h *= 1099511628211ULL;
      }
    }
  };
  mix(a);
  mix(b);
  return h;
}

struct PairNoise {
  Matrix prev_iota, prev_nu, curr_iota, curr_nu;
};

PairNoise draw_noise(const PairBatch& batch, std::size_t di, std::size_t dn, std::uint64_t seed) {
  const std::size_t rows = batch.x_prev.rows();
  PairNoise n{Matrix(rows, di), Matrix(rows, dn), Matrix(rows, di), Matrix(rows, dn)};
  for (std::size_t r = 0; r < rows; ++r) {
    Rng rng(derive_seed(seed, hash_rows(batch.x_prev.row_span(r), batch.x_curr.row_span(r))));
    for (std::size_t k = 0; k < di; ++k) n.prev_iota(r, k) = rng.normal();
    for (std::size_t k = 0; k < dn; ++k) n.prev_nu(r, k) = rng.normal();
    for (std::size_t k = 0; k < di; ++k) n.curr_iota(r, k) = rng.normal();
    for (std::size_t k = 0; k < dn; ++k) n.curr_nu(r, k) = rng.normal();
  }
  return n;
}

void check_pair_batch(const ModelParams& params, const PairBatch& batch) {
  if (batch.x_prev.rows() == 0) throw ValidationError("temporal_elbo: empty batch");
  if (batch.x_prev.rows() != batch.x_curr.rows()) {
    throw ValidationError("temporal_elbo: x_prev and x_curr row counts differ");
  }
  if (batch.time_index < 1) throw ValidationError("temporal_elbo: x_curr time index must be >= 1");
  params.condition_index(batch.condition);
}

LossReport read_report(const Tape& tape, const LossVars& v) {
  LossReport r;
  r.total = tape.scalar(v.total);
  r.neg_elbo = tape.scalar(v.neg_elbo);
  r.recon_prev = tape.scalar(v.recon_prev);
  r.recon_curr = tape.scalar(v.recon_curr);
  r.kl_transition = tape.scalar(v.kl_transition);
  r.align = tape.scalar(v.align);
  r.sparsity = tape.scalar(v.sparsity);
  r.prior_kl = tape.scalar(v.prior_kl);
  return r;
}

}  // namespace

std::string LossReport::to_json_line(std::size_t step) const {
  nlohmann::json j = {{"step", step},         {"total", total},
                      {"neg_elbo", neg_elbo}, {"recon_prev", recon_prev},
                      {"recon_curr", recon_curr}, {"kl_transition", kl_transition},
                      {"align", align},       {"sparsity", sparsity},
                      {"prior_kl", prior_kl}};
  return j.dump();
}

ElboVars record_temporal_elbo(ModelGraph& graph, const PairBatch& batch, std::uint64_t seed) {
  const ModelParams& params = graph.params();
  check_pair_batch(params, batch);
  const auto& cfg = params.config();
  Tape& tape = graph.tape();
  const std::size_t cond = params.condition_index(batch.condition);
  const double inv_rows = 1.0 / static_cast<double>(batch.x_prev.rows());
  const PairNoise noise = draw_noise(batch, cfg.d_iota, cfg.d_nu, seed);

  Var x_prev = graph.input(batch.x_prev);
  Var x_curr = graph.input(batch.x_curr);

  GaussianVars q_prev_iota = graph.encode_invariant(x_prev);
  GaussianVars q_prev_nu = graph.encode_responsive(x_prev, cond, batch.time_index - 1);
  GaussianVars q_curr_iota = graph.encode_invariant(x_curr);
  GaussianVars q_curr_nu = graph.encode_responsive(x_curr, cond, batch.time_index);

  Var z_prev_iota = graph.sample(q_prev_iota, noise.prev_iota);
  Var z_prev_nu = graph.sample(q_prev_nu, noise.prev_nu);
  Var z_curr_iota = graph.sample(q_curr_iota, noise.curr_iota);
  Var z_curr_nu = graph.sample(q_curr_nu, noise.curr_nu);

  auto recon = [&](Var x, Var z) {
    Var err = tape.sum(tape.square(tape.sub(x, graph.decode(z))));
    return tape.scale(err, -0.5 * inv_rows);
  };
  ElboVars out;
  out.recon_prev = recon(x_prev, graph.join(z_prev_iota, z_prev_nu));
  out.recon_curr = recon(x_curr, graph.join(z_curr_iota, z_curr_nu));

  TransitionVars prior = graph.transition_prior(z_prev_iota, z_prev_nu, cond);
  out.kl_transition = tape.scale(
      tape.add(graph.kl_sum(q_curr_iota, prior.iota), graph.kl_sum(q_curr_nu, prior.nu)), inv_rows);

  out.q_prev_iota = q_prev_iota;
  out.q_prev_nu = q_prev_nu;
  out.elbo = tape.sub(tape.add(out.recon_prev, out.recon_curr), out.kl_transition);
  return out;
}

Var record_alignment_loss(ModelGraph& graph, const AlignBatch& batch) {
  if (batch.x_pert.rows() == 0) throw ValidationError("alignment_loss: empty batch");
  if (!batch.x_pert.same_shape(batch.x_ctrl)) {
    throw ValidationError("alignment_loss: perturbed " + batch.x_pert.shape_string() +
                          " and control " + batch.x_ctrl.shape_string() + " shapes differ");
  }
  Tape& tape = graph.tape();
  Var mu_pert = graph.encode_invariant(graph.input(batch.x_pert)).mean;
  Var mu_ctrl = graph.encode_invariant(graph.input(batch.x_ctrl)).mean;
  Var sq = tape.sum(tape.square(tape.sub(mu_pert, mu_ctrl)));
  return tape.scale(sq, 1.0 / static_cast<double>(batch.x_pert.rows()));
}

Var record_sparsity_loss(ModelGraph& graph, std::span<const std::string> conditions) {
  Tape& tape = graph.tape();
  std::vector<std::size_t> ids;
  for (const auto& c : conditions) {
    const std::size_t id = graph.params().condition_index(c);
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  Var total = tape.constant(Matrix::scalar(0.0));
  for (std::size_t id : ids) {
    Var w = graph.adjacency(id);
    Matrix sign = tape.value(w);
    for (double& v : sign.data()) v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    total = tape.add(total, tape.sum(tape.mul(w, tape.constant(std::move(sign)))));
  }
  return total;
}

LossVars record_total_loss(ModelGraph& graph, const PairBatch& pairs, const AlignBatch* align,
                           const LossWeights& weights, std::uint64_t seed) {
  if (align != nullptr && align->condition != pairs.condition) {
    throw ValidationError("total_loss: pair batch condition '" + pairs.condition +
                          "' differs from alignment batch condition '" + align->condition + "'");
  }
  Tape& tape = graph.tape();
  ElboVars elbo = record_temporal_elbo(graph, pairs, seed);
  LossVars v;
  v.neg_elbo = tape.scale(elbo.elbo, -1.0);
  v.recon_prev = elbo.recon_prev;
  v.recon_curr = elbo.recon_curr;
  v.kl_transition = elbo.kl_transition;
  if (weights.prior_kl != 0.0) {
    const auto& cfg = graph.params().config();
    const std::size_t rows = pairs.x_prev.rows();
    const GaussianVars std_iota{tape.constant(Matrix(rows, cfg.d_iota)), tape.constant(Matrix(rows, cfg.d_iota))};
    const GaussianVars std_nu{tape.constant(Matrix(rows, cfg.d_nu)), tape.constant(Matrix(rows, cfg.d_nu))};
    v.prior_kl = tape.scale(tape.add(graph.kl_sum(elbo.q_prev_iota, std_iota),
                                     graph.kl_sum(elbo.q_prev_nu, std_nu)),
                            1.0 / static_cast<double>(rows));
  } else {
    v.prior_kl = tape.constant(Matrix::scalar(0.0));
  }
  v.align = align ? record_alignment_loss(graph, *align) : tape.constant(Matrix::scalar(0.0));
  const std::string conds[] = {pairs.condition};
  v.sparsity = record_sparsity_loss(graph, conds);

  Var total = tape.add(v.neg_elbo, tape.scale(v.align, weights.align));
  total = tape.add(total, tape.scale(v.sparsity, weights.reg));
  v.total = tape.add(total, tape.scale(v.prior_kl, weights.prior_kl));
  return v;
}

LossReport temporal_elbo(const ModelParams& params, const PairBatch& batch, std::uint64_t seed) {
  Tape tape(params.values());
  ModelGraph graph(tape, params);
  ElboVars e = record_temporal_elbo(graph, batch, seed);
  LossReport r;
  r.total = -tape.scalar(e.elbo);
  r.neg_elbo = r.total;
  r.recon_prev = tape.scalar(e.recon_prev);
  r.recon_curr = tape.scalar(e.recon_curr);
  r.kl_transition = tape.scalar(e.kl_transition);
  return r;
}

double alignment_loss(const ModelParams& params, const AlignBatch& batch) {
  Tape tape(params.values());
  ModelGraph graph(tape, params);
  return tape.scalar(record_alignment_loss(graph, batch));
}

double sparsity_loss(const ModelParams& params, std::span<const std::string> conditions) {
  Tape tape(params.values());
  ModelGraph graph(tape, params);
  return tape.scalar(record_sparsity_loss(graph, conditions));
}

LossReport total_loss(const ModelParams& params, const PairBatch& pairs, const AlignBatch* align,
                      const LossWeights& weights, std::uint64_t seed) {
  Tape tape(params.values());
  ModelGraph graph(tape, params);
  return read_report(tape, record_total_loss(graph, pairs, align, weights, seed));
}

LossEvaluation total_loss_and_gradient(const ModelParams& layout, std::span<const double> values,
                                       const PairBatch& pairs, const AlignBatch* align,
                                       const LossWeights& weights, std::uint64_t seed) {
  Tape tape(values);
  ModelGraph graph(tape, layout);
  LossVars v = record_total_loss(graph, pairs, align, weights, seed);
  tape.backward(v.total);
  return {read_report(tape, v), tape.parameter_gradient()};
}

}  // namespace cdyn
