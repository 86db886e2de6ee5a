#include "cdyn/config.hpp"

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace cdyn {

void RunConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ValidationError(std::string("config: ") + name + " must be >= 1");
  };
  positive(d_iota, "d_iota");
  positive(d_nu, "d_nu");
  positive(hidden, "hidden");
  positive(d_u, "d_u");
  positive(target_embed, "target_embed");
  positive(batch_size, "batch_size");
  positive(coupling_pool, "coupling_pool");
  positive(K, "K");
  positive(sinkhorn_max_iters, "sinkhorn_max_iters");
  if (!(lambda_align >= 0.0) || !(lambda_reg >= 0.0) || !(prior_kl >= 0.0)) {
    throw ValidationError("config: loss weights must be non-negative");
  }
  if (!(learning_rate > 0.0)) throw ValidationError("config: learning_rate must be positive");
  if (!(epsilon_scale > 0.0)) throw ValidationError("config: epsilon_scale must be positive");
  if (!(sinkhorn_tol > 0.0)) throw ValidationError("config: sinkhorn_tol must be positive");
  parse_coupling_method(temporal_coupling);
  parse_coupling_method(align_coupling);
}

std::string RunConfig::to_json() const {
  nlohmann::json j = {{"d_iota", d_iota},
                      {"d_nu", d_nu},
                      {"hidden", hidden},
                      {"d_u", d_u},
                      {"target_embed", target_embed},
                      {"lambda_align", lambda_align},
                      {"lambda_reg", lambda_reg},
                      {"prior_kl", prior_kl},
                      {"learning_rate", learning_rate},
                      {"batch_size", batch_size},
                      {"epochs", epochs},
                      {"pairs_per_group", pairs_per_group},
                      {"temporal_coupling", temporal_coupling},
                      {"align_coupling", align_coupling},
                      {"epsilon_scale", epsilon_scale},
                      {"coupling_pool", coupling_pool},
                      {"sinkhorn_tol", sinkhorn_tol},
                      {"sinkhorn_max_iters", sinkhorn_max_iters},
                      {"seed", seed},
                      {"hvg", hvg},
                      {"K", K}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ValidationError("config: top level must be an object");
    for (const auto& [key, value] : j.items()) {
      if (key == "d_iota") c.d_iota = value.get<std::size_t>();
      else if (key == "d_nu") c.d_nu = value.get<std::size_t>();
      else if (key == "hidden") c.hidden = value.get<std::size_t>();
      else if (key == "d_u") c.d_u = value.get<std::size_t>();
      else if (key == "target_embed") c.target_embed = value.get<std::size_t>();
      else if (key == "lambda_align") c.lambda_align = value.get<double>();
      else if (key == "lambda_reg") c.lambda_reg = value.get<double>();
      else if (key == "prior_kl") c.prior_kl = value.get<double>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "pairs_per_group") c.pairs_per_group = value.get<std::size_t>();
      else if (key == "temporal_coupling") c.temporal_coupling = value.get<std::string>();
      else if (key == "align_coupling") c.align_coupling = value.get<std::string>();
      else if (key == "epsilon_scale") c.epsilon_scale = value.get<double>();
      else if (key == "coupling_pool") c.coupling_pool = value.get<std::size_t>();
      else if (key == "sinkhorn_tol") c.sinkhorn_tol = value.get<double>();
      else if (key == "sinkhorn_max_iters") c.sinkhorn_max_iters = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "hvg") c.hvg = value.get<std::size_t>();
      else if (key == "K") c.K = value.get<std::size_t>();
      else throw ValidationError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json() << '\n';
}

BatchOptions RunConfig::batch_options() const {
  BatchOptions o;
  o.temporal = parse_coupling_method(temporal_coupling);
  o.align.method = parse_coupling_method(align_coupling);
  o.align.epsilon_scale = epsilon_scale;
  o.align.tol = sinkhorn_tol;
  o.align.max_iters = sinkhorn_max_iters;
  o.batch_size = batch_size;
  o.pairs_per_group = pairs_per_group;
  o.coupling_pool = coupling_pool;
  o.with_alignment = lambda_align > 0.0;
  return o;
}

bool seed_from_env(std::uint64_t& seed) {
  const char* s = std::getenv("CDYN_SEED");
  if (!s || !*s) return false;
  std::uint64_t v = 0;
  const auto res = std::from_chars(s, s + std::strlen(s), v);
  if (res.ec != std::errc() || *res.ptr != '\0') {
    throw ValidationError(std::string("CDYN_SEED is not an unsigned integer: '") + s + "'");
  }
  seed = v;
  return true;
}

void apply_seed_env(RunConfig& config) { seed_from_env(config.seed); }

}  // namespace cdyn
