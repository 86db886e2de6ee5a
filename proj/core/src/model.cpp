#include "cdyn/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cdyn/rng.hpp"

namespace cdyn {

using json = nlohmann::json;

void ModelConfig::validate() const {
  if (d_iota == 0 || d_nu == 0) throw ValidationError("model config: latent blocks must be >= 1");
  if (p == 0) throw ValidationError("model config: p must be >= 1");
  if (d_u == 0 || hidden == 0 || target_embed == 0) {
    throw ValidationError("model config: d_u, hidden and target_embed must be >= 1");
  }
  if (T <= 0) throw ValidationError("model config: T must be >= 1");
  if (conditions.empty()) throw ValidationError("model config: no conditions");
}

ModelParams::ModelParams(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t di = config.d_iota, dn = config.d_nu;
  add_block("embed.cond", config.conditions.size(), config.d_u);
  add_block("embed.target", dn, config.target_embed);
  add_block("adj.base", dn, dn);
  add_block("adj.mod", config.d_u, dn * dn);
  add_mlp("enc_iota", config.p, 2 * di);
  add_mlp("enc_nu", config.p + config.d_u + 1, 2 * dn);
  add_mlp("dec", di + dn, config.p);
  add_mlp("trans_iota", di, 2 * di);
  add_mlp("trans_nu", dn + di + config.d_u + config.target_embed, 2);
  for (std::size_t i = 0; i < config.conditions.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (config.conditions[i] == config.conditions[j]) {
        throw ValidationError("model config: duplicate condition id '" + config.conditions[i] + "'");
      }
    }
  }
}

void ModelParams::add_block(std::string name, std::size_t rows, std::size_t cols) {
  index_.emplace(name, blocks_.size());
  blocks_.push_back({std::move(name), values_.size(), rows, cols});
  values_.resize(values_.size() + rows * cols, 0.0);
}

void ModelParams::add_mlp(const std::string& prefix, std::size_t in, std::size_t out) {
  const std::size_t h = config_.hidden;
  add_block(prefix + ".w0", in, h);
  add_block(prefix + ".b0", 1, h);
  add_block(prefix + ".w1", h, h);
  add_block(prefix + ".b1", 1, h);
  add_block(prefix + ".w2", h, out);
  add_block(prefix + ".b2", 1, out);
}

ModelParams ModelParams::zeros(const ModelConfig& config) { return ModelParams(config); }

ModelParams ModelParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  ModelParams params(config);
  Rng rng(seed);
  for (const auto& b : params.blocks_) {
    double stddev = 0.0;
    const std::string_view name = b.name;
    if (name == "embed.cond" || name == "embed.target") {
      stddev = 1.0;
    } else if (name == "adj.mod") {
      stddev = 0.1;
    } else if (name.ends_with(".w0") || name.ends_with(".w1") || name.ends_with(".w2")) {
      stddev = 1.0 / std::sqrt(static_cast<double>(b.rows));
    }
    if (stddev == 0.0) continue;
    for (std::size_t k = 0; k < b.size(); ++k) params.values_[b.offset + k] = stddev * rng.normal();
  }
  return params;
}

const ParamBlock& ModelParams::block(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("model: unknown parameter block '" + std::string(name) + "'");
  return blocks_[it->second];
}

bool ModelParams::has_block(std::string_view name) const { return index_.contains(name); }

Matrix ModelParams::get(std::string_view name) const {
  const auto& b = block(name);
  return Matrix(b.rows, b.cols,
                std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                    values_.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size())));
}

void ModelParams::set(std::string_view name, const Matrix& value) {
  const auto& b = block(name);
  if (value.rows() != b.rows || value.cols() != b.cols) {
    throw ValidationError("model: block '" + std::string(name) + "' expects (" +
                          std::to_string(b.rows) + "x" + std::to_string(b.cols) + "), got " +
                          value.shape_string());
  }
  std::copy(value.data().begin(), value.data().end(),
            values_.begin() + static_cast<std::ptrdiff_t>(b.offset));
}

std::size_t ModelParams::condition_index(std::string_view id) const {
  for (std::size_t i = 0; i < config_.conditions.size(); ++i) {
    if (config_.conditions[i] == id) return i;
  }
  throw ValidationError("model: unknown condition id '" + std::string(id) + "'");
}

bool ModelParams::has_condition(std::string_view id) const {
  for (const auto& c : config_.conditions) {
    if (c == id) return true;
  }
  return false;
}

std::string ModelParams::to_json() const {
  json doc;
  doc["config"] = {{"d_iota", config_.d_iota},   {"d_nu", config_.d_nu},
                   {"p", config_.p},             {"d_u", config_.d_u},
                   {"hidden", config_.hidden},   {"target_embed", config_.target_embed},
                   {"T", config_.T},             {"conditions", config_.conditions}};
  json params = json::object();
  for (const auto& b : blocks_) {
    params[b.name] = {
        {"shape", {b.rows, b.cols}},
        {"data", std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(b.offset),
                                     values_.begin() + static_cast<std::ptrdiff_t>(b.offset + b.size()))}};
  }
  doc["params"] = std::move(params);
  return doc.dump();
}

ModelParams ModelParams::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model file: ") + e.what());
  }
  try {
    const auto& c = doc.at("config");
    ModelConfig config;
    config.d_iota = c.at("d_iota").get<std::size_t>();
    config.d_nu = c.at("d_nu").get<std::size_t>();
    config.p = c.at("p").get<std::size_t>();
    config.d_u = c.at("d_u").get<std::size_t>();
    config.hidden = c.at("hidden").get<std::size_t>();
    config.target_embed = c.value("target_embed", std::size_t{4});
    config.T = c.at("T").get<int>();
    config.conditions = c.at("conditions").get<std::vector<std::string>>();
    ModelParams params(config);
    const auto& blocks = doc.at("params");
    for (const auto& b : params.blocks_) {
      const auto& entry = blocks.at(b.name);
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      auto data = entry.at("data").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] != b.rows || shape[1] != b.cols || data.size() != b.size()) {
        throw ValidationError("model file: block '" + b.name + "' has wrong shape");
      }
      std::copy(data.begin(), data.end(), params.values_.begin() + static_cast<std::ptrdiff_t>(b.offset));
    }
    return params;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model file: ") + e.what());
  }
}

void ModelParams::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file " + path.string());
  out << to_json() << '\n';
}

ModelParams ModelParams::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open model file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.values_.size() != b.values_.size()) return false;
  if (a.config_.conditions != b.config_.conditions) return false;
  return std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------

ModelGraph::ModelGraph(Tape& tape, const ModelParams& params) : tape_(tape), params_(params) {
  if (tape.num_params() != params.size()) {
    throw ValidationError("model graph: tape parameter vector has " +
                          std::to_string(tape.num_params()) + " entries, model needs " +
                          std::to_string(params.size()));
  }
}

Var ModelGraph::param(std::string_view name) {
  if (auto it = cache_.find(name); it != cache_.end()) return it->second;
  const auto& b = params_.block(name);
  Var v = tape_.parameter(b.offset, b.rows, b.cols);
  cache_.emplace(std::string(name), v);
  return v;
}

Var ModelGraph::mlp(std::string_view prefix, Var input) {
  const std::string p(prefix);
  Var h = tape_.tanh(tape_.add(tape_.matmul(input, param(p + ".w0")), param(p + ".b0")));
  h = tape_.tanh(tape_.add(tape_.matmul(h, param(p + ".w1")), param(p + ".b1")));
  return tape_.add(tape_.matmul(h, param(p + ".w2")), param(p + ".b2"));
}

Var ModelGraph::embedding(std::size_t condition) {
  if (condition >= params_.config().conditions.size()) {
    throw ValidationError("model: condition index " + std::to_string(condition) + " out of range");
  }
  const std::string key = "embed.cond#" + std::to_string(condition);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const auto& b = params_.block("embed.cond");
  Var v = tape_.parameter(b.offset + condition * b.cols, 1, b.cols);
  cache_.emplace(key, v);
  return v;
}

Var ModelGraph::rows_of(Var row, std::size_t rows) {
  return tape_.matmul(tape_.constant(Matrix(rows, 1, 1.0)), row);
}

GaussianVars ModelGraph::split_gaussian(Var out, std::size_t d) {
  const std::size_t rows = tape_.value(out).rows();
  return {tape_.slice(out, 0, rows, 0, d), tape_.slice(out, 0, rows, d, d)};
}

GaussianVars ModelGraph::encode_invariant(Var x) {
  const auto& cfg = params_.config();
  if (tape_.value(x).cols() != cfg.p) {
    throw ValidationError("encode_invariant: expected " + std::to_string(cfg.p) + " genes, got " +
                          std::to_string(tape_.value(x).cols()));
  }
  return split_gaussian(mlp("enc_iota", x), cfg.d_iota);
}

GaussianVars ModelGraph::encode_responsive(Var x, std::size_t condition, int time_index) {
  const auto& cfg = params_.config();
  const Matrix& xv = tape_.value(x);
  if (xv.cols() != cfg.p) {
    throw ValidationError("encode_responsive: expected " + std::to_string(cfg.p) + " genes, got " +
                          std::to_string(xv.cols()));
  }
  if (time_index < 0) throw ValidationError("encode_responsive: negative time index");
  const std::size_t rows = xv.rows();
  const double tcode = static_cast<double>(time_index) / static_cast<double>(cfg.T);
  const Var parts[] = {x, rows_of(embedding(condition), rows), tape_.constant(Matrix(rows, 1, tcode))};
  return split_gaussian(mlp("enc_nu", tape_.concat(parts, Axis::kCols)), cfg.d_nu);
}

Var ModelGraph::decode(Var z) {
  const auto& cfg = params_.config();
  if (tape_.value(z).cols() != cfg.latent_dim()) {
    throw ValidationError("decode: expected latent width " + std::to_string(cfg.latent_dim()) +
                          ", got " + std::to_string(tape_.value(z).cols()));
  }
  return mlp("dec", z);
}

Var ModelGraph::adjacency(std::size_t condition) {
  const std::string key = "adjacency#" + std::to_string(condition);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const std::size_t dn = params_.config().d_nu;
  const auto& base = params_.block("adj.base");
  Var a0 = tape_.parameter(base.offset, 1, dn * dn);
  Var raw = tape_.add(a0, tape_.matmul(embedding(condition), param("adj.mod")));
  Matrix mask(1, dn * dn);
  for (std::size_t i = 0; i < dn; ++i)
    for (std::size_t j = 0; j < i; ++j) mask(0, i * dn + j) = 1.0;
  Var w = tape_.mul(tape_.tanh(raw), tape_.constant(std::move(mask)));
  cache_.emplace(key, w);
  return w;
}

TransitionVars ModelGraph::transition_prior(Var z_iota_prev, Var z_nu_prev, std::size_t condition) {
  const auto& cfg = params_.config();
  const std::size_t di = cfg.d_iota, dn = cfg.d_nu;
  const Matrix& zi = tape_.value(z_iota_prev);
  const Matrix& zn = tape_.value(z_nu_prev);
  if (zi.cols() != di || zn.cols() != dn || zi.rows() != zn.rows()) {
    throw ValidationError("transition_prior: latent shapes " + zi.shape_string() + ", " +
                          zn.shape_string() + " do not match (d_iota=" + std::to_string(di) +
                          ", d_nu=" + std::to_string(dn) + ")");
  }
  const std::size_t rows = zi.rows();

  TransitionVars out;
  out.iota = split_gaussian(mlp("trans_iota", z_iota_prev), di);

  Var w = adjacency(condition);
  Var e_rows = rows_of(embedding(condition), rows);
  Var targets = param("embed.target");
  std::vector<Var> stacked;
  stacked.reserve(dn);
  for (std::size_t j = 0; j < dn; ++j) {
    Var gated = tape_.mul(z_nu_prev, tape_.slice(w, 0, 1, j * dn, dn));
    Var target = rows_of(tape_.slice(targets, j, 1, 0, cfg.target_embed), rows);
    const Var parts[] = {gated, z_iota_prev, e_rows, target};
    stacked.push_back(tape_.concat(parts, Axis::kCols));
  }
  Var head = mlp("trans_nu", tape_.concat(stacked, Axis::kRows));
  std::vector<Var> means, logvars;
  for (std::size_t j = 0; j < dn; ++j) {
    means.push_back(tape_.slice(head, j * rows, rows, 0, 1));
    logvars.push_back(tape_.slice(head, j * rows, rows, 1, 1));
  }
  out.nu = {tape_.concat(means, Axis::kCols), tape_.concat(logvars, Axis::kCols)};
  return out;
}

Var ModelGraph::sample(const GaussianVars& q, const Matrix& noise) {
  Var sd = tape_.exp(tape_.scale(q.logvar, 0.5));
  return tape_.add(q.mean, tape_.mul(sd, tape_.constant(noise)));
}

Var ModelGraph::kl_sum(const GaussianVars& q, const GaussianVars& p) {
  // 0.5 * (exp(lq - lp) + (mq - mp)^2 exp(-lp) - 1 + lp - lq)
  Var dl = tape_.sub(q.logvar, p.logvar);
  Var ratio = tape_.exp(dl);
  Var maha = tape_.mul(tape_.square(tape_.sub(q.mean, p.mean)), tape_.exp(tape_.scale(p.logvar, -1.0)));
  Var terms = tape_.sub(tape_.add(ratio, maha), dl);
  return tape_.scale(tape_.add_scalar(tape_.sum(terms), -static_cast<double>(tape_.value(dl).size())), 0.5);
}

Var ModelGraph::join(Var z_iota, Var z_nu) {
  const Var parts[] = {z_iota, z_nu};
  return tape_.concat(parts, Axis::kCols);
}

// ---------------------------------------------------------------------------

namespace {

GaussianBatch to_batch(const Tape& tape, const GaussianVars& g) {
  return {tape.value(g.mean), tape.value(g.logvar)};
}

}  // namespace

GaussianBatch encode_invariant(const ModelParams& params, const Matrix& x) {
  Tape tape(params.values());
  ModelGraph graph(tape, params);
  return to_batch(tape, graph.encode_invariant(graph.input(x)));
}

GaussianBatch encode_responsive(const ModelParams& params, const Matrix& x,
                                std::string_view condition, int time_index) {
  if (time_index > params.config().T) {
    throw ValidationError("encode_responsive: time index " + std::to_string(time_index) +
                          " exceeds T=" + std::to_string(params.config().T));
  }
  const std::size_t c = params.condition_index(condition);
  Tape tape(params.values());
  ModelGraph graph(tape, params);
  return to_batch(tape, graph.encode_responsive(graph.input(x), c, time_index));
}

Matrix decode(const ModelParams& params, const Matrix& z) {
  Tape tape(params.values());
  ModelGraph graph(tape, params);
  return tape.value(graph.decode(graph.input(z)));
}

Matrix build_condition_adjacency(const ModelParams& params, std::string_view condition) {
  const std::size_t c = params.condition_index(condition);
  Tape tape(params.values());
  ModelGraph graph(tape, params);
  const Matrix& flat = tape.value(graph.adjacency(c));
  const std::size_t dn = params.config().d_nu;
  return Matrix(dn, dn, flat.values());
}

TransitionBatch transition_prior(const ModelParams& params, const Matrix& z_iota_prev,
                                 const Matrix& z_nu_prev, std::string_view condition) {
  const std::size_t c = params.condition_index(condition);
  Tape tape(params.values());
  ModelGraph graph(tape, params);
  auto t = graph.transition_prior(graph.input(z_iota_prev), graph.input(z_nu_prev), c);
  return {to_batch(tape, t.iota), to_batch(tape, t.nu)};
}

GaussianDiag encode_invariant(const ModelParams& params, std::span<const double> x) {
  return encode_invariant(params, Matrix::row(x)).row(0);
}

GaussianDiag encode_responsive(const ModelParams& params, std::span<const double> x,
                               std::string_view condition, int time_index) {
  return encode_responsive(params, Matrix::row(x), condition, time_index).row(0);
}

std::vector<double> decode(const ModelParams& params, std::span<const double> z_iota,
                           std::span<const double> z_nu) {
  const auto& cfg = params.config();
  if (z_iota.size() != cfg.d_iota || z_nu.size() != cfg.d_nu) {
    throw ValidationError("decode: latent state dimensions do not match the model");
  }
  std::vector<double> z(z_iota.begin(), z_iota.end());
  z.insert(z.end(), z_nu.begin(), z_nu.end());
  return decode(params, Matrix::row(z)).values();
}

ScoreDiff transition_score_diff(const ModelParams& params, std::span<const double> z_t_iota,
                                std::span<const double> z_t_nu,
                                std::span<const double> z_prev_iota,
                                std::span<const double> z_prev_nu, std::string_view condition,
                                std::string_view baseline) {
  const auto env = transition_prior(params, Matrix::row(z_prev_iota), Matrix::row(z_prev_nu), condition);
  const auto base = transition_prior(params, Matrix::row(z_prev_iota), Matrix::row(z_prev_nu), baseline);
  return {score_difference(z_t_iota, env.iota.row(0), base.iota.row(0)),
          score_difference(z_t_nu, env.nu.row(0), base.nu.row(0))};
}

}  // namespace cdyn
