#include "cdyn/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cdyn {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    // from_chars rejects "inf"/"nan" spellings produced by some writers.
    if (s == "inf" || s == "+inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (s == "nan" || s == "-nan") return NAN;
    throw ValidationError(where + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

void check_label(const std::string& s, const char* what) {
  if (s.find_first_of(",\n\r") != std::string::npos) {
    throw ValidationError(std::string(what) + " '" + s + "' contains a comma or newline");
  }
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::size_t SnapshotDataset::control_index() const {
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    if (conditions[i].is_control) return i;
  }
  throw ValidationError("dataset: no control condition");
}

std::size_t SnapshotDataset::condition_index(const std::string& id) const {
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    if (conditions[i].id == id) return i;
  }
  throw ValidationError("dataset: unknown condition '" + id + "'");
}

std::vector<int> SnapshotDataset::times() const {
  std::set<int> s(time.begin(), time.end());
  return {s.begin(), s.end()};
}

std::vector<std::size_t> SnapshotDataset::cells_of(std::size_t cond, int t) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < condition.size(); ++r) {
    if (condition[r] == cond && time[r] == t) out.push_back(r);
  }
  return out;
}

Matrix SnapshotDataset::group(std::size_t cond, int t) const {
  return expression.select_rows(cells_of(cond, t));
}

SnapshotDataset SnapshotDataset::subset_cells(const std::vector<std::size_t>& rows) const {
  SnapshotDataset out;
  out.expression = expression.select_rows(rows);
  out.genes = genes;
  out.conditions = conditions;
  out.mode = mode;
  for (std::size_t r : rows) {
    out.cell_ids.push_back(cell_ids.at(r));
    out.condition.push_back(condition.at(r));
    out.time.push_back(time.at(r));
  }
  return out;
}

SnapshotDataset SnapshotDataset::subset_genes(const std::vector<std::size_t>& cols) const {
  SnapshotDataset out = *this;
  out.expression = expression.select_cols(cols);
  out.genes.clear();
  for (std::size_t c : cols) out.genes.push_back(genes.at(c));
  return out;
}

void SnapshotDataset::validate() const {
  const std::size_t n = expression.rows();
  if (cell_ids.size() != n || condition.size() != n || time.size() != n) {
    throw ValidationError("dataset: label vectors do not match " + std::to_string(n) + " cells");
  }
  if (genes.size() != expression.cols()) throw ValidationError("dataset: gene names do not match columns");
  std::set<std::string> seen;
  for (const auto& g : genes) {
    if (!seen.insert(g).second) throw ValidationError("dataset: duplicate gene name '" + g + "'");
  }
  std::size_t controls = 0;
  std::set<std::string> ids;
  for (const auto& c : conditions) {
    controls += c.is_control ? 1 : 0;
    if (!ids.insert(c.id).second) throw ValidationError("dataset: duplicate condition '" + c.id + "'");
  }
  if (controls != 1) {
    throw ValidationError("dataset: expected exactly one control condition, found " +
                          std::to_string(controls));
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (condition[r] >= conditions.size()) {
      throw ValidationError("dataset: row " + std::to_string(r) + " references an unlisted condition");
    }
    if (time[r] < 0) throw ValidationError("dataset: row " + std::to_string(r) + " has negative time");
  }
  if (mode == ExpressionMode::kCounts) {
    for (std::size_t r = 0; r < n; ++r)
      for (double v : expression.row_span(r))
        if (!(v >= 0.0)) {
          throw ValidationError("dataset: row " + std::to_string(r) +
                                " has negative or non-finite count");
        }
  }
}

namespace {

nlohmann::json conditions_json(const SnapshotDataset& ds) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : ds.conditions) {
    arr.push_back({{"id", c.id}, {"targets", c.targets}, {"is_control", c.is_control}});
  }
  return {{"mode", ds.mode == ExpressionMode::kCounts ? "counts" : "normalized"},
          {"conditions", arr}};
}

void apply_conditions_json(SnapshotDataset& ds, const nlohmann::json& j) {
  const std::string mode = j.value("mode", std::string("normalized"));
  if (mode == "counts") {
    ds.mode = ExpressionMode::kCounts;
  } else if (mode == "normalized") {
    ds.mode = ExpressionMode::kNormalized;
  } else {
    throw ValidationError("conditions.json: unknown mode '" + mode + "'");
  }
  for (const auto& c : j.at("conditions")) {
    ConditionInfo info;
    info.id = c.at("id").get<std::string>();
    info.targets = c.value("targets", std::vector<std::string>{});
    info.is_control = c.value("is_control", false);
    ds.conditions.push_back(std::move(info));
  }
}

}  // namespace

SnapshotDataset load_snapshot_table(const fs::path& path) {
  const fs::path manifest = path.parent_path() / "conditions.json";
  if (!fs::exists(manifest)) throw ValidationError("missing manifest " + manifest.string());
  SnapshotDataset ds;
  try {
    std::ifstream in(manifest);
    apply_conditions_json(ds, nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("conditions.json: " + std::string(e.what()));
  }
  std::map<std::string, std::size_t, std::less<>> cond_index;
  for (std::size_t i = 0; i < ds.conditions.size(); ++i) cond_index[ds.conditions[i].id] = i;

  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
  line = strip_cr(line);
  const auto header = split_commas(line);
  if (header.size() < 3 || header[0] != "cell_id" || header[1] != "condition" || header[2] != "time") {
    throw ValidationError(path.string() + ": header must start with cell_id,condition,time");
  }
  for (std::size_t k = 3; k < header.size(); ++k) ds.genes.emplace_back(header[k]);
  const std::size_t g = ds.genes.size();

  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const std::string where = path.filename().string() + " row " + std::to_string(row + 1);
    const auto fields = split_commas(line);
    if (fields.size() != g + 3) {
      throw ValidationError(where + ": expected " + std::to_string(g + 3) + " fields, got " +
                            std::to_string(fields.size()));
    }
    auto it = cond_index.find(fields[1]);
    if (it == cond_index.end()) {
      throw ValidationError(where + ": unknown condition '" + std::string(fields[1]) + "'");
    }
    ds.cell_ids.emplace_back(fields[0]);
    ds.condition.push_back(it->second);
    const double t = parse_double(fields[2], where);
    if (t != std::floor(t)) throw ValidationError(where + ": time must be an integer");
    ds.time.push_back(static_cast<int>(t));
    for (std::size_t k = 0; k < g; ++k) values.push_back(parse_double(fields[k + 3], where));
    ++row;
  }
  ds.expression = Matrix(row, g, std::move(values));
  ds.validate();
  return ds;
}

void save_snapshot_table(const SnapshotDataset& ds, const fs::path& path) {
  ds.validate();
  for (const auto& c : ds.cell_ids) check_label(c, "cell id");
  for (const auto& g : ds.genes) check_label(g, "gene name");
  for (const auto& c : ds.conditions) check_label(c.id, "condition id");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  {
    std::ofstream out(path.parent_path() / "conditions.json");
    if (!out) throw std::runtime_error("cannot write conditions.json next to " + path.string());
    out << conditions_json(ds).dump(2) << '\n';
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::string buf = "cell_id,condition,time";
  for (const auto& g : ds.genes) buf += "," + g;
  buf += '\n';
  for (std::size_t r = 0; r < ds.num_cells(); ++r) {
    buf += ds.cell_ids[r];
    buf += ',';
    buf += ds.conditions[ds.condition[r]].id;
    buf += ',';
    buf += std::to_string(ds.time[r]);
    for (double v : ds.expression.row_span(r)) {
      buf += ',';
      buf += format_double(v);
    }
    buf += '\n';
    if (buf.size() > (1u << 20)) {
      out << buf;
      buf.clear();
    }
  }
  out << buf;
}

namespace {

static_assert(std::endian::native == std::endian::little, "binary mirror assumes little-endian");
constexpr char kMagic[5] = {'C', 'D', 'Y', 'N', '1'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 8)) throw ValidationError("binary dataset: truncated");
  return v;
}
std::string get_str(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  if (n > (1u << 20)) throw ValidationError("binary dataset: implausible string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw ValidationError("binary dataset: truncated");
  return s;
}

}  // namespace

void save_snapshot_binary(const SnapshotDataset& ds, const fs::path& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, 5);
  put_u64(out, ds.num_cells());
  put_u64(out, ds.num_genes());
  out.write(reinterpret_cast<const char*>(ds.expression.data().data()),
            static_cast<std::streamsize>(ds.expression.size() * sizeof(double)));
  put_str(out, conditions_json(ds).dump());
  for (const auto& g : ds.genes) put_str(out, g);
  for (std::size_t r = 0; r < ds.num_cells(); ++r) {
    put_str(out, ds.cell_ids[r]);
    put_u64(out, ds.condition[r]);
    put_u64(out, static_cast<std::uint64_t>(ds.time[r]));
  }
}

SnapshotDataset load_snapshot_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  char magic[5] = {};
  if (!in.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) {
    throw ValidationError(path.string() + ": bad magic, not a CDYN1 file");
  }
  const std::uint64_t rows = get_u64(in), cols = get_u64(in);
  if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) throw ValidationError("binary dataset: bad dims");
  std::vector<double> values(rows * cols);
  if (!in.read(reinterpret_cast<char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(double)))) {
    throw ValidationError("binary dataset: truncated matrix");
  }
  SnapshotDataset ds;
  ds.expression = Matrix(rows, cols, std::move(values));
  try {
    apply_conditions_json(ds, nlohmann::json::parse(get_str(in)));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("binary dataset manifest: " + std::string(e.what()));
  }
  for (std::uint64_t k = 0; k < cols; ++k) ds.genes.push_back(get_str(in));
  for (std::uint64_t r = 0; r < rows; ++r) {
    ds.cell_ids.push_back(get_str(in));
    ds.condition.push_back(get_u64(in));
    ds.time.push_back(static_cast<int>(get_u64(in)));
  }
  ds.validate();
  return ds;
}

SnapshotDataset load_dataset(const fs::path& path) {
  if (fs::is_directory(path)) return load_snapshot_table(path / "snapshot.csv");
  if (path.extension() == ".bin") return load_snapshot_binary(path);
  return load_snapshot_table(path);
}

void write_matrix_csv(const fs::path& path, const std::vector<std::string>& header, const Matrix& m) {
  if (header.size() != m.cols()) throw ValidationError("write_matrix_csv: header width mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  std::string buf;
  for (std::size_t k = 0; k < header.size(); ++k) buf += (k ? "," : "") + header[k];
  buf += '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) buf += ',';
      buf += format_double(m(r, c));
    }
    buf += '\n';
  }
  out << buf;
}

Matrix read_matrix_csv(const fs::path& path, std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
  line = strip_cr(line);
  const auto head = split_commas(line);
  const std::size_t width = head.size();
  if (header) header->assign(head.begin(), head.end());
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    const std::string where = path.filename().string() + " row " + std::to_string(rows + 1);
    if (fields.size() != width) throw ValidationError(where + ": wrong field count");
    for (auto f : fields) values.push_back(parse_double(f, where));
    ++rows;
  }
  return Matrix(rows, width, std::move(values));
}

std::optional<Matrix> load_latent_truth(const fs::path& dir, const SnapshotDataset& ds,
                                        std::size_t* d_iota) {
  const fs::path root = dir / "latents_truth";
  if (!fs::is_directory(root)) return std::nullopt;
  Matrix out;
  bool first = true;
  for (std::size_t c = 0; c < ds.conditions.size(); ++c) {
    for (int t : ds.times()) {
      const auto rows = ds.cells_of(c, t);
      if (rows.empty()) continue;
      const fs::path file = root / (ds.conditions[c].id + "_t" + std::to_string(t) + ".csv");
      if (!fs::exists(file)) return std::nullopt;
      std::vector<std::string> header;
      const Matrix z = read_matrix_csv(file, &header);
      if (z.rows() != rows.size()) {
        throw ValidationError(file.string() + ": " + std::to_string(z.rows()) + " rows, dataset has " +
                              std::to_string(rows.size()));
      }
      if (first) {
        out = Matrix(ds.num_cells(), z.cols());
        if (d_iota) {
          *d_iota = static_cast<std::size_t>(std::count_if(
              header.begin(), header.end(), [](const std::string& h) { return h.rfind("z_iota_", 0) == 0; }));
        }
        first = false;
      }
      if (z.cols() != out.cols()) throw ValidationError(file.string() + ": latent width mismatch");
      for (std::size_t k = 0; k < rows.size(); ++k) {
        std::copy(z.row_span(k).begin(), z.row_span(k).end(), out.row_span(rows[k]).begin());
      }
    }
  }
  if (first) return std::nullopt;
  return out;
}

}  // namespace cdyn
