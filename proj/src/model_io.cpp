#include "atlas/model_io.hpp"

#include <spdlog/spdlog.h>

#include <fstream>
#include <sstream>

#include "atlas/csv.hpp"
#include "atlas/error.hpp"
#include "atlas/keyvalue.hpp"

namespace atlas {

namespace {

using Index = Eigen::Index;

void write_rows(std::ostream& out, const Matrix& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << csv::format_exact(m(r, c));
    }
    out << '\n';
  }
}

Vector parse_row(const std::string& line, Index cols, const std::string& where) {
  const auto fields = csv::split_record(line);
  if (static_cast<Index>(fields.size()) != cols)
    throw SchemaError(where + ": expected " + std::to_string(cols) + " values");
  Vector row(cols);
  for (Index c = 0; c < cols; ++c) {
    const auto v = csv::parse_double(fields[static_cast<std::size_t>(c)]);
    if (!v) throw SchemaError(where + ": unparseable number '" + fields[static_cast<std::size_t>(c)] + "'");
    row(c) = *v;
  }
  return row;
}

}  // namespace

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  auto out = csv::open_output(path);
  for (Index c = 0; c < m.cols(); ++c) out << (c ? ",c" : "c") << c;
  out << '\n';
  write_rows(out, m);
  if (!out) throw IoError("write failed: " + path.string());
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  auto in = csv::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty matrix file " + path.string());
  const auto cols = static_cast<Index>(csv::split_record(line).size());
  std::vector<Vector> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::chomp(line).empty()) continue;
    rows.push_back(parse_row(line, cols, path.string() + ":" + std::to_string(line_no)));
  }
  Matrix m(static_cast<Index>(rows.size()), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Index>(r)) = rows[r].transpose();
  return m;
}

void save_model(const std::filesystem::path& path, const FactorModel& model,
                const std::map<std::string, std::string>& extra) {
  auto out = csv::open_output(path);
  out << "format=atlas-model\nversion=1\n";
  out << "k=" << model.k << '\n'
      << "lambda1=" << csv::format_exact(model.lambda1) << '\n'
      << "lambda1_star=" << csv::format_exact(model.lambda1_star) << '\n'
      << "lambda2=" << csv::format_exact(model.lambda2) << '\n'
      << "iterations_run=" << model.iterations_run << '\n'
      << "final_loss=" << csv::format_exact(model.final_loss) << '\n'
      << "converged=" << (model.converged ? 1 : 0) << '\n';
  if (model.standardizer) {
    out << "standardizer_mode=" << to_string(model.standardizer->mode) << '\n'
        << "standardizer_mean=" << csv::format_exact(model.standardizer->mean) << '\n'
        << "standardizer_stddev=" << csv::format_exact(model.standardizer->stddev) << '\n';
  }
  for (const auto& [key, value] : extra) {
    if (key.find('=') != std::string::npos || key.find('\n') != std::string::npos ||
        value.find('\n') != std::string::npos)
      throw ArgumentError("model metadata must be single-line key=value");
    out << key << '=' << value << '\n';
  }
  for (const auto& [name, m] : {std::pair<const char*, const Matrix*>{"P", &model.P},
                                {"Q", &model.Q},
                                {"W", &model.W}}) {
    out << '[' << name << "] " << m->rows() << ' ' << m->cols() << '\n';
    write_rows(out, *m);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

LoadedModel load_model(const std::filesystem::path& path) {
  auto in = csv::open_input(path);
  LoadedModel loaded;
  kv::Map header;
  std::map<std::string, Matrix> blocks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text(csv::chomp(line));
    if (text.empty() || text.front() == '#') continue;
    if (text.front() == '[') {
      std::istringstream ss(text);
      std::string tag;
      Index rows = -1;
      Index cols = -1;
      ss >> tag >> rows >> cols;
      if (tag.size() != 3 || tag.back() != ']' || rows < 0 || cols < 0)
        throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": bad block header");
      Matrix m(rows, cols);
      for (Index r = 0; r < rows; ++r) {
        if (!std::getline(in, line))
          throw SchemaError(path.string() + ": truncated block " + tag);
        ++line_no;
        m.row(r) = parse_row(std::string(csv::chomp(line)), cols,
                             path.string() + ":" + std::to_string(line_no))
                       .transpose();
      }
      blocks[tag.substr(1, 1)] = std::move(m);
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    header[text.substr(0, eq)] = text.substr(eq + 1);
  }
  if (kv::get_string(header, "format", "") != "atlas-model")
    throw SchemaError(path.string() + " is not an atlas model file");
  if (kv::get_count(header, "version", 0) != 1)
    throw SchemaError(path.string() + ": unsupported model version");
  for (const char* name : {"P", "Q", "W"})
    if (!blocks.count(name)) throw SchemaError(path.string() + ": missing block " + name);

  FactorModel& m = loaded.model;
  m.k = kv::get_count(header, "k", 0);
  m.lambda1 = kv::get_double(header, "lambda1", 0.0);
  m.lambda1_star = kv::get_double(header, "lambda1_star", 0.0);
  m.lambda2 = kv::get_double(header, "lambda2", 0.0);
  m.iterations_run = kv::get_count(header, "iterations_run", 0);
  m.final_loss = kv::get_double(header, "final_loss", 0.0);
  m.converged = kv::get_bool(header, "converged", false);
  m.P = std::move(blocks["P"]);
  m.Q = std::move(blocks["Q"]);
  m.W = std::move(blocks["W"]);
  if (m.P.cols() != static_cast<Index>(m.k) || m.Q.cols() != static_cast<Index>(m.k) ||
      m.W.cols() != static_cast<Index>(m.k))
    throw SchemaError(path.string() + ": factor widths do not match k");
  if (header.count("standardizer_mode")) {
    Standardizer s;
    s.mode = parse_standardize_mode(header["standardizer_mode"]);
    s.mean = kv::get_double(header, "standardizer_mean", 0.0);
    s.stddev = kv::get_double(header, "standardizer_stddev", 1.0);
    m.standardizer = s;
  }
  static const char* known[] = {"format", "version", "k", "lambda1", "lambda1_star", "lambda2",
                                "iterations_run", "final_loss", "converged", "standardizer_mode",
                                "standardizer_mean", "standardizer_stddev"};
  for (const auto& [key, value] : header)
    if (std::find(std::begin(known), std::end(known), key) == std::end(known))
      loaded.metadata[key] = value;
  return loaded;
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& trace) {
  auto out = csv::open_output(path);
  out << "iteration,loss,J\n";
  for (std::size_t u = 0; u < trace.size(); ++u) {
    out << u << ',' << csv::format_exact(trace[u]) << ',';
    if (u > 0 && trace[u - 1] > 0) out << csv::format_exact(1.0 - trace[u] / trace[u - 1]);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

Grouping read_grouping(const std::filesystem::path& path,
                       const std::unordered_map<std::string, std::uint32_t>& index,
                       std::size_t n_entities,
                       const std::optional<std::filesystem::path>& covariance_path) {
  auto in = csv::open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("missing header in " + path.string());
  const auto header = csv::split_record(line);
  auto find = [&](std::initializer_list<const char*> names) -> std::optional<std::size_t> {
    for (std::size_t c = 0; c < header.size(); ++c)
      for (const char* n : names)
        if (header[c] == n) return c;
    return std::nullopt;
  };
  const auto c_id = find({"store_id", "product_id", "id"});
  const auto c_group = find({"group_id", "group"});
  const auto c_rho = find({"rho"});
  if (!c_id || !c_group)
    throw SchemaError(path.string() + ": need an id column (store_id/product_id) and group_id");

  std::vector<std::string> labels;
  std::map<std::string, std::size_t> group_of_label;
  std::vector<std::vector<std::uint32_t>> members;
  std::vector<std::optional<double>> rho;
  std::vector<bool> assigned(n_entities, false);
  std::size_t skipped = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::chomp(line).empty()) continue;
    const auto f = csv::split_record(line);
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (f.size() <= std::max({*c_id, *c_group, c_rho.value_or(0)}))
      throw SchemaError(where + ": too few fields");
    const auto it = index.find(f[*c_id]);
    if (it == index.end()) {
      ++skipped;
      continue;
    }
    if (assigned[it->second]) throw SchemaError(where + ": '" + f[*c_id] + "' listed twice");
    assigned[it->second] = true;
    auto [g, inserted] = group_of_label.emplace(f[*c_group], labels.size());
    if (inserted) {
      labels.push_back(f[*c_group]);
      members.emplace_back();
      rho.emplace_back();
    }
    members[g->second].push_back(it->second);
    if (c_rho && !f[*c_rho].empty() && !rho[g->second]) {
      const auto v = csv::parse_double(f[*c_rho]);
      if (!v) throw SchemaError(where + ": rho is not a number");
      rho[g->second] = *v;
    }
  }
  if (skipped) spdlog::warn("{}: {} id(s) not present in the tensor were skipped", path.string(), skipped);

  std::vector<double> rho_values;
  for (const auto& r : rho) rho_values.push_back(r.value_or(0.0));
  Grouping grouping = Grouping::from_rho(members, rho_values, labels);

  if (covariance_path) {
    auto cov_in = csv::open_input(*covariance_path);
    std::size_t cov_line = 0;
    while (std::getline(cov_in, line)) {
      ++cov_line;
      if (csv::chomp(line).empty()) continue;
      const auto f = csv::split_record(line);
      const auto where = covariance_path->string() + ":" + std::to_string(cov_line);
      if (cov_line == 1 && f.front() == "group_id") continue;
      const auto g = group_of_label.find(f.front());
      if (g == group_of_label.end()) throw SchemaError(where + ": unknown group '" + f.front() + "'");
      const auto n = static_cast<Index>(members[g->second].size());
      if (static_cast<Index>(f.size()) != 1 + n * n)
        throw SchemaError(where + ": expected " + std::to_string(n * n) + " covariance values");
      Matrix sigma(n, n);
      for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < n; ++c) {
          const auto v = csv::parse_double(f[static_cast<std::size_t>(1 + r * n + c)]);
          if (!v) throw SchemaError(where + ": unparseable covariance value");
          sigma(r, c) = *v;
        }
      grouping.covariance[g->second] = sigma;
    }
  }

  for (std::uint32_t e = 0; e < n_entities; ++e)
    if (!assigned[e]) {
      grouping.members.push_back({e});
      grouping.covariance.push_back(Matrix::Identity(1, 1));
      grouping.labels.push_back("_single_" + std::to_string(e));
    }
  grouping.validate(n_entities, "file");
  return grouping;
}

void write_grouping(const std::filesystem::path& path, const Grouping& grouping,
                    const std::vector<std::string>& ids, const std::string& id_column,
                    const std::vector<double>& rho) {
  auto out = csv::open_output(path);
  out << id_column << ",group_id,rho\n";
  for (std::size_t g = 0; g < grouping.size(); ++g)
    for (auto e : grouping.members[g])
      out << ids.at(e) << ',' << grouping.labels.at(g) << ','
          << csv::format_exact(g < rho.size() ? rho[g] : 0.0) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

void write_covariance_file(const std::filesystem::path& path, const Grouping& grouping) {
  auto out = csv::open_output(path);
  for (std::size_t g = 0; g < grouping.size(); ++g) {
    out << grouping.labels.at(g);
    const Matrix& s = grouping.covariance[g];
    for (Index r = 0; r < s.rows(); ++r)
      for (Index c = 0; c < s.cols(); ++c) out << ',' << csv::format_exact(s(r, c));
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace atlas
