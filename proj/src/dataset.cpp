#include "icfem/dataset.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace icfem {

namespace {

[[noreturn]] void parse_error(std::size_t line, const std::string& msg) {
  throw Error(ErrorCode::ParseError, "row " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line, const char* column) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    parse_error(line, std::string("invalid ") + column + " '" + s + "'");
  }
  return v;
}

struct Observation {
  double design = 0.0;
  double y = 0.0;
};

}  // namespace

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  // Skip leading blank lines before the header.
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  const auto header = split_fields(line);
  if (header != std::vector<std::string>{"id", "obs_index", "design_value", "y"}) {
    parse_error(line_no, "expected header 'id,obs_index,design_value,y'");
  }

  std::vector<std::string> order;
  std::map<std::string, std::map<long, Observation>> rows;
  std::map<std::string, std::size_t> first_line;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 4) parse_error(line_no, "expected 4 fields, got " + std::to_string(f.size()));
    if (f[0].empty()) parse_error(line_no, "empty id");
    long index = 0;
    {
      const auto [ptr, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), index);
      if (f[1].empty() || ec != std::errc() || ptr != f[1].data() + f[1].size() || index < 1) {
        parse_error(line_no, "invalid obs_index '" + f[1] + "'");
      }
    }
    Observation obs{parse_double(f[2], line_no, "design_value"), parse_double(f[3], line_no, "y")};
    if (!rows.contains(f[0])) {
      order.push_back(f[0]);
      first_line[f[0]] = line_no;
    }
    if (!rows[f[0]].emplace(index, obs).second) {
      parse_error(line_no, "duplicate obs_index " + f[1] + " for id '" + f[0] + "'");
    }
  }
  if (order.empty()) parse_error(line_no, "no observations");

  Dataset data;
  const std::size_t n_obs = rows[order.front()].size();
  for (const auto& id : order) {
    const auto& obs = rows[id];
    if (obs.size() != n_obs || obs.rbegin()->first != static_cast<long>(n_obs)) {
      parse_error(first_line[id], "unbalanced panel: id '" + id + "' has observation indices that are not 1.." +
                                      std::to_string(n_obs));
    }
    Individual ind;
    ind.id = id;
    ind.y.resize(static_cast<Index>(n_obs));
    ind.design.resize(static_cast<Index>(n_obs));
    for (const auto& [k, o] : obs) {
      ind.y(k - 1) = o.y;
      ind.design(k - 1) = o.design;
    }
    data.individuals.push_back(std::move(ind));
  }
  return data;
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open dataset '" + path.string() + "'");
  return read_dataset_csv(in);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << "id,obs_index,design_value,y\n";
  out << std::setprecision(17);
  for (const auto& ind : data.individuals) {
    for (Index j = 0; j < ind.y.size(); ++j) {
      out << ind.id << ',' << j + 1 << ',' << ind.design(j) << ',' << ind.y(j) << '\n';
    }
  }
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::ParseError, "cannot write dataset '" + path.string() + "'");
  write_dataset_csv(out, data);
}

void check_balanced(const Dataset& data, Index n_obs) {
  for (const auto& ind : data.individuals) {
    if (ind.y.size() != n_obs || ind.design.size() != n_obs) {
      throw Error(ErrorCode::DimensionMismatch, "individual '" + ind.id + "' has " +
                                                    std::to_string(ind.y.size()) +
                                                    " observations, model expects " + std::to_string(n_obs));
    }
  }
}

}  // namespace icfem
