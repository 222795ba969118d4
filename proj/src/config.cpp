#include "icfem/config.hpp"

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace icfem {

namespace pt = boost::property_tree;

std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::Em: return "em";
    case Estimator::EmIcf: return "icf";
    case Estimator::ZeroForced: return "zf";
  }
  return "?";
}

namespace {

[[noreturn]] void config_error(const std::string& key, const std::string& msg) {
  throw Error(ErrorCode::ParseError, "config key '" + key + "': " + msg);
}

std::vector<double> parse_numbers(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string token;
  while (in >> token) {
    if (token == ",") continue;
    if (token.back() == ',') token.pop_back();
    try {
      std::size_t used = 0;
      out.push_back(std::stod(token, &used));
      if (used != token.size()) config_error(key, "invalid number '" + token + "'");
    } catch (const std::logic_error&) {
      config_error(key, "invalid number '" + token + "'");
    }
  }
  return out;
}

template <typename T>
T get_scalar(const pt::ptree& tree, const std::string& key, T fallback) {
  auto node = tree.get_optional<std::string>(key);
  if (!node) return fallback;
  std::istringstream in(*node);
  T value{};
  in >> value;
  if (in.fail()) config_error(key, "invalid value '" + *node + "'");
  std::string rest;
  if (in >> rest) config_error(key, "trailing characters in '" + *node + "'");
  return value;
}

VectorXd get_vector(const pt::ptree& tree, const std::string& key, Index expected) {
  const auto values = parse_numbers(key, tree.get<std::string>(key));
  if (static_cast<Index>(values.size()) != expected) {
    config_error(key, "expected " + std::to_string(expected) + " values, got " + std::to_string(values.size()));
  }
  return Eigen::Map<const VectorXd>(values.data(), expected);
}

SpdMatrix get_covariance(const pt::ptree& tree, const std::string& prefix, Index q) {
  MatrixXd sigma;
  if (tree.get_optional<std::string>(prefix + "sigma")) {
    try {
      sigma = parse_covariance(parse_numbers(prefix + "sigma", tree.get<std::string>(prefix + "sigma")), q);
    } catch (const Error& e) {
      config_error(prefix + "sigma", e.what());
    }
  } else if (tree.get_optional<std::string>(prefix + "sigma_diag")) {
    sigma = get_vector(tree, prefix + "sigma_diag", q).asDiagonal();
  } else {
    config_error(prefix + "sigma", "missing (give sigma or sigma_diag)");
  }
  try {
    return SpdMatrix(sigma);
  } catch (const Error& e) {
    config_error(prefix + "sigma", e.what());
  }
}

}  // namespace

std::vector<std::pair<int, int>> parse_pairs(const std::string& text) {
  static const std::regex pair(R"((-?\d+)\s*[,\-]\s*(-?\d+))");
  std::vector<std::pair<int, int>> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), pair); it != std::sregex_iterator(); ++it) {
    out.emplace_back(std::stoi((*it)[1].str()), std::stoi((*it)[2].str()));
  }
  const std::string rest = std::regex_replace(std::regex_replace(text, pair, ""), std::regex(R"([\s(),;\[\]]+)"), "");
  if (!rest.empty()) throw Error(ErrorCode::ParseError, "invalid pattern pairs '" + text + "'");
  return out;
}

MatrixXd parse_covariance(const std::vector<double>& values, Index q) {
  const auto n = static_cast<Index>(values.size());
  MatrixXd out(q, q);
  if (n == q * q) {
    for (Index i = 0; i < q; ++i) {
      for (Index j = 0; j < q; ++j) out(i, j) = values[static_cast<std::size_t>(i * q + j)];
    }
    if (!out.isApprox(out.transpose(), 0.0)) {
      throw Error(ErrorCode::ParseError, "covariance is not symmetric");
    }
    return out;
  }
  if (n == q * (q + 1) / 2) {
    std::size_t k = 0;
    for (Index i = 0; i < q; ++i) {
      for (Index j = 0; j <= i; ++j) {
        out(i, j) = values[k];
        out(j, i) = values[k];
        ++k;
      }
    }
    return out;
  }
  throw Error(ErrorCode::ParseError, "covariance needs " + std::to_string(q * q) + " or " +
                                         std::to_string(q * (q + 1) / 2) + " values, got " + std::to_string(n));
}

std::unique_ptr<NlmeModel> make_model(const ModelSpec& spec) {
  return make_model(spec.name, spec.q, spec.replicates, spec.doses);
}

RunConfig parse_config(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::ParseError, std::string("config line ") + std::to_string(e.line()) + ": " + e.message());
  }

  RunConfig cfg;
  cfg.model.name = tree.get<std::string>("model.name", "cortisol");
  if (auto doses = tree.get_optional<std::string>("model.doses")) cfg.model.doses = parse_numbers("model.doses", *doses);
  cfg.model.replicates = get_scalar<Index>(tree, "model.replicates", 1);
  cfg.model.q = get_scalar<Index>(tree, "model.q", cfg.model.name == "cortisol" ? 4 : 0);
  std::unique_ptr<NlmeModel> model;
  try {
    model = make_model(cfg.model);
  } catch (const Error& e) {
    config_error("model", e.what());
  }
  const Index q = model->q();
  cfg.model.q = q;

  try {
    cfg.pattern = ZeroPattern::from_one_based(q, parse_pairs(tree.get<std::string>("pattern.pairs", "")));
  } catch (const Error& e) {
    config_error("pattern.pairs", e.what());
  }

  if (tree.get_child_optional("init")) {
    cfg.init.m = get_vector(tree, "init.m", q);
    cfg.init.sigma = get_covariance(tree, "init.", q);
    cfg.init.theta = get_vector(tree, "init.theta", model->theta_dim());
  } else {
    config_error("init", "section missing");
  }

  auto& f = cfg.mcem;
  f.chain.chain_length = get_scalar(tree, "mcem.chain_length", f.chain.chain_length);
  f.chain.burn_in = get_scalar(tree, "mcem.burn_in", f.chain.burn_in);
  f.schedule.a = get_scalar(tree, "mcem.gamma_a", f.schedule.a);
  f.schedule.b = get_scalar(tree, "mcem.gamma_b", f.schedule.b);
  f.schedule.warmup = get_scalar(tree, "mcem.warmup", f.schedule.warmup);
  f.tol = get_scalar(tree, "mcem.tol", f.tol);
  f.window = get_scalar(tree, "mcem.window", f.window);
  f.max_iter = get_scalar(tree, "mcem.max_iter", f.max_iter);
  f.seed = get_scalar(tree, "mcem.seed", f.seed);
  f.threads = get_scalar(tree, "mcem.threads", f.threads);
  f.icf.tol = get_scalar(tree, "mcem.icf_tol", f.icf.tol);
  f.icf.max_sweeps = get_scalar(tree, "mcem.icf_max_sweeps", f.icf.max_sweeps);
  cfg.loglik_samples = get_scalar(tree, "mcem.loglik_samples", cfg.loglik_samples);
  cfg.se_samples = get_scalar(tree, "mcem.se_samples", cfg.se_samples);
  cfg.compute_se = get_scalar(tree, "mcem.compute_se", cfg.compute_se);
  try {
    f.schedule.validate();
  } catch (const Error& e) {
    config_error("mcem.gamma_*", e.what());
  }

  if (tree.get_child_optional("study")) {
    cfg.has_study = true;
    auto& s = cfg.study;
    s.replicates = get_scalar(tree, "study.replicates", s.replicates);
    s.individuals = get_scalar(tree, "study.individuals", s.individuals);
    s.seed = get_scalar(tree, "study.seed", s.seed);
    s.lr_samples = get_scalar(tree, "study.lr_samples", s.lr_samples);
    s.threads = get_scalar(tree, "study.threads", s.threads);
    s.truth.m = get_vector(tree, "study.true_m", q);
    s.truth.sigma = get_covariance(tree, "study.true_", q);
    s.truth.theta = get_vector(tree, "study.true_theta", model->theta_dim());
    if (auto est = tree.get_optional<std::string>("study.estimators")) {
      s.estimators.clear();
      std::istringstream words(*est);
      std::string w;
      while (words >> w) {
        if (w == "em") s.estimators.push_back(Estimator::Em);
        else if (w == "icf") s.estimators.push_back(Estimator::EmIcf);
        else if (w == "zf") s.estimators.push_back(Estimator::ZeroForced);
        else config_error("study.estimators", "unknown estimator '" + w + "'");
      }
    }
    if (s.replicates < 1) config_error("study.replicates", "must be >= 1");
    if (!s.truth.sigma.conforms(cfg.pattern)) config_error("study.true_sigma", "does not conform to the zero pattern");
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open config '" + path.string() + "'");
  return parse_config(in);
}

std::string cortisol_config_text() {
  return R"(; Cortisol Emax model with zeros at Sigma_14 and Sigma_34.
[model]
name = cortisol
doses = 0.005 0.01 0.1 0.5 1 2 10

[pattern]
pairs = (1,4) (3,4)

[init]
; m0 read off the dose-response curves; Sigma0 = diag(0.01 m0^2); sigma0 = 20%
m = 50 70 1 0.1
sigma_diag = 25 49 0.01 0.0001
theta = 0.04

[mcem]
chain_length = 500
burn_in = 100
gamma_a = 1
gamma_b = 0.8
warmup = 50
tol = 1e-4
window = 10
max_iter = 400
seed = 20080101
icf_tol = 1e-8
icf_max_sweeps = 500
loglik_samples = 10000
se_samples = 2000
compute_se = 1

[study]
replicates = 20
individuals = 30
seed = 2008
lr_samples = 1000
true_m = 50 70 1.5 0.08
; lower triangle, row by row
true_sigma = 20  -4.5 2.5  -0.3 -0.1 0.05  0 -0.002 0 0.00001
true_theta = 0.015
estimators = em icf zf
)";
}

}  // namespace icfem
