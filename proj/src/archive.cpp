#include "hbrnorm/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hbrnorm/error.hpp"

namespace hbrnorm {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

using nlohmann::json;

namespace {

json vector_to_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::string support_name(Support s) {
  switch (s) {
    case Support::real:
      return "real";
    case Support::positive:
      return "positive";
    case Support::interval:
      return "interval";
  }
  return "?";
}

Support support_from_name(const std::string& s) {
  if (s == "real") return Support::real;
  if (s == "positive") return Support::positive;
  if (s == "interval") return Support::interval;
  throw Error(ErrorCode::schema, "unknown support '" + s + "'");
}

json priors_to_json(const std::vector<Prior>& ps) {
  json a = json::array();
  for (const auto& p : ps) a.push_back(prior_to_json(p));
  return a;
}

std::vector<Prior> priors_from_json(const json& j) {
  std::vector<Prior> out;
  for (const auto& e : j) out.push_back(prior_from_json(e));
  return out;
}

json diagnostics_to_json(const DiagnosticsReport& d) {
  return json{{"rhat", d.rhat},
              {"ess_bulk", d.ess_bulk},
              {"divergences", d.divergences},
              {"transitions", d.transitions},
              {"divergence_fraction", d.divergence_fraction},
              {"max_rhat", d.max_rhat},
              {"min_ess", d.min_ess},
              {"rhat_flag", d.rhat_flag},
              {"divergence_flag", d.divergence_flag}};
}

DiagnosticsReport diagnostics_from_json(const json& j) {
  DiagnosticsReport d;
  d.rhat = j.at("rhat").get<std::vector<double>>();
  d.ess_bulk = j.at("ess_bulk").get<std::vector<double>>();
  d.divergences = j.at("divergences").get<std::size_t>();
  d.transitions = j.at("transitions").get<std::size_t>();
  d.divergence_fraction = j.at("divergence_fraction").get<double>();
  d.max_rhat = j.at("max_rhat").get<double>();
  d.min_ess = j.at("min_ess").get<double>();
  d.rhat_flag = j.at("rhat_flag").get<bool>();
  d.divergence_flag = j.at("divergence_flag").get<bool>();
  return d;
}

json chain_stats_to_json(const ChainStats& c) {
  return json{{"step_size", c.step_size},
              {"inv_metric", c.inv_metric},
              {"divergences", c.divergences},
              {"warmup_divergences", c.warmup_divergences},
              {"mean_accept_stat", c.mean_accept_stat},
              {"mean_tree_depth", c.mean_tree_depth},
              {"leapfrog_steps", c.leapfrog_steps}};
}

ChainStats chain_stats_from_json(const json& j) {
  ChainStats c;
  c.step_size = j.at("step_size").get<double>();
  c.inv_metric = j.at("inv_metric").get<std::vector<double>>();
  c.divergences = j.at("divergences").get<std::size_t>();
  c.warmup_divergences = j.at("warmup_divergences").get<std::size_t>();
  c.mean_accept_stat = j.at("mean_accept_stat").get<double>();
  c.mean_tree_depth = j.at("mean_tree_depth").get<double>();
  c.leapfrog_steps = j.at("leapfrog_steps").get<std::size_t>();
  return c;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string serialize_archive(const Archive& a) {
  json header{{"format", "hbrnorm-archive"}, {"version", archive_version}, {"kind", a.kind}, {"meta", a.meta}};
  json arrays = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, values] : a.arrays) {
    arrays.push_back(json{{"name", name}, {"offset", offset}, {"count", values.size()}});
    offset += values.size();
  }
  header["arrays"] = arrays;
  const std::string text = header.dump();
  std::string out = std::string(archive_magic) + " " + std::to_string(archive_version) + "\n";
  const std::uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += text;
  for (const auto& [name, values] : a.arrays) {
    out.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  }
  return out;
}

Archive deserialize_archive(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos || bytes.rfind(archive_magic, 0) != 0) {
    throw Error(ErrorCode::schema, "not an hbrnorm archive (bad magic)");
  }
  const std::string version_text = bytes.substr(std::strlen(archive_magic) + 1, nl - std::strlen(archive_magic) - 1);
  if (version_text != std::to_string(archive_version)) {
    throw Error(ErrorCode::schema, "unsupported archive version '" + version_text + "'");
  }
  std::size_t pos = nl + 1;
  std::uint64_t len = 0;
  if (bytes.size() < pos + sizeof(len)) throw Error(ErrorCode::schema, "truncated archive header");
  std::memcpy(&len, bytes.data() + pos, sizeof(len));
  pos += sizeof(len);
  if (bytes.size() < pos + len) throw Error(ErrorCode::schema, "truncated archive metadata");
  json header;
  try {
    header = json::parse(bytes.substr(pos, len));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("archive metadata is not valid JSON: ") + e.what());
  }
  pos += len;
  Archive a;
  a.kind = header.at("kind").get<std::string>();
  a.meta = header.at("meta");
  for (const auto& entry : header.at("arrays")) {
    const auto count = entry.at("count").get<std::uint64_t>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const std::size_t begin = pos + offset * sizeof(double);
    if (bytes.size() < begin + count * sizeof(double)) throw Error(ErrorCode::schema, "truncated archive arrays");
    std::vector<double> v(count);
    std::memcpy(v.data(), bytes.data() + begin, count * sizeof(double));
    a.arrays[entry.at("name").get<std::string>()] = std::move(v);
  }
  return a;
}

void write_archive(const std::string& path, const Archive& a) { write_file_atomic(path, serialize_archive(a)); }

Archive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open archive '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_archive(ss.str());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, "malformed archive '" + path + "': " + e.what());
  }
}

void expect_kind(const Archive& a, const std::string& kind) {
  if (a.kind != kind) throw Error(ErrorCode::schema, "archive holds a " + a.kind + ", expected a " + kind);
}

json prior_to_json(const Prior& p) {
  return json{{"family", Prior::family_name(p.family())}, {"a", p.a()}, {"b", p.b()}};
}

Prior prior_from_json(const json& j) {
  const auto fam = Prior::family_from_name(j.at("family").get<std::string>());
  const double a = j.at("a").get<double>();
  const double b = j.at("b").get<double>();
  switch (fam) {
    case Prior::Family::normal:
      return Prior::normal(a, b);
    case Prior::Family::half_cauchy:
      return Prior::half_cauchy(b);
    case Prior::Family::log_normal:
      return Prior::log_normal(a, b);
    case Prior::Family::uniform:
      return Prior::uniform(a, b);
  }
  throw Error(ErrorCode::schema, "bad prior");
}

json spec_to_json(const ModelSpec& s) {
  json j{{"strategy", strategy_name(s.strategy)},
         {"mean_degree", s.mean_degree},
         {"noise", noise_form_name(s.noise)}};
  j["clamp_group_scale"] = s.clamp_group_scale ? json(*s.clamp_group_scale) : json(nullptr);
  json hp = json::array();
  for (const auto& u : s.hyperpriors) {
    hp.push_back(json{{"mu_theta_mu", priors_to_json(u.mu_theta_mu)},
                      {"sigma_theta_mu", priors_to_json(u.sigma_theta_mu)},
                      {"mu_theta_sigma", priors_to_json(u.mu_theta_sigma)},
                      {"sigma_theta_sigma", priors_to_json(u.sigma_theta_sigma)}});
  }
  j["hyperpriors"] = hp;
  return j;
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.strategy = parse_strategy(j.at("strategy").get<std::string>());
  s.mean_degree = j.at("mean_degree").get<std::size_t>();
  s.noise = parse_noise_form(j.at("noise").get<std::string>());
  if (!j.at("clamp_group_scale").is_null()) s.clamp_group_scale = j.at("clamp_group_scale").get<double>();
  for (const auto& u : j.at("hyperpriors")) {
    s.hyperpriors.push_back(UnitHyperpriors{priors_from_json(u.at("mu_theta_mu")),
                                            priors_from_json(u.at("sigma_theta_mu")),
                                            priors_from_json(u.at("mu_theta_sigma")),
                                            priors_from_json(u.at("sigma_theta_sigma"))});
  }
  return s;
}

json standardizer_to_json(const Standardizer& s) {
  return json{{"covariate_mean", vector_to_json(s.covariate_mean)},
              {"covariate_sd", vector_to_json(s.covariate_sd)},
              {"response_mean", vector_to_json(s.response_mean)},
              {"response_variance", vector_to_json(s.response_variance)}};
}

Standardizer standardizer_from_json(const json& j) {
  Standardizer s;
  s.covariate_mean = vector_from_json(j.at("covariate_mean"));
  s.covariate_sd = vector_from_json(j.at("covariate_sd"));
  s.response_mean = vector_from_json(j.at("response_mean"));
  s.response_variance = vector_from_json(j.at("response_variance"));
  return s;
}

json layout_to_json(const ParamLayout& l) {
  json a = json::array();
  for (const auto& b : l.blocks()) {
    a.push_back(json{{"name", b.name},
                     {"offset", b.offset},
                     {"size", b.size},
                     {"support", support_name(b.support)},
                     {"lower", b.lower},
                     {"upper", b.upper}});
  }
  return a;
}

ParamLayout layout_from_json(const json& j) {
  ParamLayout l;
  for (const auto& b : j) {
    l.add(b.at("name").get<std::string>(), b.at("size").get<std::size_t>(),
          support_from_name(b.at("support").get<std::string>()), b.at("lower").get<double>(),
          b.at("upper").get<double>());
    if (l.blocks().back().offset != b.at("offset").get<std::size_t>()) {
      throw Error(ErrorCode::schema, "archive layout offsets are inconsistent");
    }
  }
  return l;
}

Archive model_to_archive(const FittedNormativeModel& m) {
  Archive a;
  a.kind = "normative_model";
  a.meta["spec"] = spec_to_json(m.spec);
  a.meta["covariate_names"] = m.covariate_names;
  a.meta["batch_dimensions"] = m.batch_dimensions;
  a.meta["batch_labels"] = m.batch_labels;
  a.meta["standardizer"] = standardizer_to_json(m.standardizer);
  a.meta["pack_hash"] = m.pack_hash;
  json units = json::array();
  for (std::size_t j = 0; j < m.units.size(); ++j) {
    const auto& u = m.units[j];
    json cs = json::array();
    for (const auto& c : u.draws.chain_stats) cs.push_back(chain_stats_to_json(c));
    const std::string array_name = "draws/" + std::to_string(j);
    units.push_back(json{{"name", u.name},
                         {"layout", layout_to_json(u.draws.layout)},
                         {"chains", u.draws.chains},
                         {"samples", u.draws.samples},
                         {"chain_stats", cs},
                         {"diagnostics", diagnostics_to_json(u.diagnostics)},
                         {"array", array_name}});
    a.arrays[array_name] = u.draws.values;
  }
  a.meta["units"] = units;
  return a;
}

FittedNormativeModel model_from_archive(const Archive& a) {
  expect_kind(a, "normative_model");
  FittedNormativeModel m;
  try {
    m.spec = spec_from_json(a.meta.at("spec"));
    m.covariate_names = a.meta.at("covariate_names").get<std::vector<std::string>>();
    m.batch_dimensions = a.meta.at("batch_dimensions").get<std::vector<std::string>>();
    m.batch_labels = a.meta.at("batch_labels").get<std::vector<std::string>>();
    m.standardizer = standardizer_from_json(a.meta.at("standardizer"));
    m.pack_hash = a.meta.at("pack_hash").get<std::string>();
    for (const auto& u : a.meta.at("units")) {
      UnitFit uf;
      uf.name = u.at("name").get<std::string>();
      uf.draws.layout = layout_from_json(u.at("layout"));
      uf.draws.chains = u.at("chains").get<std::size_t>();
      uf.draws.samples = u.at("samples").get<std::size_t>();
      for (const auto& c : u.at("chain_stats")) uf.draws.chain_stats.push_back(chain_stats_from_json(c));
      uf.diagnostics = diagnostics_from_json(u.at("diagnostics"));
      const auto it = a.arrays.find(u.at("array").get<std::string>());
      if (it == a.arrays.end()) throw Error(ErrorCode::schema, "archive lacks draws for unit '" + uf.name + "'");
      uf.draws.values = it->second;
      if (uf.draws.values.size() != uf.draws.chains * uf.draws.samples * uf.draws.dim()) {
        throw Error(ErrorCode::schema, "draw array size mismatch for unit '" + uf.name + "'");
      }
      m.units.push_back(std::move(uf));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("malformed model archive: ") + e.what());
  }
  return m;
}

void save_model(const std::string& path, const FittedNormativeModel& m) { write_archive(path, model_to_archive(m)); }

FittedNormativeModel load_model(const std::string& path) { return model_from_archive(read_archive(path)); }

std::string model_hash(const FittedNormativeModel& m) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(serialize_archive(model_to_archive(m)));
  return os.str();
}

}  // namespace hbrnorm
