#include "riskseq/portfolio.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "riskseq/common.hpp"

namespace riskseq {

using nlohmann::json;

void PortfolioConfig::validate() const {
  if (n_members < 1) throw ValidationError("config: n_members must be >= 1");
  if (n_numeric < 1) throw ValidationError("config: n_numeric must be >= 1");
  if (n_categorical < 1) throw ValidationError("config: n_categorical must be >= 1");
  if (months < 12) throw ValidationError("config: months must be >= 12");
  if (!(default_rate > 0.0 && default_rate < 1.0))
    throw ValidationError("config: default_rate must lie in (0,1)");
  if (!(missing_rate >= 0.0 && missing_rate < 1.0))
    throw ValidationError("config: missing_rate must lie in [0,1)");
  if (drift_strength < 0.0) throw ValidationError("config: drift_strength must be >= 0");
  if (drift_strength != 0.0 && (drift_start_month < 0 || drift_start_month >= months))
    throw ValidationError("config: drift_start_month out of range");
}

namespace {

json config_to_json(const PortfolioConfig& c) {
  return json{{"n_members", c.n_members},       {"n_numeric", c.n_numeric},
              {"n_categorical", c.n_categorical}, {"months", c.months},
              {"default_rate", c.default_rate},   {"missing_rate", c.missing_rate},
              {"drift_strength", c.drift_strength},
              {"drift_start_month", c.drift_start_month},
              {"seed", c.seed}};
}

PortfolioConfig config_from_json(const json& j) {
  PortfolioConfig c;
  c.n_members = j.at("n_members").get<std::size_t>();
  c.n_numeric = j.at("n_numeric").get<int>();
  c.n_categorical = j.at("n_categorical").get<int>();
  c.months = j.at("months").get<int>();
  c.default_rate = j.at("default_rate").get<double>();
  c.missing_rate = j.at("missing_rate").get<double>();
  c.drift_strength = j.at("drift_strength").get<double>();
  c.drift_start_month = j.at("drift_start_month").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json numeric_to_json(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) {
    if (std::isnan(x))
      a.push_back(nullptr);
    else
      a.push_back(x);
  }
  return a;
}

std::vector<double> numeric_from_json(const json& a) {
  std::vector<double> v;
  v.reserve(a.size());
  for (const auto& x : a) v.push_back(x.is_null() ? std::nan("") : x.get<double>());
  return v;
}

json txn_to_json(const Transaction& t) {
  return json{{"ts", t.ts}, {"num", numeric_to_json(t.numeric)}, {"cat", t.categorical}};
}

Transaction txn_from_json(const json& j) {
  Transaction t;
  t.ts = j.at("ts").get<double>();
  t.numeric = numeric_from_json(j.at("num"));
  t.categorical = j.at("cat").get<std::vector<int>>();
  return t;
}

}  // namespace

void save_portfolio_jsonl(const Portfolio& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);

  json header{{"format", "riskseq-portfolio"},
              {"version", 1},
              {"config", config_to_json(p.config)},
              {"numeric_names", p.numeric_names},
              {"categorical_names", p.categorical_names}};
  json events = json::array();
  for (const auto& e : p.drift_events)
    events.push_back(json{{"strength", e.strength}, {"start_month", e.start_month}});
  header["drift_events"] = events;
  out << header.dump() << '\n';

  for (const auto& m : p.members) {
    json jm{{"member_id", m.member_id},
            {"tenure", m.tenure_months},
            {"start_month", m.start_month},
            {"statement_frac", m.statement_frac}};
    if (m.default_month.has_value())
      jm["default_month"] = *m.default_month;
    else
      jm["default_month"] = nullptr;
    jm["latent"] = json{{"baseline", m.latent.baseline},
                        {"slope", m.latent.slope},
                        {"trend_level", m.latent.trend_level},
                        {"activity", m.latent.activity},
                        {"utilization", m.latent.utilization}};
    json jmonths = json::array();
    for (const auto& mr : m.months) {
      json jt = json::array();
      for (const auto& t : mr.txns) jt.push_back(txn_to_json(t));
      jmonths.push_back(
          json{{"month", mr.month}, {"snapshot", txn_to_json(mr.snapshot)}, {"txns", jt}});
    }
    jm["months"] = jmonths;
    out << jm.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

Portfolio load_portfolio_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("portfolio file empty: " + path);

  json header = json::parse(line);
  if (header.value("format", "") != "riskseq-portfolio")
    throw SchemaError("not a portfolio file: " + path);
  if (header.at("version").get<int>() != 1)
    throw SchemaError("unsupported portfolio version in " + path);

  Portfolio p;
  p.config = config_from_json(header.at("config"));
  p.numeric_names = header.at("numeric_names").get<std::vector<std::string>>();
  p.categorical_names = header.at("categorical_names").get<std::vector<std::string>>();
  for (const auto& e : header.at("drift_events"))
    p.drift_events.push_back(
        {e.at("strength").get<double>(), e.at("start_month").get<int>()});

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json jm = json::parse(line);
    MemberHistory m;
    m.member_id = jm.at("member_id").get<std::uint64_t>();
    m.tenure_months = jm.at("tenure").get<int>();
    m.start_month = jm.at("start_month").get<int>();
    m.statement_frac = jm.at("statement_frac").get<double>();
    if (!jm.at("default_month").is_null())
      m.default_month = jm.at("default_month").get<double>();
    const json& jl = jm.at("latent");
    m.latent.baseline = jl.at("baseline").get<double>();
    m.latent.slope = jl.at("slope").get<double>();
    m.latent.trend_level = jl.at("trend_level").get<double>();
    m.latent.activity = jl.at("activity").get<double>();
    m.latent.utilization = jl.at("utilization").get<std::vector<double>>();
    for (const auto& jmr : jm.at("months")) {
      MonthRecord mr;
      mr.month = jmr.at("month").get<int>();
      mr.snapshot = txn_from_json(jmr.at("snapshot"));
      for (const auto& jt : jmr.at("txns")) mr.txns.push_back(txn_from_json(jt));
      m.months.push_back(std::move(mr));
    }
    p.members.push_back(std::move(m));
  }
  return p;
}

void save_portfolio_csv(const Portfolio& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);

  out << "member_id,month,ts";
  for (const auto& n : p.numeric_names) out << ',' << n;
  for (const auto& n : p.categorical_names) out << ',' << n;
  out << ",label_18m,months_to_default\n";

  char buf[64];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out << buf;
  };
  const double horizon_end = static_cast<double>(p.config.months);
  for (const auto& m : p.members) {
    for (const auto& mr : m.months) {
      for (const auto& t : mr.txns) {
        out << m.member_id << ',' << mr.month << ',';
        put(t.ts);
        for (double v : t.numeric) {
          out << ',';
          if (!std::isnan(v)) put(v);
        }
        for (int c : t.categorical) out << ',' << c;
        if (m.default_month.has_value()) {
          double mtd = horizon_end + *m.default_month - t.ts;
          out << ',' << (mtd <= 18.0 ? 1 : 0) << ',';
          put(mtd);
        } else {
          out << ",0,";
        }
        out << '\n';
      }
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace riskseq
