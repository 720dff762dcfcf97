#include "riskseq/tabprep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "riskseq/common.hpp"

namespace riskseq::prep {

using nlohmann::json;

namespace {

constexpr double kPositivityEps = 1e-6;
constexpr double kConstantStd = 1e-12;

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<std::string> PreprocessArtifacts::output_names() const {
  std::vector<std::string> names = numeric_names;
  names.insert(names.end(), categorical_names.begin(), categorical_names.end());
  return names;
}

double impute_value(const std::vector<double>& values, const std::vector<int>& labels) {
  if (values.size() != labels.size()) throw SchemaError("impute: size mismatch");

  std::vector<std::size_t> present;
  double miss_pos = 0.0, miss_n = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(values[i])) {
      miss_pos += labels[i];
      miss_n += 1.0;
    } else {
      present.push_back(i);
    }
  }
  if (present.empty()) throw ValidationError("impute: all values missing");
  if (miss_n == 0.0) throw ValidationError("impute: no missing values");
  const double miss_rate = miss_pos / miss_n;

  // Equal-count decile bins over sorted present values (stable under ties via
  // index tie-break).
  std::sort(present.begin(), present.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] < values[b];
    return a < b;
  });
  const std::size_t n = present.size();

  int best_bin = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  double best_mid = 0.0;
  for (int b = 0; b < 10; ++b) {
    const std::size_t lo = n * static_cast<std::size_t>(b) / 10;
    const std::size_t hi = n * static_cast<std::size_t>(b + 1) / 10;
    if (lo >= hi) continue;
    double pos = 0.0;
    for (std::size_t i = lo; i < hi; ++i) pos += labels[present[i]];
    const double rate = pos / static_cast<double>(hi - lo);
    const double dist = std::fabs(rate - miss_rate);
    if (dist < best_dist) {  // strict: ties stay with the lower bin
      best_dist = dist;
      best_bin = b;
      best_mid = 0.5 * (values[present[lo]] + values[present[hi - 1]]);
    }
  }
  if (best_bin < 0) throw ValidationError("impute: no populated bin");
  return best_mid;
}

std::pair<double, double> cap_bounds(const std::vector<double>& splits) {
  if (splits.size() < 2) throw ValidationError("cap_bounds: need at least two splits");
  for (std::size_t i = 1; i < splits.size(); ++i)
    if (!(splits[i] > splits[i - 1]))
      throw ValidationError("cap_bounds: splits must be strictly increasing");
  const std::size_t k = splits.size();
  return {2.0 * splits[0] - splits[1], 2.0 * splits[k - 1] - splits[k - 2]};
}

double apply_cap(double x, double low, double high) {
  if (x < low) return low;
  if (x > high) return high;
  return x;
}

double boxcox_apply(double x, double lambda) {
  if (lambda == 0.0) return std::log(x);
  return (std::pow(x, lambda) - 1.0) / lambda;
}

double boxcox_fit(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("boxcox: empty column");
  double log_sum = 0.0;
  for (double v : values) {
    if (!(v > 0.0)) throw ValidationError("boxcox: non-positive value after shift");
    log_sum += std::log(v);
  }
  const double n = static_cast<double>(values.size());

  double best_lambda = 0.0;
  double best_ll = -std::numeric_limits<double>::infinity();
  std::vector<double> t(values.size());
  for (int k = 0; k <= 40; ++k) {
    const double lambda = (k - 20) / 10.0;  // hits -2.0 .. 2.0 exactly
    double mean = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      t[i] = boxcox_apply(values[i], lambda);
      mean += t[i];
    }
    mean /= n;
    double var = 0.0;
    for (double x : t) var += (x - mean) * (x - mean);
    var /= n;
    const double ll = -0.5 * n * std::log(std::max(var, 1e-300)) + (lambda - 1.0) * log_sum;
    if (ll > best_ll) {
      best_ll = ll;
      best_lambda = lambda;
    }
  }
  return best_lambda;
}

std::map<int, double> laplace_encode(const std::vector<int>& levels,
                                     const std::vector<int>& labels, double k) {
  if (levels.empty()) throw ValidationError("laplace: empty column");
  if (levels.size() != labels.size()) throw SchemaError("laplace: size mismatch");
  if (!(k > 0.0)) throw ValidationError("laplace: k must be positive");

  double ybar = 0.0;
  for (int y : labels) ybar += y;
  ybar /= static_cast<double>(labels.size());

  std::map<int, std::pair<double, double>> acc;  // level -> (sum y, count)
  for (std::size_t i = 0; i < levels.size(); ++i) {
    auto& a = acc[levels[i]];
    a.first += labels[i];
    a.second += 1.0;
  }
  std::map<int, double> out;
  for (const auto& [lvl, a] : acc) out[lvl] = (k * ybar + a.first) / (k + a.second);
  return out;
}

namespace {

FeatureTransform fit_numeric(const std::string& name, const std::vector<double>& raw,
                             const std::vector<int>& labels,
                             const std::vector<double>& splits) {
  FeatureTransform t;
  t.kind = FeatureTransform::Kind::numeric;
  t.name = name;

  std::vector<double> present;
  for (double v : raw)
    if (!std::isnan(v)) present.push_back(v);
  if (present.empty()) throw ValidationError("prep: all-missing column " + name);

  t.missing_seen_at_fit = present.size() < raw.size();
  t.imputation_value =
      t.missing_seen_at_fit ? impute_value(raw, labels) : median_of(present);

  if (splits.size() >= 2) {
    auto [lo, hi] = cap_bounds(splits);
    t.capping_enabled = true;
    t.cap_low = lo;
    t.cap_high = hi;
  }

  std::vector<double> x(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double v = std::isnan(raw[i]) ? t.imputation_value : raw[i];
    x[i] = t.capping_enabled ? apply_cap(v, t.cap_low, t.cap_high) : v;
  }

  double min_v = *std::min_element(x.begin(), x.end());
  if (t.capping_enabled) min_v = std::min(min_v, t.cap_low);  // apply-time floor
  t.boxcox_shift = std::max(0.0, kPositivityEps - min_v);

  for (auto& v : x) v = std::max(v + t.boxcox_shift, kPositivityEps);
  t.boxcox_lambda = boxcox_fit(x);
  for (auto& v : x) v = boxcox_apply(v, t.boxcox_lambda);

  double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  t.scale_mean = mean;
  t.scale_std = std::sqrt(var);
  if (t.scale_std < kConstantStd) {
    t.constant = true;
    t.scale_std = 1.0;
  }
  return t;
}

FeatureTransform fit_categorical(const std::string& name, const std::vector<int>& levels,
                                 const std::vector<int>& labels, double k, double ybar) {
  FeatureTransform t;
  t.kind = FeatureTransform::Kind::categorical;
  t.name = name;
  t.category_map = laplace_encode(levels, labels, k);
  t.fallback_encoding = ybar;

  std::vector<double> x(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) x[i] = t.category_map.at(levels[i]);
  double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  t.scale_mean = mean;
  t.scale_std = std::sqrt(var);
  if (t.scale_std < kConstantStd) {
    t.constant = true;
    t.scale_std = 1.0;
  }
  return t;
}

double transform_numeric_value(double v, const FeatureTransform& t) {
  if (t.constant) return 0.0;
  if (std::isnan(v)) v = t.imputation_value;
  if (t.capping_enabled) v = apply_cap(v, t.cap_low, t.cap_high);
  v = std::max(v + t.boxcox_shift, kPositivityEps);
  v = boxcox_apply(v, t.boxcox_lambda);
  return (v - t.scale_mean) / t.scale_std;
}

double transform_categorical_value(int lvl, const FeatureTransform& t) {
  if (t.constant) return 0.0;
  auto it = t.category_map.find(lvl);
  double v = it == t.category_map.end() ? t.fallback_encoding : it->second;
  return (v - t.scale_mean) / t.scale_std;
}

}  // namespace

PreprocessArtifacts fit(const DataTable& table, const SplitsProvider& splits_provider,
                        double laplace_k) {
  table.validate();
  if (table.n_rows() == 0) throw ValidationError("prep: empty table");
  if (table.labels.empty()) throw ValidationError("prep: fit requires labels");

  PreprocessArtifacts a;
  a.n_rows_fit = table.n_rows();
  a.laplace_k = laplace_k;
  a.numeric_names = table.numeric_names;
  a.categorical_names = table.categorical_names;
  double ybar = 0.0;
  for (int y : table.labels) ybar += y;
  ybar /= static_cast<double>(table.labels.size());
  a.target_mean = ybar;

  // Imputation first, then the split model on imputed columns, then the rest
  // of the per-feature chain.
  std::vector<std::vector<double>> imputed = table.numeric;
  std::vector<double> impute_vals(table.numeric.size());
  for (std::size_t f = 0; f < table.numeric.size(); ++f) {
    auto& col = imputed[f];
    bool any_missing = false;
    std::vector<double> present;
    for (double v : col)
      if (std::isnan(v))
        any_missing = true;
      else
        present.push_back(v);
    if (present.empty())
      throw ValidationError("prep: all-missing column " + table.numeric_names[f]);
    impute_vals[f] =
        any_missing ? impute_value(col, table.labels) : median_of(present);
    for (auto& v : col)
      if (std::isnan(v)) v = impute_vals[f];
  }

  std::vector<std::vector<double>> splits;
  if (!imputed.empty()) {
    splits = splits_provider(imputed, table.labels);
    if (splits.size() != imputed.size())
      throw SchemaError("prep: splits provider returned wrong column count");
  }

  for (std::size_t f = 0; f < table.numeric.size(); ++f)
    a.numeric.push_back(
        fit_numeric(table.numeric_names[f], table.numeric[f], table.labels, splits[f]));
  for (std::size_t f = 0; f < table.categorical.size(); ++f)
    a.categorical.push_back(fit_categorical(table.categorical_names[f], table.categorical[f],
                                            table.labels, laplace_k, ybar));
  return a;
}

std::vector<std::vector<double>> apply(const DataTable& table, const PreprocessArtifacts& a) {
  table.validate();
  if (table.numeric_names != a.numeric_names || table.categorical_names != a.categorical_names)
    throw SchemaError("prep: table schema does not match artifacts");

  const std::size_t rows = table.n_rows();
  std::vector<std::vector<double>> out;
  out.reserve(a.n_outputs());
  for (std::size_t f = 0; f < a.numeric.size(); ++f) {
    std::vector<double> col(rows);
    for (std::size_t i = 0; i < rows; ++i)
      col[i] = transform_numeric_value(table.numeric[f][i], a.numeric[f]);
    out.push_back(std::move(col));
  }
  for (std::size_t f = 0; f < a.categorical.size(); ++f) {
    std::vector<double> col(rows);
    for (std::size_t i = 0; i < rows; ++i)
      col[i] = transform_categorical_value(table.categorical[f][i], a.categorical[f]);
    out.push_back(std::move(col));
  }
  return out;
}

std::vector<double> apply_row(const std::vector<double>& numeric_row,
                              const std::vector<int>& categorical_row,
                              const PreprocessArtifacts& a) {
  if (numeric_row.size() != a.numeric.size() || categorical_row.size() != a.categorical.size())
    throw SchemaError("prep: row width does not match artifacts");
  std::vector<double> out(a.n_outputs());
  for (std::size_t f = 0; f < a.numeric.size(); ++f)
    out[f] = transform_numeric_value(numeric_row[f], a.numeric[f]);
  for (std::size_t f = 0; f < a.categorical.size(); ++f)
    out[a.numeric.size() + f] = transform_categorical_value(categorical_row[f], a.categorical[f]);
  return out;
}

namespace {

json transform_to_json(const FeatureTransform& t) {
  json j{{"kind", t.kind == FeatureTransform::Kind::numeric ? "numeric" : "categorical"},
         {"name", t.name},
         {"scale_mean", t.scale_mean},
         {"scale_std", t.scale_std},
         {"constant", t.constant}};
  if (t.kind == FeatureTransform::Kind::numeric) {
    j["missing_seen_at_fit"] = t.missing_seen_at_fit;
    j["imputation_value"] = t.imputation_value;
    j["capping_enabled"] = t.capping_enabled;
    j["cap_low"] = t.cap_low;
    j["cap_high"] = t.cap_high;
    j["boxcox_lambda"] = t.boxcox_lambda;
    j["boxcox_shift"] = t.boxcox_shift;
  } else {
    json m = json::object();
    for (const auto& [lvl, enc] : t.category_map) m[std::to_string(lvl)] = enc;
    j["category_map"] = std::move(m);
    j["fallback_encoding"] = t.fallback_encoding;
  }
  return j;
}

FeatureTransform transform_from_json(const json& j) {
  FeatureTransform t;
  t.kind = j.at("kind").get<std::string>() == "numeric" ? FeatureTransform::Kind::numeric
                                                        : FeatureTransform::Kind::categorical;
  t.name = j.at("name").get<std::string>();
  t.scale_mean = j.at("scale_mean").get<double>();
  t.scale_std = j.at("scale_std").get<double>();
  t.constant = j.at("constant").get<bool>();
  if (t.kind == FeatureTransform::Kind::numeric) {
    t.missing_seen_at_fit = j.at("missing_seen_at_fit").get<bool>();
    t.imputation_value = j.at("imputation_value").get<double>();
    t.capping_enabled = j.at("capping_enabled").get<bool>();
    t.cap_low = j.at("cap_low").get<double>();
    t.cap_high = j.at("cap_high").get<double>();
    t.boxcox_lambda = j.at("boxcox_lambda").get<double>();
    t.boxcox_shift = j.at("boxcox_shift").get<double>();
  } else {
    for (const auto& [key, val] : j.at("category_map").items())
      t.category_map[std::stoi(key)] = val.get<double>();
    t.fallback_encoding = j.at("fallback_encoding").get<double>();
  }
  return t;
}

}  // namespace

void save_artifacts(const PreprocessArtifacts& a, const std::string& path) {
  json j{{"format", "riskseq-prep"},
         {"version", a.version},
         {"n_rows_fit", a.n_rows_fit},
         {"target_mean", a.target_mean},
         {"laplace_k", a.laplace_k},
         {"numeric_names", a.numeric_names},
         {"categorical_names", a.categorical_names}};
  json jn = json::array(), jc = json::array();
  for (const auto& t : a.numeric) jn.push_back(transform_to_json(t));
  for (const auto& t : a.categorical) jc.push_back(transform_to_json(t));
  j["numeric"] = std::move(jn);
  j["categorical"] = std::move(jc);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

PreprocessArtifacts load_artifacts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  json j = json::parse(in, nullptr, true);
  if (j.value("format", "") != "riskseq-prep")
    throw SchemaError("not a preprocessing artifacts file: " + path);
  if (j.at("version").get<int>() != 1)
    throw SchemaError("unsupported artifacts version in " + path);
  PreprocessArtifacts a;
  a.version = j.at("version").get<int>();
  a.n_rows_fit = j.at("n_rows_fit").get<std::size_t>();
  a.target_mean = j.at("target_mean").get<double>();
  a.laplace_k = j.at("laplace_k").get<double>();
  a.numeric_names = j.at("numeric_names").get<std::vector<std::string>>();
  a.categorical_names = j.at("categorical_names").get<std::vector<std::string>>();
  for (const auto& jt : j.at("numeric")) a.numeric.push_back(transform_from_json(jt));
  for (const auto& jt : j.at("categorical")) a.categorical.push_back(transform_from_json(jt));
  return a;
}

}  // namespace riskseq::prep
