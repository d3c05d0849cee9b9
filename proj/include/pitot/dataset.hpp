#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "pitot/errors.hpp"
#include "pitot/util.hpp"

namespace pitot {

constexpr int kMaxInterferers = 3;

/// One measured runtime of (workload, platform, interference-set).
struct Observation {
  int workload_id = 0;
  int platform_id = 0;
  std::vector<int> interference;  // multiset of workload ids, size 0..3
  double runtime_s = 0.0;

  int mode() const { return static_cast<int>(interference.size()); }
};

struct FeatureTable {
  Matrix workload_features;  // N_w x d_w
  Matrix platform_features;  // N_p x d_p
  std::vector<std::string> workload_feature_names;
  std::vector<std::string> platform_feature_names;
};

struct Dataset {
  std::vector<Observation> observations;
  FeatureTable features;
  int n_workloads = 0;
  int n_platforms = 0;
  std::vector<std::string> workload_names;  // optional, for reporting
  std::vector<std::string> platform_names;
};

struct Split {
  std::vector<int> train_ids;
  std::vector<int> calval_ids;
  std::vector<int> test_ids;
  double train_fraction = 0.0;
  std::uint64_t seed = 0;
};

enum class DataFormat { canonical_jsonl, canonical_csv };

inline void validate_observation(const Observation& o, int n_w, int n_p,
                                 std::size_t row) {
  const std::string where = "observation " + std::to_string(row);
  if (!(o.runtime_s > 0.0) || !std::isfinite(o.runtime_s))
    throw ValidationError(where + ": runtime_s must be positive and finite, got " +
                          format_g17(o.runtime_s));
  if (o.workload_id < 0 || o.workload_id >= n_w)
    throw ValidationError(where + ": workload index out of range: " +
                          std::to_string(o.workload_id) + " (N_w=" + std::to_string(n_w) + ")");
  if (o.platform_id < 0 || o.platform_id >= n_p)
    throw ValidationError(where + ": platform index out of range: " +
                          std::to_string(o.platform_id) + " (N_p=" + std::to_string(n_p) + ")");
  if (o.interference.size() > kMaxInterferers)
    throw ValidationError(where + ": interference set larger than " +
                          std::to_string(kMaxInterferers));
  for (int k : o.interference)
    if (k < 0 || k >= n_w)
      throw ValidationError(where + ": interfering workload index out of range: " +
                            std::to_string(k));
}

inline void validate_dataset(const Dataset& ds) {
  if (ds.n_workloads < 1 || ds.n_platforms < 1)
    throw ValidationError("dataset must have at least one workload and one platform");
  if (ds.features.workload_features.rows != static_cast<std::size_t>(ds.n_workloads))
    throw ValidationError("workload feature rows != N_w");
  if (ds.features.platform_features.rows != static_cast<std::size_t>(ds.n_platforms))
    throw ValidationError("platform feature rows != N_p");
  for (double v : ds.features.workload_features.data) {
    if (!std::isfinite(v)) throw ValidationError("non-finite workload feature");
    if (v < 0.0) throw ValidationError("negative workload feature (log-frequency features are >= 0)");
  }
  // unused opcode columns are dropped before files are written
  for (std::size_t c = 0; c < ds.features.workload_features.cols; ++c) {
    bool nonzero = false;
    for (std::size_t r = 0; r < ds.features.workload_features.rows && !nonzero; ++r)
      nonzero = ds.features.workload_features.at(r, c) != 0.0;
    if (!nonzero)
      throw ValidationError("workload feature column " + std::to_string(c) +
                            " is all-zero (unused opcode columns must be dropped)");
  }
  for (double v : ds.features.platform_features.data)
    if (!std::isfinite(v)) throw ValidationError("non-finite platform feature");
  for (std::size_t i = 0; i < ds.observations.size(); ++i)
    validate_observation(ds.observations[i], ds.n_workloads, ds.n_platforms, i);
}

// --- opcode count transform -------------------------------------------------

struct OpcodeFeatures {
  Matrix features;                 // ln(n+1), all-zero columns dropped
  std::vector<int> retained_columns;
};

/// log-frequency transform f(n) = ln(n + 1); drops columns unused by every row.
inline OpcodeFeatures transform_opcode_counts(const Matrix& raw_counts) {
  for (double v : raw_counts.data)
    if (v < 0.0) throw ValidationError("negative opcode count");
  std::vector<int> keep;
  for (std::size_t c = 0; c < raw_counts.cols; ++c) {
    bool nonzero = false;
    for (std::size_t r = 0; r < raw_counts.rows && !nonzero; ++r)
      nonzero = raw_counts.at(r, c) != 0.0;
    if (nonzero) keep.push_back(static_cast<int>(c));
  }
  OpcodeFeatures out;
  out.retained_columns = keep;
  out.features = Matrix(raw_counts.rows, keep.size());
  for (std::size_t r = 0; r < raw_counts.rows; ++r)
    for (std::size_t c = 0; c < keep.size(); ++c)
      out.features.at(r, c) = std::log1p(raw_counts.at(r, static_cast<std::size_t>(keep[c])));
  return out;
}

// --- splits -------------------------------------------------------------------

/// Seed-deterministic partition: round(f*N) observations go to train+calval
/// (80/20 between them), the rest to test. Each id set is sorted.
inline Split make_split(std::size_t n_observations, double train_fraction,
                        std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction must be in (0,1)");
  const auto n = static_cast<long long>(n_observations);
  std::vector<int> ids(n_observations);
  for (std::size_t i = 0; i < n_observations; ++i) ids[i] = static_cast<int>(i);
  Rng rng(seed);
  for (std::size_t i = n_observations; i > 1; --i)
    std::swap(ids[i - 1], ids[draw_index(rng, i)]);

  const long long n_trainval = std::llround(train_fraction * static_cast<double>(n));
  const long long n_train = std::llround(0.8 * static_cast<double>(n_trainval));
  const long long n_calval = n_trainval - n_train;
  const long long n_test = n - n_trainval;
  if (n_train < 1 || n_calval < 1 || n_test < 1)
    throw ValidationError("split produced an empty set (train=" + std::to_string(n_train) +
                          ", calval=" + std::to_string(n_calval) +
                          ", test=" + std::to_string(n_test) + ")");

  Split s;
  s.train_fraction = train_fraction;
  s.seed = seed;
  s.train_ids.assign(ids.begin(), ids.begin() + n_train);
  s.calval_ids.assign(ids.begin() + n_train, ids.begin() + n_trainval);
  s.test_ids.assign(ids.begin() + n_trainval, ids.end());
  std::sort(s.train_ids.begin(), s.train_ids.end());
  std::sort(s.calval_ids.begin(), s.calval_ids.end());
  std::sort(s.test_ids.begin(), s.test_ids.end());
  return s;
}

inline Split make_split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  return make_split(ds.observations.size(), train_fraction, seed);
}

inline std::string split_to_json(const Split& s) {
  std::string out = "{\n  \"seed\": " + std::to_string(s.seed) +
                    ",\n  \"train_fraction\": " + format_g17(s.train_fraction);
  auto emit = [&out](const char* key, const std::vector<int>& ids) {
    out += ",\n  \"";
    out += key;
    out += "\": [";
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(ids[i]);
    }
    out += "]";
  };
  emit("train_ids", s.train_ids);
  emit("calval_ids", s.calval_ids);
  emit("test_ids", s.test_ids);
  out += "\n}\n";
  return out;
}

inline Split split_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Split s;
  s.seed = j.value("seed", std::uint64_t{0});
  s.train_fraction = j.value("train_fraction", 0.0);
  s.train_ids = j.at("train_ids").get<std::vector<int>>();
  s.calval_ids = j.at("calval_ids").get<std::vector<int>>();
  s.test_ids = j.at("test_ids").get<std::vector<int>>();
  return s;
}

inline std::string split_file_name(std::uint64_t seed, double fraction) {
  return "split_" + std::to_string(seed) + "_" + format_shortest(fraction) + ".json";
}

// --- canonical file I/O -------------------------------------------------------

inline std::string observations_to_jsonl(const std::vector<Observation>& obs) {
  std::string out;
  for (const auto& o : obs) {
    out += "{\"w\":" + std::to_string(o.workload_id) +
           ",\"p\":" + std::to_string(o.platform_id) + ",\"k\":[";
    for (std::size_t i = 0; i < o.interference.size(); ++i) {
      if (i) out += ',';
      out += std::to_string(o.interference[i]);
    }
    out += "],\"t\":" + format_g17(o.runtime_s) + "}\n";
  }
  return out;
}

inline std::string observations_to_csv(const std::vector<Observation>& obs) {
  std::string out = "w,p,k,t\n";
  for (const auto& o : obs) {
    out += std::to_string(o.workload_id) + "," + std::to_string(o.platform_id) + ",";
    for (std::size_t i = 0; i < o.interference.size(); ++i) {
      if (i) out += ';';
      out += std::to_string(o.interference[i]);
    }
    out += "," + format_g17(o.runtime_s) + "\n";
  }
  return out;
}

inline std::vector<Observation> observations_from_jsonl(const std::string& text) {
  std::vector<Observation> obs;
  std::size_t line_no = 0;
  for (const auto& line : split_string(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    Observation o;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      if (!j.contains("w") || !j.contains("p") || !j.contains("k") || !j.contains("t"))
        throw ParseError("missing one of w/p/k/t");
      o.workload_id = j.at("w").get<int>();
      o.platform_id = j.at("p").get<int>();
      o.interference = j.at("k").get<std::vector<int>>();
      o.runtime_s = j.at("t").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    obs.push_back(std::move(o));
  }
  return obs;
}

inline std::vector<Observation> observations_from_csv(const std::string& text) {
  std::vector<Observation> obs;
  auto lines = split_string(text, '\n');
  std::size_t line_no = 0;
  for (const auto& line : lines) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("w,", 0) == 0) continue;  // header
    auto cells = split_string(line, ',');
    if (cells.size() != 4)
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 columns");
    Observation o;
    o.workload_id = static_cast<int>(parse_int(cells[0], "line " + std::to_string(line_no)));
    o.platform_id = static_cast<int>(parse_int(cells[1], "line " + std::to_string(line_no)));
    if (!cells[2].empty())
      for (const auto& part : split_string(cells[2], ';'))
        o.interference.push_back(
            static_cast<int>(parse_int(part, "line " + std::to_string(line_no))));
    o.runtime_s = parse_double(cells[3], "line " + std::to_string(line_no));
    obs.push_back(std::move(o));
  }
  return obs;
}

inline std::string features_to_csv(const Matrix& m, const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t c = 0; c < m.cols; ++c) {
    if (c) out += ',';
    out += c < names.size() ? names[c] : "f" + std::to_string(c);
  }
  out += '\n';
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (c) out += ',';
      out += format_g17(m.at(r, c));
    }
    out += '\n';
  }
  return out;
}

inline std::pair<Matrix, std::vector<std::string>> features_from_csv(
    const std::string& text, const std::string& file) {
  auto lines = split_string(text, '\n');
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(file + ": empty feature file");
  auto names = split_string(lines[0], ',');
  if (names.size() == 1 && names[0].empty()) names.clear();
  Matrix m(lines.size() - 1, names.size());
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto cells = split_string(lines[r], ',');
    if (cells.size() != names.size())
      throw ParseError(file + " line " + std::to_string(r + 1) + ": expected " +
                       std::to_string(names.size()) + " columns, got " +
                       std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c)
      m.at(r - 1, c) = parse_double(cells[c], file + " line " + std::to_string(r + 1));
  }
  return {std::move(m), std::move(names)};
}

inline std::string observations_file_name(DataFormat format) {
  return format == DataFormat::canonical_jsonl ? "observations.jsonl" : "observations.csv";
}

inline void save_dataset(const Dataset& ds, const std::string& dir,
                         DataFormat format = DataFormat::canonical_jsonl) {
  const std::string obs_text = format == DataFormat::canonical_jsonl
                                   ? observations_to_jsonl(ds.observations)
                                   : observations_to_csv(ds.observations);
  write_text_file(dir + "/" + observations_file_name(format), obs_text);
  write_text_file(dir + "/workload_features.csv",
                  features_to_csv(ds.features.workload_features,
                                  ds.features.workload_feature_names));
  write_text_file(dir + "/platform_features.csv",
                  features_to_csv(ds.features.platform_features,
                                  ds.features.platform_feature_names));
}

inline Dataset load_dataset(const std::string& dir,
                            DataFormat format = DataFormat::canonical_jsonl) {
  Dataset ds;
  const std::string obs_path = dir + "/" + observations_file_name(format);
  const std::string obs_text = read_text_file(obs_path);
  ds.observations = format == DataFormat::canonical_jsonl
                        ? observations_from_jsonl(obs_text)
                        : observations_from_csv(obs_text);
  auto [wf, wnames] = features_from_csv(read_text_file(dir + "/workload_features.csv"),
                                        "workload_features.csv");
  auto [pf, pnames] = features_from_csv(read_text_file(dir + "/platform_features.csv"),
                                        "platform_features.csv");
  ds.features.workload_features = std::move(wf);
  ds.features.workload_feature_names = std::move(wnames);
  ds.features.platform_features = std::move(pf);
  ds.features.platform_feature_names = std::move(pnames);
  ds.n_workloads = static_cast<int>(ds.features.workload_features.rows);
  ds.n_platforms = static_cast<int>(ds.features.platform_features.rows);
  validate_dataset(ds);
  return ds;
}

// --- feature standardization ---------------------------------------------------

struct ColumnTransform {
  std::vector<double> mean;   // per column; 0 for pass-through columns
  std::vector<double> scale;  // per column; 1 for pass-through columns
};

/// Z-scores non-binary platform feature columns using statistics over the
/// platforms referenced by the given observation ids. Binary {0,1} columns
/// (one-hot and presence indicators) pass through unchanged.
inline ColumnTransform platform_feature_transform(const Dataset& ds,
                                                  std::span<const int> train_ids) {
  const Matrix& pf = ds.features.platform_features;
  std::set<int> plat;
  for (int id : train_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= ds.observations.size())
      throw IndexError("observation id out of range: " + std::to_string(id));
    plat.insert(ds.observations[static_cast<std::size_t>(id)].platform_id);
  }
  if (plat.empty()) throw ValidationError("no observations to derive feature statistics from");
  ColumnTransform t;
  t.mean.assign(pf.cols, 0.0);
  t.scale.assign(pf.cols, 1.0);
  for (std::size_t c = 0; c < pf.cols; ++c) {
    bool binary = true;
    for (std::size_t r = 0; r < pf.rows && binary; ++r)
      binary = pf.at(r, c) == 0.0 || pf.at(r, c) == 1.0;
    if (binary) continue;
    double s = 0.0, s2 = 0.0;
    for (int j : plat) {
      double v = pf.at(static_cast<std::size_t>(j), c);
      s += v;
      s2 += v * v;
    }
    const double n = static_cast<double>(plat.size());
    const double m = s / n;
    const double var = std::max(0.0, s2 / n - m * m);
    t.mean[c] = m;
    t.scale[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return t;
}

inline Matrix apply_transform(const Matrix& m, const ColumnTransform& t) {
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c)
      out.at(r, c) = (m.at(r, c) - t.mean[c]) / t.scale[c];
  return out;
}

}  // namespace pitot
