#include "icf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "icf/common.hpp"

namespace icf {

DataFormat format_from_string(const std::string& s) {
  if (s == "ml100k_udata") return DataFormat::Ml100kUData;
  if (s == "generic_csv") return DataFormat::GenericCsv;
  throw ConfigError("unknown dataset format '" + s + "'");
}

namespace {

struct RawTriple {
  int64_t user;
  int64_t item;
  double value;
  int64_t timestamp;
};

bool parse_fields(const std::string& line, char sep, std::vector<std::string>& out) {
  out.clear();
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  return !out.empty();
}

int64_t parse_int(const std::string& s, int line_no, const char* what) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
}

double parse_real(const std::string& s, int line_no, const char* what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what + " '" + s + "'");
  }
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

RatingDataset load_movielens(const std::string& path, DataFormat format, Feedback feedback) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file '" + path + "'");

  std::vector<RawTriple> raw;
  std::vector<std::string> fields;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  bool header_has_timestamp = true;

  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;

    if (format == DataFormat::GenericCsv && !header_seen) {
      if (!parse_fields(line, ',', fields))
        throw ParseError("line 1: missing CSV header");
      if (fields.size() < 3 || fields[0] != "user_id" || fields[1] != "item_id" ||
          fields[2] != "rating")
        throw ParseError("line 1: expected header user_id,item_id,rating[,timestamp]");
      header_has_timestamp = fields.size() >= 4 && fields[3] == "timestamp";
      header_seen = true;
      continue;
    }

    const char sep = format == DataFormat::Ml100kUData ? '\t' : ',';
    parse_fields(line, sep, fields);
    const size_t expected = format == DataFormat::Ml100kUData ? 4 : (header_has_timestamp ? 4 : 3);
    if (fields.size() != expected)
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(expected) + " fields, got " + std::to_string(fields.size()));

    RawTriple t;
    t.user = parse_int(fields[0], line_no, "user id");
    t.item = parse_int(fields[1], line_no, "item id");
    t.value = parse_real(fields[2], line_no, "rating");
    t.timestamp = expected == 4 ? parse_int(fields[3], line_no, "timestamp") : -1;

    if (feedback == Feedback::Explicit && (t.value < 1.0 || t.value > 5.0))
      throw ValidationError("line " + std::to_string(line_no) + ": rating " +
                            std::to_string(t.value) + " outside [1,5] on explicit data");
    if (feedback == Feedback::Implicit && t.value != 0.0 && t.value != 1.0)
      throw ValidationError("line " + std::to_string(line_no) + ": implicit value must be 0 or 1");
    raw.push_back(t);
  }

  // dense remap in ascending original-id order
  std::vector<int64_t> uids, iids;
  uids.reserve(raw.size());
  iids.reserve(raw.size());
  for (const RawTriple& t : raw) {
    uids.push_back(t.user);
    iids.push_back(t.item);
  }
  std::sort(uids.begin(), uids.end());
  uids.erase(std::unique(uids.begin(), uids.end()), uids.end());
  std::sort(iids.begin(), iids.end());
  iids.erase(std::unique(iids.begin(), iids.end()), iids.end());

  std::unordered_map<int64_t, int> umap, imap;
  umap.reserve(uids.size());
  imap.reserve(iids.size());
  for (size_t i = 0; i < uids.size(); ++i) umap[uids[i]] = static_cast<int>(i);
  for (size_t i = 0; i < iids.size(); ++i) imap[iids[i]] = static_cast<int>(i);

  // duplicates keep the latest timestamp (ties: last occurrence wins)
  std::unordered_map<int64_t, size_t> seen;
  RatingDataset ds;
  ds.num_users = static_cast<int>(uids.size());
  ds.num_items = static_cast<int>(iids.size());
  ds.user_ids = std::move(uids);
  ds.item_ids = std::move(iids);
  ds.feedback = feedback;
  for (const RawTriple& t : raw) {
    Rating r{umap[t.user], imap[t.item], t.value, t.timestamp};
    const int64_t key = static_cast<int64_t>(r.user) * ds.num_items + r.item;
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen[key] = ds.triples.size();
      ds.triples.push_back(r);
    } else if (r.timestamp >= ds.triples[it->second].timestamp) {
      ds.triples[it->second] = r;
    }
  }
  return ds;
}

SplitIndices holdout_split(const RatingDataset& ds, double test_fraction, uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in (0,1), got " + std::to_string(test_fraction));

  const size_t n = ds.triples.size();
  std::vector<int> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(order);

  const size_t n_test = static_cast<size_t>(std::llround(static_cast<double>(n) * test_fraction));
  const size_t n_pool = n - n_test;
  const size_t n_valid = static_cast<size_t>(std::llround(static_cast<double>(n_pool) * 0.05));

  SplitIndices s;
  s.test.assign(order.begin(), order.begin() + n_test);
  s.validation.assign(order.begin() + n_test, order.begin() + n_test + n_valid);
  s.train.assign(order.begin() + n_test + n_valid, order.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

std::vector<int> rating_counts(const RatingDataset& ds, const std::vector<int>& subset) {
  std::vector<int> counts(ds.num_users, 0);
  for (int idx : subset) counts[ds.triples[idx].user] += 1;
  return counts;
}

std::vector<std::vector<int>> ratings_by_user(const RatingDataset& ds,
                                              const std::vector<int>& subset) {
  std::vector<std::vector<int>> by_user(ds.num_users);
  for (int idx : subset) by_user[ds.triples[idx].user].push_back(idx);
  return by_user;
}

UserPartition partition_users_threshold(const RatingDataset& ds, const SplitIndices& split,
                                        int delta) {
  if (delta < 0) throw ConfigError("threshold delta must be >= 0");
  const std::vector<int> counts = rating_counts(ds, split.train);
  UserPartition p;
  p.strategy = PartitionStrategy::Threshold;
  p.delta = delta;
  for (int u = 0; u < ds.num_users; ++u) {
    if (counts[u] > delta)
      p.key_users.push_back(u);
    else
      p.query_users.push_back(u);
  }
  if (p.key_users.empty()) throw ConfigError("threshold partition produced no key users");
  return p;
}

UserPartition partition_users_random(const RatingDataset& ds, double gamma, uint64_t seed) {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw ConfigError("random partition gamma must lie in (0,1), got " + std::to_string(gamma));
  const int m = ds.num_users;
  const int k = static_cast<int>(std::ceil(gamma * m));
  if (k <= 0 || k >= m)
    throw ConfigError("random partition gamma=" + std::to_string(gamma) +
                      " yields an empty key or query set");
  Rng rng(seed);
  std::vector<int> sampled = rng.sample_without_replacement(m, k);
  std::sort(sampled.begin(), sampled.end());

  UserPartition p;
  p.strategy = PartitionStrategy::Random;
  p.gamma = gamma;
  p.key_users = std::move(sampled);
  std::vector<char> is_key(m, 0);
  for (int u : p.key_users) is_key[u] = 1;
  for (int u = 0; u < m; ++u)
    if (!is_key[u]) p.query_users.push_back(u);
  return p;
}

RatingDataset negative_sample(const RatingDataset& ds, int ratio, uint64_t seed) {
  if (ds.feedback != Feedback::Implicit)
    throw ConfigError("negative_sample requires implicit feedback data");
  if (ratio < 0) throw ConfigError("negative sample ratio must be >= 0");

  RatingDataset out = ds;
  if (ratio == 0) return out;

  std::vector<std::unordered_set<int>> rated(ds.num_users);
  for (const Rating& r : ds.triples)
    if (r.value > 0.0) rated[r.user].insert(r.item);

  Rng rng(seed);
  for (const Rating& r : ds.triples) {
    if (r.value <= 0.0) continue;
    const auto& pos = rated[r.user];
    if (static_cast<int>(pos.size()) >= ds.num_items) {
      std::fprintf(stderr, "negative_sample: user %d has interacted with every item, skipping\n",
                   r.user);
      continue;
    }
    for (int k = 0; k < ratio; ++k) {
      int item;
      do {
        item = rng.uniform_int(ds.num_items);
      } while (pos.count(item) > 0);
      out.triples.push_back(Rating{r.user, item, 0.0, -1});
    }
  }
  return out;
}

std::pair<RatingDataset, SynthFactors> synth_low_rank(int num_users, int num_items, int rank,
                                                      double density, double noise_sd,
                                                      uint64_t seed) {
  if (rank > std::min(num_users, num_items))
    throw ConfigError("synthetic rank must be <= min(M, N)");
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("density must lie in (0,1]");

  Rng rng(seed);
  SynthFactors f;
  f.user_factors = Matrix(num_users, rank);
  f.item_factors = Matrix(num_items, rank);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(rank));
  for (double& v : f.user_factors.data) v = rng.gaussian() * inv_sqrt_d;
  for (double& v : f.item_factors.data) v = rng.gaussian() * inv_sqrt_d;

  RatingDataset ds;
  ds.num_users = num_users;
  ds.num_items = num_items;
  ds.feedback = Feedback::Explicit;
  ds.user_ids.resize(num_users);
  ds.item_ids.resize(num_items);
  for (int u = 0; u < num_users; ++u) ds.user_ids[u] = u;
  for (int i = 0; i < num_items; ++i) ds.item_ids[i] = i;

  std::vector<double> values;
  for (int u = 0; u < num_users; ++u) {
    for (int i = 0; i < num_items; ++i) {
      if (rng.uniform() >= density) continue;
      double v = 0.0;
      for (int k = 0; k < rank; ++k) v += f.user_factors(u, k) * f.item_factors(i, k);
      if (noise_sd > 0.0) v += noise_sd * rng.gaussian();
      ds.triples.push_back(Rating{u, i, v, -1});
      values.push_back(v);
    }
  }

  // affine rescale of observed values into [1, 5]
  if (!values.empty()) {
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double mn = *mn_it, mx = *mx_it;
    if (mx > mn) {
      f.scale = 4.0 / (mx - mn);
      f.offset = 1.0 - mn * f.scale;
    } else {
      f.scale = 0.0;
      f.offset = 3.0;
    }
    for (Rating& r : ds.triples) r.value = f.scale * r.value + f.offset;
  }
  return {std::move(ds), std::move(f)};
}

bool write_generic_csv(const RatingDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) return false;
  out << "user_id,item_id,rating,timestamp\n";
  char buf[64];
  for (const Rating& r : ds.triples) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.value);
    out << ds.user_ids[r.user] << ',' << ds.item_ids[r.item] << ',' << buf << ','
        << (r.timestamp < 0 ? 0 : r.timestamp) << '\n';
  }
  return static_cast<bool>(out);
}

}  // namespace icf
