#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>

#include "icf/dataset.hpp"

using namespace icf;

namespace {

std::string write_temp(const std::string& name, const std::string& contents) {
  std::string path = std::string("/tmp/icf_test_") + name;
  std::ofstream out(path);
  out << contents;
  return path;
}

}  // namespace

TEST_CASE("ml100k format loads, remaps and deduplicates") {
  const std::string path = write_temp("udata.tsv",
                                      "3\t10\t4\t100\n"
                                      "1\t20\t5\t50\n"
                                      "3\t10\t2\t200\n"  // duplicate, newer timestamp wins
                                      "7\t10\t1\t10\n");
  RatingDataset ds = load_movielens(path, DataFormat::Ml100kUData);
  CHECK(ds.num_users == 3);
  CHECK(ds.num_items == 2);
  CHECK(ds.triples.size() == 3);
  // users 1,3,7 -> 0,1,2; items 10,20 -> 0,1
  bool found = false;
  for (const Rating& r : ds.triples)
    if (r.user == 1 && r.item == 0) {
      CHECK(r.value == 2.0);
      CHECK(r.timestamp == 200);
      found = true;
    }
  CHECK(found);
}

TEST_CASE("empty file loads as an empty dataset") {
  const std::string path = write_temp("empty.tsv", "");
  RatingDataset ds = load_movielens(path, DataFormat::Ml100kUData);
  CHECK(ds.num_users == 0);
  CHECK(ds.num_items == 0);
  CHECK(ds.triples.empty());
}

TEST_CASE("out-of-range explicit rating raises a validation error") {
  const std::string path = write_temp("bad_rating.tsv", "1\t2\t9\t0\n");
  CHECK_THROWS_AS(load_movielens(path, DataFormat::Ml100kUData), ValidationError);
}

TEST_CASE("malformed line reports its line number") {
  const std::string path = write_temp("malformed.tsv", "1\t2\t3\t4\n1\t2\n");
  CHECK_THROWS_WITH_AS(load_movielens(path, DataFormat::Ml100kUData), doctest::Contains("line 2"),
                       ParseError);
}

TEST_CASE("generic csv with and without timestamp column") {
  const std::string with_ts = write_temp("generic.csv",
                                         "user_id,item_id,rating,timestamp\n"
                                         "5,9,3,77\n");
  RatingDataset a = load_movielens(with_ts, DataFormat::GenericCsv);
  CHECK(a.triples.size() == 1);
  CHECK(a.triples[0].timestamp == 77);

  const std::string no_ts = write_temp("generic_nots.csv",
                                       "user_id,item_id,rating\n"
                                       "5,9,3\n");
  RatingDataset b = load_movielens(no_ts, DataFormat::GenericCsv);
  CHECK(b.triples.size() == 1);
  CHECK(b.triples[0].timestamp == -1);
}

TEST_CASE("loaders are pure: same file twice gives identical datasets") {
  const std::string path = write_temp("pure.tsv", "1\t1\t3\t5\n2\t2\t4\t6\n");
  RatingDataset a = load_movielens(path, DataFormat::Ml100kUData);
  RatingDataset b = load_movielens(path, DataFormat::Ml100kUData);
  REQUIRE(a.triples.size() == b.triples.size());
  for (size_t i = 0; i < a.triples.size(); ++i) {
    CHECK(a.triples[i].user == b.triples[i].user);
    CHECK(a.triples[i].item == b.triples[i].item);
    CHECK(a.triples[i].value == b.triples[i].value);
  }
}

TEST_CASE("holdout split arithmetic matches the 9:1 and 5 percent rules") {
  auto [ds, factors] = synth_low_rank(60, 50, 4, 1.0, 0.1, 99);
  (void)factors;
  const size_t n = ds.triples.size();
  REQUIRE(n == 3000);
  SplitIndices s = holdout_split(ds, 0.1, 1);
  CHECK(s.test.size() == 300);
  CHECK(s.validation.size() == 135);  // 5% of 2700
  CHECK(s.train.size() == 2565);
}

TEST_CASE("holdout split is deterministic, disjoint and exhaustive") {
  auto [ds, factors] = synth_low_rank(40, 30, 4, 0.5, 0.1, 7);
  (void)factors;
  for (uint64_t seed : {1ULL, 2ULL, 99ULL}) {
    SplitIndices a = holdout_split(ds, 0.2, seed);
    SplitIndices b = holdout_split(ds, 0.2, seed);
    CHECK(a.train == b.train);
    CHECK(a.validation == b.validation);
    CHECK(a.test == b.test);

    std::set<int> seen;
    for (int i : a.train) seen.insert(i);
    for (int i : a.validation) seen.insert(i);
    for (int i : a.test) seen.insert(i);
    CHECK(seen.size() == ds.triples.size());
    CHECK(a.train.size() + a.validation.size() + a.test.size() == ds.triples.size());
  }
}

TEST_CASE("holdout split rejects test_fraction outside (0,1)") {
  auto [ds, factors] = synth_low_rank(10, 10, 2, 1.0, 0.0, 3);
  (void)factors;
  CHECK_THROWS_AS(holdout_split(ds, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(holdout_split(ds, 1.0, 1), ConfigError);
}

TEST_CASE("threshold partition obeys the delta contract") {
  auto [ds, factors] = synth_low_rank(50, 40, 4, 0.4, 0.2, 11);
  (void)factors;
  SplitIndices split = holdout_split(ds, 0.1, 5);
  const int delta = 12;
  UserPartition p = partition_users_threshold(ds, split, delta);
  std::vector<int> counts = rating_counts(ds, split.train);
  for (int u : p.key_users) CHECK(counts[u] > delta);
  for (int u : p.query_users) CHECK(counts[u] <= delta);
  CHECK(p.key_users.size() + p.query_users.size() == static_cast<size_t>(ds.num_users));

  // delta = 0: every user with at least one training rating is key
  UserPartition p0 = partition_users_threshold(ds, split, 0);
  for (int u : p0.key_users) CHECK(counts[u] >= 1);
  for (int u : p0.query_users) CHECK(counts[u] == 0);
}

TEST_CASE("random partition is seeded and validates gamma") {
  auto [ds, factors] = synth_low_rank(30, 20, 3, 0.5, 0.1, 13);
  (void)factors;
  UserPartition a = partition_users_random(ds, 0.5, 77);
  UserPartition b = partition_users_random(ds, 0.5, 77);
  CHECK(a.key_users == b.key_users);
  CHECK(a.query_users == b.query_users);
  CHECK(a.key_users.size() == 15);  // ceil(0.5 * 30)

  CHECK_THROWS_AS(partition_users_random(ds, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(partition_users_random(ds, 1.0, 1), ConfigError);
}

TEST_CASE("negative sampling: counts, exclusion and the full-complement edge") {
  RatingDataset ds;
  ds.num_users = 3;
  ds.num_items = 6;
  ds.feedback = Feedback::Implicit;
  ds.user_ids = {0, 1, 2};
  ds.item_ids = {0, 1, 2, 3, 4, 5};
  ds.triples = {{0, 0, 1.0, -1}, {0, 1, 1.0, -1}, {1, 2, 1.0, -1}};

  RatingDataset neg = negative_sample(ds, 5, 42);
  size_t negatives = 0;
  for (const Rating& r : neg.triples)
    if (r.value == 0.0) ++negatives;
  CHECK(negatives == 5 * 3);

  // never collides with a positive of the same user
  std::set<std::pair<int, int>> pos;
  for (const Rating& r : ds.triples) pos.insert({r.user, r.item});
  for (const Rating& r : neg.triples)
    if (r.value == 0.0) CHECK(pos.count({r.user, r.item}) == 0);

  // ratio 0 leaves the dataset unchanged
  RatingDataset same = negative_sample(ds, 0, 42);
  CHECK(same.triples.size() == ds.triples.size());

  // user holding all items but one: every negative is that item
  RatingDataset nearly;
  nearly.num_users = 1;
  nearly.num_items = 4;
  nearly.feedback = Feedback::Implicit;
  nearly.user_ids = {0};
  nearly.item_ids = {0, 1, 2, 3};
  nearly.triples = {{0, 0, 1.0, -1}, {0, 1, 1.0, -1}, {0, 2, 1.0, -1}};
  RatingDataset n2 = negative_sample(nearly, 5, 1);
  for (const Rating& r : n2.triples)
    if (r.value == 0.0) CHECK(r.item == 3);

  CHECK_THROWS_AS(negative_sample(RatingDataset{}, 5, 1), ConfigError);  // explicit default
}

TEST_CASE("synthetic generator: determinism, density and rank structure") {
  auto [a, fa] = synth_low_rank(50, 40, 8, 0.3, 0.0, 123);
  auto [b, fb] = synth_low_rank(50, 40, 8, 0.3, 0.0, 123);
  REQUIRE(a.triples.size() == b.triples.size());
  for (size_t i = 0; i < a.triples.size(); ++i) {
    CHECK(a.triples[i].user == b.triples[i].user);
    CHECK(a.triples[i].value == b.triples[i].value);
  }
  for (size_t i = 0; i < fa.user_factors.size(); ++i)
    CHECK(fa.user_factors.data[i] == fb.user_factors.data[i]);

  // binomial mean 600, assert within 4 sigma (~82)
  const double mean = 50.0 * 40.0 * 0.3;
  const double sigma = std::sqrt(50.0 * 40.0 * 0.3 * 0.7);
  CHECK(std::fabs(static_cast<double>(a.triples.size()) - mean) < 4.0 * sigma);

  // noiseless observations must match the affinely rescaled factor product
  for (const Rating& r : a.triples) {
    double dot = 0.0;
    for (int k = 0; k < 8; ++k) dot += fa.user_factors(r.user, k) * fa.item_factors(r.item, k);
    CHECK(r.value == doctest::Approx(fa.scale * dot + fa.offset).epsilon(1e-12));
    CHECK(r.value >= 1.0);
    CHECK(r.value <= 5.0);
  }
}

TEST_CASE("generic csv round trip") {
  auto [ds, f] = synth_low_rank(10, 8, 2, 0.8, 0.1, 5);
  (void)f;
  const std::string path = "/tmp/icf_test_roundtrip.csv";
  REQUIRE(write_generic_csv(ds, path));
  RatingDataset back = load_movielens(path, DataFormat::GenericCsv);
  REQUIRE(back.triples.size() == ds.triples.size());
  CHECK(back.num_users == ds.num_users);
  for (size_t i = 0; i < ds.triples.size(); ++i)
    CHECK(back.triples[i].value == doctest::Approx(ds.triples[i].value).epsilon(1e-15));
}
