#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "icf/evaluate.hpp"
#include "icf/kernels.hpp"
#include "icf/mf.hpp"

using namespace icf;

namespace {

MfParams tiny_model(Backbone b, int users = 3, int items = 4, int d = 2, int h = 3) {
  MfParams mf(b, Feedback::Explicit, users, items, d, h, 5);
  for (int u = 0; u < users; ++u) mf.key_users.push_back(u);
  return mf;
}

}  // namespace

TEST_CASE("dot backbone hand-computed scores") {
  MfParams mf = tiny_model(Backbone::Dot);
  UserRef u;
  std::vector<double> p = {0.0, 0.0};
  u.embedding = p.data();
  u.bias = 0.0;
  CHECK(predict(mf, u, 0) == 0.0);

  p = {1.0, 2.0};
  mf.Q.value(1, 0) = 3.0;
  mf.Q.value(1, 1) = 4.0;
  u.bias = 0.5;
  mf.item_bias.value.data[1] = -0.5;
  CHECK(predict(mf, u, 1) == doctest::Approx(11.0));

  CHECK_THROWS_AS(predict(mf, u, 99), Error);
  CHECK_THROWS_AS(predict_key(mf, -1, 0), Error);
}

TEST_CASE("nn backbone with zeroed predictor equals half the dot plus biases") {
  MfParams mf = tiny_model(Backbone::Nn);
  // all predictor weights stay zero-initialized
  std::vector<double> p = {1.0, -2.0};
  mf.Q.value(2, 0) = 0.5;
  mf.Q.value(2, 1) = 1.5;
  UserRef u;
  u.embedding = p.data();
  u.bias = 0.25;
  mf.item_bias.value.data[2] = 0.75;
  const double dot = 1.0 * 0.5 + (-2.0) * 1.5;
  CHECK(predict(mf, u, 2) == doctest::Approx(dot / 2.0 + 0.25 + 0.75));
}

TEST_CASE("pointwise loss values") {
  CHECK(pointwise_loss(3.7, 3.7, Feedback::Explicit) == 0.0);
  CHECK(pointwise_loss(5.0, 1.0, Feedback::Explicit) == doctest::Approx(16.0));
  CHECK(pointwise_loss(0.0, 1.0, Feedback::Implicit) == doctest::Approx(std::log(2.0)));
  // stable at extreme scores
  CHECK(std::isfinite(pointwise_loss(500.0, 0.0, Feedback::Implicit)));
  CHECK(std::isfinite(pointwise_loss(-500.0, 1.0, Feedback::Implicit)));
}

TEST_CASE("gc backbone: zero-neighbor aggregates and permutation invariance") {
  auto [ds, f] = synth_low_rank(10, 8, 3, 0.8, 0.2, 31);
  (void)f;
  SplitIndices split = holdout_split(ds, 0.2, 3);
  std::vector<int> key_users;
  for (int u = 0; u < ds.num_users; ++u) key_users.push_back(u);

  PretrainOptions opt;
  opt.backbone = Backbone::Gc;
  opt.dim = 3;
  opt.hidden = 4;
  opt.max_epochs = 1;
  opt.batch_size = 32;
  opt.init_seed = 5;
  opt.shuffle_seed = 6;
  MfParams mf = pretrain(ds, split, key_users, opt);

  // shuffling the order of train triples must not change the graph or scores
  std::vector<int> shuffled = split.train;
  Rng rng(12);
  rng.shuffle(shuffled);
  std::vector<int> user_row(ds.num_users);
  for (int u = 0; u < ds.num_users; ++u) user_row[u] = u;
  GcGraph g2 = build_gc_graph(ds, shuffled, user_row, ds.num_users, 5, opt.gc_neighbor_cap,
                              mix_seed(opt.init_seed, 0x6c));
  MfParams mf2 = mf;
  mf2.graph = g2;
  for (int u = 0; u < ds.num_users; ++u)
    for (int i = 0; i < ds.num_items; ++i)
      CHECK(predict_key(mf, u, i) == predict_key(mf2, u, i));

  // a user with no neighbors at any level still gets a finite score
  MfParams lone = mf;
  for (auto& lists : lone.graph.user_items[0])
    lists.clear();
  CHECK(std::isfinite(predict_key(lone, 0, 0)));
}

TEST_CASE("pretrain recovers a noiseless low-rank matrix") {
  auto [ds, f] = synth_low_rank(50, 40, 8, 0.3, 0.0, 2024);
  (void)f;
  SplitIndices split = holdout_split(ds, 0.1, 7);

  std::vector<int> key_users;
  for (int u = 0; u < ds.num_users; ++u) key_users.push_back(u);

  PretrainOptions opt;
  opt.backbone = Backbone::Dot;
  opt.dim = 8;
  opt.learning_rate = 0.02;
  opt.batch_size = 128;
  opt.weight_decay = 0.0;
  opt.max_epochs = 500;
  opt.patience = 50;
  opt.init_seed = 9;
  opt.shuffle_seed = 10;
  MfParams mf = pretrain(ds, split, key_users, opt);

  double se = 0.0;
  for (int idx : split.train) {
    const Rating& r = ds.triples[idx];
    const double s = predict_key(mf, r.user, r.item);
    se += (s - r.value) * (s - r.value);
  }
  const double train_rmse = std::sqrt(se / split.train.size());
  CHECK(train_rmse < 0.05);
}

TEST_CASE("pretrain with zero epochs returns the untouched initialization") {
  auto [ds, f] = synth_low_rank(12, 10, 3, 0.7, 0.1, 77);
  (void)f;
  SplitIndices split = holdout_split(ds, 0.2, 2);
  std::vector<int> key_users;
  for (int u = 0; u < ds.num_users; ++u) key_users.push_back(u);

  PretrainOptions opt;
  opt.backbone = Backbone::Nn;
  opt.dim = 3;
  opt.hidden = 4;
  opt.max_epochs = 0;
  opt.init_seed = 123;
  MfParams mf = pretrain(ds, split, key_users, opt);

  MfParams fresh(Backbone::Nn, Feedback::Explicit, ds.num_users, ds.num_items, 3, 4, 5);
  fresh.init_params(123);
  for (size_t i = 0; i < mf.P.value.size(); ++i) CHECK(mf.P.value.data[i] == fresh.P.value.data[i]);
  for (size_t i = 0; i < mf.nn.w1.value.size(); ++i)
    CHECK(mf.nn.w1.value.data[i] == fresh.nn.w1.value.data[i]);
}

TEST_CASE("pretrain returns the best-validation snapshot") {
  auto [ds, f] = synth_low_rank(20, 16, 3, 0.6, 0.4, 55);
  (void)f;
  SplitIndices split = holdout_split(ds, 0.2, 4);
  std::vector<int> key_users;
  for (int u = 0; u < ds.num_users; ++u) key_users.push_back(u);

  PretrainOptions opt;
  opt.backbone = Backbone::Dot;
  opt.dim = 3;
  opt.learning_rate = 0.05;
  opt.batch_size = 64;
  opt.max_epochs = 10;
  opt.patience = 10;
  opt.init_seed = 1;
  opt.shuffle_seed = 2;

  // the shuffle stream is a function of (seed, epoch), so training j epochs
  // reproduces the prefix of the 10-epoch run exactly
  const MfParams full = pretrain(ds, split, key_users, opt);
  const double full_valid = mean_loss_key(full, ds, split.validation);
  for (int j = 0; j <= 10; ++j) {
    PretrainOptions o = opt;
    o.max_epochs = j;
    MfParams m = pretrain(ds, split, key_users, o);
    CHECK(full_valid <= mean_loss_key(m, ds, split.validation) + 1e-12);
  }
}

TEST_CASE("pretrain rejects an oversized embedding dimension") {
  auto [ds, f] = synth_low_rank(6, 5, 2, 1.0, 0.1, 3);
  (void)f;
  SplitIndices split = holdout_split(ds, 0.2, 1);
  std::vector<int> key_users = {0, 1, 2, 3, 4, 5};
  PretrainOptions opt;
  opt.dim = 6;  // > min(6 users, 5 items)
  CHECK_THROWS_AS(pretrain(ds, split, key_users, opt), ConfigError);
}

TEST_CASE("batch gradients are identical for any thread count") {
  auto [ds, f] = synth_low_rank(10, 9, 3, 0.9, 0.2, 42);
  (void)f;
  SplitIndices split = holdout_split(ds, 0.2, 5);
  std::vector<int> key_users;
  for (int u = 0; u < ds.num_users; ++u) key_users.push_back(u);
  std::vector<int> user_row(ds.num_users);
  for (int u = 0; u < ds.num_users; ++u) user_row[u] = u;

  PretrainOptions opt;
  opt.backbone = Backbone::Nn;
  opt.dim = 3;
  opt.hidden = 4;
  opt.max_epochs = 0;
  opt.init_seed = 17;
  MfParams mf = pretrain(ds, split, key_users, opt);

  std::vector<int> pairs(split.train.begin(), split.train.begin() + 16);

  auto grads_with_threads = [&](int nthreads) {
    kernels::set_threads(nthreads);
    for (ParamTensor* t : mf.all_tensors()) t->zero_grad();
    const double loss = mf_batch_loss_and_grad(mf, ds, pairs, user_row);
    std::vector<Matrix> out;
    for (ParamTensor* t : mf.all_tensors()) out.push_back(t->grad);
    return std::pair<double, std::vector<Matrix>>(loss, out);
  };

  auto [l1, g1] = grads_with_threads(1);
  auto [l2, g2] = grads_with_threads(2);
  kernels::set_threads(0);
  CHECK(l1 == l2);
  REQUIRE(g1.size() == g2.size());
  for (size_t k = 0; k < g1.size(); ++k)
    for (size_t i = 0; i < g1[k].size(); ++i)
      CHECK(g1[k].data[i] == doctest::Approx(g2[k].data[i]).epsilon(1e-13));
}
