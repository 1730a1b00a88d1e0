#include "icf/gradcheck.hpp"

#include "icf/relation.hpp"

namespace icf {

namespace {

struct ToyProblem {
  RatingDataset ds;
  SplitIndices split;
  std::vector<int> key_users;
  std::vector<int> user_row;
};

ToyProblem make_toy(uint64_t seed, Feedback feedback) {
  ToyProblem t;
  auto [ds, factors] = synth_low_rank(8, 7, 3, 0.9, 0.3, seed);
  (void)factors;
  t.ds = std::move(ds);
  if (feedback == Feedback::Implicit) {
    t.ds.feedback = Feedback::Implicit;
    for (Rating& r : t.ds.triples) r.value = r.value >= 3.0 ? 1.0 : 0.0;
  }
  t.split = holdout_split(t.ds, 0.2, mix_seed(seed, 1));
  for (int u = 0; u < t.ds.num_users; ++u) t.key_users.push_back(u);
  t.user_row.assign(t.ds.num_users, -1);
  for (size_t r = 0; r < t.key_users.size(); ++r) t.user_row[t.key_users[r]] = static_cast<int>(r);
  return t;
}

GradCheckReport check_backbone(const std::string& name, Backbone backbone, Feedback feedback,
                               uint64_t seed, int probes, double fd_epsilon) {
  ToyProblem t = make_toy(mix_seed(seed, 0xb0b0), feedback);

  PretrainOptions opt;
  opt.backbone = backbone;
  opt.dim = 3;
  opt.hidden = 5;
  opt.max_epochs = 0;
  opt.init_seed = mix_seed(seed, 2);
  opt.shuffle_seed = mix_seed(seed, 3);
  MfParams mf = pretrain(t.ds, t.split, t.key_users, opt);

  std::vector<int> pairs(t.split.train.begin(),
                         t.split.train.begin() + std::min<size_t>(24, t.split.train.size()));
  std::vector<ParamTensor*> tensors = mf.all_tensors();
  auto loss_fn = [&]() {
    for (ParamTensor* p : tensors) p->zero_grad();
    return mf_batch_loss_and_grad(mf, t.ds, pairs, t.user_row);
  };
  GradCheckReport rep;
  rep.name = name;
  rep.probes = probes;
  rep.max_rel_error = grad_check(loss_fn, tensors, probes, fd_epsilon, mix_seed(seed, 4));
  return rep;
}

GradCheckReport check_relation(const std::string& name, AttentionNorm norm, double lambda,
                               uint64_t seed, int probes, double fd_epsilon) {
  ToyProblem t = make_toy(mix_seed(seed, 0x3e1a), Feedback::Explicit);

  PretrainOptions popt;
  popt.backbone = Backbone::Nn;
  popt.dim = 3;
  popt.hidden = 5;
  popt.max_epochs = 2;
  popt.batch_size = 16;
  popt.learning_rate = 0.01;
  popt.init_seed = mix_seed(seed, 5);
  popt.shuffle_seed = mix_seed(seed, 6);
  MfParams mf = pretrain(t.ds, t.split, t.key_users, popt);

  AdaptOptions aopt;
  aopt.mode = AdaptMode::Extrapolation;
  aopt.heads = 2;
  aopt.sample_size = 5;
  aopt.normalization = norm;
  aopt.init_seed = mix_seed(seed, 7);

  UserPartition part;
  part.key_users = t.key_users;
  // extrapolation: query = key
  AdaptData data = prepare_adapt_data(mf, t.ds, t.split, t.key_users, aopt);

  RelationParams rel(aopt.heads, mf.dim, norm);
  rel.init_params(aopt.init_seed);
  // linear-ratio raw scores must stay away from a zero sum, so seed the score
  // vectors with a positive offset
  if (norm == AttentionNorm::LinearRatio) {
    for (RelationHead& h : rel.head)
      for (double& v : h.e.value.data) v += 1.5;
  }
  rel.sample_keys(mf.P.value.rows, aopt.sample_size, mix_seed(seed, 8));

  std::vector<int> pairs(data.sup_idx.begin(),
                         data.sup_idx.begin() + std::min<size_t>(20, data.sup_idx.size()));

  std::vector<ParamTensor*> tensors = rel.tensors();
  for (ParamTensor* p : mf.predictor_tensors()) tensors.push_back(p);
  auto loss_fn = [&]() {
    for (ParamTensor* p : tensors) p->zero_grad();
    return adapt_batch_loss_and_grad(mf, rel, t.ds, data, pairs, lambda, false);
  };
  GradCheckReport rep;
  rep.name = name;
  rep.probes = probes;
  rep.max_rel_error = grad_check(loss_fn, tensors, probes, fd_epsilon, mix_seed(seed, 9));
  return rep;
}

GradCheckReport check_contrastive(uint64_t seed, int probes, double fd_epsilon) {
  Rng rng(mix_seed(seed, 0xcc));
  const int b = 6, d = 4;
  Matrix meta(b, d);
  for (double& v : meta.data) v = rng.uniform(-1, 1);
  ParamTensor x("inductive", b, d);
  for (double& v : x.value.data) v = rng.uniform(-1, 1);

  auto loss_fn = [&]() {
    x.zero_grad();
    Matrix g;
    contrastive_loss_backward(meta, x.value, g);
    x.grad = g;
    return contrastive_loss(meta, x.value);
  };
  GradCheckReport rep;
  rep.name = "contrastive";
  rep.probes = probes;
  rep.max_rel_error = grad_check(loss_fn, {&x}, probes, fd_epsilon, mix_seed(seed, 10));
  return rep;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed, int probes, double fd_epsilon) {
  std::vector<GradCheckReport> out;
  out.push_back(check_backbone("mf_dot", Backbone::Dot, Feedback::Explicit, seed, probes,
                               fd_epsilon));
  out.push_back(check_backbone("mf_nn", Backbone::Nn, Feedback::Explicit, seed, probes,
                               fd_epsilon));
  out.push_back(check_backbone("mf_gc", Backbone::Gc, Feedback::Explicit, seed, probes,
                               fd_epsilon));
  out.push_back(check_backbone("mf_nn_implicit", Backbone::Nn, Feedback::Implicit,
                               mix_seed(seed, 0xf), probes, fd_epsilon));
  out.push_back(check_relation("relation_softmax", AttentionNorm::Softmax, 0.0, seed, probes,
                               fd_epsilon));
  out.push_back(check_relation("relation_linear_ratio", AttentionNorm::LinearRatio, 0.0, seed,
                               probes, fd_epsilon));
  out.push_back(check_relation("relation_contrastive", AttentionNorm::Softmax, 10.0,
                               mix_seed(seed, 0x1b), probes, fd_epsilon));
  out.push_back(check_contrastive(seed, probes, fd_epsilon));
  return out;
}

}  // namespace icf
