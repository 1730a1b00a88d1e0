#include "icf/mf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "icf/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace icf {

Backbone backbone_from_string(const std::string& s) {
  if (s == "dot") return Backbone::Dot;
  if (s == "nn") return Backbone::Nn;
  if (s == "gc") return Backbone::Gc;
  throw ConfigError("unknown backbone '" + s + "'");
}

std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::Dot: return "dot";
    case Backbone::Nn: return "nn";
    case Backbone::Gc: return "gc";
  }
  return "?";
}

int rating_level(double value, int levels) {
  if (levels == 1) return 0;
  long m = std::llround(value);
  if (m < 1) m = 1;
  if (m > levels) m = levels;
  return static_cast<int>(m - 1);
}

GcGraph build_gc_graph(const RatingDataset& ds, const std::vector<int>& triple_subset,
                       const std::vector<int>& user_row_of, int num_rows, int levels,
                       int neighbor_cap, uint64_t seed) {
  GcGraph g;
  g.levels = levels;
  g.user_items.assign(num_rows, std::vector<std::vector<int>>(levels));
  g.item_users.assign(ds.num_items, std::vector<std::vector<int>>(levels));

  for (int idx : triple_subset) {
    const Rating& r = ds.triples[idx];
    const int row = user_row_of[r.user];
    if (row < 0) continue;
    if (ds.feedback == Feedback::Implicit && r.value <= 0.0) continue;
    const int m = rating_level(r.value, levels);
    g.user_items[row][m].push_back(r.item);
    g.item_users[r.item][m].push_back(row);
  }

  // cap by seeded subsample, then sort so the mean runs in a fixed index order
  auto cap_lists = [&](std::vector<std::vector<std::vector<int>>>& lists, uint64_t salt) {
    for (size_t a = 0; a < lists.size(); ++a) {
      for (int m = 0; m < levels; ++m) {
        std::vector<int>& l = lists[a][m];
        std::sort(l.begin(), l.end());
        if (neighbor_cap > 0 && static_cast<int>(l.size()) > neighbor_cap) {
          Rng rng(mix_seed(seed, salt * 1000003ULL + a * 31ULL + m));
          std::vector<int> pick = rng.sample_without_replacement(static_cast<int>(l.size()),
                                                                 neighbor_cap);
          std::sort(pick.begin(), pick.end());
          std::vector<int> kept(neighbor_cap);
          for (int i = 0; i < neighbor_cap; ++i) kept[i] = l[pick[i]];
          l = std::move(kept);
        }
      }
    }
  };
  cap_lists(g.user_items, 1);
  cap_lists(g.item_users, 2);
  return g;
}

void GcPredictor::init(int dim, int hidden, int num_levels, Rng& rng) {
  levels = num_levels;
  wq.clear();
  wp.clear();
  for (int m = 0; m < levels; ++m) {
    wq.emplace_back("gc.wq" + std::to_string(m + 1), dim, dim);
    wp.emplace_back("gc.wp" + std::to_string(m + 1), dim, dim);
    xavier_init(wq.back().value, dim, dim, rng);
    xavier_init(wp.back().value, dim, dim, rng);
  }
  fc_w = ParamTensor("gc.fc_w", dim, levels * dim);
  fc_b = ParamTensor("gc.fc_b", dim, 1);
  fc2_w = ParamTensor("gc.fc2_w", dim, levels * dim);
  fc2_b = ParamTensor("gc.fc2_b", dim, 1);
  xavier_init(fc_w.value, levels * dim, dim, rng);
  xavier_init(fc2_w.value, levels * dim, dim, rng);
  out = Mlp("gc.out", 4 * dim, hidden, Activation::Relu);
  out.init_xavier(rng);
}

std::vector<ParamTensor*> GcPredictor::tensors() {
  std::vector<ParamTensor*> ts;
  for (ParamTensor& t : wq) ts.push_back(&t);
  for (ParamTensor& t : wp) ts.push_back(&t);
  ts.push_back(&fc_w);
  ts.push_back(&fc_b);
  ts.push_back(&fc2_w);
  ts.push_back(&fc2_b);
  for (ParamTensor* t : out.tensors()) ts.push_back(t);
  return ts;
}

MfParams::MfParams(Backbone b, Feedback fb, int num_key_users, int items, int d, int h,
                   int gc_levels)
    : backbone(b),
      feedback(fb),
      dim(d),
      hidden(h),
      num_items(items),
      P("P", num_key_users, d, /*is_embedding=*/true),
      Q("Q", items, d, /*is_embedding=*/true),
      user_bias("user_bias", num_key_users, 1),
      item_bias("item_bias", items, 1) {
  if (b == Backbone::Nn) nn = Mlp("nn", 3 * d, h, Activation::Tanh);
  if (b == Backbone::Gc) gc.levels = gc_levels;
}

void MfParams::init_params(uint64_t init_seed) {
  Rng rng(mix_seed(init_seed, 0x11));
  const double sd = 0.1 / std::sqrt(static_cast<double>(dim));
  for (double& v : P.value.data) v = rng.gaussian() * sd;
  for (double& v : Q.value.data) v = rng.gaussian() * sd;
  user_bias.value.fill(0.0);
  item_bias.value.fill(0.0);
  if (backbone == Backbone::Nn) nn.init_xavier(rng);
  if (backbone == Backbone::Gc) gc.init(dim, hidden, gc.levels, rng);
}

int MfParams::row_of(int global_user) const {
  auto it = std::lower_bound(key_users.begin(), key_users.end(), global_user);
  if (it == key_users.end() || *it != global_user) return -1;
  return static_cast<int>(it - key_users.begin());
}

double MfParams::mean_user_bias() const {
  if (user_bias.value.size() == 0) return 0.0;
  double s = 0.0;
  for (double v : user_bias.value.data) s += v;
  return s / static_cast<double>(user_bias.value.size());
}

std::vector<ParamTensor*> MfParams::all_tensors() {
  std::vector<ParamTensor*> ts = {&P, &Q, &user_bias, &item_bias};
  for (ParamTensor* t : predictor_tensors()) ts.push_back(t);
  return ts;
}

std::vector<const ParamTensor*> MfParams::all_tensors() const {
  auto* self = const_cast<MfParams*>(this);
  std::vector<const ParamTensor*> ts;
  for (ParamTensor* t : self->all_tensors()) ts.push_back(t);
  return ts;
}

std::vector<ParamTensor*> MfParams::predictor_tensors() {
  switch (backbone) {
    case Backbone::Dot: return {};
    case Backbone::Nn: return nn.tensors();
    case Backbone::Gc: return gc.tensors();
  }
  return {};
}

double pointwise_loss(double score, double target, Feedback feedback) {
  if (feedback == Feedback::Explicit) {
    const double d = score - target;
    return d * d;
  }
  // log(1 + exp(-|s|)) + max(s, 0) - s*t
  return std::log1p(std::exp(-std::fabs(score))) + std::max(score, 0.0) - score * target;
}

double pointwise_loss_backward(double score, double target, Feedback feedback) {
  if (feedback == Feedback::Explicit) return 2.0 * (score - target);
  return sigmoid(score) - target;
}

namespace {

void check_item_index(const MfParams& mf, int item) {
  if (item < 0 || item >= mf.num_items)
    throw Error("predict: item index " + std::to_string(item) + " out of range [0, " +
                std::to_string(mf.num_items) + ")");
}

// mean of embedding rows listed in `list` into out[d]; zeros when empty
void mean_rows(const Matrix& table, const std::vector<int>& list, double* out, int d) {
  for (int k = 0; k < d; ++k) out[k] = 0.0;
  if (list.empty()) return;
  for (int idx : list) {
    const double* row = table.row_ptr(idx);
    for (int k = 0; k < d; ++k) out[k] += row[k];
  }
  const double inv = 1.0 / static_cast<double>(list.size());
  for (int k = 0; k < d; ++k) out[k] *= inv;
}

double gc_forward(const MfParams& mf, const UserRef& user, int item, PredictCache& c) {
  const int d = mf.dim;
  const int levels = mf.gc.levels;
  static const std::vector<std::vector<int>> kEmpty;

  c.mu_u.assign(levels * d, 0.0);
  c.mu_i.assign(levels * d, 0.0);
  c.cnt_u.assign(levels, 0);
  c.cnt_i.assign(levels, 0);
  c.zu.assign(levels * d, 0.0);
  c.zi.assign(levels * d, 0.0);
  c.mcat.assign(levels * d, 0.0);
  c.ncat.assign(levels * d, 0.0);

  const std::vector<std::vector<int>>* user_lists = user.level_items;
  const std::vector<std::vector<int>>& item_lists =
      item < static_cast<int>(mf.graph.item_users.size()) ? mf.graph.item_users[item] : kEmpty;

  for (int m = 0; m < levels; ++m) {
    if (user_lists && m < static_cast<int>(user_lists->size())) {
      const std::vector<int>& l = (*user_lists)[m];
      c.cnt_u[m] = static_cast<int>(l.size());
      mean_rows(mf.Q.value, l, c.mu_u.data() + m * d, d);
    }
    if (m < static_cast<int>(item_lists.size())) {
      const std::vector<int>& l = item_lists[m];
      c.cnt_i[m] = static_cast<int>(l.size());
      mean_rows(mf.P.value, l, c.mu_i.data() + m * d, d);
    }
    kernels::matvec_serial(mf.gc.wq[m].value, c.mu_u.data() + m * d, c.zu.data() + m * d);
    kernels::matvec_serial(mf.gc.wp[m].value, c.mu_i.data() + m * d, c.zi.data() + m * d);
    for (int k = 0; k < d; ++k) {
      c.mcat[m * d + k] = std::max(0.0, c.zu[m * d + k]);
      c.ncat[m * d + k] = std::max(0.0, c.zi[m * d + k]);
    }
  }

  c.m_u.assign(d, 0.0);
  c.n_i.assign(d, 0.0);
  kernels::matvec_serial(mf.gc.fc_w.value, c.mcat.data(), c.m_u.data());
  kernels::matvec_serial(mf.gc.fc2_w.value, c.ncat.data(), c.n_i.data());
  for (int k = 0; k < d; ++k) {
    c.m_u[k] += mf.gc.fc_b.value.data[k];
    c.n_i[k] += mf.gc.fc2_b.value.data[k];
  }

  c.x.assign(4 * d, 0.0);
  for (int k = 0; k < d; ++k) {
    c.x[k] = c.p[k] * c.q[k];
    c.x[d + k] = c.p[k] * c.m_u[k];
    c.x[2 * d + k] = c.n_i[k] * c.q[k];
    c.x[3 * d + k] = c.n_i[k] * c.m_u[k];
  }
  return mf.gc.out.forward(c.x.data(), c.mlp);
}

}  // namespace

double predict(const MfParams& mf, const UserRef& user, int item, PredictCache& cache) {
  check_item_index(mf, item);
  cache.p = user.embedding;
  cache.q = mf.Q.value.row_ptr(item);
  cache.item = item;

  const int d = mf.dim;
  double score = user.bias + mf.item_bias.value.data[item] + mf.global_bias;
  switch (mf.backbone) {
    case Backbone::Dot:
      score += kernels::dot(cache.p, cache.q, d);
      break;
    case Backbone::Nn: {
      cache.dot = kernels::dot(cache.p, cache.q, d);
      cache.z.resize(3 * d);
      for (int k = 0; k < d; ++k) {
        cache.z[k] = cache.p[k];
        cache.z[d + k] = cache.q[k];
        cache.z[2 * d + k] = cache.p[k] * cache.q[k];
      }
      score += 0.5 * (cache.dot + mf.nn.forward(cache.z.data(), cache.mlp));
      break;
    }
    case Backbone::Gc:
      score += gc_forward(mf, user, item, cache);
      break;
  }
  return score;
}

double predict(const MfParams& mf, const UserRef& user, int item) {
  PredictCache cache;
  return predict(mf, user, item, cache);
}

double predict_key(const MfParams& mf, int row, int item) {
  if (row < 0 || row >= mf.P.value.rows)
    throw Error("predict_key: user row " + std::to_string(row) + " out of range");
  UserRef u;
  u.embedding = mf.P.value.row_ptr(row);
  u.bias = mf.user_bias.value.data[row];
  if (mf.backbone == Backbone::Gc && row < static_cast<int>(mf.graph.user_items.size()))
    u.level_items = &mf.graph.user_items[row];
  return predict(mf, u, item);
}

void predict_backward(const MfParams& mf, const UserRef& user, int user_row, int item,
                      const PredictCache& c, double dscore, GradSet& grads,
                      const BackwardOptions& opt) {
  const int d = mf.dim;
  // grads layout: 0=P 1=Q 2=user_bias 3=item_bias 4..=predictor
  Matrix& gP = grads.g[0];
  Matrix& gQ = grads.g[1];

  if (opt.into_embeddings) {
    grads.g[3].data[item] += dscore;  // item bias
    if (user_row >= 0) grads.g[2].data[user_row] += dscore;
  }

  std::vector<double> dp(d, 0.0);
  std::vector<double> dq(d, 0.0);

  switch (mf.backbone) {
    case Backbone::Dot: {
      for (int k = 0; k < d; ++k) {
        dp[k] = dscore * c.q[k];
        dq[k] = dscore * c.p[k];
      }
      break;
    }
    case Backbone::Nn: {
      std::vector<double> dz(3 * d, 0.0);
      const double dnn = 0.5 * dscore;
      mf.nn.backward(c.mlp, dnn, &grads.g[4], dz.data());
      for (int k = 0; k < d; ++k) {
        dp[k] = 0.5 * dscore * c.q[k] + dz[k] + dz[2 * d + k] * c.q[k];
        dq[k] = 0.5 * dscore * c.p[k] + dz[d + k] + dz[2 * d + k] * c.p[k];
      }
      break;
    }
    case Backbone::Gc: {
      const int levels = mf.gc.levels;
      // predictor grads layout after biases: wq[levels], wp[levels],
      // fc_w, fc_b, fc2_w, fc2_b, out(6)
      const int base = 4;
      const int i_wq = base;
      const int i_wp = base + levels;
      const int i_fc_w = base + 2 * levels;
      const int i_fc_b = i_fc_w + 1;
      const int i_fc2_w = i_fc_w + 2;
      const int i_fc2_b = i_fc_w + 3;
      const int i_out = i_fc_w + 4;

      std::vector<double> dx(4 * d, 0.0);
      mf.gc.out.backward(c.mlp, dscore, &grads.g[i_out], dx.data());

      std::vector<double> dm(d), dn(d);
      for (int k = 0; k < d; ++k) {
        dp[k] = dx[k] * c.q[k] + dx[d + k] * c.m_u[k];
        dq[k] = dx[k] * c.p[k] + dx[2 * d + k] * c.n_i[k];
        dm[k] = dx[d + k] * c.p[k] + dx[3 * d + k] * c.n_i[k];
        dn[k] = dx[2 * d + k] * c.q[k] + dx[3 * d + k] * c.m_u[k];
      }

      // combine layers
      Matrix& g_fc_w = grads.g[i_fc_w];
      Matrix& g_fc2_w = grads.g[i_fc2_w];
      for (int r = 0; r < d; ++r) {
        double* row1 = g_fc_w.row_ptr(r);
        double* row2 = g_fc2_w.row_ptr(r);
        for (int cidx = 0; cidx < levels * d; ++cidx) {
          row1[cidx] += dm[r] * c.mcat[cidx];
          row2[cidx] += dn[r] * c.ncat[cidx];
        }
        grads.g[i_fc_b].data[r] += dm[r];
        grads.g[i_fc2_b].data[r] += dn[r];
      }
      std::vector<double> dmcat(levels * d), dncat(levels * d);
      kernels::matvec_transposed_serial(mf.gc.fc_w.value, dm.data(), dmcat.data());
      kernels::matvec_transposed_serial(mf.gc.fc2_w.value, dn.data(), dncat.data());

      static const std::vector<std::vector<int>> kEmpty;
      const std::vector<std::vector<int>>* user_lists = user.level_items;
      const std::vector<std::vector<int>>& item_lists =
          item < static_cast<int>(mf.graph.item_users.size()) ? mf.graph.item_users[item]
                                                              : kEmpty;

      std::vector<double> dzu(d), dzi(d), dmu(d);
      for (int m = 0; m < levels; ++m) {
        // user side: mcat = relu(wq[m] mu_u)
        for (int k = 0; k < d; ++k)
          dzu[k] = c.zu[m * d + k] > 0.0 ? dmcat[m * d + k] : 0.0;
        Matrix& g_wq = grads.g[i_wq + m];
        const double* mu = c.mu_u.data() + m * d;
        for (int r = 0; r < d; ++r) {
          double* row = g_wq.row_ptr(r);
          const double dz = dzu[r];
          for (int k = 0; k < d; ++k) row[k] += dz * mu[k];
        }
        if (opt.into_embeddings && c.cnt_u[m] > 0 && user_lists) {
          kernels::matvec_transposed_serial(mf.gc.wq[m].value, dzu.data(), dmu.data());
          const double inv = 1.0 / static_cast<double>(c.cnt_u[m]);
          for (int idx : (*user_lists)[m]) {
            double* row = gQ.row_ptr(idx);
            for (int k = 0; k < d; ++k) row[k] += dmu[k] * inv;
          }
        }

        // item side: ncat = relu(wp[m] mu_i)
        for (int k = 0; k < d; ++k)
          dzi[k] = c.zi[m * d + k] > 0.0 ? dncat[m * d + k] : 0.0;
        Matrix& g_wp = grads.g[i_wp + m];
        const double* mui = c.mu_i.data() + m * d;
        for (int r = 0; r < d; ++r) {
          double* row = g_wp.row_ptr(r);
          const double dz = dzi[r];
          for (int k = 0; k < d; ++k) row[k] += dz * mui[k];
        }
        if (opt.into_embeddings && c.cnt_i[m] > 0 && m < static_cast<int>(item_lists.size())) {
          kernels::matvec_transposed_serial(mf.gc.wp[m].value, dzi.data(), dmu.data());
          const double inv = 1.0 / static_cast<double>(c.cnt_i[m]);
          for (int row_idx : item_lists[m]) {
            double* row = gP.row_ptr(row_idx);
            for (int k = 0; k < d; ++k) row[k] += dmu[k] * inv;
          }
        }
      }
      break;
    }
  }

  if (opt.into_embeddings) {
    double* qrow = gQ.row_ptr(item);
    for (int k = 0; k < d; ++k) qrow[k] += dq[k];
    if (user_row >= 0) {
      double* prow = gP.row_ptr(user_row);
      for (int k = 0; k < d; ++k) prow[k] += dp[k];
    }
  }
  if (opt.dp)
    for (int k = 0; k < d; ++k) opt.dp[k] += dp[k];
}

namespace {

struct EpochStats {
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

double validation_loss(const MfParams& mf, const RatingDataset& ds, const std::vector<int>& idx) {
  if (idx.empty()) return 0.0;
  std::vector<double> losses(idx.size());
#pragma omp parallel for schedule(static)
  for (long t = 0; t < static_cast<long>(idx.size()); ++t) {
    const Rating& r = ds.triples[idx[t]];
    const int row = mf.row_of(r.user);
    const double s = predict_key(mf, row, r.item);
    losses[t] = pointwise_loss(s, r.value, mf.feedback);
  }
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(idx.size());
}

}  // namespace

double mean_loss_key(const MfParams& mf, const RatingDataset& ds, const std::vector<int>& idx) {
  return validation_loss(mf, ds, idx);
}

double mf_batch_loss_and_grad(MfParams& mf, const RatingDataset& ds, const std::vector<int>& pairs,
                              const std::vector<int>& user_row,
                              std::vector<GradSet>* workspace) {
  const int bsz = static_cast<int>(pairs.size());
  if (bsz == 0) return 0.0;
  std::vector<ParamTensor*> tensors = mf.all_tensors();
  const int nthreads = std::max(1, kernels::max_threads());

  std::vector<GradSet> local;
  std::vector<GradSet>& parts = workspace ? *workspace : local;
  if (static_cast<int>(parts.size()) != nthreads ||
      (nthreads > 0 && parts[0].g.size() != tensors.size())) {
    parts.assign(nthreads, GradSet{});
    for (GradSet& p : parts) p.init(tensors);
  }
  for (GradSet& p : parts) p.zero();

  std::vector<double> losses(bsz, 0.0);
#pragma omp parallel num_threads(nthreads)
  {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    GradSet& g = parts[tid];
    PredictCache cache;
#pragma omp for schedule(static)
    for (int b = 0; b < bsz; ++b) {
      const Rating& r = ds.triples[pairs[b]];
      const int row = user_row[r.user];
      UserRef u;
      u.embedding = mf.P.value.row_ptr(row);
      u.bias = mf.user_bias.value.data[row];
      if (mf.backbone == Backbone::Gc) u.level_items = &mf.graph.user_items[row];
      const double s = predict(mf, u, r.item, cache);
      losses[b] = pointwise_loss(s, r.value, mf.feedback);
      const double dscore = pointwise_loss_backward(s, r.value, mf.feedback);
      BackwardOptions bopt;
      bopt.into_embeddings = true;
      predict_backward(mf, u, row, r.item, cache, dscore, g, bopt);
    }
  }

  double loss = 0.0;
  for (double l : losses) loss += l;
  loss /= static_cast<double>(bsz);
  reduce_grads(parts, tensors, 1.0 / static_cast<double>(bsz));
  return loss;
}

MfParams pretrain(const RatingDataset& ds, const SplitIndices& split,
                  const std::vector<int>& key_users, const PretrainOptions& opt) {
  if (opt.dim > std::min<int>(static_cast<int>(key_users.size()), ds.num_items))
    throw ConfigError("embedding dim " + std::to_string(opt.dim) +
                      " exceeds min(num key users, num items)");

  const int levels = ds.feedback == Feedback::Explicit ? 5 : 1;
  MfParams mf(opt.backbone, ds.feedback, static_cast<int>(key_users.size()), ds.num_items,
              opt.dim, opt.hidden, levels);
  mf.key_users = key_users;
  mf.init_params(opt.init_seed);

  std::vector<int> user_row(ds.num_users, -1);
  for (size_t r = 0; r < key_users.size(); ++r) user_row[key_users[r]] = static_cast<int>(r);

  // key-user slices of the split
  std::vector<int> train_idx, valid_idx;
  for (int idx : split.train)
    if (user_row[ds.triples[idx].user] >= 0) train_idx.push_back(idx);
  for (int idx : split.validation)
    if (user_row[ds.triples[idx].user] >= 0) valid_idx.push_back(idx);
  if (train_idx.empty()) throw ConfigError("pretrain: no training ratings for key users");

  if (!opt.strict_bias) {
    double mean = 0.0;
    for (int idx : train_idx) mean += ds.triples[idx].value;
    mf.global_bias = mean / static_cast<double>(train_idx.size());
    if (ds.feedback == Feedback::Implicit) mf.global_bias = 0.0;
  }

  if (opt.backbone == Backbone::Gc)
    mf.graph = build_gc_graph(ds, train_idx, user_row, static_cast<int>(key_users.size()), levels,
                              opt.gc_neighbor_cap, mix_seed(opt.init_seed, 0x6c));

  AdamConfig adam;
  adam.learning_rate = opt.learning_rate;
  adam.weight_decay = opt.weight_decay;
  std::vector<ParamTensor*> tensors = mf.all_tensors();
  std::vector<GradSet> workspace;

  // best-validation snapshot
  double best_valid = validation_loss(mf, ds, valid_idx);
  std::vector<Matrix> best_values;
  for (ParamTensor* t : tensors) best_values.push_back(t->value);
  int best_epoch = 0;
  int since_best = 0;

  std::vector<int> order = train_idx;
  const int nb = static_cast<int>(order.size());
  std::vector<int> batch;

  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(opt.shuffle_seed, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    for (int start = 0; start < nb; start += opt.batch_size) {
      const int stop = std::min(nb, start + opt.batch_size);
      batch.assign(order.begin() + start, order.begin() + stop);
      const double batch_loss = mf_batch_loss_and_grad(mf, ds, batch, user_row, &workspace);
      epoch_loss += batch_loss * static_cast<double>(batch.size());
      if (!std::isfinite(batch_loss))
        throw TrainingError("pretrain diverged: nonfinite loss at epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(start / opt.batch_size));
      for (ParamTensor* t : tensors) adam_step(*t, adam);
    }

    const double valid = validation_loss(mf, ds, valid_idx);
    if (opt.verbose)
      std::fprintf(stderr, "epoch %3d  train %.5f  valid %.5f\n", epoch,
                   epoch_loss / std::max(1, nb), valid);

    if (valid < best_valid || valid_idx.empty()) {
      best_valid = valid;
      best_epoch = epoch;
      for (size_t k = 0; k < tensors.size(); ++k) best_values[k] = tensors[k]->value;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= opt.patience) break;
    }
  }

  (void)best_epoch;
  for (size_t k = 0; k < tensors.size(); ++k) tensors[k]->value = best_values[k];
  for (ParamTensor* t : tensors) {
    t->zero_grad();
    if (!t->value.all_finite())
      throw TrainingError("pretrain produced nonfinite values in '" + t->name + "'");
  }
  return mf;
}

}  // namespace icf
