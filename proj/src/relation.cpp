#include "icf/relation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "icf/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace icf {

AttentionNorm norm_from_string(const std::string& s) {
  if (s == "softmax") return AttentionNorm::Softmax;
  if (s == "linear_ratio") return AttentionNorm::LinearRatio;
  throw ConfigError("unknown attention normalization '" + s + "'");
}

std::string to_string(AttentionNorm n) {
  return n == AttentionNorm::Softmax ? "softmax" : "linear_ratio";
}

AdaptMode adapt_mode_from_string(const std::string& s) {
  if (s == "interpolation") return AdaptMode::Interpolation;
  if (s == "extrapolation") return AdaptMode::Extrapolation;
  throw ConfigError("unknown adaptation mode '" + s + "'");
}

std::string to_string(AdaptMode m) {
  return m == AdaptMode::Interpolation ? "interpolation" : "extrapolation";
}

UserContext build_context(const std::vector<int>& history_items, const Matrix& item_embeddings,
                          uint64_t seed, int fallback_size) {
  UserContext ctx;
  ctx.history = history_items;
  std::sort(ctx.history.begin(), ctx.history.end());
  ctx.history.erase(std::unique(ctx.history.begin(), ctx.history.end()), ctx.history.end());

  if (ctx.history.empty()) {
    if (fallback_size <= 0)
      throw ColdStartError("empty history and no fallback items allowed");
    Rng rng(seed);
    const int n = item_embeddings.rows;
    ctx.history = rng.sample_without_replacement(n, std::min(fallback_size, n));
    std::sort(ctx.history.begin(), ctx.history.end());
    ctx.fallback_used = true;
  }

  const int d = item_embeddings.cols;
  ctx.d.assign(d, 0.0);
  for (int item : ctx.history) {
    const double* row = item_embeddings.row_ptr(item);
    for (int k = 0; k < d; ++k) ctx.d[k] += row[k];
  }
  return ctx;
}

RelationParams::RelationParams(int num_heads, int d, AttentionNorm norm)
    : heads(num_heads), dim(d), normalization(norm) {
  for (int l = 0; l < heads; ++l) {
    RelationHead h;
    const std::string p = "rel.h" + std::to_string(l);
    h.e = ParamTensor(p + ".e", 2 * d, 1);
    h.wq = ParamTensor(p + ".wq", d, d);
    h.wk = ParamTensor(p + ".wk", d, d);
    h.wv = ParamTensor(p + ".wv", d, d);
    head.push_back(std::move(h));
  }
  wo = ParamTensor("rel.wo", d, heads * d);
}

void RelationParams::init_params(uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4e));
  for (RelationHead& h : head) {
    xavier_init(h.e.value, 2 * dim, 1, rng);
    xavier_init(h.wq.value, dim, dim, rng);
    xavier_init(h.wk.value, dim, dim, rng);
    h.wv.value.fill(0.0);
    for (int k = 0; k < dim; ++k) h.wv.value(k, k) = 1.0;
  }
  wo.value.fill(0.0);
  const double inv = 1.0 / static_cast<double>(heads);
  for (int l = 0; l < heads; ++l)
    for (int k = 0; k < dim; ++k) wo.value(k, l * dim + k) = inv;
}

void RelationParams::sample_keys(int num_key_rows, int sample_size, uint64_t seed) {
  int s = sample_size;
  if (s > num_key_rows) {
    std::fprintf(stderr, "relation: sample size %d exceeds %d key users, clamping\n", sample_size,
                 num_key_rows);
    s = num_key_rows;
  }
  if (s <= 0) throw ConfigError("relation sample size must be positive");
  for (int l = 0; l < heads; ++l) {
    Rng rng(mix_seed(seed, 0x9000 + static_cast<uint64_t>(l)));
    head[l].key_sample = rng.sample_without_replacement(num_key_rows, s);
  }
}

std::vector<ParamTensor*> RelationParams::tensors() {
  std::vector<ParamTensor*> ts;
  for (RelationHead& h : head) {
    ts.push_back(&h.e);
    ts.push_back(&h.wq);
    ts.push_back(&h.wk);
    ts.push_back(&h.wv);
  }
  ts.push_back(&wo);
  return ts;
}

std::vector<const ParamTensor*> RelationParams::tensors() const {
  auto* self = const_cast<RelationParams*>(this);
  std::vector<const ParamTensor*> ts;
  for (ParamTensor* t : self->tensors()) ts.push_back(t);
  return ts;
}

namespace {

// Per-batch projections of the sampled key embeddings; W_k and W_v change per
// optimizer step, P never does.
struct HeadProjection {
  Matrix k;                       // S x d rows: W_k p_u
  Matrix v;                       // S x d rows: W_v p_u
  std::vector<double> key_score;  // e_bot . k_u
};

void project_head(const RelationParams& rel, int l, const Matrix& p, HeadProjection& proj) {
  const RelationHead& h = rel.head[l];
  const int s = static_cast<int>(h.key_sample.size());
  const int d = rel.dim;
  proj.k = Matrix(s, d);
  proj.v = Matrix(s, d);
  proj.key_score.assign(s, 0.0);
  const double* e_bot = h.e.value.data.data() + d;
  for (int i = 0; i < s; ++i) {
    const double* prow = p.row_ptr(h.key_sample[i]);
    kernels::matvec_serial(h.wk.value, prow, proj.k.row_ptr(i));
    kernels::matvec_serial(h.wv.value, prow, proj.v.row_ptr(i));
    proj.key_score[i] = kernels::dot(e_bot, proj.k.row_ptr(i), d);
  }
}

struct HeadCache {
  std::vector<double> a;        // W_q d_u
  std::vector<double> scores;   // raw
  std::vector<double> weights;  // normalized
  std::vector<double> h;        // sum_u c_u W_v p_u
  std::vector<double> m;        // sum_u c_u p_u
};

struct EmbedCache {
  std::vector<HeadCache> heads;
  std::vector<double> concat;   // L*d
  std::vector<double> ptilde;   // d
};

void head_scores(const RelationParams& rel, int l, const std::vector<double>& ctx_d,
                 const HeadProjection& proj, HeadCache& hc) {
  const RelationHead& h = rel.head[l];
  const int d = rel.dim;
  const int s = static_cast<int>(h.key_sample.size());
  hc.a.assign(d, 0.0);
  kernels::matvec_serial(h.wq.value, ctx_d.data(), hc.a.data());
  const double* e_top = h.e.value.data.data();
  const double alpha = kernels::dot(e_top, hc.a.data(), d);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  hc.scores.assign(s, 0.0);
  for (int i = 0; i < s; ++i) {
    double sc = alpha + proj.key_score[i];
    if (rel.normalization == AttentionNorm::Softmax)
      sc += inv_sqrt_d * kernels::dot(hc.a.data(), proj.k.row_ptr(i), d);
    hc.scores[i] = sc;
  }
}

void normalize_scores(AttentionNorm mode, const std::vector<double>& scores,
                      std::vector<double>& weights) {
  const int s = static_cast<int>(scores.size());
  weights.assign(s, 0.0);
  if (mode == AttentionNorm::Softmax) {
    double mx = scores[0];
    for (double v : scores) mx = std::max(mx, v);
    double sum = 0.0;
    for (int i = 0; i < s; ++i) {
      weights[i] = std::exp(scores[i] - mx);
      sum += weights[i];
    }
    for (int i = 0; i < s; ++i) weights[i] /= sum;
  } else {
    double sum = 0.0;
    for (double v : scores) sum += v;
    if (std::fabs(sum) < 1e-12)
      throw Error("linear_ratio attention: degenerate normalization, |sum of scores| < 1e-12");
    for (int i = 0; i < s; ++i) weights[i] = scores[i] / sum;
  }
}

void forward_user(const RelationParams& rel, const std::vector<double>& ctx_d,
                  const std::vector<HeadProjection>& proj, const Matrix& p, EmbedCache& ec) {
  const int d = rel.dim;
  ec.heads.assign(rel.heads, HeadCache{});
  ec.concat.assign(rel.heads * d, 0.0);
  for (int l = 0; l < rel.heads; ++l) {
    HeadCache& hc = ec.heads[l];
    head_scores(rel, l, ctx_d, proj[l], hc);
    normalize_scores(rel.normalization, hc.scores, hc.weights);

    const int s = static_cast<int>(hc.weights.size());
    hc.h.assign(d, 0.0);
    hc.m.assign(d, 0.0);
    const RelationHead& rh = rel.head[l];
    for (int i = 0; i < s; ++i) {
      const double w = hc.weights[i];
      const double* vrow = proj[l].v.row_ptr(i);
      const double* prow = p.row_ptr(rh.key_sample[i]);
      for (int k = 0; k < d; ++k) {
        hc.h[k] += w * vrow[k];
        hc.m[k] += w * prow[k];
      }
    }
    for (int k = 0; k < d; ++k) ec.concat[l * d + k] = hc.h[k];
  }
  ec.ptilde.assign(d, 0.0);
  kernels::matvec_serial(rel.wo.value, ec.concat.data(), ec.ptilde.data());
}

// Gradient buffers for one worker thread during adaptation.
struct RelGradBuffers {
  GradSet rel;                  // layout of RelationParams::tensors()
  std::vector<Matrix> dk;       // per head, S x d: accumulated d(score)/d(k_u) terms
  void init(RelationParams& r) {
    rel.init(r.tensors());
    dk.clear();
    for (int l = 0; l < r.heads; ++l)
      dk.emplace_back(static_cast<int>(r.head[l].key_sample.size()), r.dim);
  }
  void zero() {
    rel.zero();
    for (Matrix& m : dk) m.fill(0.0);
  }
};

// Backward from d(loss)/d(ptilde) into relation-parameter buffers. dWk terms
// are staged in per-head dk matrices and folded in once per batch.
void backward_user(const RelationParams& rel, const std::vector<double>& ctx_d,
                   const std::vector<HeadProjection>& proj, const Matrix& p, const EmbedCache& ec,
                   const double* dptilde, RelGradBuffers& buf) {
  const int d = rel.dim;
  const int L = rel.heads;
  // layout: per head (e, wq, wk, wv) then wo
  Matrix& g_wo = buf.rel.g[4 * L];
  for (int r = 0; r < d; ++r) {
    double* row = g_wo.row_ptr(r);
    const double dp = dptilde[r];
    for (int c = 0; c < L * d; ++c) row[c] += dp * ec.concat[c];
  }
  std::vector<double> dconcat(L * d, 0.0);
  kernels::matvec_transposed_serial(rel.wo.value, dptilde, dconcat.data());

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> dh(d), dc, ds, da(d), kt_ds(d);

  for (int l = 0; l < L; ++l) {
    const RelationHead& rh = rel.head[l];
    const HeadCache& hc = ec.heads[l];
    const int s = static_cast<int>(hc.weights.size());
    for (int k = 0; k < d; ++k) dh[k] = dconcat[l * d + k];

    // h = W_v m  =>  dW_v += dh m^T
    Matrix& g_wv = buf.rel.g[4 * l + 3];
    for (int r = 0; r < d; ++r) {
      double* row = g_wv.row_ptr(r);
      const double dr = dh[r];
      for (int k = 0; k < d; ++k) row[k] += dr * hc.m[k];
    }

    // dc_u = dh . (W_v p_u)
    dc.assign(s, 0.0);
    for (int i = 0; i < s; ++i) dc[i] = kernels::dot(dh.data(), proj[l].v.row_ptr(i), d);

    ds.assign(s, 0.0);
    if (rel.normalization == AttentionNorm::Softmax) {
      double mix = 0.0;
      for (int i = 0; i < s; ++i) mix += hc.weights[i] * dc[i];
      for (int i = 0; i < s; ++i) ds[i] = hc.weights[i] * (dc[i] - mix);
    } else {
      double total = 0.0;
      for (double v : hc.scores) total += v;
      double mix = 0.0;
      for (int i = 0; i < s; ++i) mix += hc.weights[i] * dc[i];
      for (int i = 0; i < s; ++i) ds[i] = (dc[i] - mix) / total;
    }

    double ds_sum = 0.0;
    for (int i = 0; i < s; ++i) ds_sum += ds[i];

    // k^T ds
    for (int k = 0; k < d; ++k) kt_ds[k] = 0.0;
    for (int i = 0; i < s; ++i) {
      const double* krow = proj[l].k.row_ptr(i);
      const double dsi = ds[i];
      for (int k = 0; k < d; ++k) kt_ds[k] += dsi * krow[k];
    }

    const double* e_top = rh.e.value.data.data();
    Matrix& g_e = buf.rel.g[4 * l];
    for (int k = 0; k < d; ++k) {
      g_e.data[k] += ds_sum * hc.a[k];   // e_top
      g_e.data[d + k] += kt_ds[k];       // e_bot
    }

    // da = ds_sum e_top (+ K^T ds / sqrt(d) in softmax mode)
    for (int k = 0; k < d; ++k) da[k] = ds_sum * e_top[k];
    if (rel.normalization == AttentionNorm::Softmax)
      for (int k = 0; k < d; ++k) da[k] += inv_sqrt_d * kt_ds[k];

    Matrix& g_wq = buf.rel.g[4 * l + 1];
    for (int r = 0; r < d; ++r) {
      double* row = g_wq.row_ptr(r);
      const double dr = da[r];
      for (int k = 0; k < d; ++k) row[k] += dr * ctx_d[k];
    }

    // dk_u = ds_u e_bot (+ ds_u a / sqrt(d) in softmax mode), staged per head
    const double* e_bot = rh.e.value.data.data() + d;
    Matrix& dkm = buf.dk[l];
    for (int i = 0; i < s; ++i) {
      double* row = dkm.row_ptr(i);
      const double dsi = ds[i];
      for (int k = 0; k < d; ++k) row[k] += dsi * e_bot[k];
      if (rel.normalization == AttentionNorm::Softmax) {
        const double f = dsi * inv_sqrt_d;
        for (int k = 0; k < d; ++k) row[k] += f * hc.a[k];
      }
    }
  }
  (void)p;
}

// Folds the staged dk matrices into the W_k gradients: dW_k += dk^T P_S.
void fold_dk(const RelationParams& rel, const Matrix& p, RelGradBuffers& buf) {
  const int d = rel.dim;
  for (int l = 0; l < rel.heads; ++l) {
    const std::vector<int>& sample = rel.head[l].key_sample;
    Matrix& g_wk = buf.rel.g[4 * l + 2];
    const Matrix& dkm = buf.dk[l];
    for (int i = 0; i < static_cast<int>(sample.size()); ++i) {
      const double* dkrow = dkm.row_ptr(i);
      const double* prow = p.row_ptr(sample[i]);
      for (int r = 0; r < d; ++r) {
        double* grow = g_wk.row_ptr(r);
        const double v = dkrow[r];
        for (int k = 0; k < d; ++k) grow[k] += v * prow[k];
      }
    }
  }
}

}  // namespace

AttentionWeights head_attention(const UserContext& ctx, const RelationParams& rel, int head_index,
                                const Matrix& key_embeddings) {
  if (head_index < 0 || head_index >= rel.heads)
    throw Error("head_attention: head index out of range");
  if (rel.head[head_index].key_sample.empty())
    throw Error("head_attention: head has an empty key sample");

  HeadProjection proj;
  project_head(rel, head_index, key_embeddings, proj);
  HeadCache hc;
  head_scores(rel, head_index, ctx.d, proj, hc);
  normalize_scores(rel.normalization, hc.scores, hc.weights);

  AttentionWeights out;
  const std::vector<int>& sample = rel.head[head_index].key_sample;
  for (size_t i = 0; i < sample.size(); ++i) out.weights.emplace_back(sample[i], hc.weights[i]);
  return out;
}

std::vector<double> inductive_embedding(const UserContext& ctx, const RelationParams& rel,
                                        const Matrix& key_embeddings) {
  std::vector<HeadProjection> proj(rel.heads);
  for (int l = 0; l < rel.heads; ++l) project_head(rel, l, key_embeddings, proj[l]);
  EmbedCache ec;
  forward_user(rel, ctx.d, proj, key_embeddings, ec);
  return ec.ptilde;
}

double contrastive_loss(const Matrix& meta_batch, const Matrix& inductive_batch,
                        bool paper_sign) {
  check_same_shape(meta_batch, inductive_batch, "contrastive_loss");
  const int b = meta_batch.rows;
  const int d = meta_batch.cols;
  if (b < 1) throw Error("contrastive_loss: empty batch");

  double loss = 0.0;
  std::vector<double> z(b);
  for (int u = 0; u < b; ++u) {
    for (int v = 0; v < b; ++v)
      z[v] = kernels::dot(meta_batch.row_ptr(u), inductive_batch.row_ptr(v), d);
    double mx = z[0];
    for (double x : z) mx = std::max(mx, x);
    double sum = 0.0;
    for (double x : z) sum += std::exp(x - mx);
    loss += -(z[u] - mx - std::log(sum));
  }
  loss /= static_cast<double>(b);
  return paper_sign ? -loss : loss;
}

void contrastive_loss_backward(const Matrix& meta_batch, const Matrix& inductive_batch,
                               Matrix& d_inductive, bool paper_sign) {
  check_same_shape(meta_batch, inductive_batch, "contrastive_loss_backward");
  const int b = meta_batch.rows;
  const int d = meta_batch.cols;
  d_inductive = Matrix(b, d);
  const double sign = paper_sign ? -1.0 : 1.0;
  std::vector<double> z(b), soft(b);
  for (int u = 0; u < b; ++u) {
    for (int v = 0; v < b; ++v)
      z[v] = kernels::dot(meta_batch.row_ptr(u), inductive_batch.row_ptr(v), d);
    double mx = z[0];
    for (double x : z) mx = std::max(mx, x);
    double sum = 0.0;
    for (int v = 0; v < b; ++v) {
      soft[v] = std::exp(z[v] - mx);
      sum += soft[v];
    }
    for (int v = 0; v < b; ++v) soft[v] /= sum;
    // d(loss)/d(z_uv) = (softmax - delta) / b
    const double* mrow = meta_batch.row_ptr(u);
    for (int v = 0; v < b; ++v) {
      const double coeff = sign * (soft[v] - (v == u ? 1.0 : 0.0)) / static_cast<double>(b);
      double* drow = d_inductive.row_ptr(v);
      for (int k = 0; k < d; ++k) drow[k] += coeff * mrow[k];
    }
  }
}

std::vector<std::vector<int>> level_items_from_history(const std::vector<int>& items,
                                                       const std::vector<double>& values,
                                                       int levels, int cap, uint64_t seed) {
  std::vector<std::vector<int>> lists(levels);
  for (size_t i = 0; i < items.size(); ++i) {
    const double v = i < values.size() ? values[i] : static_cast<double>(levels);
    if (levels == 1 && !values.empty() && v <= 0.0) continue;  // implicit: positives only
    lists[rating_level(v, levels)].push_back(items[i]);
  }
  for (int m = 0; m < levels; ++m) {
    std::vector<int>& l = lists[m];
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
    if (cap > 0 && static_cast<int>(l.size()) > cap) {
      Rng rng(mix_seed(seed, 0x77 + static_cast<uint64_t>(m)));
      std::vector<int> pick = rng.sample_without_replacement(static_cast<int>(l.size()), cap);
      std::sort(pick.begin(), pick.end());
      std::vector<int> kept(cap);
      for (int i = 0; i < cap; ++i) kept[i] = l[pick[i]];
      l = std::move(kept);
    }
  }
  return lists;
}

InferredUser infer_user(const std::vector<int>& history, const std::vector<double>& values,
                        const MfParams& mf, const RelationParams& rel, uint64_t fallback_seed,
                        int fallback_items, int gc_neighbor_cap) {
  InferredUser out;
  out.ctx = build_context(history, mf.Q.value, fallback_seed, fallback_items);
  out.embedding = inductive_embedding(out.ctx, rel, mf.P.value);
  out.bias = mf.mean_user_bias();
  if (mf.backbone == Backbone::Gc) {
    // histories adopt the context's fallback items when cold
    const std::vector<int>& items = out.ctx.history;
    std::vector<double> vals = values;
    if (out.ctx.fallback_used) vals.clear();
    out.level_items =
        level_items_from_history(items, vals, mf.gc.levels, gc_neighbor_cap, fallback_seed);
  }
  return out;
}

double predict_inferred(const MfParams& mf, const InferredUser& user, int item) {
  UserRef ref;
  ref.embedding = user.embedding.data();
  ref.bias = user.bias;
  if (mf.backbone == Backbone::Gc) ref.level_items = &user.level_items;
  return predict(mf, ref, item);
}

std::vector<std::pair<int, double>> top_k_items(const MfParams& mf, const InferredUser& user,
                                                int k) {
  std::vector<std::pair<int, double>> scored(mf.num_items);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < mf.num_items; ++i) scored[i] = {i, predict_inferred(mf, user, i)};
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (k > 0 && k < static_cast<int>(scored.size())) scored.resize(k);
  return scored;
}

std::vector<AttentionDumpRow> export_attention(const MfParams& mf, const RelationParams& rel,
                                               const RatingDataset& ds,
                                               const SplitIndices& split,
                                               const std::vector<int>& users, int fallback_items,
                                               uint64_t fallback_seed) {
  std::vector<std::vector<int>> by_user = ratings_by_user(ds, split.train);
  std::vector<AttentionDumpRow> rows;
  for (int u : users) {
    if (u < 0 || u >= ds.num_users) throw Error("export_attention: user out of range");
    std::vector<int> items;
    for (int idx : by_user[u]) items.push_back(ds.triples[idx].item);
    UserContext ctx =
        build_context(items, mf.Q.value, mix_seed(fallback_seed, static_cast<uint64_t>(u)),
                      fallback_items);
    for (int l = 0; l < rel.heads; ++l) {
      AttentionWeights w = head_attention(ctx, rel, l, mf.P.value);
      for (const auto& [row, weight] : w.weights)
        rows.push_back({u, l, mf.key_users[row], weight});
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// adaptation
// ---------------------------------------------------------------------------

AdaptData prepare_adapt_data(const MfParams& mf, const RatingDataset& ds,
                             const SplitIndices& split, const std::vector<int>& query_users,
                             const AdaptOptions& opt) {
  AdaptData q;
  q.users = query_users;
  std::sort(q.users.begin(), q.users.end());
  q.slot_of.assign(ds.num_users, -1);
  for (size_t i = 0; i < q.users.size(); ++i) q.slot_of[q.users[i]] = static_cast<int>(i);

  std::vector<std::vector<int>> history_items(q.users.size());
  std::vector<std::vector<double>> history_values(q.users.size());
  for (int idx : split.train) {
    const Rating& r = ds.triples[idx];
    const int slot = q.slot_of[r.user];
    if (slot < 0) continue;
    q.sup_idx.push_back(idx);
    history_items[slot].push_back(r.item);
    history_values[slot].push_back(r.value);
  }
  for (int idx : split.validation)
    if (q.slot_of[ds.triples[idx].user] >= 0) q.valid_idx.push_back(idx);

  q.ctx.resize(q.users.size());
  const int levels = mf.backbone == Backbone::Gc ? mf.gc.levels : 1;
  if (mf.backbone == Backbone::Gc) q.gc_lists.resize(q.users.size());
  for (size_t s = 0; s < q.users.size(); ++s) {
    q.ctx[s] = build_context(history_items[s], mf.Q.value,
                             mix_seed(opt.init_seed, 0xc01d + static_cast<uint64_t>(q.users[s])),
                             opt.fallback_items);
    if (mf.backbone == Backbone::Gc)
      q.gc_lists[s] = level_items_from_history(
          history_items[s], history_values[s], levels, opt.gc_neighbor_cap,
          mix_seed(opt.init_seed, 0x91a + static_cast<uint64_t>(q.users[s])));
  }

  q.meta_row.assign(q.users.size(), -1);
  if (opt.mode == AdaptMode::Extrapolation)
    for (size_t s = 0; s < q.users.size(); ++s) {
      q.meta_row[s] = mf.row_of(q.users[s]);
      if (q.meta_row[s] < 0)
        throw ConfigError("extrapolation query user " + std::to_string(q.users[s]) +
                          " is not a key user");
    }

  q.mean_bias = mf.mean_user_bias();
  return q;
}

namespace {

double adapt_validation_loss(const MfParams& theta, const RelationParams& rel,
                             const RatingDataset& ds, const AdaptData& q) {
  if (q.valid_idx.empty()) return 0.0;

  std::vector<HeadProjection> proj(rel.heads);
  for (int l = 0; l < rel.heads; ++l) project_head(rel, l, theta.P.value, proj[l]);

  // embeddings only for users that appear in the validation slice
  std::vector<char> needed(q.users.size(), 0);
  for (int idx : q.valid_idx) needed[q.slot_of[ds.triples[idx].user]] = 1;
  std::vector<int> slots;
  for (size_t s = 0; s < q.users.size(); ++s)
    if (needed[s]) slots.push_back(static_cast<int>(s));

  Matrix ptilde(static_cast<int>(q.users.size()), theta.dim);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(slots.size()); ++i) {
    EmbedCache ec;
    forward_user(rel, q.ctx[slots[i]].d, proj, theta.P.value, ec);
    std::copy(ec.ptilde.begin(), ec.ptilde.end(), ptilde.row_ptr(slots[i]));
  }

  std::vector<double> losses(q.valid_idx.size());
#pragma omp parallel for schedule(static)
  for (long t = 0; t < static_cast<long>(q.valid_idx.size()); ++t) {
    const Rating& r = ds.triples[q.valid_idx[t]];
    const int slot = q.slot_of[r.user];
    UserRef u;
    u.embedding = ptilde.row_ptr(slot);
    u.bias = q.mean_bias;
    if (theta.backbone == Backbone::Gc) u.level_items = &q.gc_lists[slot];
    const double s = predict(theta, u, r.item);
    losses[t] = pointwise_loss(s, r.value, theta.feedback);
  }
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(q.valid_idx.size());
}

}  // namespace

double adapt_batch_loss_and_grad(MfParams& theta, RelationParams& rel, const RatingDataset& ds,
                                 const AdaptData& data, const std::vector<int>& batch_pairs,
                                 double lambda, bool paper_sign) {
  const int bsz = static_cast<int>(batch_pairs.size());
  if (bsz == 0) return 0.0;
  const int nthreads = std::max(1, kernels::max_threads());
  const int dim = theta.dim;

  // unique users of this batch, in first-appearance order
  std::vector<int> batch_slots;
  std::vector<int> local_of(data.users.size(), -1);
  std::vector<int> pair_local(bsz);
  for (int b = 0; b < bsz; ++b) {
    const int slot = data.slot_of[ds.triples[batch_pairs[b]].user];
    if (slot < 0) throw Error("adapt batch contains a non-query user");
    if (local_of[slot] < 0) {
      local_of[slot] = static_cast<int>(batch_slots.size());
      batch_slots.push_back(slot);
    }
    pair_local[b] = local_of[slot];
  }
  const int n_local = static_cast<int>(batch_slots.size());

  // per-batch key projections under the current W_k, W_v
  std::vector<HeadProjection> proj(rel.heads);
#pragma omp parallel for schedule(static)
  for (int l = 0; l < rel.heads; ++l) project_head(rel, l, theta.P.value, proj[l]);

  std::vector<EmbedCache> caches(n_local);
  Matrix ptilde(n_local, dim);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n_local; ++i) {
    forward_user(rel, data.ctx[batch_slots[i]].d, proj, theta.P.value, caches[i]);
    std::copy(caches[i].ptilde.begin(), caches[i].ptilde.end(), ptilde.row_ptr(i));
  }

  // rating loss; predictor grads per thread, d(loss)/d(ptilde) per thread
  std::vector<ParamTensor*> mf_layout = theta.all_tensors();
  std::vector<GradSet> mf_parts(nthreads);
  for (GradSet& g : mf_parts) g.init(mf_layout);
  std::vector<Matrix> dp_parts(nthreads, Matrix(n_local, dim));
  std::vector<double> pair_losses(bsz, 0.0);

#pragma omp parallel num_threads(nthreads)
  {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    GradSet& g = mf_parts[tid];
    Matrix& dp = dp_parts[tid];
    PredictCache cache;
#pragma omp for schedule(static)
    for (int b = 0; b < bsz; ++b) {
      const Rating& r = ds.triples[batch_pairs[b]];
      const int local = pair_local[b];
      UserRef u;
      u.embedding = ptilde.row_ptr(local);
      u.bias = data.mean_bias;
      if (theta.backbone == Backbone::Gc) u.level_items = &data.gc_lists[batch_slots[local]];
      const double s = predict(theta, u, r.item, cache);
      pair_losses[b] = pointwise_loss(s, r.value, theta.feedback);
      const double dscore = pointwise_loss_backward(s, r.value, theta.feedback);
      BackwardOptions bopt;
      bopt.into_embeddings = false;
      bopt.dp = dp.row_ptr(local);
      predict_backward(theta, u, -1, r.item, cache, dscore, g, bopt);
    }
  }

  double batch_loss = 0.0;
  for (double l : pair_losses) batch_loss += l;
  batch_loss /= static_cast<double>(bsz);

  Matrix dptilde(n_local, dim);
  for (const Matrix& part : dp_parts)
    for (size_t i = 0; i < dptilde.size(); ++i)
      dptilde.data[i] += part.data[i] / static_cast<double>(bsz);

  if (lambda != 0.0) {
    Matrix meta(n_local, dim);
    for (int i = 0; i < n_local; ++i) {
      const int row = data.meta_row[batch_slots[i]];
      if (row < 0) throw ConfigError("contrastive loss needs meta latents for every query user");
      std::copy(theta.P.value.row_ptr(row), theta.P.value.row_ptr(row) + dim, meta.row_ptr(i));
    }
    batch_loss += lambda * contrastive_loss(meta, ptilde, paper_sign);
    Matrix dcon;
    contrastive_loss_backward(meta, ptilde, dcon, paper_sign);
    kernels::axpy(lambda, dcon, dptilde);
  }

  // relation backward per user; dptilde already carries all scaling
  std::vector<RelGradBuffers> rel_parts(nthreads);
  for (RelGradBuffers& b : rel_parts) b.init(rel);
#pragma omp parallel num_threads(nthreads)
  {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    RelGradBuffers& buf = rel_parts[tid];
#pragma omp for schedule(static)
    for (int i = 0; i < n_local; ++i)
      backward_user(rel, data.ctx[batch_slots[i]].d, proj, theta.P.value, caches[i],
                    dptilde.row_ptr(i), buf);
    fold_dk(rel, theta.P.value, buf);
  }

  std::vector<ParamTensor*> rel_tensors = rel.tensors();
  for (size_t k = 0; k < rel_tensors.size(); ++k) {
    Matrix& dst = rel_tensors[k]->grad;
    for (const RelGradBuffers& b : rel_parts)
      for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += b.rel.g[k].data[i];
  }
  for (size_t k = 4; k < mf_layout.size(); ++k) {
    Matrix& dst = mf_layout[k]->grad;
    for (const GradSet& g : mf_parts)
      for (size_t i = 0; i < dst.size(); ++i)
        dst.data[i] += g.g[k].data[i] / static_cast<double>(bsz);
  }
  return batch_loss;
}

AdaptResult adapt(const MfParams& mf, const RatingDataset& ds, const SplitIndices& split,
                  const UserPartition& partition, const AdaptOptions& opt) {
  // mode/partition consistency
  if (opt.mode == AdaptMode::Interpolation) {
    std::vector<int> overlap;
    std::set_intersection(partition.key_users.begin(), partition.key_users.end(),
                          partition.query_users.begin(), partition.query_users.end(),
                          std::back_inserter(overlap));
    if (!overlap.empty())
      throw ConfigError("interpolation requires disjoint key and query users; " +
                        std::to_string(overlap.size()) + " users overlap");
  }
  const std::vector<int>& query_users =
      opt.mode == AdaptMode::Interpolation ? partition.query_users : partition.key_users;
  if (query_users.empty()) throw ConfigError("adapt: empty query user set");

  AdaptResult res;
  res.model = mf;  // P, Q, biases stay frozen; predictor finetunes
  MfParams& theta = res.model;
  for (ParamTensor* t : theta.all_tensors()) {
    t->zero_grad();
    t->reset_adam();
  }

  res.rel = RelationParams(opt.heads, mf.dim, opt.normalization);
  RelationParams& rel = res.rel;
  rel.init_params(opt.init_seed);
  rel.sample_keys(mf.P.value.rows, opt.sample_size, mix_seed(opt.init_seed, 0x5e1ec7));

  AdaptData q = prepare_adapt_data(mf, ds, split, query_users, opt);
  if (q.sup_idx.empty()) throw ConfigError("adapt: query users have no training ratings");

  std::vector<ParamTensor*> rel_tensors = rel.tensors();
  std::vector<ParamTensor*> theta_tensors = theta.predictor_tensors();

  AdamConfig adam;
  adam.learning_rate = opt.learning_rate;
  adam.weight_decay = 0.0;  // embeddings are frozen; nothing else carries L2

  const double lambda = opt.mode == AdaptMode::Extrapolation ? opt.lambda : 0.0;

  double best_valid = adapt_validation_loss(theta, rel, ds, q);
  auto snapshot = [&]() {
    std::vector<Matrix> vals;
    for (ParamTensor* t : rel_tensors) vals.push_back(t->value);
    for (ParamTensor* t : theta_tensors) vals.push_back(t->value);
    return vals;
  };
  std::vector<Matrix> best_values = snapshot();
  std::vector<std::vector<int>> best_samples;
  for (int l = 0; l < rel.heads; ++l) best_samples.push_back(rel.head[l].key_sample);
  int since_best = 0;

  std::vector<int> order = q.sup_idx;
  const int n_sup = static_cast<int>(order.size());

  std::vector<int> batch;
  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    if (opt.resample_keys_each_epoch && epoch > 1)
      rel.sample_keys(mf.P.value.rows, opt.sample_size,
                      mix_seed(opt.init_seed, 0xe90c + static_cast<uint64_t>(epoch)));

    Rng shuffle_rng(mix_seed(opt.shuffle_seed, 0xad0 + static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    for (int start = 0; start < n_sup; start += opt.batch_size) {
      const int stop = std::min(n_sup, start + opt.batch_size);
      batch.assign(order.begin() + start, order.begin() + stop);
      const double batch_loss =
          adapt_batch_loss_and_grad(theta, rel, ds, q, batch, lambda, opt.paper_sign_contrastive);
      if (!std::isfinite(batch_loss))
        throw TrainingError("adapt diverged: nonfinite loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(start / opt.batch_size));
      for (ParamTensor* t : rel_tensors) adam_step(*t, adam);
      for (ParamTensor* t : theta_tensors) adam_step(*t, adam);
    }

    const double valid = adapt_validation_loss(theta, rel, ds, q);
    if (opt.verbose) std::fprintf(stderr, "adapt epoch %3d  valid %.5f\n", epoch, valid);

    if (valid < best_valid || q.valid_idx.empty()) {
      best_valid = valid;
      best_values = snapshot();
      best_samples.clear();
      for (int l = 0; l < rel.heads; ++l) best_samples.push_back(rel.head[l].key_sample);
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= opt.patience) break;
    }
  }

  size_t k = 0;
  for (ParamTensor* t : rel_tensors) t->value = best_values[k++];
  for (ParamTensor* t : theta_tensors) t->value = best_values[k++];
  for (int l = 0; l < rel.heads; ++l) rel.head[l].key_sample = best_samples[l];
  for (ParamTensor* t : rel_tensors) t->zero_grad();
  for (ParamTensor* t : theta_tensors) t->zero_grad();
  return res;
}

}  // namespace icf
