#pragma once

// Brute-force reference implementations used by the unit and acceptance
// suites. Everything here works on plain row-major doubles and long double
// accumulators and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "ka/eval.hpp"
#include "ka/model.hpp"
#include "ka/rng.hpp"
#include "ka/tensor.hpp"

namespace oracle {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }

  Mat slice(std::size_t begin, std::size_t end) const {
    Mat m{end - begin, cols, {}};
    m.v.assign(v.begin() + static_cast<std::ptrdiff_t>(begin * cols), v.begin() + static_cast<std::ptrdiff_t>(end * cols));
    return m;
  }
};

inline Mat of(const ka::Tensor& t) {
  Mat m;
  m.rows = t.dim(0);
  m.cols = t.numel() / m.rows;
  m.v.assign(t.data().begin(), t.data().end());
  return m;
}

inline long double sigm(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

inline double ce(const Mat& logits, const std::vector<int>& ids) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    long double z = 0.0L;
    for (std::size_t k = 0; k < logits.cols; ++k) z += std::exp(static_cast<long double>(logits(i, k)));
    acc += -std::log(std::exp(static_cast<long double>(logits(i, static_cast<std::size_t>(ids[i])))) / z);
  }
  return static_cast<double>(acc / logits.rows);
}

inline double bce(const Mat& logits, const std::vector<double>& targets) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < logits.v.size(); ++i) {
    const long double p = sigm(logits.v[i]);
    acc += -(targets[i] * std::log(p) + (1.0L - targets[i]) * std::log(1.0L - p));
  }
  return static_cast<double>(acc / logits.v.size());
}

inline double dice(const Mat& pred, const Mat& pseudo, double eps) {
  long double pq = 0.0L, pp = 0.0L, qq = 0.0L;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const long double p = sigm(pred.v[i]), q = sigm(pseudo.v[i]);
    pq += p * q;
    pp += p * p;
    qq += q * q;
  }
  return static_cast<double>(1.0L - (2.0L * pq + eps) / (pp + qq + eps));
}

inline double soft_bce(const Mat& pred, const Mat& pseudo) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const long double p = sigm(pred.v[i]), t = sigm(pseudo.v[i]);
    acc += -(t * std::log(p) + (1.0L - t) * std::log(1.0L - p));
  }
  return static_cast<double>(acc / pred.v.size());
}

inline long double dist(const Mat& a, std::size_t i, const Mat& b, std::size_t j) {
  long double s = 0.0L;
  for (std::size_t k = 0; k < a.cols; ++k) {
    const long double d = static_cast<long double>(a(i, k)) - b(j, k);
    s += d * d;
  }
  return std::sqrt(s);
}

inline double triplet(const Mat& anchor, const Mat& ref, double margin) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < anchor.rows; ++i) {
    long double neg = std::numeric_limits<long double>::infinity();
    for (std::size_t j = 0; j < ref.rows; ++j)
      if (j != i) neg = std::min(neg, dist(anchor, i, ref, j));
    acc += std::max(0.0L, margin + dist(anchor, i, ref, i) - neg);
  }
  return static_cast<double>(acc / anchor.rows);
}

// Distance to the nearest non-smooth point of the triplet loss: hinge
// arguments near zero, ties between the two closest negatives, zero distances.
inline double triplet_smoothness(const Mat& anchor, const Mat& ref, double margin) {
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < anchor.rows; ++i) {
    std::vector<long double> negs;
    for (std::size_t j = 0; j < ref.rows; ++j)
      if (j != i) negs.push_back(dist(anchor, i, ref, j));
    std::sort(negs.begin(), negs.end());
    const long double pos = dist(anchor, i, ref, i);
    worst = std::min<double>(worst, static_cast<double>(std::fabs(margin + pos - negs[0])));
    if (negs.size() > 1) worst = std::min<double>(worst, static_cast<double>(negs[1] - negs[0]));
    worst = std::min<double>(worst, static_cast<double>(std::min(pos, negs[0])));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Loss oracles. Defaults only: both directions, triplet on, both sides
// supervised. Rows [0, n_a) are A, [n_a, n_a + n_b) are B.
// ---------------------------------------------------------------------------

struct Side {
  Mat reid_feat, reid_logits, dataset_logit, par_feat, par_logits;
};

inline Side side_of(const ka::TaskOutputs& o) {
  Side s;
  s.reid_feat = of(o.reid_features);
  s.reid_logits = of(o.reid_logits);
  s.dataset_logit = of(o.dataset_logit);
  s.par_feat = of(o.par_features);
  s.par_logits = of(o.par_logits);
  return s;
}

struct Dual {
  Side l, r;
  std::size_t n_a = 0, n_b = 0;
  std::vector<int> ids;
  std::vector<double> attrs;
};

inline Dual dual_of(const ka::DualOutputs& d) {
  return Dual{side_of(d.left), side_of(*d.right), d.labels.n_a, d.labels.n_b, d.labels.person_ids,
              d.labels.attributes};
}

// Supervised objective: CE on A rows, BCE on B rows, both sides.
inline double supervised(const Dual& d) {
  const std::size_t a0 = 0, a1 = d.n_a, b0 = d.n_a, b1 = d.n_a + d.n_b;
  return ce(d.l.reid_logits.slice(a0, a1), d.ids) + ce(d.r.reid_logits.slice(a0, a1), d.ids) +
         bce(d.l.par_logits.slice(b0, b1), d.attrs) + bce(d.r.par_logits.slice(b0, b1), d.attrs);
}

inline double semi_reid(const Side& pred, const Side& pseudo, std::size_t b, std::size_t e, double m) {
  return triplet(pred.reid_feat.slice(b, e), pseudo.reid_feat.slice(b, e), m) +
         soft_bce(pred.dataset_logit.slice(b, e), pseudo.dataset_logit.slice(b, e));
}

inline double semi_par(const Side& pred, const Side& pseudo, std::size_t b, std::size_t e, double m, double eps) {
  return dice(pred.par_logits.slice(b, e), pseudo.par_logits.slice(b, e), eps) +
         triplet(pred.par_feat.slice(b, e), pseudo.par_feat.slice(b, e), m);
}

// Unlabeled consistency: PAR consistency on A rows, reID consistency on B rows.
inline double unlabeled(const Dual& d, double m = 0.3, double eps = 1.0) {
  const std::size_t a1 = d.n_a, b1 = d.n_a + d.n_b;
  return semi_par(d.l, d.r, 0, a1, m, eps) + semi_par(d.r, d.l, 0, a1, m, eps) + semi_reid(d.l, d.r, a1, b1, m) +
         semi_reid(d.r, d.l, a1, b1, m);
}

// Labeled consistency: reID consistency on A rows, PAR consistency on B rows.
inline double labeled(const Dual& d, double m = 0.3, double eps = 1.0) {
  const std::size_t a1 = d.n_a, b1 = d.n_a + d.n_b;
  return semi_reid(d.l, d.r, 0, a1, m) + semi_reid(d.r, d.l, 0, a1, m) + semi_par(d.l, d.r, a1, b1, m, eps) +
         semi_par(d.r, d.l, a1, b1, m, eps);
}

inline double dual_smoothness(const Dual& d, double m = 0.3) {
  double worst = std::numeric_limits<double>::infinity();
  const std::size_t ranges[2][2] = {{0, d.n_a}, {d.n_a, d.n_a + d.n_b}};
  for (const auto& rg : ranges)
    for (const auto* pair : {&d.l, &d.r}) {
      const Side& p = *pair;
      const Side& q = pair == &d.l ? d.r : d.l;
      worst = std::min(worst, triplet_smoothness(p.reid_feat.slice(rg[0], rg[1]), q.reid_feat.slice(rg[0], rg[1]), m));
      worst = std::min(worst, triplet_smoothness(p.par_feat.slice(rg[0], rg[1]), q.par_feat.slice(rg[0], rg[1]), m));
    }
  return worst;
}

// ---------------------------------------------------------------------------
// Metric oracles
// ---------------------------------------------------------------------------

struct ReidOracle {
  double map = 0.0;
  std::map<int, double> cmc;
  std::size_t queries = 0;
  bool any = false;
};

// Cosine by definition: dot product of the two L2-normalized rows (double).
inline long double cosine(const std::vector<double>& f, std::size_t i, const std::vector<double>& g, std::size_t j,
                          std::size_t dim) {
  auto unit = [dim](const std::vector<double>& x, std::size_t r) {
    double n = 0.0;
    for (std::size_t k = 0; k < dim; ++k) n += x[r * dim + k] * x[r * dim + k];
    n = std::sqrt(n);
    std::vector<double> u(dim);
    for (std::size_t k = 0; k < dim; ++k) u[k] = n > 0.0 ? x[r * dim + k] / n : x[r * dim + k];
    return u;
  };
  const auto a = unit(f, i), b = unit(g, j);
  double dot = 0.0;
  for (std::size_t k = 0; k < dim; ++k) dot += a[k] * b[k];
  return dot;
}

// Rank of each valid gallery item is counted directly: items strictly more
// similar, plus equally similar non-matches (ties rank non-matches first).
// `score` maps each (query, gallery) pair to a similarity; by default cosine.
inline ReidOracle reid(const ka::ReidSet& q, const ka::ReidSet& g, const std::vector<int>& ranks,
                       const std::function<long double(std::size_t, std::size_t)>& score = {}) {
  ReidOracle out;
  for (int k : ranks) out.cmc[k] = 0.0;
  // Reductions are plain double sums in the defining order, so results compare exactly.
  double ap_sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<std::size_t> valid;
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!(g.ids[j] == q.ids[i] && g.cams[j] == q.cams[i])) valid.push_back(j);
    std::vector<long double> sim(g.size());
    for (std::size_t j : valid) sim[j] = score ? score(i, j) : cosine(q.features, i, g.features, j, q.dim);
    auto rank_of = [&](std::size_t j) {
      std::size_t r = 1;
      for (std::size_t o : valid) {
        if (o == j) continue;
        const bool o_match = g.ids[o] == q.ids[i];
        const bool j_match = g.ids[j] == q.ids[i];
        if (sim[o] > sim[j] || (sim[o] == sim[j] && !o_match && j_match)) ++r;
        else if (sim[o] == sim[j] && o_match == j_match && o < j) ++r;
      }
      return r;
    };
    std::vector<std::size_t> match_ranks;
    for (std::size_t j : valid)
      if (g.ids[j] == q.ids[i]) match_ranks.push_back(rank_of(j));
    if (match_ranks.empty()) continue;
    std::sort(match_ranks.begin(), match_ranks.end());
    double ap = 0.0;
    for (std::size_t h = 0; h < match_ranks.size(); ++h)
      ap += static_cast<double>(h + 1) / static_cast<double>(match_ranks[h]);
    ap_sum += ap / static_cast<double>(match_ranks.size());
    for (int k : ranks)
      if (match_ranks.front() <= static_cast<std::size_t>(k)) out.cmc[k] += 1.0;
    ++out.queries;
  }
  out.any = out.queries > 0;
  if (out.any) {
    out.map = ap_sum / static_cast<double>(out.queries);
    for (auto& [k, v] : out.cmc) v /= static_cast<double>(out.queries);
  }
  return out;
}

struct ParOracle {
  double ma = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline ParOracle par(const std::vector<double>& prob, const std::vector<double>& gt, std::size_t m, double thr) {
  const std::size_t n = gt.size() / m;
  ParOracle out;
  double ma = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = prob[i * m + a] >= thr, t = gt[i * m + a] == 1.0;
      tp += p && t;
      tn += !p && !t;
      fp += p && !t;
      fn += !p && t;
    }
    const std::size_t pos = tp + fn, neg = tn + fp;
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    const double tnr = static_cast<double>(tn) / static_cast<double>(neg);
    if (pos > 0 && neg > 0)
      ma += (tpr + tnr) / 2.0;
    else
      ma += pos > 0 ? tpr : tnr;
  }
  out.ma = ma / static_cast<double>(m);
  double psum = 0.0, rsum = 0.0;
  std::size_t pcount = 0, rcount = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t inter = 0, npred = 0, ngt = 0;
    for (std::size_t a = 0; a < m; ++a) {
      const bool p = prob[i * m + a] >= thr, t = gt[i * m + a] == 1.0;
      inter += p && t;
      npred += p;
      ngt += t;
    }
    if (npred > 0) psum += static_cast<double>(inter) / static_cast<double>(npred), ++pcount;
    if (ngt > 0) rsum += static_cast<double>(inter) / static_cast<double>(ngt), ++rcount;
  }
  out.precision = pcount ? psum / static_cast<double>(pcount) : 0.0;
  out.recall = rcount ? rsum / static_cast<double>(rcount) : 0.0;
  out.f1 = out.precision + out.recall > 0 ? 2.0 * out.precision * out.recall / (out.precision + out.recall) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Random instances
// ---------------------------------------------------------------------------

inline ka::Tensor random_tensor(ka::Rng& rng, ka::Shape shape, double scale = 1.0, bool grad = true) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  ka::Tensor t = ka::Tensor::from(std::move(shape), std::move(v));
  t.set_requires_grad(grad);
  return t;
}

struct DualShape {
  std::size_t n_a = 3, n_b = 3, ids = 4, attrs = 3, dim = 4;
};

inline DualShape random_shape(ka::Rng& rng) {
  DualShape s;
  s.n_a = 2 + rng.index(5);
  s.n_b = 2 + rng.index(5);
  s.ids = 2 + rng.index(5);
  s.attrs = 1 + rng.index(5);
  s.dim = 2 + rng.index(5);
  return s;
}

inline ka::TaskOutputs random_outputs(ka::Rng& rng, const DualShape& s, bool grad = true) {
  const std::size_t n = s.n_a + s.n_b;
  ka::TaskOutputs o;
  o.reid_features = random_tensor(rng, {n, s.dim}, 1.0, grad);
  o.reid_logits = random_tensor(rng, {n, s.ids}, 1.5, grad);
  o.dataset_logit = random_tensor(rng, {n, 1}, 1.5, grad);
  o.par_features = random_tensor(rng, {n, s.dim}, 1.0, grad);
  o.par_logits = random_tensor(rng, {n, s.attrs}, 1.5, grad);
  return o;
}

inline ka::BatchLabels random_labels(ka::Rng& rng, const DualShape& s) {
  ka::BatchLabels l;
  l.n_a = s.n_a;
  l.n_b = s.n_b;
  l.num_attributes = s.attrs;
  for (std::size_t i = 0; i < s.n_a; ++i) l.person_ids.push_back(static_cast<int>(rng.index(s.ids)));
  for (std::size_t i = 0; i < s.n_b * s.attrs; ++i) l.attributes.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
  return l;
}

inline ka::DualOutputs random_dual(ka::Rng& rng, const DualShape& s, bool grad = true) {
  ka::DualOutputs d;
  d.left = random_outputs(rng, s, grad);
  d.right = random_outputs(rng, s, grad);
  d.labels = random_labels(rng, s);
  return d;
}

// ---------------------------------------------------------------------------
// Random metric instances
// ---------------------------------------------------------------------------

// Random instance; some gallery rows copy a query row exactly to create ties.
inline std::pair<ka::ReidSet, ka::ReidSet> random_reid(ka::Rng& rng) {
  const std::size_t q = 1 + rng.index(8), g = 1 + rng.index(8), dim = 1 + rng.index(4);
  const std::size_t ids = 1 + rng.index(4), cams = 1 + rng.index(3);
  ka::ReidSet qs{{}, dim, {}, {}}, gs{{}, dim, {}, {}};
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t k = 0; k < dim; ++k) qs.features.push_back(rng.normal());
    qs.ids.push_back(static_cast<int>(rng.index(ids)));
    qs.cams.push_back(static_cast<int>(rng.index(cams)));
  }
  for (std::size_t j = 0; j < g; ++j) {
    if (rng.bernoulli(0.2) && j > 0) {
      const std::size_t src = rng.index(j);
      for (std::size_t k = 0; k < dim; ++k) gs.features.push_back(gs.features[src * dim + k]);
    } else {
      for (std::size_t k = 0; k < dim; ++k) gs.features.push_back(rng.normal());
    }
    gs.ids.push_back(static_cast<int>(rng.index(ids)));
    gs.cams.push_back(static_cast<int>(rng.index(cams)));
  }
  return {qs, gs};
}

struct ParInstance {
  std::vector<double> pred, gt;
  std::size_t m = 0;
};

// N, M in [1, 6]; about one prediction in ten sits exactly on the threshold.
inline ParInstance random_par(ka::Rng& rng) {
  ParInstance p;
  const std::size_t n = 1 + rng.index(6);
  p.m = 1 + rng.index(6);
  for (std::size_t i = 0; i < n * p.m; ++i) {
    p.gt.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
    p.pred.push_back(rng.bernoulli(0.1) ? 0.5 : rng.uniform());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// Norm-wise relative error between central differences (step h) of f and the
// analytic gradient stored on each input. Inputs are perturbed in place and restored.
inline double fd_relative_error(const std::function<double()>& f, const std::vector<ka::Tensor>& inputs, double h) {
  long double diff = 0.0L, ref = 0.0L, ana = 0.0L;
  for (const auto& t : inputs) {
    auto x = t.mutable_data();
    const auto g = t.grad();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      const double up = f();
      x[i] = saved - h;
      const double down = f();
      x[i] = saved;
      const long double fd = (static_cast<long double>(up) - down) / (2.0L * h);
      const long double a = g.empty() ? 0.0L : g[i];
      diff += (fd - a) * (fd - a);
      ref += fd * fd;
      ana += a * a;
    }
  }
  const long double scale = std::max({std::sqrt(ref), std::sqrt(ana), 1e-12L});
  return static_cast<double>(std::sqrt(diff) / scale);
}

}  // namespace oracle
