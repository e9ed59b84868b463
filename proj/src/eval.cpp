#include "ka/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ka/error.hpp"
#include "ka/ops.hpp"

namespace ka {

double MetricsReport::primary_score() const {
  double s = 0.0;
  int n = 0;
  if (reid) {
    s += reid->map;
    ++n;
  }
  if (par) {
    s += par->f1;
    ++n;
  }
  require(n > 0, "primary_score: empty metrics report");
  return s / n;
}

namespace {

std::vector<double> l2_normalized(const ReidSet& s) {
  std::vector<double> out(s.features);
  for (std::size_t i = 0; i < s.size(); ++i) {
    double n = 0.0;
    for (std::size_t k = 0; k < s.dim; ++k) n += out[i * s.dim + k] * out[i * s.dim + k];
    n = std::sqrt(n);
    if (n > 0.0)
      for (std::size_t k = 0; k < s.dim; ++k) out[i * s.dim + k] /= n;
  }
  return out;
}

}  // namespace

ReidMetrics reid_map_cmc(const ReidSet& query, const ReidSet& gallery, std::span<const int> ranks) {
  require(query.size() >= 1 && gallery.size() >= 1, "reid_map_cmc: empty query or gallery");
  require(query.dim == gallery.dim && query.dim > 0, "reid_map_cmc: feature dimension mismatch");
  require(query.features.size() == query.size() * query.dim && query.cams.size() == query.size() &&
              gallery.features.size() == gallery.size() * gallery.dim && gallery.cams.size() == gallery.size(),
          "reid_map_cmc: inconsistent set sizes");
  for (int k : ranks) require(k >= 1, "reid_map_cmc: ranks must be >= 1");

  const auto qf = l2_normalized(query), gf = l2_normalized(gallery);
  const std::size_t dim = query.dim;
  struct Item {
    double score;
    bool match;
  };
  std::vector<Item> list;
  list.reserve(gallery.size());

  ReidMetrics m;
  for (int k : ranks) m.cmc[k] = 0.0;
  double ap_sum = 0.0;
  for (std::size_t q = 0; q < query.size(); ++q) {
    list.clear();
    std::size_t positives = 0;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      const bool same_id = gallery.ids[g] == query.ids[q];
      if (same_id && gallery.cams[g] == query.cams[q]) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += qf[q * dim + k] * gf[g * dim + k];
      list.push_back({dot, same_id});
      positives += same_id ? 1 : 0;
    }
    if (positives == 0) continue;
    std::sort(list.begin(), list.end(), [](const Item& a, const Item& b) {
      if (a.score != b.score) return a.score > b.score;
      return !a.match && b.match;
    });
    double hits = 0.0, ap = 0.0;
    std::size_t first = 0;
    for (std::size_t r = 0; r < list.size(); ++r) {
      if (!list[r].match) continue;
      hits += 1.0;
      ap += hits / static_cast<double>(r + 1);
      if (hits == 1.0) first = r + 1;
    }
    ap_sum += ap / static_cast<double>(positives);
    for (int k : ranks)
      if (first <= static_cast<std::size_t>(k)) m.cmc[k] += 1.0;
    ++m.num_queries;
  }
  require(m.num_queries > 0, "no evaluable queries");
  const double nq = static_cast<double>(m.num_queries);
  m.map = ap_sum / nq;
  for (auto& [k, v] : m.cmc) v /= nq;
  return m;
}

ParMetrics par_metrics(std::span<const double> pred, std::span<const double> gt, std::size_t num_attributes,
                       double threshold) {
  require(num_attributes >= 1, "par_metrics: num_attributes must be positive");
  require(pred.size() == gt.size() && gt.size() % num_attributes == 0 && !gt.empty(),
          "par_metrics: prediction / ground-truth size mismatch");
  require(threshold > 0.0 && threshold < 1.0, "par_metrics: threshold must lie in (0, 1)");
  for (double v : gt) require(v == 0.0 || v == 1.0, "par_metrics: ground truth must be binary");
  const std::size_t m = num_attributes, n = gt.size() / m;

  auto positive = [&](std::size_t idx) { return pred[idx] >= threshold; };

  ParMetrics out;
  double ma = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    double tp = 0, tn = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = i * m + a;
      if (gt[idx] == 1.0) {
        ++pos;
        tp += positive(idx) ? 1 : 0;
      } else {
        ++neg;
        tn += positive(idx) ? 0 : 1;
      }
    }
    // an undefined rate is dropped from this attribute's average
    double rates = 0.0, terms = 0.0;
    if (pos > 0) {
      rates += tp / pos;
      terms += 1.0;
    }
    if (neg > 0) {
      rates += tn / neg;
      terms += 1.0;
    }
    ma += rates / terms;
  }
  out.ma = ma / static_cast<double>(m);

  double p_sum = 0.0, r_sum = 0.0;
  std::size_t p_rows = 0, r_rows = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double inter = 0, npred = 0, ngt = 0;
    for (std::size_t a = 0; a < m; ++a) {
      const std::size_t idx = i * m + a;
      const bool p = positive(idx), g = gt[idx] == 1.0;
      npred += p;
      ngt += g;
      inter += p && g;
    }
    if (npred > 0) {
      p_sum += inter / npred;
      ++p_rows;
    }
    if (ngt > 0) {
      r_sum += inter / ngt;
      ++r_rows;
    }
  }
  out.precision = p_rows ? p_sum / static_cast<double>(p_rows) : 0.0;
  out.recall = r_rows ? r_sum / static_cast<double>(r_rows) : 0.0;
  out.f1 = out.precision + out.recall > 0.0 ? 2.0 * out.precision * out.recall / (out.precision + out.recall) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename Fn>
void for_each_chunk(const PartialDataset& ds, std::size_t batch_size, Fn&& fn) {
  require(batch_size >= 1, "evaluation batch size must be positive");
  for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
    const std::size_t end = std::min(ds.size(), begin + batch_size);
    std::vector<const Image*> imgs;
    for (std::size_t i = begin; i < end; ++i) imgs.push_back(&ds.samples[i].image);
    fn(images_to_tensor(imgs), begin, end);
  }
}

}  // namespace

ReidSet extract_reid(const Model& model, const PartialDataset& ds, std::size_t batch_size) {
  require(model.config().reid_enabled, "extract_reid: model has no reID head");
  require(!ds.empty(), "extract_reid: empty dataset");
  NoGradGuard no_grad;
  ReidSet out;
  out.dim = model.config().feature_dim;
  for_each_chunk(ds, batch_size, [&](const Tensor& x, std::size_t, std::size_t) {
    const TaskOutputs o = model.forward(x, false);
    out.features.insert(out.features.end(), o.reid_features.data().begin(), o.reid_features.data().end());
  });
  for (const auto& s : ds.samples) {
    require(s.person_id.has_value(), "extract_reid: sample without person_id");
    out.ids.push_back(*s.person_id);
    out.cams.push_back(s.camera_id.value_or(0));
  }
  return out;
}

std::vector<double> predict_attributes(const Model& model, const PartialDataset& ds, std::size_t batch_size) {
  require(model.config().par_enabled, "predict_attributes: model has no PAR head");
  require(!ds.empty(), "predict_attributes: empty dataset");
  NoGradGuard no_grad;
  std::vector<double> out;
  for_each_chunk(ds, batch_size, [&](const Tensor& x, std::size_t, std::size_t) {
    const Tensor p = ops::sigmoid(model.forward(x, false).par_logits);
    out.insert(out.end(), p.data().begin(), p.data().end());
  });
  return out;
}

MetricsReport evaluate_model(const Model& model, const PartialDataset* reid_query, const PartialDataset* reid_gallery,
                             const PartialDataset* par_set, const EvalOptions& options) {
  MetricsReport r;
  if (model.config().reid_enabled && reid_query) {
    const ReidSet q = extract_reid(model, *reid_query, options.batch_size);
    r.reid = reid_gallery ? reid_map_cmc(q, extract_reid(model, *reid_gallery, options.batch_size))
                          : reid_map_cmc(q, q);
  }
  if (model.config().par_enabled && par_set) {
    require(par_set->num_attributes == model.config().num_attributes, "evaluate_model: attribute count mismatch");
    std::vector<double> gt;
    for (const auto& s : par_set->samples) {
      require(s.attributes.has_value(), "evaluate_model: PAR sample without attributes");
      for (auto v : *s.attributes) gt.push_back(v);
    }
    r.par = par_metrics(predict_attributes(model, *par_set, options.batch_size), gt, par_set->num_attributes,
                        options.par_threshold);
  }
  return r;
}

}  // namespace ka
