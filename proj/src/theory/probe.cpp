/* Copyright 2026 The BSC Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "bsc/theory/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "bsc/errors.hpp"
#include "bsc/numerics/ops.hpp"
#include "bsc/numerics/rng.hpp"

namespace bsc::theory {

namespace {

double row_dot(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  const std::size_t d = a.cols();
  double s = 0.0;
  for (std::size_t t = 0; t < d; ++t) s += a.at(i, t) * b.at(j, t);
  return s;
}

double row_norm(const Tensor& a, std::size_t i) {
  double s = 0.0;
  for (double v : a.row(i)) s += v * v;
  return std::sqrt(s);
}

double max_row_norm(const Tensor& a) {
  double best = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) best = std::max(best, row_norm(a, i));
  return best;
}

// Indices of the texts for draw r of train example i. A counter-based stream
// per (example, draw) makes batches nested across B.
std::vector<std::size_t> draw_texts(const GapProbeConfig& cfg, std::size_t example,
                                    std::size_t r) {
  Rng rng = Rng(cfg.seed, 0x67617000 + example).split(r);
  std::vector<std::size_t> idx(cfg.batch);
  for (auto& k : idx) k = rng.below(cfg.m);
  return idx;
}

struct TrainTerms {
  std::vector<double> per_example;  // mean over draws
  double max_abs = 0.0;             // over individual draws
  double max_v = 0.0;               // max ||v|| over individual draws
};

TrainTerms train_terms(const GapEmbeddings& e, const GapProbeConfig& cfg, bool want_v) {
  TrainTerms t;
  t.per_example.resize(cfg.m);
  const std::size_t d = e.train_x.cols();
  std::vector<double> scores(cfg.batch);
  std::vector<double> v(d);
  for (std::size_t i = 0; i < cfg.m; ++i) {
    const double pos = row_dot(e.train_x, i, e.train_y, i);
    double acc = 0.0;
    for (std::size_t r = 0; r < cfg.draws; ++r) {
      const std::vector<std::size_t> idx = draw_texts(cfg, i, r);
      for (std::size_t k = 0; k < cfg.batch; ++k) scores[k] = row_dot(e.train_x, i, e.train_y, idx[k]);
      const double l = normalized_loss_from_scores(pos, scores);
      acc += l;
      t.max_abs = std::max(t.max_abs, std::abs(l));
      if (want_v) {
        const double mx = *std::max_element(scores.begin(), scores.end());
        double z = 0.0;
        std::fill(v.begin(), v.end(), 0.0);
        for (std::size_t k = 0; k < cfg.batch; ++k) {
          const double w = std::exp(scores[k] - mx);
          z += w;
          for (std::size_t j = 0; j < d; ++j) v[j] += w * e.train_y.at(idx[k], j);
        }
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double c = e.train_x.at(i, j) - v[j] / z;
          ss += c * c;
        }
        t.max_v = std::max(t.max_v, std::sqrt(ss));
      }
    }
    t.per_example[i] = acc / static_cast<double>(cfg.draws);
  }
  return t;
}

// mean_j exp(<x_i, pool_j>) for every row i of xs.
std::vector<double> pool_means(const Tensor& xs, const Tensor& pool) {
  const Tensor s = matmul_nt(xs, pool);
  std::vector<double> out(xs.rows());
  for (std::size_t i = 0; i < xs.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < pool.rows(); ++j) acc += std::exp(s.at(i, j));
    out[i] = acc / static_cast<double>(pool.rows());
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_var(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

void require_plain(const EncoderNet& net, const char* which) {
  for (const encoders::Layer& l : net.layers()) {
    if (l.norm != encoders::Norm::kNone) {
      throw PreconditionError(std::string(which) +
                              " encoder has a normalization layer; the bound needs 1-Lipschitz "
                              "positive-homogeneous activations between plain linear maps");
    }
    if (l.activation != encoders::Activation::kRelu &&
        l.activation != encoders::Activation::kIdentity) {
      throw PreconditionError(std::string(which) + " encoder has a non-homogeneous activation");
    }
  }
}

}  // namespace

void GapProbeConfig::validate() const {
  if (m == 0 || batch == 0 || test_texts == 0 || draws == 0) {
    throw ConfigError("gap probe sizes must be positive");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
}

double normalized_loss_from_scores(double positive, std::span<const double> others) {
  if (others.empty()) throw DimensionError("normalized loss needs at least one text");
  double mx = positive;
  for (double s : others) mx = std::max(mx, s);
  double acc = 0.0;
  for (double s : others) acc += std::exp(s - mx);
  return -std::exp(positive - mx) / (acc / static_cast<double>(others.size()));
}

double normalized_train_loss(const EncoderNet& f, const EncoderNet& g, const Tensor& x,
                             const Tensor& y, const Tensor& train_texts) {
  const Tensor fx = encoders::forward(f, x, nullptr);
  const Tensor gy = encoders::forward(g, y, nullptr);
  const Tensor gt = encoders::forward(g, train_texts, nullptr);
  if (fx.rows() != 1 || gy.rows() != 1) throw DimensionError("expected a single (x, y) pair");
  std::vector<double> s(gt.rows());
  for (std::size_t k = 0; k < gt.rows(); ++k) s[k] = row_dot(fx, 0, gt, k);
  return normalized_loss_from_scores(row_dot(fx, 0, gy, 0), s);
}

double normalized_test_loss(const EncoderNet& f, const EncoderNet& g, const Tensor& x,
                            const Tensor& y, const Tensor& test_texts) {
  return normalized_train_loss(f, g, x, y, test_texts);
}

GapEmbeddings embed_gap_data(const EncoderNet& f, const EncoderNet& g, const GapData& data) {
  return GapEmbeddings{encoders::forward(f, data.train_images, nullptr),
                       encoders::forward(g, data.train_texts, nullptr),
                       encoders::forward(f, data.test_images, nullptr),
                       encoders::forward(g, data.test_texts, nullptr),
                       encoders::forward(g, data.text_pool, nullptr)};
}

GapEstimate empirical_gap(const GapEmbeddings& e, const GapProbeConfig& cfg) {
  cfg.validate();
  if (e.train_x.rows() < cfg.m || e.train_y.rows() < cfg.m) {
    throw DataError("gap probe needs " + std::to_string(cfg.m) + " training pairs, got " +
                    std::to_string(e.train_x.rows()));
  }
  if (e.pool_y.rows() < cfg.test_texts || e.test_x.rows() < 2) {
    throw DataError("gap probe needs " + std::to_string(cfg.test_texts) +
                    " pool texts and at least two held-out pairs");
  }
  const TrainTerms tr = train_terms(e, cfg, false);
  const Tensor pool = e.pool_y.slice_rows(0, cfg.test_texts);
  const std::vector<double> denom = pool_means(e.test_x, pool);
  std::vector<double> test(e.test_x.rows());
  for (std::size_t j = 0; j < test.size(); ++j) {
    test[j] = -std::exp(row_dot(e.test_x, j, e.test_y, j)) / denom[j];
  }
  GapEstimate g;
  g.train_mean = mean_of(tr.per_example);
  g.test_mean = mean_of(test);
  g.gap = g.test_mean - g.train_mean;
  g.standard_error =
      std::sqrt(sample_var(tr.per_example, g.train_mean) / static_cast<double>(cfg.m) +
                sample_var(test, g.test_mean) / static_cast<double>(test.size()));
  return g;
}

GapEstimate empirical_gap(const EncoderNet& f, const EncoderNet& g, const GapProbeConfig& cfg,
                          const GapData& data) {
  return empirical_gap(embed_gap_data(f, g, data), cfg);
}

NetNorms net_norms(const EncoderNet& net) {
  NetNorms n;
  const std::size_t depth = net.depth();
  for (std::size_t l = 0; l < depth; ++l) n.frobenius.push_back(frobenius_norm(net.layer(l).weight));
  for (std::size_t l = 0; l + 1 < depth; ++l) n.product_hidden *= n.frobenius[l];
  const Tensor& last = net.layer(depth - 1).weight;
  double ss = 0.0;
  for (std::size_t k = 0; k < last.rows(); ++k) {
    const double r = row_norm(last, k);
    n.last_rows.push_back(r);
    n.row_sum += r;
    ss += r * r;
  }
  n.row_rss = std::sqrt(ss);
  return n;
}

void assemble_bound(BoundReport& r, std::size_t text_depth, std::size_t image_depth) {
  const double sqrt2 = std::numbers::sqrt2;
  const double depth_g = std::sqrt(2.0 * std::log(2.0) * static_cast<double>(text_depth)) + 1.0;
  const double depth_f = std::sqrt(2.0 * std::log(2.0) * static_cast<double>(image_depth)) + 1.0;
  const double kappa = static_cast<double>(r.kappa);
  const double b = static_cast<double>(r.batch);
  const double m = static_cast<double>(r.m);
  r.q11 = r.c7 * depth_g * r.text_norms.product_hidden * r.text_norms.row_sum;
  r.q12 = r.c8 * depth_f * r.image_norms.product_hidden * r.image_norms.row_sum;
  r.q21 = 2.0 * sqrt2 * r.c8 * r.c9 + r.c1 * std::sqrt(kappa * std::log(std::sqrt(kappa * b) / r.delta));
  r.q22 = 2.0 * sqrt2 * r.c3 * r.c7 * depth_g * r.text_norms.product_hidden * r.text_norms.row_rss;
  r.q1 = 2.0 * sqrt2 * r.c4 * std::sqrt(r.c5 * r.c5 + r.c6 * r.c6) * (r.q11 + r.q12);
  r.q2 = r.c1 * r.expected_a * (r.q21 + r.q22);
  r.rhs = r.q1 / std::sqrt(m) + r.q2 / std::sqrt(2.0 * b) +
          r.c2 * std::sqrt(std::log(2.0 / r.delta) / (2.0 * m));
}

BoundReport theorem1_bound(const EncoderNet& f, const EncoderNet& g, const GapData& data,
                           const GapProbeConfig& cfg) {
  cfg.validate();
  require_plain(f, "image");
  require_plain(g, "text");
  BoundReport r;
  r.m = cfg.m;
  r.batch = cfg.batch;
  r.delta = cfg.delta;
  r.kappa = cfg.kappa ? cfg.kappa : f.input_dim();

  const GapEmbeddings e = embed_gap_data(f, g, data);
  r.gap = empirical_gap(e, cfg);
  const TrainTerms tr = train_terms(e, cfg, true);
  r.c2 = tr.max_abs;
  r.c4 = tr.max_abs;
  r.c6 = tr.max_v;
  r.c3 = std::max(max_row_norm(e.train_x), max_row_norm(e.test_x));
  r.c5 = max_row_norm(e.train_x);

  // c1 over every sampled image against every sampled text.
  for (const Tensor* xs : {&e.train_x, &e.test_x}) {
    for (const Tensor* ys : {&e.train_y, &e.test_y, &e.pool_y}) {
      const Tensor s = matmul_nt(*xs, *ys);
      for (double v : s.span()) r.c1 = std::max(r.c1, std::exp(v));
    }
  }
  r.c7 = std::max({max_row_norm(encoders::pool_inputs(g, data.train_texts)),
                   max_row_norm(encoders::pool_inputs(g, data.test_texts)),
                   max_row_norm(encoders::pool_inputs(g, data.text_pool))});
  r.c8 = std::max(max_row_norm(data.train_images), max_row_norm(data.test_images));

  const Tensor pool = e.pool_y.slice_rows(0, cfg.test_texts);
  // gamma(x) with one fixed text batch drawn from the training texts.
  const std::vector<std::size_t> fixed = draw_texts(cfg, cfg.m, 0);
  Tensor xs({cfg.m + e.test_x.rows(), e.train_x.cols()});
  xs.assign_rows(0, e.train_x.slice_rows(0, cfg.m));
  xs.assign_rows(cfg.m, e.test_x);
  Tensor raw({xs.rows(), data.train_images.cols()});
  raw.assign_rows(0, data.train_images.slice_rows(0, cfg.m));
  raw.assign_rows(cfg.m, data.test_images);
  const std::vector<double> expect = pool_means(xs, pool);
  std::vector<double> gamma(xs.rows());
  for (std::size_t i = 0; i < xs.rows(); ++i) {
    double acc = 0.0;
    for (std::size_t k : fixed) acc += std::exp(row_dot(xs, i, e.train_y, k));
    gamma[i] = expect[i] - acc / static_cast<double>(fixed.size());
  }
  Rng rng(cfg.seed, 0x6c6970);
  for (std::size_t p = 0; p < cfg.lipschitz_pairs; ++p) {
    const std::size_t a = rng.below(xs.rows());
    const std::size_t b = rng.below(xs.rows());
    double dist = 0.0;
    for (std::size_t t = 0; t < raw.cols(); ++t) {
      const double dd = raw.at(a, t) - raw.at(b, t);
      dist += dd * dd;
    }
    dist = std::sqrt(dist);
    if (dist > 0.0) r.c9 = std::max(r.c9, std::abs(gamma[a] - gamma[b]) / dist);
  }

  // E[A(x, y)] over the held-out pairs.
  const std::vector<double> test_expect = pool_means(e.test_x, pool);
  double a_sum = 0.0;
  for (std::size_t j = 0; j < e.test_x.rows(); ++j) {
    double acc = 0.0;
    for (std::size_t k : fixed) acc += std::exp(row_dot(e.test_x, j, e.train_y, k));
    const double train_mean = acc / static_cast<double>(fixed.size());
    a_sum += std::exp(row_dot(e.test_x, j, e.test_y, j)) / (train_mean * test_expect[j]);
  }
  r.expected_a = a_sum / static_cast<double>(e.test_x.rows());

  r.text_norms = net_norms(g);
  r.image_norms = net_norms(f);
  assemble_bound(r, g.depth(), f.depth());
  return r;
}

}  // namespace bsc::theory
