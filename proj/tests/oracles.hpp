#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. Nothing here calls the code under test to produce an
// expected value; each oracle is either a closed form, a brute-force search,
// or a finite-difference estimate.

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "einv/attack.hpp"
#include "einv/correspondence.hpp"
#include "einv/model.hpp"
#include "einv/rng.hpp"
#include "einv/selection.hpp"
#include "einv/synthesis.hpp"

namespace einv::oracle {

struct Outcome {
  bool ok = true;
  std::string detail;
  int cases = 0;
  void fail(const std::string& why) {
    if (ok) detail = why;
    ok = false;
  }
};

inline double softmax_ce(const std::vector<double>& logits, std::size_t target) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (const double v : logits) s += std::exp(v - mx);
  return std::log(s) + mx - logits[target];
}

inline torch::Tensor dtensor(const std::vector<std::vector<double>>& rows) {
  auto t = torch::empty({static_cast<long>(rows.size()), static_cast<long>(rows.front().size())}, torch::kFloat64);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) t[i][j] = rows[i][j];
  }
  return t;
}

// Hand-checkable loss values plus randomized comparisons against a scalar
// reimplementation, all to 1e-6.
inline Outcome loss_values() {
  Outcome out;
  auto near = [&](double got, double want, const std::string& what) {
    ++out.cases;
    if (!(std::abs(got - want) <= 1e-6)) {
      std::ostringstream os;
      os << what << ": got " << got << ", want " << want;
      out.fail(os.str());
    }
  };
  const double e = std::log1p(std::exp(-1.0));  // CE of [2,1] against class 0
  near(one_hot_loss({dtensor({{2, 1}})}).item<double>(), e, "one_hot [2,1]");
  near(one_hot_loss({dtensor({{2, 1}}), dtensor({{1, 2}})}).item<double>(), 2 * e, "one_hot two members");
  near(one_hot_loss({dtensor({{10, -10}})}).item<double>(), std::log1p(std::exp(-20.0)), "one_hot confident");
  near(one_hot_loss({torch::zeros({3, 10}, torch::kFloat64)}).item<double>(), std::log(10.0), "one_hot uniform");
  near(max_response_loss({dtensor({{3, 1}, {2, 5}})}).item<double>(), -4.0, "mr [[3,1],[2,5]]");
  near(max_response_loss({torch::zeros({4, 10}, torch::kFloat64)}).item<double>(), 0.0, "mr zeros");
  near(max_response_loss({dtensor({{3, 1}, {2, 5}}), dtensor({{3, 1}, {2, 5}})}).item<double>(), -8.0,
       "mr two members");
  const std::vector<std::vector<std::int64_t>> id10{{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}};
  near(class_loss({torch::zeros({5, 10}, torch::kFloat64)}, 3, id10).item<double>(), std::log(10.0),
       "class uniform");
  near(class_loss({dtensor({{-50, 50}})}, 1, {{0, 1}}).item<double>(), 0.0, "class confident");
  // Member whose outputs are permuted: canonical class 0 lives at output 2.
  near(class_loss({dtensor({{0.5, -1.0, 4.0}})}, 0, {{2, 0, 1}}).item<double>(), softmax_ce({0.5, -1.0, 4.0}, 2),
       "class mapped");

  std::mt19937_64 rng(20240611);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int trial = 0; trial < 25; ++trial) {
    const int m = 1 + trial % 3, n = 2 + trial % 5, c = 2 + trial % 7;
    std::vector<std::vector<std::vector<double>>> raw(m, std::vector<std::vector<double>>(n, std::vector<double>(c)));
    std::vector<torch::Tensor> logits;
    std::vector<std::vector<std::int64_t>> maps;
    for (int k = 0; k < m; ++k) {
      for (auto& row : raw[k])
        for (auto& v : row) v = nd(rng);
      logits.push_back(dtensor(raw[k]));
      std::vector<std::int64_t> p(c);
      std::iota(p.begin(), p.end(), 0);
      std::shuffle(p.begin(), p.end(), rng);
      maps.push_back(p);
    }
    std::vector<std::int64_t> targets(n);
    for (auto& t : targets) t = static_cast<std::int64_t>(rng() % c);
    double oh = 0, mr = 0, cl = 0;
    for (int k = 0; k < m; ++k) {
      double soh = 0, smr = 0, scl = 0;
      for (int i = 0; i < n; ++i) {
        const auto& row = raw[k][i];
        const auto arg = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        soh += softmax_ce(row, arg);
        smr += row[arg];
        scl += softmax_ce(row, static_cast<std::size_t>(maps[k][targets[i]]));
      }
      oh += soh / n;
      mr -= smr / n;
      cl += scl / n;
    }
    near(one_hot_loss(logits).item<double>(), oh, "one_hot random");
    near(max_response_loss(logits).item<double>(), mr, "mr random");
    near(class_loss(logits, torch::tensor(targets, torch::kInt64), maps).item<double>(), cl, "class random");
  }
  return out;
}

// Toy generator G(z) = tanh(z W) feeding a frozen two-member linear "MUA"
// ensemble, all in double. Autograd gradients of each loss with respect to W
// are compared with central differences.
inline Outcome loss_gradients() {
  Outcome out;
  torch::manual_seed(0);
  auto gen = make_generator(77);
  const long n = 6, zdim = 4, pix = 5, c = 3;
  const auto z = torch::randn({n, zdim}, gen, torch::kFloat64);
  const auto w0 = torch::randn({zdim, pix}, gen, torch::kFloat64);
  const std::vector<torch::Tensor> heads{torch::randn({pix, c}, gen, torch::kFloat64),
                                         torch::randn({pix, c}, gen, torch::kFloat64)};
  const std::vector<std::vector<std::int64_t>> maps{{0, 1, 2}, {2, 0, 1}};
  const auto targets = torch::tensor(std::vector<std::int64_t>{0, 1, 2, 0, 1, 2});

  enum Which { oh, mr, cls };
  auto loss_at = [&](const torch::Tensor& w, Which which) {
    const auto x = torch::tanh(z.matmul(w));
    std::vector<torch::Tensor> logits;
    for (const auto& h : heads) logits.push_back(x.matmul(h));
    if (which == oh) return one_hot_loss(logits);
    if (which == mr) return max_response_loss(logits);
    return class_loss(logits, targets, maps);
  };
  for (const auto which : {oh, mr, cls}) {
    const char* name = which == oh ? "one_hot" : which == mr ? "max_response" : "class";
    auto w = w0.clone().set_requires_grad(true);
    loss_at(w, which).backward();
    const auto analytic = w.grad().clone();
    auto numeric = torch::zeros_like(w0);
    const double h = 1e-6;
    for (long i = 0; i < w0.numel(); ++i) {
      auto wp = w0.clone(), wm = w0.clone();
      wp.view(-1)[i] += h;
      wm.view(-1)[i] -= h;
      numeric.view(-1)[i] = (loss_at(wp, which).item<double>() - loss_at(wm, which).item<double>()) / (2 * h);
    }
    const double err = (analytic - numeric).norm().item<double>();
    const double scale = std::max(numeric.norm().item<double>(), 1e-12);
    ++out.cases;
    if (!(err / scale <= 1e-3)) {
      std::ostringstream os;
      os << name << " gradient relative error " << err / scale;
      out.fail(os.str());
    }
  }
  return out;
}

// Greedy farthest point sampling recomputed from scratch: centroid start,
// running minimum distance, ties to the lowest index (ids sort like indices).
inline std::vector<std::size_t> brute_force_fps(const std::vector<std::vector<float>>& pts, std::size_t k) {
  const std::size_t n = pts.size(), d = pts.front().size();
  auto dist = [&](const std::vector<double>& a, const std::vector<float>& b) {
    double s = 0;
    for (std::size_t t = 0; t < d; ++t) s += (a[t] - b[t]) * (a[t] - b[t]);
    return std::sqrt(s);
  };
  auto as_double = [](const std::vector<float>& v) { return std::vector<double>(v.begin(), v.end()); };
  std::vector<double> centroid(d, 0.0);
  for (const auto& p : pts)
    for (std::size_t t = 0; t < d; ++t) centroid[t] += p[t];
  for (auto& v : centroid) v /= static_cast<double>(n);
  std::size_t first = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (dist(centroid, pts[i]) > dist(centroid, pts[first])) first = i;
  }
  std::vector<std::size_t> picked{first};
  std::vector<bool> used(n, false);
  used[first] = true;
  while (picked.size() < k) {
    std::size_t best = n;
    double best_d = -1;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      double m = std::numeric_limits<double>::infinity();
      for (const auto j : picked) m = std::min(m, dist(as_double(pts[j]), pts[i]));
      if (m > best_d) {
        best_d = m;
        best = i;
      }
    }
    used[best] = true;
    picked.push_back(best);
  }
  return picked;
}

inline std::string index_id(std::size_t i) {
  std::string s = std::to_string(i);
  return "m" + std::string(3 - s.size(), '0') + s;
}

inline Outcome fms_matches_brute_force(int sets = 100) {
  Outcome out;
  std::mt19937_64 rng(424242);
  for (int trial = 0; trial < sets; ++trial) {
    const std::size_t n = 2 + rng() % 19, d = 1 + rng() % 6, k = 1 + rng() % n;
    std::uniform_real_distribution<float> ud(-1.0f, 1.0f);
    std::vector<std::vector<float>> pts(n, std::vector<float>(d));
    std::vector<ModelEmbedding> emb;
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& v : pts[i]) v = ud(rng);
      emb.push_back({index_id(i), torch::tensor(pts[i], torch::kFloat32), "probe"});
    }
    const auto got = fms_select(emb, k);
    const auto want = brute_force_fps(pts, k);
    ++out.cases;
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < want.size(); ++i) same = got[i] == index_id(want[i]);
    if (!same) out.fail("set " + std::to_string(trial) + " (n=" + std::to_string(n) + ", k=" + std::to_string(k) +
                        ") differs from brute force");
  }
  return out;
}

// Best total over every injection of rows into columns (rows <= cols), by
// enumerating column permutations.
inline double best_assignment_total(const Matrix& s) {
  std::vector<std::size_t> cols(s.cols);
  std::iota(cols.begin(), cols.end(), 0);
  double best = -std::numeric_limits<double>::infinity();
  do {
    double total = 0;
    for (std::size_t r = 0; r < s.rows; ++r) total += s(r, cols[r]);
    best = std::max(best, total);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

inline Outcome matching_matches_exhaustive(int matrices = 50) {
  Outcome out;
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int trial = 0; trial < matrices; ++trial) {
    const std::size_t cols = 1 + rng() % 6, rows = 1 + rng() % cols;
    Matrix s(rows, cols);
    for (auto& v : s.data) v = nd(rng);
    const auto res = match_classes(s, -std::numeric_limits<double>::infinity());
    double total = 0;
    std::vector<bool> col_used(cols, false);
    bool valid = res.pairs.size() == rows;
    for (const auto& p : res.pairs) {
      if (p.b < 0 || p.b >= static_cast<long>(cols) || col_used[p.b]) valid = false;
      if (valid) {
        col_used[p.b] = true;
        total += s(p.a, p.b);
      }
    }
    ++out.cases;
    const double want = best_assignment_total(s);
    if (!valid || std::abs(total - want) > 1e-9) {
      std::ostringstream os;
      os << "matrix " << trial << " (" << rows << "x" << cols << "): total " << total << " vs exhaustive " << want;
      out.fail(os.str());
    }
  }
  return out;
}

// A random lenet and a copy with permuted outputs, compared on noise: the
// matching must pair each original class with the output it was moved to.
inline Outcome permuted_copy_recovery(int permutations = 20) {
  Outcome out;
  auto gen = make_generator(5150);
  auto net = make_classifier("lenet5", 10, gen);
  const FrozenModel base("lenet-random", net, {});
  const auto probe = torch::rand({1000, 1, 28, 28}, gen) * 2 - 1;
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < permutations; ++trial) {
    std::vector<std::int64_t> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto copy = base.with_permuted_outputs(perm, "copy");
    const auto res = match_classes(covariance_matrix(base, copy, probe), 0.0);
    bool exact = res.pairs.size() == 10;
    for (const auto& p : res.pairs) exact = exact && perm[p.b] == p.a;
    ++out.cases;
    if (!exact) out.fail("permutation " + std::to_string(trial) + " not recovered");
  }
  return out;
}

inline SampleBatch random_scored_batch(std::mt19937_64& rng, std::int64_t n, std::int64_t classes) {
  SampleBatch b;
  b.images = torch::arange(n, torch::kFloat32).reshape({n, 1, 1, 1}).expand({n, 1, 28, 28}).contiguous();
  std::vector<std::int64_t> labels(n);
  std::vector<float> agg(n);
  for (std::int64_t i = 0; i < n; ++i) {
    labels[i] = static_cast<std::int64_t>(rng() % classes);
    agg[i] = static_cast<float>(rng() % 7) * 0.5f;  // few distinct values: plenty of ties
  }
  b.labels = torch::tensor(labels, torch::kInt64);
  b.aggregate = torch::tensor(agg, torch::kFloat32);
  b.scores = b.aggregate->unsqueeze(1).clone();
  return b;
}

// Expected original indices kept by filter_top: per class (ascending), stable
// descending sort by score, first ceil(f n).
inline std::vector<std::int64_t> filter_oracle(const SampleBatch& b, double f) {
  const auto n = b.size();
  std::vector<std::int64_t> lab(n);
  std::vector<float> agg(n);
  for (std::int64_t i = 0; i < n; ++i) {
    lab[i] = b.labels[i].item<std::int64_t>();
    agg[i] = (*b.aggregate)[i].item<float>();
  }
  std::vector<std::int64_t> out;
  const auto top = *std::max_element(lab.begin(), lab.end());
  for (std::int64_t c = 0; c <= top; ++c) {
    std::vector<std::pair<float, std::int64_t>> members;
    for (std::int64_t i = 0; i < n; ++i) {
      if (lab[i] == c) members.emplace_back(-agg[i], i);
    }
    std::sort(members.begin(), members.end());  // (-score, index): descending score, then original order
    std::size_t keep = 0;
    while (static_cast<double>(keep) < f * static_cast<double>(members.size()) - 1e-9) ++keep;
    for (std::size_t i = 0; i < keep; ++i) out.push_back(members[i].second);
  }
  return out;
}

inline Outcome filter_matches_sort(int batches = 50) {
  Outcome out;
  std::mt19937_64 rng(31337);
  const double fractions[] = {0.1, 0.25, 0.5, 0.37, 1.0};
  for (int trial = 0; trial < batches; ++trial) {
    const auto b = random_scored_batch(rng, 5 + static_cast<std::int64_t>(rng() % 120), 1 + rng() % 10);
    const double f = fractions[trial % 5];
    const auto want = filter_oracle(b, f);
    const auto got = filter_top(b, f);
    bool same = got.size() == static_cast<std::int64_t>(want.size());
    for (std::size_t i = 0; same && i < want.size(); ++i) {
      same = got.images[static_cast<long>(i)][0][0][0].item<float>() == static_cast<float>(want[i]) &&
             got.labels[static_cast<long>(i)].item<std::int64_t>() == b.labels[want[i]].item<std::int64_t>();
    }
    ++out.cases;
    if (!same) out.fail("batch " + std::to_string(trial) + " differs from the sort oracle");
  }
  return out;
}

}  // namespace einv::oracle
