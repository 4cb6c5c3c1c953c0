#include "einv/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "einv/error.hpp"

namespace einv {

json CorrespondenceResult::to_json() const {
  json p = json::array();
  for (const auto& m : pairs) p.push_back({{"a", m.a}, {"b", m.b}, {"score", m.score}});
  return {{"pairs", p},
          {"unmatched_a", unmatched_a},
          {"unmatched_b", unmatched_b},
          {"threshold", threshold},
          {"score_matrix", score_matrix.to_json()}};
}

Matrix covariance_matrix(const FrozenModel& a, const FrozenModel& b, const torch::Tensor& probe, ScoreKind kind) {
  const auto floor = 10 * std::max(a.num_classes(), b.num_classes());
  if (probe.size(0) < floor) {
    throw ValidationError("probe has " + std::to_string(probe.size(0)) + " inputs; covariance needs at least " +
                          std::to_string(floor) + " (10 x max class count)");
  }
  const auto pa = a.predict_probabilities(probe).to(torch::kFloat64);
  const auto pb = b.predict_probabilities(probe).to(torch::kFloat64);
  const auto ca = pa - pa.mean(0, true);
  const auto cb = pb - pb.mean(0, true);
  auto cov = ca.t().matmul(cb) / static_cast<double>(probe.size(0) - 1);
  if (kind == ScoreKind::correlation) {
    const auto sa = ca.pow(2).sum(0).div(probe.size(0) - 1).sqrt().clamp_min(1e-12);
    const auto sb = cb.pow(2).sum(0).div(probe.size(0) - 1).sqrt().clamp_min(1e-12);
    cov = cov / sa.unsqueeze(1) / sb.unsqueeze(0);
  }
  cov = cov.contiguous();
  Matrix m(static_cast<std::size_t>(cov.size(0)), static_cast<std::size_t>(cov.size(1)));
  std::copy(cov.data_ptr<double>(), cov.data_ptr<double>() + cov.numel(), m.data.begin());
  return m;
}

CorrespondenceResult match_classes(const Matrix& score, double threshold, MatchAlgorithm algorithm) {
  for (const double v : score.data) {
    if (!std::isfinite(v)) throw ValidationError("score matrix has non-finite entries");
  }
  std::vector<long> row_to_col(score.rows, -1);
  if (algorithm == MatchAlgorithm::optimal) {
    row_to_col = solve_assignment(score, true);
  } else {
    // Greedy: repeatedly take the globally largest remaining entry.
    std::vector<bool> row_used(score.rows), col_used(score.cols);
    for (std::size_t step = 0; step < std::min(score.rows, score.cols); ++step) {
      std::size_t br = 0, bc = 0;
      bool found = false;
      for (std::size_t r = 0; r < score.rows; ++r) {
        for (std::size_t c = 0; c < score.cols; ++c) {
          if (row_used[r] || col_used[c]) continue;
          if (!found || score(r, c) > score(br, bc)) {
            br = r;
            bc = c;
            found = true;
          }
        }
      }
      row_used[br] = col_used[bc] = true;
      row_to_col[br] = static_cast<long>(bc);
    }
  }

  CorrespondenceResult result;
  result.score_matrix = score;
  result.threshold = threshold;
  std::vector<bool> col_matched(score.cols, false);
  for (std::size_t r = 0; r < score.rows; ++r) {
    const long c = row_to_col[r];
    if (c >= 0 && score(r, static_cast<std::size_t>(c)) >= threshold) {
      result.pairs.push_back({static_cast<std::int64_t>(r), c, score(r, static_cast<std::size_t>(c))});
      col_matched[static_cast<std::size_t>(c)] = true;
    } else {
      result.unmatched_a.push_back(static_cast<std::int64_t>(r));
    }
  }
  for (std::size_t c = 0; c < score.cols; ++c) {
    if (!col_matched[c]) result.unmatched_b.push_back(static_cast<std::int64_t>(c));
  }
  return result;
}

double null_threshold(const Matrix& null_scores, double multiplier, double quantile) {
  if (null_scores.data.empty()) throw ValidationError("null score matrix is empty");
  std::vector<double> mags;
  for (const double v : null_scores.data) mags.push_back(std::abs(v));
  std::sort(mags.begin(), mags.end());
  // Linear interpolation between order statistics.
  const double pos = quantile * static_cast<double>(mags.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, mags.size() - 1);
  const double q = mags[lo] + (pos - static_cast<double>(lo)) * (mags[hi] - mags[lo]);
  return multiplier * q;
}

AlignResult align_ensemble(const std::vector<ModelPtr>& models, const FrozenModel& reference,
                           const torch::Tensor& probe, const AlignOptions& options) {
  if (models.empty()) throw ValidationError("align_ensemble needs at least one model");
  const auto nref = reference.num_classes();
  std::vector<std::vector<std::int64_t>> ref_to_member(models.size(), std::vector<std::int64_t>(nref, -1));
  std::vector<bool> shared(static_cast<std::size_t>(nref), true);
  AlignResult out;
  for (std::size_t i = 0; i < models.size(); ++i) {
    auto res = match_classes(covariance_matrix(reference, *models[i], probe, options.score), options.threshold,
                             options.algorithm);
    for (const auto& p : res.pairs) ref_to_member[i][p.a] = p.b;
    for (std::int64_t c = 0; c < nref; ++c) {
      if (ref_to_member[i][c] < 0) shared[c] = false;
    }
    out.per_member.push_back(std::move(res));
  }

  Ensemble& e = out.ensemble;
  for (std::int64_t c = 0; c < nref; ++c) {
    if (shared[c]) e.canonical_labels.push_back(c);
  }
  if (e.canonical_labels.empty()) {
    std::ostringstream os;
    os << "no class is shared by all members; matches per member:";
    for (std::size_t i = 0; i < models.size(); ++i) {
      os << ' ' << models[i]->id() << '=' << out.per_member[i].pairs.size();
    }
    throw ValidationError(os.str());
  }
  e.members = models;
  e.shared_class_count = static_cast<std::int64_t>(e.canonical_labels.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::vector<std::int64_t> map;
    for (const auto c : e.canonical_labels) map.push_back(ref_to_member[i][c]);
    e.class_maps.push_back(std::move(map));
  }
  e.validate();
  return out;
}

}  // namespace einv
