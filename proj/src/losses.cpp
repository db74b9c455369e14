#include "vsocc/losses.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace vsocc {

namespace {

void check_labels(const Tensor& probs, const OccupancyGrid& y, const char* op) {
  const Shape ps = probs.shape();
  if (ps.rank() != 5)
    throw ShapeError(std::string(op) + ": probs must be rank 5, got " + ps.str());
  if (y.b != ps[0] || y.x != ps[2] || y.y != ps[3] || y.z != ps[4])
    throw ShapeError(std::string(op) + ": label grid (" + std::to_string(y.b) + "," +
                     std::to_string(y.x) + "," + std::to_string(y.y) + "," +
                     std::to_string(y.z) + ") vs probs " + ps.str());
  const i64 K = ps[1];
  for (std::uint8_t l : y.labels)
    if (l >= K)
      throw ValidationError(std::string(op) + ": label " + std::to_string(l) +
                            " out of range for K=" + std::to_string(K));
}

// Jaccard-gradient vector for ground-truth indicators in descending-error
// order: jac_i = 1 - intersection_i/union_i from cumulative sums, then
// first differences.
std::vector<Real> jaccard_grad(const std::vector<Real>& fg_sorted) {
  const std::size_t n = fg_sorted.size();
  Real gts = 0.0;
  for (Real v : fg_sorted) gts += v;
  std::vector<Real> out(n);
  Real cum_fg = 0.0, cum_bg = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cum_fg += fg_sorted[i];
    cum_bg += 1.0 - fg_sorted[i];
    const Real jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
    out[i] = jac - prev;
    prev = jac;
  }
  return out;
}

Tensor scalar_const(Tape& t, Real v) { return t.input(Shape{1}, {v}); }

}  // namespace

Tensor focal_loss(const Tensor& probs, const OccupancyGrid& y, Real gamma,
                  const std::vector<Real>& alpha) {
  check_labels(probs, y, "focal_loss");
  const i64 K = probs.shape()[1];
  if (!alpha.empty() && static_cast<i64>(alpha.size()) != K)
    throw ShapeError("focal_loss: " + std::to_string(alpha.size()) +
                     " alpha weights for K=" + std::to_string(K));
  Tensor p_true = gather_class(probs, y);
  Tensor one_minus = affine(p_true, -1.0, 1.0);
  Tensor focus = pow_const(one_minus, gamma);
  Tensor logp = log_elem(p_true);
  Tensor prod = mul(focus, logp);
  const Real inv_n = 1.0 / static_cast<Real>(y.numel());
  std::vector<Real> w(y.labels.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = -inv_n * (alpha.empty() ? 1.0 : alpha[y.labels[i]]);
  return dot_const(prod, std::move(w));
}

Tensor lovasz_softmax_loss(const Tensor& probs, const OccupancyGrid& y) {
  check_labels(probs, y, "lovasz_softmax_loss");
  std::set<std::uint8_t> present(y.labels.begin(), y.labels.end());

  Tensor acc;
  for (std::uint8_t c : present) {
    Tensor pc = slice_channels(probs, c, c + 1);
    const std::size_t n = y.labels.size();
    std::vector<Real> fg(n), scale(n);
    for (std::size_t i = 0; i < n; ++i) {
      fg[i] = y.labels[i] == c ? 1.0 : 0.0;
      scale[i] = 1.0 - 2.0 * fg[i];
    }
    // errors m_i = 1-p on class voxels, p elsewhere
    Tensor errs = affine_vec(pc, std::move(scale), std::vector<Real>(fg));

    const auto& ev = errs.value();
    std::vector<i64> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&ev](i64 a, i64 b) {
      return ev[static_cast<std::size_t>(a)] > ev[static_cast<std::size_t>(b)];
    });
    std::vector<Real> fg_sorted(n);
    for (std::size_t i = 0; i < n; ++i)
      fg_sorted[i] = fg[static_cast<std::size_t>(order[i])];

    Tensor sorted = permute_flat(errs, std::move(order));
    Tensor loss_c = dot_const(sorted, jaccard_grad(fg_sorted));
    acc = acc.valid() ? add(acc, loss_c) : loss_c;
  }
  return affine(acc, 1.0 / static_cast<Real>(present.size()), 0.0);
}

namespace {

// Shared P/R/S construction: soft scores x (a scalar-per-voxel tensor) vs
// binary targets t. Terms with a zero target-side denominator are skipped,
// matching the affinity-loss convention: no targets -> no P or R, no
// negatives -> no S.
Tensor affinity_terms(const Tensor& x, const std::vector<Real>& t) {
  Tape& tape = *x.tape();
  const std::size_t n = t.size();
  Real sum_t = 0.0;
  for (Real v : t) sum_t += v;
  const Real sum_not_t = static_cast<Real>(n) - sum_t;

  Tensor acc;
  auto accumulate = [&acc](const Tensor& term) {
    acc = acc.valid() ? add(acc, term) : term;
  };
  if (sum_t > 0.0) {
    Tensor num = dot_const(x, std::vector<Real>(t));
    Tensor precision = div(num, sum_all(x));
    accumulate(log_elem(precision));
    accumulate(log_elem(affine(num, 1.0 / sum_t, 0.0)));  // recall
  }
  if (sum_not_t > 0.0) {
    std::vector<Real> not_t(n);
    for (std::size_t i = 0; i < n; ++i) not_t[i] = 1.0 - t[i];
    Tensor one_minus_x = affine(x, -1.0, 1.0);
    Tensor spec_num = dot_const(one_minus_x, std::move(not_t));
    accumulate(log_elem(affine(spec_num, 1.0 / sum_not_t, 0.0)));
  }
  if (!acc.valid()) return scalar_const(tape, 0.0);
  return affine(acc, -1.0, 0.0);
}

}  // namespace

Tensor scal_geo_loss(const Tensor& probs, const OccupancyGrid& y) {
  check_labels(probs, y, "scal_geo_loss");
  Tensor occupancy = affine(slice_channels(probs, 0, 1), -1.0, 1.0);  // 1 - p_empty
  std::vector<Real> t(y.labels.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = y.labels[i] != 0 ? 1.0 : 0.0;
  return affinity_terms(occupancy, t);
}

Tensor scal_sem_loss(const Tensor& probs, const OccupancyGrid& y) {
  check_labels(probs, y, "scal_sem_loss");
  const i64 K = probs.shape()[1];
  std::set<std::uint8_t> present(y.labels.begin(), y.labels.end());

  Tensor acc;
  int counted = 0;
  for (std::uint8_t c : present) {
    if (c == 0 || c >= K) continue;  // semantic classes only
    std::vector<Real> t(y.labels.size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = y.labels[i] == c ? 1.0 : 0.0;
    Tensor term = affinity_terms(slice_channels(probs, c, c + 1), t);
    acc = acc.valid() ? add(acc, term) : term;
    ++counted;
  }
  if (!acc.valid()) return scalar_const(*probs.tape(), 0.0);
  return affine(acc, 1.0 / static_cast<Real>(counted), 0.0);
}

LossBreakdown total_loss(const Tensor& probs, const OccupancyGrid& y,
                         const LossConfig& cfg) {
  LossBreakdown out;
  Tensor f = focal_loss(probs, y, cfg.gamma, cfg.alpha);
  Tensor l = lovasz_softmax_loss(probs, y);
  Tensor g = scal_geo_loss(probs, y);
  Tensor s = scal_sem_loss(probs, y);
  out.focal = f.value()[0];
  out.lovasz = l.value()[0];
  out.scal_geo = g.value()[0];
  out.scal_sem = s.value()[0];
  auto weighted = [](const Tensor& t, Real w) {
    return w == 1.0 ? t : affine(t, w, 0.0);
  };
  Tensor total = add(add(add(weighted(f, cfg.w_focal), weighted(l, cfg.w_lovasz)),
                         weighted(g, cfg.w_geo)),
                     weighted(s, cfg.w_sem));
  out.total = total.value()[0];
  out.total_tensor = total;
  return out;
}

std::vector<Real> inverse_frequency_alpha(const std::vector<const OccupancyGrid*>& grids,
                                          i64 K) {
  if (K <= 0) throw ShapeError("inverse_frequency_alpha: K must be positive");
  std::vector<i64> counts(static_cast<std::size_t>(K), 0);
  for (const OccupancyGrid* g : grids)
    for (std::uint8_t l : g->labels) {
      if (l >= K)
        throw ValidationError("inverse_frequency_alpha: label " + std::to_string(l) +
                              " out of range for K=" + std::to_string(K));
      ++counts[l];
    }
  std::vector<Real> alpha(static_cast<std::size_t>(K), 1.0);
  Real raw_sum = 0.0;
  int occur = 0;
  for (i64 c = 0; c < K; ++c)
    if (counts[static_cast<std::size_t>(c)] > 0) {
      raw_sum += 1.0 / static_cast<Real>(counts[static_cast<std::size_t>(c)]);
      ++occur;
    }
  if (occur == 0) return alpha;
  const Real mean_raw = raw_sum / static_cast<Real>(occur);
  for (i64 c = 0; c < K; ++c)
    if (counts[static_cast<std::size_t>(c)] > 0)
      alpha[static_cast<std::size_t>(c)] =
          1.0 / static_cast<Real>(counts[static_cast<std::size_t>(c)]) / mean_raw;
  return alpha;
}

}  // namespace vsocc
