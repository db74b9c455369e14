#include "vsocc/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace vsocc {

namespace {

void check_grid(const OccupancyGrid& g, i64 K, const char* what) {
  for (std::uint8_t l : g.labels)
    if (l >= K)
      throw ValidationError(std::string(what) + ": label " + std::to_string(l) +
                            " out of range for K=" + std::to_string(K));
}

std::string fmt_real(Real v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void MetricsReport::finalize() {
  const i64 K = num_classes;
  per_class_iou.assign(static_cast<std::size_t>(K > 0 ? K - 1 : 0),
                       std::numeric_limits<Real>::quiet_NaN());
  Real sum = 0.0;
  i64 defined = 0;
  for (i64 c = 1; c < K; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const i64 uni = tp[ci] + fp[ci] + fn[ci];
    if (uni > 0) {
      const Real iou = static_cast<Real>(tp[ci]) / static_cast<Real>(uni);
      per_class_iou[ci - 1] = iou;
      sum += iou;
      ++defined;
    }
  }
  miou = defined > 0 ? sum / static_cast<Real>(defined)
                     : std::numeric_limits<Real>::quiet_NaN();
  const i64 geo_union = geo_tp + geo_fp + geo_fn;
  geo_iou = geo_union > 0 ? static_cast<Real>(geo_tp) / static_cast<Real>(geo_union)
                          : 1.0;  // two empty grids agree exactly
}

MetricsReport iou_per_class(const OccupancyGrid& pred, const OccupancyGrid& gt, i64 K) {
  if (pred.b != gt.b || pred.x != gt.x || pred.y != gt.y || pred.z != gt.z)
    throw ShapeError("iou_per_class: pred (" + std::to_string(pred.b) + "," +
                     std::to_string(pred.x) + "," + std::to_string(pred.y) + "," +
                     std::to_string(pred.z) + ") vs gt (" + std::to_string(gt.b) + "," +
                     std::to_string(gt.x) + "," + std::to_string(gt.y) + "," +
                     std::to_string(gt.z) + ")");
  if (K <= 0) throw ShapeError("iou_per_class: K must be positive");
  check_grid(pred, K, "iou_per_class pred");
  check_grid(gt, K, "iou_per_class gt");

  MetricsReport r;
  r.num_classes = K;
  r.tp.assign(static_cast<std::size_t>(K), 0);
  r.fp.assign(static_cast<std::size_t>(K), 0);
  r.fn.assign(static_cast<std::size_t>(K), 0);
  r.support.assign(static_cast<std::size_t>(K), 0);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const std::uint8_t p = pred.labels[i], g = gt.labels[i];
    ++r.support[g];
    if (p == g) {
      ++r.tp[p];
    } else {
      ++r.fp[p];
      ++r.fn[g];
    }
    const bool po = p != 0, go = g != 0;
    if (po && go) ++r.geo_tp;
    else if (po) ++r.geo_fp;
    else if (go) ++r.geo_fn;
  }
  r.finalize();
  return r;
}

MetricsReport merge(const MetricsReport& a, const MetricsReport& b) {
  if (a.num_classes != b.num_classes)
    throw ShapeError("metrics merge: K=" + std::to_string(a.num_classes) + " vs K=" +
                     std::to_string(b.num_classes));
  MetricsReport r = a;
  for (std::size_t c = 0; c < r.tp.size(); ++c) {
    r.tp[c] += b.tp[c];
    r.fp[c] += b.fp[c];
    r.fn[c] += b.fn[c];
    r.support[c] += b.support[c];
  }
  r.geo_tp += b.geo_tp;
  r.geo_fp += b.geo_fp;
  r.geo_fn += b.geo_fn;
  r.finalize();
  return r;
}

std::string metrics_csv(const MetricsReport& r, const std::vector<std::string>& names) {
  std::string out = "name,tp,fp,fn,iou\n";
  for (i64 c = 1; c < r.num_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    std::string name = ci < names.size() && !names[ci].empty()
                           ? names[ci]
                           : "class_" + std::to_string(c);
    out += name + "," + std::to_string(r.tp[ci]) + "," + std::to_string(r.fp[ci]) +
           "," + std::to_string(r.fn[ci]) + "," + fmt_real(r.per_class_iou[ci - 1]) +
           "\n";
  }
  return out;
}

std::string metrics_json(const MetricsReport& r) {
  auto field = [](Real v) { return std::isnan(v) ? std::string("null") : fmt_real(v); };
  return "{\"miou\": " + field(r.miou) + ", \"geo_iou\": " + field(r.geo_iou) + "}\n";
}

HeightHistogram height_histogram(const OccupancyGrid& gt, i64 K, i64 bin_width) {
  if (K <= 0) throw ShapeError("height_histogram: K must be positive");
  if (bin_width <= 0) throw ShapeError("height_histogram: bin width must be positive");
  check_grid(gt, K, "height_histogram");
  HeightHistogram h;
  h.num_classes = K;
  h.bin_width = bin_width;
  h.bins = (gt.z + bin_width - 1) / bin_width;
  h.counts.assign(static_cast<std::size_t>(K),
                  std::vector<i64>(static_cast<std::size_t>(h.bins), 0));
  h.dist.assign(static_cast<std::size_t>(K),
                std::vector<Real>(static_cast<std::size_t>(h.bins), 0.0));
  h.defined.assign(static_cast<std::size_t>(K), false);
  accumulate(h, gt);
  return h;
}

void accumulate(HeightHistogram& h, const OccupancyGrid& gt) {
  check_grid(gt, h.num_classes, "height_histogram");
  if ((gt.z + h.bin_width - 1) / h.bin_width != h.bins)
    throw ShapeError("height_histogram: grid z=" + std::to_string(gt.z) +
                     " does not fit " + std::to_string(h.bins) + " bins");
  for (i64 b = 0; b < gt.b; ++b)
    for (i64 i = 0; i < gt.x; ++i)
      for (i64 j = 0; j < gt.y; ++j)
        for (i64 z = 0; z < gt.z; ++z)
          ++h.counts[gt.at(b, i, j, z)][static_cast<std::size_t>(z / h.bin_width)];
  for (i64 c = 0; c < h.num_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    i64 total = 0;
    for (i64 v : h.counts[ci]) total += v;
    h.defined[ci] = total > 0;
    for (std::size_t bin = 0; bin < h.counts[ci].size(); ++bin)
      h.dist[ci][bin] = total > 0 ? static_cast<Real>(h.counts[ci][bin]) /
                                        static_cast<Real>(total)
                                  : 0.0;
  }
}

}  // namespace vsocc
