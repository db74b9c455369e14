#include "vsocc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <thread>

namespace vsocc {

HeightPartition PartitionSpec::build(i64 Z, double z_min_m, double z_max_m) const {
  switch (kind) {
    case Kind::Default:
      if (z_min_m != -5.0 || z_max_m != 3.0) {
        throw ConfigError("default height partition is defined on [-5,3] m, scene z range is [" +
                          std::to_string(z_min_m) + "," + std::to_string(z_max_m) + "] m");
      }
      return default_partition(Z);
    case Kind::Uniform: {
      if (uniform_n <= 0) throw ConfigError("uniform partition needs n >= 1");
      std::vector<std::pair<double, double>> iv;
      const double span = z_max_m - z_min_m;
      for (i64 i = 0; i < uniform_n; ++i) {
        iv.emplace_back(z_min_m + span * static_cast<double>(i) / static_cast<double>(uniform_n),
                        z_min_m + span * static_cast<double>(i + 1) / static_cast<double>(uniform_n));
      }
      return HeightPartition::from_intervals(z_min_m, z_max_m, Z, iv);
    }
    case Kind::Explicit:
      return HeightPartition::from_intervals(z_min_m, z_max_m, Z, intervals);
  }
  throw StateError("unreachable partition kind");
}

std::string PartitionSpec::str() const {
  switch (kind) {
    case Kind::Default:
      return "default6";
    case Kind::Uniform:
      return "uniform" + std::to_string(uniform_n);
    case Kind::Explicit:
      return "explicit" + std::to_string(intervals.size());
  }
  return "?";
}

Model Model::build(const ModelConfig& cfg, const SceneConfig& scene) {
  if (cfg.channels <= 0) throw ConfigError("model channels must be positive");
  if (cfg.classes < 2 || cfg.classes > 256) {
    throw ConfigError("model classes must be in [2,256], got " + std::to_string(cfg.classes));
  }
  if (cfg.encoder_depth < 1) throw ConfigError("encoder_depth must be >= 1");
  if (cfg.reduction <= 0 || cfg.channels % cfg.reduction != 0) {
    throw ConfigError("channels " + std::to_string(cfg.channels) +
                      " not divisible by reduction " + std::to_string(cfg.reduction));
  }
  validate(scene);

  Model m(cfg.seed);
  m.cfg = cfg;
  m.in_channels = scene.channels;
  m.partition = cfg.partition.build(scene.z, scene.z_min_m, scene.z_max_m);

  auto conv = [&m](const std::string& name, i64 co, i64 ci, i64 k) {
    ConvLayer l;
    const i64 fan_in = ci * k * k * k;
    l.w = &m.params.add_uniform(name + ".w", Shape{{co, ci, k, k, k}}, fan_in);
    l.b = &m.params.add_uniform(name + ".b", Shape{{co}}, fan_in);
    return l;
  };
  for (i64 d = 0; d < cfg.encoder_depth; ++d) {
    const i64 ci = d == 0 ? m.in_channels : cfg.channels;
    const std::string tag = std::to_string(d);
    m.enc_cam.push_back(conv("enc.cam." + tag, cfg.channels, ci, 3));
    m.enc_lidar.push_back(conv("enc.lidar." + tag, cfg.channels, ci, 3));
  }
  // All VSF parameters are registered for every mode so that checkpoints of
  // ablation variants line up name-for-name (unused ones keep zero gradients
  // and stay at their seeded init).
  m.vsf_cam = make_vsf_params(m.params, "vsf.cam", cfg.channels, cfg.reduction,
                              m.partition.slices());
  m.vsf_lidar = make_vsf_params(m.params, "vsf.lidar", cfg.channels, cfg.reduction,
                                m.partition.slices());
  m.head_mix = conv("head.mix", cfg.channels, 2 * cfg.channels, 3);
  m.head_cls = conv("head.cls", cfg.classes, cfg.channels, 1);
  return m;
}

Tensor Model::forward(Tape& tape, const DenseTensor& feat_cam, const DenseTensor& feat_lidar) {
  for (const DenseTensor* f : {&feat_cam, &feat_lidar}) {
    if (f->shape.rank() != 5) {
      throw ShapeError("model input must be rank-5 (B,C,X,Y,Z), got " + f->shape.str());
    }
    if (f->shape[1] != in_channels) {
      throw ShapeError("model expects " + std::to_string(in_channels) +
                       " input channels, got " + f->shape.str());
    }
  }
  auto branch = [&](const DenseTensor& f, std::vector<ConvLayer>& enc, VSFParams& vp) {
    Tensor t = tape.input(f);
    for (ConvLayer& l : enc) {
      t = relu(conv3d(t, tape.param(*l.w), tape.param(*l.b)));
    }
    return vsf_forward(t, vp, partition, cfg.vsf_mode, cfg.attention);
  };
  Tensor c = branch(feat_cam, enc_cam, vsf_cam);
  Tensor l = branch(feat_lidar, enc_lidar, vsf_lidar);
  Tensor mixed = relu(conv3d(concat_channels(c, l), tape.param(*head_mix.w),
                             tape.param(*head_mix.b)));
  Tensor logits = conv3d(mixed, tape.param(*head_cls.w), tape.param(*head_cls.b));
  return softmax_channels(logits);
}

DenseTensor stack_features(const std::vector<const DenseTensor*>& parts) {
  if (parts.empty()) throw ValidationError("stack_features: empty batch");
  const Shape& s0 = parts[0]->shape;
  if (s0.rank() != 5) throw ShapeError("stack_features wants rank-5 parts, got " + s0.str());
  i64 batch = 0;
  for (const DenseTensor* p : parts) {
    if (p->shape.rank() != 5) throw ShapeError("stack_features: rank mismatch");
    for (int d = 1; d < 5; ++d) {
      if (p->shape[d] != s0[d]) {
        throw ShapeError("stack_features: part shape " + p->shape.str() +
                         " does not match " + s0.str());
      }
    }
    batch += p->shape[0];
  }
  DenseTensor out = DenseTensor::zeros(Shape{{batch, s0[1], s0[2], s0[3], s0[4]}});
  std::size_t at = 0;
  for (const DenseTensor* p : parts) {
    std::copy(p->data.begin(), p->data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(at));
    at += p->data.size();
  }
  return out;
}

OccupancyGrid stack_labels(const std::vector<const OccupancyGrid*>& parts) {
  if (parts.empty()) throw ValidationError("stack_labels: empty batch");
  const OccupancyGrid& g0 = *parts[0];
  i64 batch = 0;
  for (const OccupancyGrid* p : parts) {
    if (p->x != g0.x || p->y != g0.y || p->z != g0.z) {
      throw ShapeError("stack_labels: grid size mismatch");
    }
    batch += p->b;
  }
  OccupancyGrid out(batch, g0.x, g0.y, g0.z);
  std::size_t at = 0;
  for (const OccupancyGrid* p : parts) {
    std::copy(p->labels.begin(), p->labels.end(), out.labels.begin() + static_cast<std::ptrdiff_t>(at));
    at += p->labels.size();
  }
  return out;
}

OccupancyGrid argmax_channels(const Shape& probs_shape, const std::vector<Real>& probs) {
  if (probs_shape.rank() != 5) {
    throw ShapeError("argmax_channels wants rank-5 input, got " + probs_shape.str());
  }
  const i64 B = probs_shape[0], C = probs_shape[1], X = probs_shape[2], Y = probs_shape[3],
            Z = probs_shape[4];
  if (C > 256) throw ValidationError("argmax_channels: more than 256 classes");
  if (probs.size() != static_cast<std::size_t>(B * C * X * Y * Z)) {
    throw ShapeError("argmax_channels: value count does not match shape");
  }
  OccupancyGrid out(B, X, Y, Z);
  const i64 plane = X * Y * Z;
  for (i64 b = 0; b < B; ++b) {
    const Real* base = probs.data() + b * C * plane;
    for (i64 v = 0; v < plane; ++v) {
      Real best = base[v];
      i64 best_c = 0;
      for (i64 c = 1; c < C; ++c) {
        const Real p = base[c * plane + v];
        if (p > best) {
          best = p;
          best_c = c;
        }
      }
      out.labels[static_cast<std::size_t>(b * plane + v)] = static_cast<std::uint8_t>(best_c);
    }
  }
  return out;
}

EvalResult evaluate(Model& model, const std::vector<SceneSample>& samples,
                    const LossConfig& loss_cfg) {
  if (samples.empty()) throw ValidationError("evaluate: empty dataset");
  EvalResult res;
  Real loss_sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SceneSample& s = samples[i];
    Tape tape;
    Tensor probs = model.forward(tape, s.feat_cam, s.feat_lidar);
    LossBreakdown bd = total_loss(probs, s.gt, loss_cfg);
    loss_sum += bd.total;
    OccupancyGrid pred = argmax_channels(probs.shape(), probs.value());
    MetricsReport r = iou_per_class(pred, s.gt, model.cfg.classes);
    res.report = i == 0 ? r : merge(res.report, r);
  }
  res.mean_loss = loss_sum / static_cast<Real>(samples.size());
  return res;
}

EvalResult evaluate(Model& model, const Dataset& data, const LossConfig& loss_cfg) {
  std::vector<SceneSample> samples;
  samples.reserve(static_cast<std::size_t>(data.size()));
  for (i64 i = 0; i < data.size(); ++i) samples.push_back(data.sample(i));
  return evaluate(model, samples, loss_cfg);
}

TrainResult train(Model& model, const TrainConfig& tcfg, const Dataset& train_data,
                  const Dataset& val_data, const LossConfig& loss_cfg) {
  if (tcfg.steps < 0) throw ConfigError("steps must be >= 0");
  if (tcfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(tcfg.learning_rate > 0.0) || !std::isfinite(tcfg.learning_rate)) {
    throw ConfigError("learning_rate must be positive and finite");
  }
  const bool use_momentum = tcfg.optimizer == "momentum";
  if (!use_momentum && tcfg.optimizer != "gd") {
    throw ConfigError("unknown optimizer \"" + tcfg.optimizer + "\" (expected gd or momentum)");
  }
  if (tcfg.eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (train_data.size() < 1 || val_data.size() < 1) {
    throw ConfigError("train needs non-empty train and val splits");
  }

  // Scenes are deterministic in their seed, so materialize both splits once.
  std::vector<SceneSample> tr;
  tr.reserve(static_cast<std::size_t>(train_data.size()));
  for (i64 i = 0; i < train_data.size(); ++i) tr.push_back(train_data.sample(i));

  LossConfig lc = loss_cfg;
  if (lc.alpha.empty()) {
    std::vector<const OccupancyGrid*> grids;
    grids.reserve(tr.size());
    for (const SceneSample& s : tr) grids.push_back(&s.gt);
    lc.alpha = inverse_frequency_alpha(grids, model.cfg.classes);
  }

  TrainResult res;
  res.alpha_used = lc.alpha;
  auto& entries = model.params.entries();
  std::vector<std::vector<Real>> vel;
  if (use_momentum) vel.resize(entries.size());

  const i64 n = train_data.size();
  for (i64 step = 0; step < tcfg.steps; ++step) {
    std::vector<const DenseTensor*> cams, lids;
    std::vector<const OccupancyGrid*> gts;
    for (i64 k = 0; k < tcfg.batch_size; ++k) {
      const SceneSample& s = tr[static_cast<std::size_t>((step * tcfg.batch_size + k) % n)];
      cams.push_back(&s.feat_cam);
      lids.push_back(&s.feat_lidar);
      gts.push_back(&s.gt);
    }
    DenseTensor camb = stack_features(cams);
    DenseTensor lidb = stack_features(lids);
    OccupancyGrid gtb = stack_labels(gts);

    Tape tape;
    Tensor probs = model.forward(tape, camb, lidb);
    LossBreakdown bd = total_loss(probs, gtb, lc);
    if (!std::isfinite(bd.total)) {
      throw DivergenceError("non-finite training loss", step);
    }
    if (step == 0) res.loss_initial = bd.total;
    res.loss_history.push_back(bd.total);
    tape.backward(bd.total_tensor);

    if (tcfg.clip_norm > 0.0) {
      Real sq = 0.0;
      for (const auto& e : entries)
        for (Real g : e->grad) sq += g * g;
      const Real norm = std::sqrt(sq);
      if (norm > tcfg.clip_norm) {
        const Real scale = tcfg.clip_norm / norm;
        for (auto& e : entries)
          for (Real& g : e->grad) g *= scale;
      }
    }

    for (std::size_t pi = 0; pi < entries.size(); ++pi) {
      ParamTensor& p = *entries[pi];
      if (use_momentum) {
        std::vector<Real>& v = vel[pi];
        if (v.empty()) v.assign(p.value.size(), 0.0);
        for (std::size_t j = 0; j < p.value.size(); ++j) {
          v[j] = tcfg.momentum * v[j] - tcfg.learning_rate * p.grad[j];
          p.value[j] += v[j];
        }
      } else {
        for (std::size_t j = 0; j < p.value.size(); ++j) {
          p.value[j] -= tcfg.learning_rate * p.grad[j];
        }
      }
      for (Real x : p.value) {
        if (!std::isfinite(x)) throw DivergenceError("non-finite parameter after update", step);
      }
    }
    model.params.zero_grad();

    if (tcfg.eval_every > 0 && (step + 1) % tcfg.eval_every == 0) {
      res.trace.emplace_back(step + 1, evaluate(model, val_data, lc));
    }
  }
  if (res.trace.empty() || res.trace.back().first != tcfg.steps) {
    res.trace.emplace_back(tcfg.steps, evaluate(model, val_data, lc));
  }
  res.loss_final = res.trace.back().second.mean_loss;
  if (tcfg.steps == 0) res.loss_initial = res.loss_final;
  return res;
}

// --- ablation harness -----------------------------------------------------

namespace {

struct VariantSpec {
  std::string name;
  void (*apply)(ModelConfig&);
};

std::vector<VariantSpec> suite_variants(const std::string& suite) {
  if (suite == "slices") {
    return {
        {"none", [](ModelConfig& c) { c.vsf_mode = VsfMode::None; }},
        {"global_only", [](ModelConfig& c) { c.vsf_mode = VsfMode::GlobalOnly; }},
        {"local_only", [](ModelConfig& c) { c.vsf_mode = VsfMode::LocalOnly; }},
        {"full", [](ModelConfig& c) { c.vsf_mode = VsfMode::Full; }},
    };
  }
  if (suite == "strategy") {
    return {
        {"uniform4",
         [](ModelConfig& c) {
           c.partition.kind = PartitionSpec::Kind::Uniform;
           c.partition.uniform_n = 4;
         }},
        {"default6", [](ModelConfig& c) { c.partition.kind = PartitionSpec::Kind::Default; }},
        {"uniform8",
         [](ModelConfig& c) {
           c.partition.kind = PartitionSpec::Kind::Uniform;
           c.partition.uniform_n = 8;
         }},
    };
  }
  if (suite == "attention") {
    return {
        {"senet", [](ModelConfig& c) { c.attention = AttentionVariant::SENet; }},
        {"seattention3d",
         [](ModelConfig& c) { c.attention = AttentionVariant::SEAttention3D; }},
    };
  }
  if (suite == "fusion") {
    return {
        {"concat_fusion", [](ModelConfig& c) { c.vsf_mode = VsfMode::ConcatFusion; }},
        {"full", [](ModelConfig& c) { c.vsf_mode = VsfMode::Full; }},
    };
  }
  throw ConfigError("unknown ablation suite \"" + suite +
                    "\" (expected slices, strategy, attention, or fusion)");
}

std::string fmt_real(Real v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Real AblateResult::mean_miou(const std::string& variant) const {
  Real sum = 0.0;
  i64 n = 0;
  for (const AblateRow& r : rows) {
    if (r.variant == variant) {
      sum += r.miou;
      ++n;
    }
  }
  if (n == 0) throw StateError("no rows for variant " + variant);
  return sum / static_cast<Real>(n);
}

const AblateRow& AblateResult::row(const std::string& variant, std::uint64_t seed) const {
  for (const AblateRow& r : rows) {
    if (r.variant == variant && r.seed == seed) return r;
  }
  throw StateError("no row for variant " + variant + " seed " + std::to_string(seed));
}

AblateResult ablate(const std::string& suite, const ModelConfig& base, const TrainConfig& tcfg,
                    const SceneConfig& scene, const LossConfig& loss_cfg, i64 jobs) {
  const std::vector<VariantSpec> variants = suite_variants(suite);
  if (tcfg.seeds.empty()) throw ConfigError("ablation needs a non-empty seed list");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");

  AblateResult out;
  out.suite = suite;
  for (const VariantSpec& v : variants) out.variants.push_back(v.name);
  const i64 nv = static_cast<i64>(variants.size());
  const i64 ns = static_cast<i64>(tcfg.seeds.size());
  out.rows.resize(static_cast<std::size_t>(nv * ns));

  std::atomic<i64> next{0};
  std::mutex mu;
  std::exception_ptr err;
  std::atomic<bool> stop{false};

  auto worker = [&]() {
    while (!stop.load()) {
      const i64 cell = next.fetch_add(1);
      if (cell >= nv * ns) break;
      const i64 vi = cell / ns;
      const i64 si = cell % ns;
      try {
        ModelConfig mc = base;
        variants[static_cast<std::size_t>(vi)].apply(mc);
        mc.seed = tcfg.seeds[static_cast<std::size_t>(si)];
        // One data stream per seed, shared by every variant: within a seed
        // the comparison is paired.
        const std::uint64_t data_base = tcfg.data_seed + 10000ull * mc.seed;
        auto [tr_data, val_data] = make_datasets(scene, tcfg.n_train, tcfg.n_val, data_base);
        Model m = Model::build(mc, scene);
        TrainResult r = train(m, tcfg, tr_data, val_data, loss_cfg);
        AblateRow& row = out.rows[static_cast<std::size_t>(cell)];
        row.variant = variants[static_cast<std::size_t>(vi)].name;
        row.seed = mc.seed;
        row.miou = r.trace.back().second.report.miou;
        row.geo_iou = r.trace.back().second.report.geo_iou;
        row.loss_final = r.loss_final;
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
        stop.store(true);
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    const i64 nthreads = std::min<i64>(jobs, nv * ns);
    pool.reserve(static_cast<std::size_t>(nthreads));
    for (i64 t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  return out;
}

std::string ablate_csv(const AblateResult& r) {
  std::string s = "variant,seed,miou,geo_iou,loss_final\n";
  for (const std::string& v : r.variants) {
    Real miou = 0.0, geo = 0.0, loss = 0.0;
    i64 n = 0;
    for (const AblateRow& row : r.rows) {
      if (row.variant != v) continue;
      s += row.variant + "," + std::to_string(row.seed) + "," + fmt_real(row.miou) + "," +
           fmt_real(row.geo_iou) + "," + fmt_real(row.loss_final) + "\n";
      miou += row.miou;
      geo += row.geo_iou;
      loss += row.loss_final;
      ++n;
    }
    if (n > 0) {
      const Real dn = static_cast<Real>(n);
      s += v + ",mean," + fmt_real(miou / dn) + "," + fmt_real(geo / dn) + "," +
           fmt_real(loss / dn) + "\n";
    }
  }
  return s;
}

}  // namespace vsocc
