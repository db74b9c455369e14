#include "vsocc/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <memory>

#include "vsocc/losses.hpp"
#include "vsocc/pipeline.hpp"
#include "vsocc/rng.hpp"
#include "vsocc/vsf.hpp"

namespace vsocc {

namespace {

constexpr std::uint64_t kCaseSeed = 0x67726164636865ull;

// Leaves a case perturbs. deque keeps addresses stable while adding.
struct LeafSet {
  std::deque<ParamTensor> store;

  ParamTensor& add(const std::string& name, Shape shape, std::vector<Real> vals) {
    ParamTensor p;
    p.name = name;
    p.shape = std::move(shape);
    p.value = std::move(vals);
    p.grad.assign(p.value.size(), 0.0);
    store.push_back(std::move(p));
    return store.back();
  }

  // Uniform values in [lo,hi]; |v| < margin is pushed outward, for ops with
  // a kink or a domain edge at zero.
  ParamTensor& add_uniform(Rng& rng, const std::string& name, Shape shape, double lo, double hi,
                           double margin = 0.0) {
    std::vector<Real> v(static_cast<std::size_t>(shape.numel()));
    for (Real& x : v) {
      x = rng.uniform(lo, hi);
      if (margin > 0.0 && std::fabs(x) < margin) x += x >= 0.0 ? margin : -margin;
    }
    return add(name, std::move(shape), std::move(v));
  }
};

struct Check {
  std::string module;
  std::string name;
  std::vector<ParamTensor*> leaves;        // non-owning; stable addresses
  std::function<Tensor(Tape&)> make_loss;  // scalar node on the given tape
  std::shared_ptr<void> keep_alive;
};

// Fixed positive weights so the scalarized objective is sensitive to every
// output coordinate with distinct coefficients.
std::vector<Real> mix_weights(const std::string& name, i64 n) {
  Rng rng(Rng::mix(kCaseSeed, name + ".weights"));
  std::vector<Real> w(static_cast<std::size_t>(n));
  for (Real& x : w) x = rng.uniform(0.5, 1.5);
  return w;
}

// Wraps a tensor-valued builder into a scalar check via a fixed dot product.
Check tensor_check(std::string module, std::string name, std::shared_ptr<LeafSet> leaves,
                   std::function<Tensor(Tape&)> fwd) {
  Tape probe;
  const i64 out_n = fwd(probe).shape().numel();
  std::vector<Real> w = mix_weights(name, out_n);
  Check ck;
  ck.module = std::move(module);
  ck.name = std::move(name);
  for (ParamTensor& p : leaves->store) ck.leaves.push_back(&p);
  ck.make_loss = [fwd = std::move(fwd), w = std::move(w)](Tape& t) {
    return dot_const(fwd(t), w);
  };
  ck.keep_alive = std::move(leaves);
  return ck;
}

Rng case_rng(const std::string& name) { return Rng(Rng::mix(kCaseSeed, name)); }

OccupancyGrid random_grid(Rng& rng, i64 b, i64 x, i64 y, i64 z, i64 K) {
  OccupancyGrid g(b, x, y, z);
  for (std::uint8_t& l : g.labels) {
    l = static_cast<std::uint8_t>(rng.uniform_int(0, K));
  }
  return g;
}

// --- case registry --------------------------------------------------------

void add_core_cases(std::vector<Check>& out) {
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("conv3d");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{1, 2, 3, 3, 4}}, -1.0, 1.0);
    ParamTensor& w = ls->add_uniform(rng, "kernel", Shape{{2, 2, 3, 3, 3}}, -0.5, 0.5);
    ParamTensor& b = ls->add_uniform(rng, "bias", Shape{{2}}, -0.5, 0.5);
    out.push_back(tensor_check("core", "conv3d", ls, [&x, &w, &b](Tape& t) {
      return conv3d(t.param(x), t.param(w), t.param(b));
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("conv1d_channel");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{1, 2, 5}}, -1.0, 1.0);
    ParamTensor& w = ls->add_uniform(rng, "kernel", Shape{{3, 2, 3}}, -0.6, 0.6);
    ParamTensor& b = ls->add_uniform(rng, "bias", Shape{{3}}, -0.5, 0.5);
    out.push_back(tensor_check("core", "conv1d_channel", ls, [&x, &w, &b](Tape& t) {
      return conv1d_channel(t.param(x), t.param(w), t.param(b));
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("relu");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{2, 3, 2, 2, 2}}, -1.0, 1.0, 0.05);
    out.push_back(
        tensor_check("core", "relu", ls, [&x](Tape& t) { return relu(t.param(x)); }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("sigmoid");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{2, 3, 4}}, -2.0, 2.0);
    out.push_back(
        tensor_check("core", "sigmoid", ls, [&x](Tape& t) { return sigmoid(t.param(x)); }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("log_elem");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{3, 5}}, 0.3, 2.0);
    out.push_back(
        tensor_check("core", "log_elem", ls, [&x](Tape& t) { return log_elem(t.param(x)); }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("pow_const");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{3, 4}}, 0.2, 1.5);
    out.push_back(tensor_check("core", "pow_const", ls,
                               [&x](Tape& t) { return pow_const(t.param(x), 2.5); }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("affine");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{2, 6}}, -1.0, 1.0);
    out.push_back(tensor_check("core", "affine", ls,
                               [&x](Tape& t) { return affine(t.param(x), -1.4, 0.7); }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("affine_vec");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{2, 5}}, -1.0, 1.0);
    Rng crng = case_rng("affine_vec.coeff");
    std::vector<Real> sc(10), of(10);
    for (Real& v : sc) v = crng.uniform(-1.5, 1.5);
    for (Real& v : of) v = crng.uniform(-0.5, 0.5);
    out.push_back(tensor_check("core", "affine_vec", ls, [&x, sc, of](Tape& t) {
      return affine_vec(t.param(x), sc, of);
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("add_sub");
    ParamTensor& a = ls->add_uniform(rng, "a", Shape{{2, 4}}, -1.0, 1.0);
    ParamTensor& b = ls->add_uniform(rng, "b", Shape{{2, 4}}, -1.0, 1.0);
    out.push_back(tensor_check("core", "add_sub", ls, [&a, &b](Tape& t) {
      Tensor ta = t.param(a), tb = t.param(b);
      return sub(add(ta, tb), sub(ta, tb));
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("mul_div");
    ParamTensor& a = ls->add_uniform(rng, "a", Shape{{2, 4}}, -1.0, 1.0);
    ParamTensor& b = ls->add_uniform(rng, "b", Shape{{2, 4}}, 0.7, 1.8);
    out.push_back(tensor_check("core", "mul_div", ls, [&a, &b](Tape& t) {
      Tensor ta = t.param(a), tb = t.param(b);
      return add(mul(ta, tb), div(ta, tb));
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("channel_surgery");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{1, 3, 2, 2, 3}}, -1.0, 1.0);
    out.push_back(tensor_check("core", "channel_surgery", ls, [&x](Tape& t) {
      Tensor tx = t.param(x);
      return concat_channels(slice_channels(tx, 1, 3), slice_channels(tx, 0, 1));
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("mul_broadcast_z");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{1, 2, 2, 2, 3}}, -1.0, 1.0);
    ParamTensor& g = ls->add_uniform(rng, "gate", Shape{{1, 2, 3}}, 0.1, 0.9);
    out.push_back(tensor_check("core", "mul_broadcast_z", ls, [&x, &g](Tape& t) {
      return mul_broadcast(t.param(x), t.param(g));
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("mul_broadcast_const");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{1, 2, 2, 2, 3}}, -1.0, 1.0);
    ParamTensor& g = ls->add_uniform(rng, "gate", Shape{{1, 2, 1}}, 0.1, 0.9);
    out.push_back(tensor_check("core", "mul_broadcast_const", ls, [&x, &g](Tape& t) {
      return mul_broadcast(t.param(x), t.param(g));
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("mul_map");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{1, 3, 2, 2, 3}}, -1.0, 1.0);
    ParamTensor& m = ls->add_uniform(rng, "map", Shape{{1, 1, 2, 2, 3}}, 0.1, 0.9);
    out.push_back(tensor_check("core", "mul_map", ls, [&x, &m](Tape& t) {
      return mul_map(t.param(x), t.param(m));
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("squeeze_xy");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{2, 2, 3, 2, 3}}, -1.0, 1.0);
    out.push_back(tensor_check("core", "squeeze_xy", ls,
                               [&x](Tape& t) { return squeeze_xy(t.param(x)); }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("squeeze_xyz");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{2, 2, 3, 2, 3}}, -1.0, 1.0);
    out.push_back(tensor_check("core", "squeeze_xyz", ls,
                               [&x](Tape& t) { return squeeze_xyz(t.param(x)); }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("z_surgery");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{1, 2, 2, 2, 4}}, -1.0, 1.0);
    out.push_back(tensor_check("core", "z_surgery", ls, [&x](Tape& t) {
      Tensor tx = t.param(x);
      return concat_z({slice_z(tx, 2, 4), slice_z(tx, 0, 2)});
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("softmax_channels");
    ParamTensor& x = ls->add_uniform(rng, "logits", Shape{{1, 4, 2, 2, 2}}, -1.5, 1.5);
    out.push_back(tensor_check("core", "softmax_channels", ls,
                               [&x](Tape& t) { return softmax_channels(t.param(x)); }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("gather_class");
    ParamTensor& x = ls->add_uniform(rng, "logits", Shape{{1, 4, 2, 2, 3}}, -1.5, 1.5);
    Rng grng = case_rng("gather_class.labels");
    auto grid = std::make_shared<OccupancyGrid>(random_grid(grng, 1, 2, 2, 3, 4));
    out.push_back(tensor_check("core", "gather_class", ls, [&x, grid](Tape& t) {
      return gather_class(softmax_channels(t.param(x)), *grid);
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("permute_flat");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{3, 4}}, -1.0, 1.0);
    std::vector<i64> perm(12);
    for (i64 i = 0; i < 12; ++i) perm[static_cast<std::size_t>(i)] = i;
    Rng prng = case_rng("permute_flat.perm");
    for (i64 i = 11; i > 0; --i) {
      const i64 j = prng.uniform_int(0, i + 1);
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    out.push_back(tensor_check("core", "permute_flat", ls, [&x, perm](Tape& t) {
      return permute_flat(t.param(x), perm);
    }));
  }
  {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng("reductions");
    ParamTensor& x = ls->add_uniform(rng, "x", Shape{{2, 5}}, -1.0, 1.0);
    std::vector<Real> w = mix_weights("reductions.inner", 10);
    out.push_back(tensor_check("core", "reductions", ls, [&x, w](Tape& t) {
      Tensor tx = t.param(x);
      return add(add(sum_all(tx), mean_all(tx)), dot_const(tx, w));
    }));
  }
}

void add_attention_cases(std::vector<Check>& out) {
  {
    auto store = std::make_shared<ModuleParams>(Rng::mix(kCaseSeed, "excite.store"));
    SEParams se = make_se_params(*store, "se", 4, 2);
    ParamTensor& prof = store->add_uniform("profile", Shape{{1, 4, 3}}, 1);
    Check ck;
    ck.module = "attention";
    ck.name = "excite";
    Tape probe;
    auto fwd = [&prof, se](Tape& t) { return excite(t.param(prof), se); };
    const i64 out_n = fwd(probe).shape().numel();
    std::vector<Real> w = mix_weights("excite", out_n);
    ck.make_loss = [fwd, w](Tape& t) { return dot_const(fwd(t), w); };
    for (ParamTensor* p : store->entries()) ck.leaves.push_back(p);
    ck.keep_alive = store;
    out.push_back(std::move(ck));
  }
  for (const char* variant : {"seattention3d", "senet"}) {
    const std::string name = variant;
    auto store = std::make_shared<ModuleParams>(Rng::mix(kCaseSeed, name + ".store"));
    SEParams se = make_se_params(*store, "se", 4, 2);
    ParamTensor& x = store->add_uniform("x", Shape{{1, 4, 3, 3, 4}}, 1);
    const AttentionVariant v = attention_variant_from_string(name);
    Check ck;
    ck.module = "attention";
    ck.name = name;
    auto fwd = [&x, se, v](Tape& t) { return se_apply(t.param(x), se, v); };
    Tape probe;
    const i64 out_n = fwd(probe).shape().numel();
    std::vector<Real> w = mix_weights(name, out_n);
    ck.make_loss = [fwd, w](Tape& t) { return dot_const(fwd(t), w); };
    for (ParamTensor* p : store->entries()) ck.leaves.push_back(p);
    ck.keep_alive = store;
    out.push_back(std::move(ck));
  }
}

void add_vsf_cases(std::vector<Check>& out) {
  for (const char* mode_name : {"full", "concat_fusion"}) {
    const std::string name = std::string("vsf_") + mode_name;
    auto store = std::make_shared<ModuleParams>(Rng::mix(kCaseSeed, name + ".store"));
    VSFParams vp = make_vsf_params(*store, "vsf", 4, 2, 2);
    ParamTensor& x = store->add_uniform("x", Shape{{1, 4, 3, 3, 4}}, 1);
    auto part = std::make_shared<HeightPartition>(
        HeightPartition::from_intervals(-5.0, 3.0, 4, {{-5.0, -1.0}, {-1.0, 3.0}}));
    const VsfMode mode = vsf_mode_from_string(mode_name);
    Check ck;
    ck.module = "vsf";
    ck.name = name;
    auto fwd = [&x, vp, part, mode](Tape& t) {
      return vsf_forward(t.param(x), vp, *part, mode);
    };
    Tape probe;
    const i64 out_n = fwd(probe).shape().numel();
    std::vector<Real> w = mix_weights(name, out_n);
    ck.make_loss = [fwd, w](Tape& t) { return dot_const(fwd(t), w); };
    for (ParamTensor* p : store->entries()) ck.leaves.push_back(p);
    struct Holder {
      std::shared_ptr<ModuleParams> store;
      std::shared_ptr<HeightPartition> part;
    };
    ck.keep_alive = std::make_shared<Holder>(Holder{store, part});
    out.push_back(std::move(ck));
  }
}

void add_loss_cases(std::vector<Check>& out) {
  struct LossCase {
    const char* name;
    std::function<Tensor(const Tensor&, const OccupancyGrid&)> loss;
  };
  const std::vector<Real> alpha = {1.0, 0.8, 1.2, 0.9};
  const std::vector<LossCase> cases = {
      {"focal_loss",
       [alpha](const Tensor& p, const OccupancyGrid& y) { return focal_loss(p, y, 2.0, alpha); }},
      {"lovasz_softmax",
       [](const Tensor& p, const OccupancyGrid& y) { return lovasz_softmax_loss(p, y); }},
      {"scal_geo", [](const Tensor& p, const OccupancyGrid& y) { return scal_geo_loss(p, y); }},
      {"scal_sem", [](const Tensor& p, const OccupancyGrid& y) { return scal_sem_loss(p, y); }},
      {"total_loss",
       [alpha](const Tensor& p, const OccupancyGrid& y) {
         LossConfig cfg;
         cfg.gamma = 2.0;
         cfg.alpha = alpha;
         return total_loss(p, y, cfg).total_tensor;
       }},
  };
  for (const LossCase& lc : cases) {
    auto ls = std::make_shared<LeafSet>();
    Rng rng = case_rng(lc.name);
    ParamTensor& x = ls->add_uniform(rng, "logits", Shape{{1, 4, 2, 2, 3}}, -1.5, 1.5);
    Rng grng = case_rng(std::string(lc.name) + ".labels");
    auto grid = std::make_shared<OccupancyGrid>(random_grid(grng, 1, 2, 2, 3, 4));
    auto loss_fn = lc.loss;
    out.push_back(tensor_check("losses", lc.name, ls, [&x, grid, loss_fn](Tape& t) {
      return loss_fn(softmax_channels(t.param(x)), *grid);
    }));
  }
}

void add_pipeline_case(std::vector<Check>& out) {
  struct Holder {
    Model model;
    DenseTensor cam, lidar;
    OccupancyGrid gt;
    LossConfig loss_cfg;
    Holder(Model&& m, DenseTensor c, DenseTensor l, OccupancyGrid g)
        : model(std::move(m)), cam(std::move(c)), lidar(std::move(l)), gt(std::move(g)) {}
  };

  SceneConfig scene;
  scene.x = 4;
  scene.y = 4;
  scene.z = 16;
  scene.channels = 4;
  for (ClassHeightProfile& c : scene.classes) {  // fit footprints to the tiny grid
    c.min_extent = 1;
    c.max_extent = 2;
  }
  ModelConfig mc;
  mc.channels = 4;
  mc.classes = 5;
  mc.reduction = 2;
  mc.encoder_depth = 1;
  mc.seed = Rng::mix(kCaseSeed, "pipeline.model");

  Model model = Model::build(mc, scene);
  // Jitter every parameter off the structured init point: all-equal gate
  // biases produce tied intermediate values, and finite differences are
  // unreliable across the resulting sort-order and relu-kink boundaries.
  Rng jrng = case_rng("pipeline.jitter");
  for (auto& e : model.params.entries())
    for (Real& v : e->value) v += jrng.uniform(-0.05, 0.05);
  Rng rng = case_rng("pipeline.inputs");
  auto mk_feat = [&rng](i64 C, i64 X, i64 Y, i64 Z) {
    DenseTensor f = DenseTensor::zeros(Shape{{1, C, X, Y, Z}});
    for (Real& v : f.data) v = rng.uniform(-1.0, 1.0);
    return f;
  };
  DenseTensor cam = mk_feat(4, 4, 4, 16);
  DenseTensor lidar = mk_feat(4, 4, 4, 16);
  Rng grng = case_rng("pipeline.labels");
  OccupancyGrid gt = random_grid(grng, 1, 4, 4, 16, 5);

  auto holder = std::make_shared<Holder>(std::move(model), std::move(cam), std::move(lidar),
                                         std::move(gt));
  holder->loss_cfg.gamma = 2.0;
  holder->loss_cfg.alpha = {1.0, 1.1, 0.9, 1.2, 0.8};

  Check ck;
  ck.module = "pipeline";
  ck.name = "model_total_loss";
  for (ParamTensor* p : holder->model.params.entries()) ck.leaves.push_back(p);
  ck.make_loss = [holder](Tape& t) {
    Tensor probs = holder->model.forward(t, holder->cam, holder->lidar);
    return total_loss(probs, holder->gt, holder->loss_cfg).total_tensor;
  };
  ck.keep_alive = holder;
  out.push_back(std::move(ck));
}

std::vector<Check> all_checks() {
  std::vector<Check> out;
  add_core_cases(out);
  add_attention_cases(out);
  add_vsf_cases(out);
  add_loss_cases(out);
  add_pipeline_case(out);
  return out;
}

double eval_scalar(const Check& ck) {
  Tape tape;
  Tensor loss = ck.make_loss(tape);
  return loss.value()[0];
}

GradCheckResult run_one(Check& ck, double h, double tol, bool corrupt) {
  GradCheckResult res;
  res.module = ck.module;
  res.name = ck.name;

  for (ParamTensor* p : ck.leaves) p->zero_grad();
  {
    Tape tape;
    Tensor loss = ck.make_loss(tape);
    if (loss.shape().numel() != 1) {
      throw StateError("gradcheck case " + ck.name + " does not produce a scalar");
    }
    tape.backward(loss);
  }
  if (corrupt) ck.leaves.front()->grad[0] += 0.5;

  for (ParamTensor* leaf : ck.leaves) {
    for (std::size_t j = 0; j < leaf->value.size(); ++j) {
      const Real keep = leaf->value[j];
      leaf->value[j] = keep + h;
      const double fp = eval_scalar(ck);
      leaf->value[j] = keep - h;
      const double fm = eval_scalar(ck);
      leaf->value[j] = keep;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = leaf->grad[j];
      const double rel =
          std::fabs(ana - num) / std::max({1.0, std::fabs(ana), std::fabs(num)});
      ++res.coords;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = leaf->name + "[" + std::to_string(j) + "]";
      }
    }
  }
  res.pass = res.max_rel_err < tol && res.coords > 0;
  return res;
}

}  // namespace

std::vector<GradCheckResult> run_gradchecks(const GradCheckOptions& opt) {
  std::vector<Check> checks = all_checks();
  std::vector<GradCheckResult> results;
  for (Check& ck : checks) {
    if (!opt.module.empty() && ck.module != opt.module) continue;
    results.push_back(run_one(ck, opt.h, opt.tol, opt.corrupt == ck.module + "/" + ck.name));
  }
  if (results.empty()) {
    throw ConfigError("no gradcheck cases match module \"" + opt.module +
                      "\" (expected core, attention, vsf, losses, or pipeline)");
  }
  return results;
}

bool all_passed(const std::vector<GradCheckResult>& results) {
  for (const GradCheckResult& r : results) {
    if (!r.pass) return false;
  }
  return !results.empty();
}

std::string gradcheck_report(const std::vector<GradCheckResult>& results) {
  std::string s;
  for (const GradCheckResult& r : results) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s %s/%s max_rel %.3e at %s (%lld coords)\n",
                  r.pass ? "PASS" : "FAIL", r.module.c_str(), r.name.c_str(), r.max_rel_err,
                  r.worst.empty() ? "-" : r.worst.c_str(), static_cast<long long>(r.coords));
    s += buf;
  }
  return s;
}

}  // namespace vsocc
