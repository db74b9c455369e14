#include "vsocc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vsocc {

namespace {

Tape* same_tape(std::initializer_list<Tensor> ts, const char* op) {
  Tape* tp = nullptr;
  for (const Tensor& t : ts) {
    if (!t.valid()) throw StateError(std::string(op) + ": null tensor");
    if (!tp) tp = t.tape();
    if (t.tape() != tp) throw StateError(std::string(op) + ": tensors from different tapes");
  }
  return tp;
}

void require_rank(const Shape& s, int r, const char* op) {
  if (s.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) +
                     ", got " + s.str());
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// Elementwise unary helper: y = f(x), dx = dfdx(x, y) * dy.
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* op, F f, DF dfdx) {
  Tape* tp = same_tape({x}, op);
  const Shape s = x.shape();
  const auto& xv = x.value();
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const int xid = x.id();
  int id = tp->emit(s, std::move(out), [xid, dfdx](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& yv = t.node(self).val;
    const auto& xval = t.node(xid).val;
    auto& gx = t.node(xid).grad;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += dfdx(xval[i], yv[i]) * g[i];
  });
  return tp->handle(id);
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](Real v) { return v > 0.0 ? v : 0.0; },
      [](Real v, Real) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](Real v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const Real e = std::exp(v);
        return e / (1.0 + e);
      },
      [](Real, Real y) { return y * (1.0 - y); });
}

Tensor log_elem(const Tensor& x) {
  return unary(
      x, "log_elem", [](Real v) { return std::log(v); },
      [](Real v, Real) { return 1.0 / v; });
}

Tensor pow_const(const Tensor& x, Real e) {
  return unary(
      x, "pow_const", [e](Real v) { return std::pow(v, e); },
      [e](Real v, Real) { return e == 0.0 ? 0.0 : e * std::pow(v, e - 1.0); });
}

Tensor affine(const Tensor& x, Real scale, Real offset) {
  return unary(
      x, "affine", [scale, offset](Real v) { return scale * v + offset; },
      [scale](Real, Real) { return scale; });
}

Tensor affine_vec(const Tensor& x, std::vector<Real> scale, std::vector<Real> offset) {
  Tape* tp = same_tape({x}, "affine_vec");
  const Shape s = x.shape();
  const auto& xv = x.value();
  if (scale.size() != xv.size() || offset.size() != xv.size())
    throw ShapeError("affine_vec: coefficient size mismatch for " + s.str());
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = scale[i] * xv[i] + offset[i];
  const int xid = x.id();
  int id = tp->emit(s, std::move(out), [xid, sc = std::move(scale)](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    auto& gx = t.node(xid).grad;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sc[i] * g[i];
  });
  return tp->handle(id);
}

namespace {

template <typename F, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
  Tape* tp = same_tape({a, b}, op);
  const Shape s = a.shape();
  require_same_shape(s, b.shape(), op);
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
  const int aid = a.id(), bid = b.id();
  int id = tp->emit(s, std::move(out), [aid, bid, da, db](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& av2 = t.node(aid).val;
    const auto& bv2 = t.node(bid).val;
    auto& ga = t.node(aid).grad;
    auto& gb = t.node(bid).grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += da(av2[i], bv2[i]) * g[i];
      gb[i] += db(av2[i], bv2[i]) * g[i];
    }
  });
  return tp->handle(id);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](Real u, Real v) { return u + v; },
      [](Real, Real) { return 1.0; }, [](Real, Real) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](Real u, Real v) { return u - v; },
      [](Real, Real) { return 1.0; }, [](Real, Real) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](Real u, Real v) { return u * v; },
      [](Real, Real v) { return v; }, [](Real u, Real) { return u; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](Real u, Real v) { return u / v; },
      [](Real, Real v) { return 1.0 / v; },
      [](Real u, Real v) { return -u / (v * v); });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  Tape* tp = same_tape({x, kernel, bias}, "conv3d");
  const Shape xs = x.shape(), ks = kernel.shape(), bs = bias.shape();
  require_rank(xs, 5, "conv3d input");
  require_rank(ks, 5, "conv3d kernel");
  require_rank(bs, 1, "conv3d bias");
  const i64 B = xs[0], Ci = xs[1], X = xs[2], Y = xs[3], Z = xs[4];
  const i64 Co = ks[0], k = ks[2];
  if (ks[1] != Ci)
    throw ShapeError("conv3d: kernel expects " + std::to_string(ks[1]) +
                     " input channels, input has " + std::to_string(Ci));
  if (ks[3] != k || ks[4] != k)
    throw ShapeError("conv3d: kernel must be cubic, got " + ks.str());
  if (k % 2 == 0) throw ShapeError("conv3d: kernel size must be odd, got " + ks.str());
  if (bs[0] != Co) throw ShapeError("conv3d: bias size " + bs.str() + " vs Co=" +
                                    std::to_string(Co));

  const i64 r = k / 2, vol = X * Y * Z, kvol = k * k * k;
  const auto& xv = x.value();
  const auto& kv = kernel.value();
  const auto& bv = bias.value();
  std::vector<Real> out(static_cast<std::size_t>(B * Co * vol));

  for (i64 b = 0; b < B; ++b) {
    for (i64 co = 0; co < Co; ++co) {
      Real* o = out.data() + (b * Co + co) * vol;
      std::fill(o, o + vol, bv[static_cast<std::size_t>(co)]);
      for (i64 ci = 0; ci < Ci; ++ci) {
        const Real* in = xv.data() + (b * Ci + ci) * vol;
        const Real* w0 = kv.data() + (co * Ci + ci) * kvol;
        for (i64 dx = -r; dx <= r; ++dx) {
          const i64 ilo = std::max<i64>(0, -dx), ihi = std::min(X, X - dx);
          for (i64 dy = -r; dy <= r; ++dy) {
            const i64 jlo = std::max<i64>(0, -dy), jhi = std::min(Y, Y - dy);
            const Real* wz = w0 + ((dx + r) * k + (dy + r)) * k;
            if (k == 3 && Z >= 2) {
              // Fused z-stencil: one pass over the plane applies all three
              // z-taps, instead of three read-modify-write sweeps.
              const Real wm = wz[0], wc = wz[1], wp = wz[2];
              for (i64 i = ilo; i < ihi; ++i) {
                for (i64 j = jlo; j < jhi; ++j) {
                  Real* orow = o + (i * Y + j) * Z;
                  const Real* irow = in + ((i + dx) * Y + (j + dy)) * Z;
                  orow[0] += wc * irow[0] + wp * irow[1];
                  for (i64 z = 1; z < Z - 1; ++z) {
                    orow[z] += wm * irow[z - 1] + wc * irow[z] + wp * irow[z + 1];
                  }
                  orow[Z - 1] += wm * irow[Z - 2] + wc * irow[Z - 1];
                }
              }
            } else {
              for (i64 dz = -r; dz <= r; ++dz) {
                const i64 zlo = std::max<i64>(0, -dz), zhi = std::min(Z, Z - dz);
                const Real w = wz[dz + r];
                for (i64 i = ilo; i < ihi; ++i) {
                  for (i64 j = jlo; j < jhi; ++j) {
                    Real* orow = o + (i * Y + j) * Z;
                    const Real* irow = in + ((i + dx) * Y + (j + dy)) * Z + dz;
                    for (i64 z = zlo; z < zhi; ++z) orow[z] += w * irow[z];
                  }
                }
              }
            }
          }
        }
      }
    }
  }

  const int xid = x.id(), kid = kernel.id(), bid = bias.id();
  int id = tp->emit(
      Shape{B, Co, X, Y, Z}, std::move(out),
      [xid, kid, bid, B, Ci, Co, X, Y, Z, k](Tape& t, int self) {
        const i64 r = k / 2, vol = X * Y * Z, kvol = k * k * k;
        const auto& go = t.node(self).grad;
        const auto& xv2 = t.node(xid).val;
        const auto& kv2 = t.node(kid).val;
        auto& gx = t.node(xid).grad;
        auto& gk = t.node(kid).grad;
        auto& gb = t.node(bid).grad;
        for (i64 b = 0; b < B; ++b) {
          for (i64 co = 0; co < Co; ++co) {
            const Real* g = go.data() + (b * Co + co) * vol;
            Real bsum = 0.0;
            for (i64 n = 0; n < vol; ++n) bsum += g[n];
            gb[static_cast<std::size_t>(co)] += bsum;
            for (i64 ci = 0; ci < Ci; ++ci) {
              const Real* in = xv2.data() + (b * Ci + ci) * vol;
              Real* gin = gx.data() + (b * Ci + ci) * vol;
              const i64 kbase = (co * Ci + ci) * kvol;
              for (i64 dx = -r; dx <= r; ++dx) {
                const i64 ilo = std::max<i64>(0, -dx), ihi = std::min(X, X - dx);
                for (i64 dy = -r; dy <= r; ++dy) {
                  const i64 jlo = std::max<i64>(0, -dy), jhi = std::min(Y, Y - dy);
                  const i64 tap = kbase + ((dx + r) * k + (dy + r)) * k;
                  if (k == 3 && Z >= 2) {
                    // Fused z-stencil, mirroring the forward pass: one sweep
                    // per plane yields all three tap dots and the transposed
                    // stencil into the input gradient.
                    const Real wm = kv2[static_cast<std::size_t>(tap)];
                    const Real wc = kv2[static_cast<std::size_t>(tap + 1)];
                    const Real wp = kv2[static_cast<std::size_t>(tap + 2)];
                    Real am = 0.0, ac = 0.0, ap = 0.0;
                    for (i64 i = ilo; i < ihi; ++i) {
                      for (i64 j = jlo; j < jhi; ++j) {
                        const Real* grow = g + (i * Y + j) * Z;
                        const Real* irow = in + ((i + dx) * Y + (j + dy)) * Z;
                        Real* girow = gin + ((i + dx) * Y + (j + dy)) * Z;
                        const Real g0 = grow[0], gL = grow[Z - 1];
                        ac += g0 * irow[0];
                        ap += g0 * irow[1];
                        am += gL * irow[Z - 2];
                        ac += gL * irow[Z - 1];
                        girow[0] += wc * g0 + wm * grow[1];
                        for (i64 z = 1; z < Z - 1; ++z) {
                          const Real gz = grow[z];
                          am += gz * irow[z - 1];
                          ac += gz * irow[z];
                          ap += gz * irow[z + 1];
                          girow[z] += wm * grow[z + 1] + wc * gz + wp * grow[z - 1];
                        }
                        girow[Z - 1] += wc * gL + wp * grow[Z - 2];
                      }
                    }
                    gk[static_cast<std::size_t>(tap)] += am;
                    gk[static_cast<std::size_t>(tap + 1)] += ac;
                    gk[static_cast<std::size_t>(tap + 2)] += ap;
                  } else {
                    for (i64 dz = -r; dz <= r; ++dz) {
                      const i64 zlo = std::max<i64>(0, -dz), zhi = std::min(Z, Z - dz);
                      const i64 widx = tap + dz + r;
                      const Real w = kv2[static_cast<std::size_t>(widx)];
                      Real wacc = 0.0;
                      for (i64 i = ilo; i < ihi; ++i) {
                        for (i64 j = jlo; j < jhi; ++j) {
                          const Real* grow = g + (i * Y + j) * Z;
                          const Real* irow = in + ((i + dx) * Y + (j + dy)) * Z + dz;
                          Real* girow = gin + ((i + dx) * Y + (j + dy)) * Z + dz;
                          for (i64 z = zlo; z < zhi; ++z) {
                            girow[z] += w * grow[z];
                            wacc += grow[z] * irow[z];
                          }
                        }
                      }
                      gk[static_cast<std::size_t>(widx)] += wacc;
                    }
                  }
                }
              }
            }
          }
        }
      });
  return tp->handle(id);
}

Tensor conv1d_channel(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  Tape* tp = same_tape({x, kernel, bias}, "conv1d_channel");
  const Shape xs = x.shape(), ks = kernel.shape(), bs = bias.shape();
  require_rank(xs, 3, "conv1d_channel input");
  require_rank(ks, 3, "conv1d_channel kernel");
  require_rank(bs, 1, "conv1d_channel bias");
  const i64 B = xs[0], Ci = xs[1], Z = xs[2];
  const i64 Co = ks[0], k = ks[2];
  if (ks[1] != Ci)
    throw ShapeError("conv1d_channel: kernel expects " + std::to_string(ks[1]) +
                     " input channels, input has " + std::to_string(Ci));
  if (k % 2 == 0)
    throw ShapeError("conv1d_channel: kernel size must be odd, got " + ks.str());
  if (bs[0] != Co)
    throw ShapeError("conv1d_channel: bias size " + bs.str() + " vs Co=" +
                     std::to_string(Co));

  const i64 r = k / 2;
  const auto& xv = x.value();
  const auto& kv = kernel.value();
  const auto& bv = bias.value();
  std::vector<Real> out(static_cast<std::size_t>(B * Co * Z));
  for (i64 b = 0; b < B; ++b)
    for (i64 co = 0; co < Co; ++co)
      for (i64 z = 0; z < Z; ++z) {
        Real acc = bv[static_cast<std::size_t>(co)];
        for (i64 ci = 0; ci < Ci; ++ci)
          for (i64 dz = -r; dz <= r; ++dz) {
            const i64 zz = z + dz;
            if (zz < 0 || zz >= Z) continue;
            acc += kv[static_cast<std::size_t>((co * Ci + ci) * k + (dz + r))] *
                   xv[static_cast<std::size_t>((b * Ci + ci) * Z + zz)];
          }
        out[static_cast<std::size_t>((b * Co + co) * Z + z)] = acc;
      }

  const int xid = x.id(), kid = kernel.id(), bid = bias.id();
  int id = tp->emit(
      Shape{B, Co, Z}, std::move(out),
      [xid, kid, bid, B, Ci, Co, Z, k](Tape& t, int self) {
        const i64 r = k / 2;
        const auto& go = t.node(self).grad;
        const auto& xv2 = t.node(xid).val;
        const auto& kv2 = t.node(kid).val;
        auto& gx = t.node(xid).grad;
        auto& gk = t.node(kid).grad;
        auto& gb = t.node(bid).grad;
        for (i64 b = 0; b < B; ++b)
          for (i64 co = 0; co < Co; ++co)
            for (i64 z = 0; z < Z; ++z) {
              const Real g = go[static_cast<std::size_t>((b * Co + co) * Z + z)];
              gb[static_cast<std::size_t>(co)] += g;
              for (i64 ci = 0; ci < Ci; ++ci)
                for (i64 dz = -r; dz <= r; ++dz) {
                  const i64 zz = z + dz;
                  if (zz < 0 || zz >= Z) continue;
                  const auto wi = static_cast<std::size_t>((co * Ci + ci) * k + (dz + r));
                  const auto xi = static_cast<std::size_t>((b * Ci + ci) * Z + zz);
                  gx[xi] += kv2[wi] * g;
                  gk[wi] += xv2[xi] * g;
                }
            }
      });
  return tp->handle(id);
}

// ---------------------------------------------------------------------------
// Channel / height surgery
// ---------------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tape* tp = same_tape({a, b}, "concat_channels");
  const Shape as = a.shape(), bs = b.shape();
  require_rank(as, 5, "concat_channels");
  require_rank(bs, 5, "concat_channels");
  for (int d : {0, 2, 3, 4})
    if (as[d] != bs[d])
      throw ShapeError("concat_channels: " + as.str() + " vs " + bs.str());
  const i64 B = as[0], Ca = as[1], Cb = bs[1], vol = as[2] * as[3] * as[4];
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<Real> out(static_cast<std::size_t>(B * (Ca + Cb) * vol));
  for (i64 n = 0; n < B; ++n) {
    std::copy(av.begin() + n * Ca * vol, av.begin() + (n + 1) * Ca * vol,
              out.begin() + n * (Ca + Cb) * vol);
    std::copy(bv.begin() + n * Cb * vol, bv.begin() + (n + 1) * Cb * vol,
              out.begin() + (n * (Ca + Cb) + Ca) * vol);
  }
  const int aid = a.id(), bid = b.id();
  int id = tp->emit(
      Shape{B, Ca + Cb, as[2], as[3], as[4]}, std::move(out),
      [aid, bid, B, Ca, Cb, vol](Tape& t, int self) {
        const auto& g = t.node(self).grad;
        auto& ga = t.node(aid).grad;
        auto& gb = t.node(bid).grad;
        for (i64 n = 0; n < B; ++n) {
          const Real* gs = g.data() + n * (Ca + Cb) * vol;
          Real* pa = ga.data() + n * Ca * vol;
          Real* pb = gb.data() + n * Cb * vol;
          for (i64 i = 0; i < Ca * vol; ++i) pa[i] += gs[i];
          for (i64 i = 0; i < Cb * vol; ++i) pb[i] += gs[Ca * vol + i];
        }
      });
  return tp->handle(id);
}

Tensor slice_channels(const Tensor& x, i64 lo, i64 hi) {
  Tape* tp = same_tape({x}, "slice_channels");
  const Shape xs = x.shape();
  require_rank(xs, 5, "slice_channels");
  const i64 B = xs[0], C = xs[1], vol = xs[2] * xs[3] * xs[4];
  if (lo < 0 || hi <= lo || hi > C)
    throw ShapeError("slice_channels: [" + std::to_string(lo) + "," +
                     std::to_string(hi) + ") of C=" + std::to_string(C));
  const i64 Cs = hi - lo;
  const auto& xv = x.value();
  std::vector<Real> out(static_cast<std::size_t>(B * Cs * vol));
  for (i64 n = 0; n < B; ++n)
    std::copy(xv.begin() + (n * C + lo) * vol, xv.begin() + (n * C + hi) * vol,
              out.begin() + n * Cs * vol);
  const int xid = x.id();
  int id = tp->emit(Shape{B, Cs, xs[2], xs[3], xs[4]}, std::move(out),
                    [xid, B, C, lo, Cs, vol](Tape& t, int self) {
                      const auto& g = t.node(self).grad;
                      auto& gx = t.node(xid).grad;
                      for (i64 n = 0; n < B; ++n) {
                        Real* dst = gx.data() + (n * C + lo) * vol;
                        const Real* src = g.data() + n * Cs * vol;
                        for (i64 i = 0; i < Cs * vol; ++i) dst[i] += src[i];
                      }
                    });
  return tp->handle(id);
}

Tensor mul_broadcast(const Tensor& x, const Tensor& gate) {
  Tape* tp = same_tape({x, gate}, "mul_broadcast");
  const Shape xs = x.shape(), gs = gate.shape();
  require_rank(xs, 5, "mul_broadcast input");
  require_rank(gs, 3, "mul_broadcast gate");
  const i64 B = xs[0], C = xs[1], X = xs[2], Y = xs[3], Z = xs[4];
  const i64 Zg = gs[2];
  if (gs[0] != B || gs[1] != C || (Zg != Z && Zg != 1))
    throw ShapeError("mul_broadcast: gate " + gs.str() + " for input " + xs.str());
  const auto& xv = x.value();
  const auto& gv = gate.value();
  std::vector<Real> out(xv.size());
  for (i64 b = 0; b < B; ++b)
    for (i64 c = 0; c < C; ++c) {
      const Real* gp = gv.data() + (b * C + c) * Zg;
      const Real* in = xv.data() + (b * C + c) * X * Y * Z;
      Real* o = out.data() + (b * C + c) * X * Y * Z;
      for (i64 ij = 0; ij < X * Y; ++ij)
        for (i64 z = 0; z < Z; ++z)
          o[ij * Z + z] = in[ij * Z + z] * gp[Zg == 1 ? 0 : z];
    }
  const int xid = x.id(), gid = gate.id();
  int id = tp->emit(
      xs, std::move(out), [xid, gid, B, C, X, Y, Z, Zg](Tape& t, int self) {
        const auto& g = t.node(self).grad;
        const auto& xv2 = t.node(xid).val;
        const auto& gv2 = t.node(gid).val;
        auto& gx = t.node(xid).grad;
        auto& gg = t.node(gid).grad;
        for (i64 b = 0; b < B; ++b)
          for (i64 c = 0; c < C; ++c) {
            const i64 base = (b * C + c) * X * Y * Z;
            const Real* gp = gv2.data() + (b * C + c) * Zg;
            Real* ggp = gg.data() + (b * C + c) * Zg;
            for (i64 ij = 0; ij < X * Y; ++ij)
              for (i64 z = 0; z < Z; ++z) {
                const i64 n = base + ij * Z + z;
                const i64 zi = Zg == 1 ? 0 : z;
                gx[static_cast<std::size_t>(n)] += gp[zi] * g[static_cast<std::size_t>(n)];
                ggp[zi] += xv2[static_cast<std::size_t>(n)] * g[static_cast<std::size_t>(n)];
              }
          }
      });
  return tp->handle(id);
}

Tensor mul_map(const Tensor& x, const Tensor& map) {
  Tape* tp = same_tape({x, map}, "mul_map");
  const Shape xs = x.shape(), ms = map.shape();
  require_rank(xs, 5, "mul_map input");
  require_rank(ms, 5, "mul_map map");
  const i64 B = xs[0], C = xs[1], vol = xs[2] * xs[3] * xs[4];
  if (ms[0] != B || ms[1] != 1 || ms[2] != xs[2] || ms[3] != xs[3] || ms[4] != xs[4])
    throw ShapeError("mul_map: map " + ms.str() + " for input " + xs.str());
  const auto& xv = x.value();
  const auto& mv = map.value();
  std::vector<Real> out(xv.size());
  for (i64 b = 0; b < B; ++b)
    for (i64 c = 0; c < C; ++c) {
      const Real* in = xv.data() + (b * C + c) * vol;
      const Real* mp = mv.data() + b * vol;
      Real* o = out.data() + (b * C + c) * vol;
      for (i64 n = 0; n < vol; ++n) o[n] = in[n] * mp[n];
    }
  const int xid = x.id(), mid = map.id();
  int id = tp->emit(xs, std::move(out), [xid, mid, B, C, vol](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& xv2 = t.node(xid).val;
    const auto& mv2 = t.node(mid).val;
    auto& gx = t.node(xid).grad;
    auto& gm = t.node(mid).grad;
    for (i64 b = 0; b < B; ++b)
      for (i64 c = 0; c < C; ++c) {
        const i64 base = (b * C + c) * vol;
        const Real* mp = mv2.data() + b * vol;
        Real* gmp = gm.data() + b * vol;
        for (i64 n = 0; n < vol; ++n) {
          gx[static_cast<std::size_t>(base + n)] += mp[n] * g[static_cast<std::size_t>(base + n)];
          gmp[n] += xv2[static_cast<std::size_t>(base + n)] * g[static_cast<std::size_t>(base + n)];
        }
      }
  });
  return tp->handle(id);
}

Tensor squeeze_xy(const Tensor& x) {
  Tape* tp = same_tape({x}, "squeeze_xy");
  const Shape xs = x.shape();
  require_rank(xs, 5, "squeeze_xy");
  const i64 B = xs[0], C = xs[1], X = xs[2], Y = xs[3], Z = xs[4];
  const auto& xv = x.value();
  std::vector<Real> out(static_cast<std::size_t>(B * C * Z), 0.0);
  const Real inv = 1.0 / static_cast<Real>(X * Y);
  for (i64 b = 0; b < B; ++b)
    for (i64 c = 0; c < C; ++c) {
      const Real* in = xv.data() + (b * C + c) * X * Y * Z;
      Real* o = out.data() + (b * C + c) * Z;
      for (i64 ij = 0; ij < X * Y; ++ij)
        for (i64 z = 0; z < Z; ++z) o[z] += in[ij * Z + z];
      for (i64 z = 0; z < Z; ++z) o[z] *= inv;
    }
  const int xid = x.id();
  int id = tp->emit(Shape{B, C, Z}, std::move(out),
                    [xid, B, C, X, Y, Z, inv](Tape& t, int self) {
                      const auto& g = t.node(self).grad;
                      auto& gx = t.node(xid).grad;
                      for (i64 b = 0; b < B; ++b)
                        for (i64 c = 0; c < C; ++c) {
                          const Real* gp = g.data() + (b * C + c) * Z;
                          Real* gxp = gx.data() + (b * C + c) * X * Y * Z;
                          for (i64 ij = 0; ij < X * Y; ++ij)
                            for (i64 z = 0; z < Z; ++z) gxp[ij * Z + z] += gp[z] * inv;
                        }
                    });
  return tp->handle(id);
}

Tensor squeeze_xyz(const Tensor& x) {
  Tape* tp = same_tape({x}, "squeeze_xyz");
  const Shape xs = x.shape();
  require_rank(xs, 5, "squeeze_xyz");
  const i64 B = xs[0], C = xs[1], X = xs[2], Y = xs[3], Z = xs[4];
  const auto& xv = x.value();
  std::vector<Real> out(static_cast<std::size_t>(B * C), 0.0);
  const Real inv = 1.0 / static_cast<Real>(X * Y * Z);
  std::vector<Real> acc(static_cast<std::size_t>(Z));
  for (i64 b = 0; b < B; ++b)
    for (i64 c = 0; c < C; ++c) {
      // Per-z plane sums first, then the z reduction: at Z == 1 this is the
      // exact arithmetic squeeze_xy performs, so the two agree bitwise.
      std::fill(acc.begin(), acc.end(), 0.0);
      const Real* in = xv.data() + (b * C + c) * X * Y * Z;
      for (i64 ij = 0; ij < X * Y; ++ij)
        for (i64 z = 0; z < Z; ++z) acc[static_cast<std::size_t>(z)] += in[ij * Z + z];
      Real total = 0.0;
      for (i64 z = 0; z < Z; ++z) total += acc[static_cast<std::size_t>(z)];
      out[static_cast<std::size_t>(b * C + c)] = total * inv;
    }
  const int xid = x.id();
  int id = tp->emit(Shape{B, C, 1}, std::move(out),
                    [xid, B, C, X, Y, Z, inv](Tape& t, int self) {
                      const auto& g = t.node(self).grad;
                      auto& gx = t.node(xid).grad;
                      for (i64 b = 0; b < B; ++b)
                        for (i64 c = 0; c < C; ++c) {
                          const Real gv = g[static_cast<std::size_t>(b * C + c)] * inv;
                          Real* gxp = gx.data() + (b * C + c) * X * Y * Z;
                          for (i64 n = 0; n < X * Y * Z; ++n) gxp[n] += gv;
                        }
                    });
  return tp->handle(id);
}

Tensor slice_z(const Tensor& x, i64 lo, i64 hi) {
  Tape* tp = same_tape({x}, "slice_z");
  const Shape xs = x.shape();
  require_rank(xs, 5, "slice_z");
  const i64 B = xs[0], C = xs[1], X = xs[2], Y = xs[3], Z = xs[4];
  if (lo < 0 || hi <= lo || hi > Z)
    throw ShapeError("slice_z: [" + std::to_string(lo) + "," + std::to_string(hi) +
                     ") of Z=" + std::to_string(Z));
  const i64 Zs = hi - lo;
  const auto& xv = x.value();
  std::vector<Real> out(static_cast<std::size_t>(B * C * X * Y * Zs));
  for (i64 bcij = 0; bcij < B * C * X * Y; ++bcij)
    std::copy(xv.begin() + bcij * Z + lo, xv.begin() + bcij * Z + hi,
              out.begin() + bcij * Zs);
  const int xid = x.id();
  int id = tp->emit(Shape{B, C, X, Y, Zs}, std::move(out),
                    [xid, B, C, X, Y, Z, lo, Zs](Tape& t, int self) {
                      const auto& g = t.node(self).grad;
                      auto& gx = t.node(xid).grad;
                      for (i64 bcij = 0; bcij < B * C * X * Y; ++bcij) {
                        Real* dst = gx.data() + bcij * Z + lo;
                        const Real* src = g.data() + bcij * Zs;
                        for (i64 z = 0; z < Zs; ++z) dst[z] += src[z];
                      }
                    });
  return tp->handle(id);
}

Tensor concat_z(const std::vector<Tensor>& slices) {
  if (slices.empty()) throw ShapeError("concat_z: no slices");
  std::vector<Tensor> all(slices);
  Tape* tp = nullptr;
  for (const auto& s : all) {
    if (!s.valid()) throw StateError("concat_z: null tensor");
    if (!tp) tp = s.tape();
    if (s.tape() != tp) throw StateError("concat_z: tensors from different tapes");
  }
  const Shape first = all[0].shape();
  require_rank(first, 5, "concat_z");
  const i64 B = first[0], C = first[1], X = first[2], Y = first[3];
  i64 Z = 0;
  std::vector<i64> zdims;
  std::vector<int> ids;
  for (const auto& s : all) {
    const Shape ss = s.shape();
    require_rank(ss, 5, "concat_z");
    if (ss[0] != B || ss[1] != C || ss[2] != X || ss[3] != Y)
      throw ShapeError("concat_z: slice " + ss.str() + " vs " + first.str());
    zdims.push_back(ss[4]);
    ids.push_back(s.id());
    Z += ss[4];
  }
  std::vector<Real> out(static_cast<std::size_t>(B * C * X * Y * Z));
  i64 zoff = 0;
  for (std::size_t si = 0; si < all.size(); ++si) {
    const auto& sv = all[si].value();
    const i64 Zs = zdims[si];
    for (i64 bcij = 0; bcij < B * C * X * Y; ++bcij)
      std::copy(sv.begin() + bcij * Zs, sv.begin() + (bcij + 1) * Zs,
                out.begin() + bcij * Z + zoff);
    zoff += Zs;
  }
  int id = tp->emit(Shape{B, C, X, Y, Z}, std::move(out),
                    [ids, zdims, B, C, X, Y, Z](Tape& t, int self) {
                      const auto& g = t.node(self).grad;
                      i64 zoff = 0;
                      for (std::size_t si = 0; si < ids.size(); ++si) {
                        auto& gs = t.node(ids[si]).grad;
                        const i64 Zs = zdims[si];
                        for (i64 bcij = 0; bcij < B * C * X * Y; ++bcij) {
                          const Real* src = g.data() + bcij * Z + zoff;
                          Real* dst = gs.data() + bcij * Zs;
                          for (i64 z = 0; z < Zs; ++z) dst[z] += src[z];
                        }
                        zoff += Zs;
                      }
                    });
  return tp->handle(id);
}

// ---------------------------------------------------------------------------
// Softmax / gather / reductions
// ---------------------------------------------------------------------------

Tensor softmax_channels(const Tensor& logits) {
  Tape* tp = same_tape({logits}, "softmax_channels");
  const Shape xs = logits.shape();
  require_rank(xs, 5, "softmax_channels");
  const i64 B = xs[0], C = xs[1], vol = xs[2] * xs[3] * xs[4];
  const auto& xv = logits.value();
  std::vector<Real> out(xv.size());
  for (i64 b = 0; b < B; ++b)
    for (i64 n = 0; n < vol; ++n) {
      const i64 base = b * C * vol + n;
      Real m = xv[static_cast<std::size_t>(base)];
      for (i64 c = 1; c < C; ++c)
        m = std::max(m, xv[static_cast<std::size_t>(base + c * vol)]);
      Real s = 0.0;
      for (i64 c = 0; c < C; ++c) {
        const Real e = std::exp(xv[static_cast<std::size_t>(base + c * vol)] - m);
        out[static_cast<std::size_t>(base + c * vol)] = e;
        s += e;
      }
      const Real inv = 1.0 / s;
      for (i64 c = 0; c < C; ++c) out[static_cast<std::size_t>(base + c * vol)] *= inv;
    }
  const int xid = logits.id();
  int id = tp->emit(xs, std::move(out), [xid, B, C, vol](Tape& t, int self) {
    const auto& g = t.node(self).grad;
    const auto& p = t.node(self).val;
    auto& gx = t.node(xid).grad;
    for (i64 b = 0; b < B; ++b)
      for (i64 n = 0; n < vol; ++n) {
        const i64 base = b * C * vol + n;
        Real dot = 0.0;
        for (i64 c = 0; c < C; ++c) {
          const auto idx = static_cast<std::size_t>(base + c * vol);
          dot += g[idx] * p[idx];
        }
        for (i64 c = 0; c < C; ++c) {
          const auto idx = static_cast<std::size_t>(base + c * vol);
          gx[idx] += p[idx] * (g[idx] - dot);
        }
      }
  });
  return tp->handle(id);
}

Tensor gather_class(const Tensor& probs, const OccupancyGrid& labels) {
  Tape* tp = same_tape({probs}, "gather_class");
  const Shape ps = probs.shape();
  require_rank(ps, 5, "gather_class");
  const i64 B = ps[0], C = ps[1], X = ps[2], Y = ps[3], Z = ps[4];
  if (labels.b != B || labels.x != X || labels.y != Y || labels.z != Z)
    throw ShapeError("gather_class: grid (" + std::to_string(labels.b) + "," +
                     std::to_string(labels.x) + "," + std::to_string(labels.y) + "," +
                     std::to_string(labels.z) + ") vs probs " + ps.str());
  const i64 vol = X * Y * Z;
  const auto& pv = probs.value();
  std::vector<Real> out(static_cast<std::size_t>(B * vol));
  for (i64 b = 0; b < B; ++b)
    for (i64 n = 0; n < vol; ++n) {
      const std::uint8_t cls = labels.labels[static_cast<std::size_t>(b * vol + n)];
      if (cls >= C)
        throw ValidationError("gather_class: label " + std::to_string(cls) +
                              " out of range for " + std::to_string(C) + " classes");
      out[static_cast<std::size_t>(b * vol + n)] =
          pv[static_cast<std::size_t>((b * C + cls) * vol + n)];
    }
  // The closure only needs the label bytes, not the grid object.
  std::vector<std::uint8_t> lab = labels.labels;
  const int pid = probs.id();
  int id = tp->emit(Shape{B, X, Y, Z}, std::move(out),
                    [pid, B, C, vol, lab = std::move(lab)](Tape& t, int self) {
                      const auto& g = t.node(self).grad;
                      auto& gp = t.node(pid).grad;
                      for (i64 b = 0; b < B; ++b)
                        for (i64 n = 0; n < vol; ++n) {
                          const std::uint8_t cls = lab[static_cast<std::size_t>(b * vol + n)];
                          gp[static_cast<std::size_t>((b * C + cls) * vol + n)] +=
                              g[static_cast<std::size_t>(b * vol + n)];
                        }
                    });
  return tp->handle(id);
}

Tensor permute_flat(const Tensor& x, std::vector<i64> perm) {
  Tape* tp = same_tape({x}, "permute_flat");
  const auto& xv = x.value();
  const i64 n = static_cast<i64>(xv.size());
  if (static_cast<i64>(perm.size()) != n)
    throw ValidationError("permute_flat: perm size " + std::to_string(perm.size()) +
                          " vs numel " + std::to_string(n));
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (i64 p : perm) {
    if (p < 0 || p >= n || seen[static_cast<std::size_t>(p)])
      throw ValidationError("permute_flat: not a permutation");
    seen[static_cast<std::size_t>(p)] = true;
  }
  std::vector<Real> out(static_cast<std::size_t>(n));
  for (i64 i = 0; i < n; ++i)
    out[static_cast<std::size_t>(i)] =
        xv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  const int xid = x.id();
  int id = tp->emit(Shape{n}, std::move(out),
                    [xid, pm = std::move(perm)](Tape& t, int self) {
                      const auto& g = t.node(self).grad;
                      auto& gx = t.node(xid).grad;
                      for (std::size_t i = 0; i < g.size(); ++i)
                        gx[static_cast<std::size_t>(pm[i])] += g[i];
                    });
  return tp->handle(id);
}

Tensor sum_all(const Tensor& x) {
  Tape* tp = same_tape({x}, "sum_all");
  const auto& xv = x.value();
  Real s = 0.0;
  for (Real v : xv) s += v;
  const int xid = x.id();
  int id = tp->emit(Shape{1}, {s}, [xid](Tape& t, int self) {
    const Real g = t.node(self).grad[0];
    auto& gx = t.node(xid).grad;
    for (auto& v : gx) v += g;
  });
  return tp->handle(id);
}

Tensor mean_all(const Tensor& x) {
  Tape* tp = same_tape({x}, "mean_all");
  const auto& xv = x.value();
  Real s = 0.0;
  for (Real v : xv) s += v;
  const Real inv = 1.0 / static_cast<Real>(xv.size());
  const int xid = x.id();
  int id = tp->emit(Shape{1}, {s * inv}, [xid, inv](Tape& t, int self) {
    const Real g = t.node(self).grad[0] * inv;
    auto& gx = t.node(xid).grad;
    for (auto& v : gx) v += g;
  });
  return tp->handle(id);
}

Tensor dot_const(const Tensor& x, std::vector<Real> weights) {
  Tape* tp = same_tape({x}, "dot_const");
  const auto& xv = x.value();
  if (weights.size() != xv.size())
    throw ShapeError("dot_const: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(xv.size()) + " values");
  Real s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += weights[i] * xv[i];
  const int xid = x.id();
  int id = tp->emit(Shape{1}, {s}, [xid, w = std::move(weights)](Tape& t, int self) {
    const Real g = t.node(self).grad[0];
    auto& gx = t.node(xid).grad;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += w[i] * g;
  });
  return tp->handle(id);
}

}  // namespace vsocc
