#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ffdconv/autograd.hpp"
#include "ffdconv/errors.hpp"
#include "ffdconv/parallel.hpp"
#include "ffdconv/tensor.hpp"

namespace ffdconv {

// Which coordinate the spatial filter bank varies along.
enum class DdfAxis { kFreq, kTime, kPixel };

inline const char* ddf_axis_name(DdfAxis a) {
  switch (a) {
    case DdfAxis::kFreq: return "freq";
    case DdfAxis::kTime: return "time";
    case DdfAxis::kPixel: return "pixel";
  }
  return "?";
}

inline DdfAxis ddf_axis_from_name(const std::string& s) {
  if (s == "freq") return DdfAxis::kFreq;
  if (s == "time") return DdfAxis::kTime;
  if (s == "pixel") return DdfAxis::kPixel;
  throw ConfigError("unknown filter axis '" + s + "' (expected freq, time, or pixel)");
}

inline std::size_t ddf_positions(DdfAxis axis, std::size_t T, std::size_t F) {
  switch (axis) {
    case DdfAxis::kFreq: return F;
    case DdfAxis::kTime: return T;
    case DdfAxis::kPixel: return T * F;
  }
  return 0;
}

namespace kernels {

namespace ddf_detail {

// Validates shapes and returns the odd kernel extent K.
template <typename T>
int ddf_validate(const Tensor<T>& x, const Tensor<T>& spatial, const Tensor<T>& channel,
                 DdfAxis axis) {
  if (x.rank() != 4) throw ShapeError("ddf: expected x [B,C,T,F], got " + shape_str(x.shape()));
  if (spatial.rank() != 3 || channel.rank() != 3) {
    throw ShapeError("ddf: expected banks [B,L,K*K] and [B,C,K*K], got " +
                     shape_str(spatial.shape()) + " and " + shape_str(channel.shape()));
  }
  std::size_t B = x.dim(0), C = x.dim(1), Tt = x.dim(2), F = x.dim(3);
  std::size_t L = ddf_positions(axis, Tt, F);
  if (spatial.dim(0) != B || channel.dim(0) != B) throw ShapeError("ddf: batch mismatch");
  if (spatial.dim(1) != L) {
    throw ShapeError("ddf: spatial bank has " + std::to_string(spatial.dim(1)) +
                     " positions, axis '" + ddf_axis_name(axis) + "' wants " + std::to_string(L));
  }
  if (channel.dim(1) != C) {
    throw ShapeError("ddf: channel bank has " + std::to_string(channel.dim(1)) +
                     " channels, input has " + std::to_string(C));
  }
  std::size_t KK = spatial.dim(2);
  if (channel.dim(2) != KK) throw ShapeError("ddf: bank tap counts differ");
  auto K = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(KK))));
  if (K * K != KK || K % 2 == 0) {
    throw ShapeError("ddf: tap count " + std::to_string(KK) + " is not an odd square");
  }
  return static_cast<int>(K);
}

// Invokes fn.template operator()<I>() for I in [0, N). Guarantees the tap
// loops below unroll with compile-time indices, which the autovectorizer
// needs to keep per-tap weight rows in vector registers.
template <std::size_t N, typename Fn>
inline void static_for(Fn&& fn) {
  [&]<std::size_t... Is>(std::index_sequence<Is...>) {
    (fn.template operator()<Is>(), ...);
  }(std::make_index_sequence<N>{});
}

inline std::size_t spatial_index(DdfAxis axis, std::size_t t, std::size_t f, std::size_t F) {
  switch (axis) {
    case DdfAxis::kFreq: return f;
    case DdfAxis::kTime: return t;
    case DdfAxis::kPixel: return t * F + f;
  }
  return 0;
}

// Copies one (b,c) slice into a zero-padded scratch buffer, so the fast paths
// can walk all K*K taps unconditionally: taps over the border read zeros.
// Returns a pointer to the virtual (0,0) element; *rs receives the row stride.
template <typename T>
inline const T* padded_slice(const T* xc, std::size_t Tt, std::size_t F, int P, std::size_t* rs) {
  if (P == 0) {
    *rs = F;
    return xc;
  }
  const std::size_t pad = static_cast<std::size_t>(P);
  const std::size_t PF = F + 2 * pad;
  thread_local std::vector<T> padded;
  padded.assign((Tt + 2 * pad) * PF, T(0));
  for (std::size_t t = 0; t < Tt; ++t)
    std::copy(xc + t * F, xc + (t + 1) * F, padded.begin() + (t + pad) * PF + pad);
  *rs = PF;
  return padded.data() + pad * PF + pad;
}

// Applies one K*K kernel at (t,f) with zero padding. Bounds are clamped here;
// the fused fast paths below avoid calling this in the interior.
template <typename T>
inline T apply_taps(const T* xc, const T* w, int K, std::ptrdiff_t t, std::ptrdiff_t f,
                    std::ptrdiff_t Tt, std::ptrdiff_t F) {
  const int P = K / 2;
  const int kt_lo = static_cast<int>(std::max<std::ptrdiff_t>(0, P - t));
  const int kt_hi = static_cast<int>(std::min<std::ptrdiff_t>(K, Tt + P - t));
  const int kf_lo = static_cast<int>(std::max<std::ptrdiff_t>(0, P - f));
  const int kf_hi = static_cast<int>(std::min<std::ptrdiff_t>(K, F + P - f));
  T acc = T(0);
  for (int kt = kt_lo; kt < kt_hi; ++kt) {
    const T* xr = xc + (t + kt - P) * F + (f - P);
    const T* wr = w + kt * K;
    for (int kf = kf_lo; kf < kf_hi; ++kf) acc += wr[kf] * xr[kf];
  }
  return acc;
}

// Fused forward with compile-time K. One (b,c) slice per call; writes only
// out[b,c,:,:], so callers may parallelize over b*C.
template <typename T, int K>
void fused_fwd_slice(const T* xc, const T* sp_all, const T* chp, T* oc, std::size_t Tt,
                     std::size_t F, DdfAxis axis) {
  constexpr int KK = K * K;
  constexpr int P = K / 2;
  const auto iT = static_cast<std::ptrdiff_t>(Tt);
  const auto iF = static_cast<std::ptrdiff_t>(F);
  T w[KK];
  if (axis == DdfAxis::kFreq) {
    // Per-tap weight rows, transposed so weights are contiguous along f:
    // bank[k*F + f] = spatial[f][k] * channel[k].
    thread_local std::vector<T> bank;
    bank.resize(static_cast<std::size_t>(KK) * F);
    for (std::size_t f = 0; f < F; ++f) {
      const T* sp = sp_all + f * KK;
      for (int k = 0; k < KK; ++k) bank[static_cast<std::size_t>(k) * F + f] = sp[k] * chp[k];
    }
    std::size_t rs;
    const T* src = padded_slice(xc, Tt, F, P, &rs);
#if defined(__AVX512F__)
    constexpr std::size_t BW = sizeof(T) == 4 ? 16 : 8;
#else
    constexpr std::size_t BW = sizeof(T) == 4 ? 8 : 4;
#endif
    if (F >= BW) {
      // Column blocks of fixed width: tap weights stay in registers across
      // the whole row sweep while input rows stream. The final block is
      // shifted left to stay in range; the overlap recomputes identical
      // values.
      for (std::size_t s = 0;;) {
        const bool last = s + BW >= F;
        if (last) s = F - BW;
        T wv[KK][BW];
        for (int k = 0; k < KK; ++k)
          for (std::size_t j = 0; j < BW; ++j)
            wv[k][j] = bank[static_cast<std::size_t>(k) * F + s + j];
        for (std::size_t t = 0; t < Tt; ++t) {
          const T* __restrict xr = src +
                                   (static_cast<std::ptrdiff_t>(t) - P) *
                                       static_cast<std::ptrdiff_t>(rs) +
                                   (static_cast<std::ptrdiff_t>(s) - P);
          T* __restrict od = oc + t * F + s;
          T acc[BW];
          for (std::size_t j = 0; j < BW; ++j) acc[j] = wv[0][j] * xr[j];
          static_for<static_cast<std::size_t>(KK) - 1>([&]<std::size_t KI>() {
            constexpr std::size_t k = KI + 1;
            constexpr std::size_t kK = static_cast<std::size_t>(K);
            const T* __restrict xk = xr + (k / kK) * rs + (k % kK);
            for (std::size_t j = 0; j < BW; ++j) acc[j] += wv[k][j] * xk[j];
          });
          for (std::size_t j = 0; j < BW; ++j) od[j] = acc[j];
        }
        if (last) break;
        s += BW;
      }
    } else {
      for (std::size_t t = 0; t < Tt; ++t) {
        T* __restrict od = oc + t * F;
        const T* __restrict bk = bank.data();
        const T* __restrict x0 =
            src + (static_cast<std::ptrdiff_t>(t) - P) * static_cast<std::ptrdiff_t>(rs) - P;
        for (std::size_t f = 0; f < F; ++f) {
          T acc = bk[f] * x0[f];
          for (int k = 1; k < KK; ++k)
            acc += bk[static_cast<std::size_t>(k) * F + f] *
                   x0[static_cast<std::size_t>(k / K) * rs + f + static_cast<std::size_t>(k % K)];
          od[f] = acc;
        }
      }
    }
  } else if (axis == DdfAxis::kTime) {
    std::size_t rs;
    const T* src = padded_slice(xc, Tt, F, P, &rs);
    for (std::size_t t = 0; t < Tt; ++t) {
      const T* sp = sp_all + t * KK;
      for (int k = 0; k < KK; ++k) w[k] = sp[k] * chp[k];
      // Weights are fixed along the row, so the f sweep is a plain stencil.
      const T* __restrict x0 =
          src + (static_cast<std::ptrdiff_t>(t) - P) * static_cast<std::ptrdiff_t>(rs) - P;
      T* __restrict od = oc + t * F;
      for (std::size_t f = 0; f < F; ++f) {
        T acc = w[0] * x0[f];
        static_for<static_cast<std::size_t>(KK) - 1>([&]<std::size_t KI>() {
          constexpr std::size_t k = KI + 1;
          constexpr std::size_t kK = static_cast<std::size_t>(K);
          acc += w[k] * x0[(k / kK) * rs + f + (k % kK)];
        });
        od[f] = acc;
      }
    }
  } else {
    for (std::size_t t = 0; t < Tt; ++t) {
      bool t_in = static_cast<std::ptrdiff_t>(t) >= P && static_cast<std::ptrdiff_t>(t) + P < iT;
      T* orow = oc + t * F;
      for (std::size_t f = 0; f < F; ++f) {
        const T* sp = sp_all + (t * F + f) * KK;
        for (int k = 0; k < KK; ++k) w[k] = sp[k] * chp[k];
        if (t_in && static_cast<std::ptrdiff_t>(f) >= P &&
            static_cast<std::ptrdiff_t>(f) + P < iF) {
          const T* xp = xc + (t - P) * F + (f - P);
          T acc = T(0);
          for (int kt = 0; kt < K; ++kt) {
            const T* xr = xp + kt * F;
            const T* wr = w + kt * K;
            for (int kf = 0; kf < K; ++kf) acc += wr[kf] * xr[kf];
          }
          orow[f] = acc;
        } else {
          orow[f] = apply_taps(xc, w, K, t, f, iT, iF);
        }
      }
    }
  }
}

// Generic fallback for odd K outside {1,3,5}.
template <typename T>
void fused_fwd_slice_generic(const T* xc, const T* sp_all, const T* chp, T* oc, std::size_t Tt,
                             std::size_t F, DdfAxis axis, int K) {
  const int KK = K * K;
  std::vector<T> w(KK);
  const auto iT = static_cast<std::ptrdiff_t>(Tt);
  const auto iF = static_cast<std::ptrdiff_t>(F);
  for (std::size_t t = 0; t < Tt; ++t) {
    for (std::size_t f = 0; f < F; ++f) {
      const T* sp = sp_all + spatial_index(axis, t, f, F) * KK;
      for (int k = 0; k < KK; ++k) w[k] = sp[k] * chp[k];
      oc[t * F + f] = apply_taps(xc, w.data(), K, t, f, iT, iF);
    }
  }
}

// Backward for one batch element: accumulates dx (if non-null) over all
// channels plus the two bank gradients. Writes touch only b-local slices, so
// callers may parallelize over b.
template <typename T, int K>
void fused_bwd_batch(const T* g, const T* xb, const T* sb, const T* chb, T* dxb, T* dsb, T* dcb,
                     std::size_t C, std::size_t Tt, std::size_t F, DdfAxis axis) {
  constexpr int KK = K * K;
  constexpr int P = K / 2;
  const auto iT = static_cast<std::ptrdiff_t>(Tt);
  const auto iF = static_cast<std::ptrdiff_t>(F);
  T w[KK];
  for (std::size_t c = 0; c < C; ++c) {
    const T* xc = xb + c * Tt * F;
    const T* gc = g + c * Tt * F;
    const T* chp = chb + c * KK;
    T* dxc = dxb ? dxb + c * Tt * F : nullptr;
    T* dcp = dcb ? dcb + c * KK : nullptr;
    for (std::size_t t = 0; t < Tt; ++t) {
      const int kt_lo = static_cast<int>(std::max<std::ptrdiff_t>(0, P - static_cast<std::ptrdiff_t>(t)));
      const int kt_hi = static_cast<int>(std::min<std::ptrdiff_t>(K, iT + P - static_cast<std::ptrdiff_t>(t)));
      for (std::size_t f = 0; f < F; ++f) {
        const T gv = gc[t * F + f];
        if (gv == T(0)) continue;
        const std::size_t l = spatial_index(axis, t, f, F);
        const T* sp = sb + l * KK;
        const int kf_lo = static_cast<int>(std::max<std::ptrdiff_t>(0, P - static_cast<std::ptrdiff_t>(f)));
        const int kf_hi = static_cast<int>(std::min<std::ptrdiff_t>(K, iF + P - static_cast<std::ptrdiff_t>(f)));
        if (dxc) {
          for (int k = 0; k < KK; ++k) w[k] = sp[k] * chp[k];
          for (int kt = kt_lo; kt < kt_hi; ++kt) {
            T* dxr = dxc + (static_cast<std::ptrdiff_t>(t) + kt - P) * F +
                     (static_cast<std::ptrdiff_t>(f) - P);
            const T* wr = w + kt * K;
            for (int kf = kf_lo; kf < kf_hi; ++kf) dxr[kf] += gv * wr[kf];
          }
        }
        T* dsp = dsb ? dsb + l * KK : nullptr;
        if (dsp || dcp) {
          for (int kt = kt_lo; kt < kt_hi; ++kt) {
            const T* xr = xc + (static_cast<std::ptrdiff_t>(t) + kt - P) * F +
                          (static_cast<std::ptrdiff_t>(f) - P);
            for (int kf = kf_lo; kf < kf_hi; ++kf) {
              const int k = kt * K + kf;
              const T prod = gv * xr[kf];
              if (dsp) dsp[k] += prod * chp[k];
              if (dcp) dcp[k] += prod * sp[k];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void fused_bwd_batch_generic(const T* g, const T* xb, const T* sb, const T* chb, T* dxb, T* dsb,
                             T* dcb, std::size_t C, std::size_t Tt, std::size_t F, DdfAxis axis,
                             int K) {
  const int KK = K * K;
  const int P = K / 2;
  const auto iT = static_cast<std::ptrdiff_t>(Tt);
  const auto iF = static_cast<std::ptrdiff_t>(F);
  for (std::size_t c = 0; c < C; ++c) {
    const T* xc = xb + c * Tt * F;
    const T* gc = g + c * Tt * F;
    const T* chp = chb + c * KK;
    T* dxc = dxb ? dxb + c * Tt * F : nullptr;
    T* dcp = dcb ? dcb + c * KK : nullptr;
    for (std::size_t t = 0; t < Tt; ++t)
      for (std::size_t f = 0; f < F; ++f) {
        const T gv = gc[t * F + f];
        if (gv == T(0)) continue;
        const std::size_t l = spatial_index(axis, t, f, F);
        const T* sp = sb + l * KK;
        T* dsp = dsb ? dsb + l * KK : nullptr;
        for (int kt = 0; kt < K; ++kt) {
          std::ptrdiff_t it = static_cast<std::ptrdiff_t>(t) + kt - P;
          if (it < 0 || it >= iT) continue;
          for (int kf = 0; kf < K; ++kf) {
            std::ptrdiff_t ff = static_cast<std::ptrdiff_t>(f) + kf - P;
            if (ff < 0 || ff >= iF) continue;
            const int k = kt * K + kf;
            const T xv = xc[it * iF + ff];
            if (dxc) dxc[it * iF + ff] += gv * sp[k] * chp[k];
            const T prod = gv * xv;
            if (dsp) dsp[k] += prod * chp[k];
            if (dcp) dcp[k] += prod * sp[k];
          }
        }
      }
  }
}

}  // namespace ddf_detail

// Fused dynamic filtering: out[b,c,t,f] = sum_k s[b,l(t,f),k] * ch[b,c,k] *
// x_padded[b,c,t+dt(k),f+df(k)]. Never materializes the combined per-position
// kernels; each worker writes a disjoint (b,c) output slice.
template <typename T>
void ddf_forward_into(const Tensor<T>& x, const Tensor<T>& spatial, const Tensor<T>& channel,
                      DdfAxis axis, Tensor<T>& out) {
  const int K = ddf_detail::ddf_validate(x, spatial, channel, axis);
  std::size_t B = x.dim(0), C = x.dim(1), Tt = x.dim(2), F = x.dim(3);
  std::size_t L = ddf_positions(axis, Tt, F);
  const int KK = K * K;
  if (!out.same_shape(x)) {
    throw ShapeError("ddf forward: output " + shape_str(out.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  parallel::parallel_for(
      B * C,
      [&](std::size_t lo, std::size_t hi) {
        for (std::size_t bc = lo; bc < hi; ++bc) {
          std::size_t b = bc / C;
          const T* xc = x.data() + bc * Tt * F;
          const T* sp = spatial.data() + b * L * KK;
          const T* chp = channel.data() + bc * KK;
          T* oc = out.data() + bc * Tt * F;
          switch (K) {
            case 1: ddf_detail::fused_fwd_slice<T, 1>(xc, sp, chp, oc, Tt, F, axis); break;
            case 3: ddf_detail::fused_fwd_slice<T, 3>(xc, sp, chp, oc, Tt, F, axis); break;
            case 5: ddf_detail::fused_fwd_slice<T, 5>(xc, sp, chp, oc, Tt, F, axis); break;
            default: ddf_detail::fused_fwd_slice_generic(xc, sp, chp, oc, Tt, F, axis, K); break;
          }
        }
      },
      1);
}

template <typename T>
Tensor<T> ddf_forward(const Tensor<T>& x, const Tensor<T>& spatial, const Tensor<T>& channel,
                      DdfAxis axis) {
  Tensor<T> out(x.shape());
  ddf_forward_into(x, spatial, channel, axis, out);
  return out;
}

template <typename T>
struct DdfGrads {
  Tensor<T> dx, dspatial, dchannel;
};

template <typename T>
DdfGrads<T> ddf_backward(const Tensor<T>& g, const Tensor<T>& x, const Tensor<T>& spatial,
                         const Tensor<T>& channel, DdfAxis axis, bool need_dx = true,
                         bool need_dspatial = true, bool need_dchannel = true) {
  const int K = ddf_detail::ddf_validate(x, spatial, channel, axis);
  if (!g.same_shape(x)) {
    throw ShapeError("ddf backward: gradient " + shape_str(g.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  std::size_t B = x.dim(0), C = x.dim(1), Tt = x.dim(2), F = x.dim(3);
  std::size_t L = ddf_positions(axis, Tt, F);
  const int KK = K * K;
  DdfGrads<T> out;
  if (need_dx) out.dx = Tensor<T>::zeros(x.shape());
  if (need_dspatial) out.dspatial = Tensor<T>::zeros(spatial.shape());
  if (need_dchannel) out.dchannel = Tensor<T>::zeros(channel.shape());
  parallel::parallel_for(
      B,
      [&](std::size_t blo, std::size_t bhi) {
        for (std::size_t b = blo; b < bhi; ++b) {
          const T* gb = g.data() + b * C * Tt * F;
          const T* xb = x.data() + b * C * Tt * F;
          const T* sb = spatial.data() + b * L * KK;
          const T* chb = channel.data() + b * C * KK;
          T* dxb = need_dx ? out.dx.data() + b * C * Tt * F : nullptr;
          T* dsb = need_dspatial ? out.dspatial.data() + b * L * KK : nullptr;
          T* dcb = need_dchannel ? out.dchannel.data() + b * C * KK : nullptr;
          switch (K) {
            case 1:
              ddf_detail::fused_bwd_batch<T, 1>(gb, xb, sb, chb, dxb, dsb, dcb, C, Tt, F, axis);
              break;
            case 3:
              ddf_detail::fused_bwd_batch<T, 3>(gb, xb, sb, chb, dxb, dsb, dcb, C, Tt, F, axis);
              break;
            case 5:
              ddf_detail::fused_bwd_batch<T, 5>(gb, xb, sb, chb, dxb, dsb, dcb, C, Tt, F, axis);
              break;
            default:
              ddf_detail::fused_bwd_batch_generic(gb, xb, sb, chb, dxb, dsb, dcb, C, Tt, F, axis,
                                                  K);
              break;
          }
        }
      },
      1);
  return out;
}

// Oracle: materializes the full combined kernel tensor [B,L,C,K*K], then runs
// the textbook seven-loop application with per-tap bounds checks. Kept naive
// on purpose; the fused path is validated against it.
template <typename T>
void ddf_reference_into(const Tensor<T>& x, const Tensor<T>& spatial, const Tensor<T>& channel,
                        DdfAxis axis, Tensor<T>& out) {
  const int K = ddf_detail::ddf_validate(x, spatial, channel, axis);
  std::size_t B = x.dim(0), C = x.dim(1), Tt = x.dim(2), F = x.dim(3);
  std::size_t L = ddf_positions(axis, Tt, F);
  const int KK = K * K;
  const int P = K / 2;
  if (!out.same_shape(x)) {
    throw ShapeError("ddf reference: output " + shape_str(out.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  Tensor<T> combined({B, L, C, static_cast<std::size_t>(KK)});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t c = 0; c < C; ++c)
        for (int k = 0; k < KK; ++k)
          combined[((b * L + l) * C + c) * KK + k] =
              spatial[(b * L + l) * KK + k] * channel[(b * C + c) * KK + k];
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < Tt; ++t)
        for (std::size_t f = 0; f < F; ++f) {
          std::size_t l = ddf_detail::spatial_index(axis, t, f, F);
          T acc = T(0);
          for (int kt = 0; kt < K; ++kt)
            for (int kf = 0; kf < K; ++kf) {
              std::ptrdiff_t it = static_cast<std::ptrdiff_t>(t) + kt - P;
              std::ptrdiff_t ff = static_cast<std::ptrdiff_t>(f) + kf - P;
              if (it < 0 || it >= static_cast<std::ptrdiff_t>(Tt) || ff < 0 ||
                  ff >= static_cast<std::ptrdiff_t>(F))
                continue;
              acc += combined[((b * L + l) * C + c) * KK + kt * K + kf] *
                     x[((b * C + c) * Tt + it) * F + ff];
            }
          out[((b * C + c) * Tt + t) * F + f] = acc;
        }
}

template <typename T>
Tensor<T> ddf_reference(const Tensor<T>& x, const Tensor<T>& spatial, const Tensor<T>& channel,
                        DdfAxis axis) {
  Tensor<T> out(x.shape());
  ddf_reference_into(x, spatial, channel, axis, out);
  return out;
}

}  // namespace kernels

// Tape op wrapping the fused kernels.
template <typename T>
Var ddf(Tape<T>& tape, Var x, Var spatial, Var channel, DdfAxis axis) {
  Tensor<T> out = kernels::ddf_forward(tape.value(x), tape.value(spatial), tape.value(channel), axis);
  return tape.emplace("ddf", {x, spatial, channel}, std::move(out),
                      [x, spatial, channel, axis](Tape<T>& t, std::size_t id) {
                        const Tensor<T>& g = t.mutable_node(id).grad;
                        bool nx = t.needs_grad(x);
                        bool ns = t.needs_grad(spatial);
                        bool nc = t.needs_grad(channel);
                        auto grads = kernels::ddf_backward(g, t.value(x), t.value(spatial),
                                                           t.value(channel), axis, nx, ns, nc);
                        if (nx) t.accumulate_grad(x, grads.dx);
                        if (ns) t.accumulate_grad(spatial, grads.dspatial);
                        if (nc) t.accumulate_grad(channel, grads.dchannel);
                      });
}

}  // namespace ffdconv
