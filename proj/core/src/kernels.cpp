/*
 * Copyright 2026 The qft Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "kernels.hpp"

#include <algorithm>
#include <cstdlib>

#include "qft/error.hpp"

namespace qft::kernels {

ConvGeom conv_geom(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad,
                   bool depthwise) {
  require(x.size() == 4, ErrorCode::kShapeMismatch, "conv input must be rank 4, got " + shape_str(x));
  require(w.size() == 4, ErrorCode::kShapeMismatch, "conv kernel must be rank 4, got " + shape_str(w));
  require(stride >= 1, ErrorCode::kInvalidArgument, "conv stride must be >= 1");
  ConvGeom g;
  g.batch = x[0];
  g.cin = x[1];
  g.h = x[2];
  g.w = x[3];
  g.cout = w[0];
  g.kh = w[2];
  g.kw = w[3];
  g.stride = stride;
  g.pad = pad;
  if (depthwise) {
    require(w[1] == 1 && w[0] == g.cin, ErrorCode::kShapeMismatch,
            "depthwise kernel " + shape_str(w) + " incompatible with input " + shape_str(x));
  } else {
    require(w[1] == g.cin, ErrorCode::kShapeMismatch,
            "conv kernel " + shape_str(w) + " incompatible with input " + shape_str(x));
  }
  require(g.h + 2 * pad >= g.kh && g.w + 2 * pad >= g.kw, ErrorCode::kShapeMismatch,
          "conv kernel larger than padded input");
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  return g;
}

namespace {

// Maps output position + kernel tap to an input index, or -1 inside padding.
inline long in_index(const ConvGeom& g, std::size_t b, std::size_t ci, std::size_t oy,
                     std::size_t ox, std::size_t ky, std::size_t kx) {
  const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
  const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
  if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w)) return -1;
  return static_cast<long>(((b * g.cin + ci) * g.h + static_cast<std::size_t>(iy)) * g.w +
                           static_cast<std::size_t>(ix));
}

}  // namespace

void conv2d_forward(const ConvGeom& g, const float* x, const float* w, float pad_value,
                    float* y, std::vector<float>& col) {
  const std::size_t K = g.patch();
  const std::size_t P = g.positions();
  const std::size_t hw = g.ho * g.wo;
  col.assign(K * P, 0.0f);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        float* row = col.data() + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long idx = in_index(g, b, ci, oy, ox, ky, kx);
              row[b * hw + oy * g.wo + ox] = idx < 0 ? pad_value : x[idx];
            }
          }
        }
      }
    }
  }
  std::vector<float> acc(P);
  for (std::size_t co = 0; co < g.cout; ++co) {
    std::fill(acc.begin(), acc.end(), 0.0f);
    const float* wrow = w + co * K;
    for (std::size_t k = 0; k < K; ++k) {
      const float wk = wrow[k];
      const float* crow = col.data() + k * P;
      float* a = acc.data();
      for (std::size_t p = 0; p < P; ++p) a[p] += wk * crow[p];
    }
    for (std::size_t b = 0; b < g.batch; ++b) {
      std::copy_n(acc.data() + b * hw, hw, y + (b * g.cout + co) * hw);
    }
  }
}

void conv2d_backward(const ConvGeom& g, const std::vector<float>& col, const float* w,
                     const float* dy, float* dx, float* dw) {
  const std::size_t K = g.patch();
  const std::size_t P = g.positions();
  const std::size_t hw = g.ho * g.wo;
  std::vector<float> dyt(g.cout * P);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      std::copy_n(dy + (b * g.cout + co) * hw, hw, dyt.data() + co * P + b * hw);
    }
  }
  if (dw) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const float* drow = dyt.data() + co * P;
      for (std::size_t k = 0; k < K; ++k) {
        const float* crow = col.data() + k * P;
        float s = 0.0f;
        for (std::size_t p = 0; p < P; ++p) s += drow[p] * crow[p];
        dw[co * K + k] += s;
      }
    }
  }
  if (dx) {
    std::vector<float> dcol(K * P, 0.0f);
    for (std::size_t co = 0; co < g.cout; ++co) {
      const float* drow = dyt.data() + co * P;
      const float* wrow = w + co * K;
      for (std::size_t k = 0; k < K; ++k) {
        const float wk = wrow[k];
        float* dc = dcol.data() + k * P;
        for (std::size_t p = 0; p < P; ++p) dc[p] += wk * drow[p];
      }
    }
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const float* row = dcol.data() + ((ci * g.kh + ky) * g.kw + kx) * P;
          for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t oy = 0; oy < g.ho; ++oy) {
              for (std::size_t ox = 0; ox < g.wo; ++ox) {
                const long idx = in_index(g, b, ci, oy, ox, ky, kx);
                if (idx >= 0) dx[idx] += row[b * hw + oy * g.wo + ox];
              }
            }
          }
        }
      }
    }
  }
}

void depthwise_forward(const ConvGeom& g, const float* x, const float* w, float pad_value,
                       float* y) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t c = 0; c < g.cin; ++c) {
      const float* wk = w + c * g.kh * g.kw;
      float* out = y + (b * g.cin + c) * g.ho * g.wo;
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          float s = 0.0f;
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const long idx = in_index(g, b, c, oy, ox, ky, kx);
              s += wk[ky * g.kw + kx] * (idx < 0 ? pad_value : x[idx]);
            }
          }
          out[oy * g.wo + ox] = s;
        }
      }
    }
  }
}

void depthwise_backward(const ConvGeom& g, const float* x, const float* w, float pad_value,
                        const float* dy, float* dx, float* dw) {
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t c = 0; c < g.cin; ++c) {
      const float* wk = w + c * g.kh * g.kw;
      const float* d = dy + (b * g.cin + c) * g.ho * g.wo;
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          const float go = d[oy * g.wo + ox];
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const long idx = in_index(g, b, c, oy, ox, ky, kx);
              const float xv = idx < 0 ? pad_value : x[idx];
              if (dw) dw[c * g.kh * g.kw + ky * g.kw + kx] += go * xv;
              if (dx && idx >= 0) dx[idx] += go * wk[ky * g.kw + kx];
            }
          }
        }
      }
    }
  }
}

void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
            std::size_t n) {
  std::fill(c, c + m * n, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const float av = a[i * k + j];
      const float* brow = b + j * n;
      for (std::size_t q = 0; q < n; ++q) crow[q] += av * brow[q];
    }
  }
}

void matmul_backward(const float* a, const float* b, const float* dc, float* da, float* db,
                     std::size_t m, std::size_t k, std::size_t n) {
  if (da) {
    for (std::size_t i = 0; i < m; ++i) {
      const float* drow = dc + i * n;
      for (std::size_t j = 0; j < k; ++j) {
        const float* brow = b + j * n;
        float s = 0.0f;
        for (std::size_t q = 0; q < n; ++q) s += drow[q] * brow[q];
        da[i * k + j] += s;
      }
    }
  }
  if (db) {
    for (std::size_t i = 0; i < m; ++i) {
      const float* drow = dc + i * n;
      for (std::size_t j = 0; j < k; ++j) {
        const float av = a[i * k + j];
        float* dbrow = db + j * n;
        for (std::size_t q = 0; q < n; ++q) dbrow[q] += av * drow[q];
      }
    }
  }
}

bool conv2d_int(const ConvGeom& g, const int* x, const int* w, int pad_value,
                const long long* bias, long long limit, long long* acc) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const int* wk = w + co * g.patch();
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          long long s = bias[co];
          if (std::llabs(s) >= limit) return false;
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            for (std::size_t ky = 0; ky < g.kh; ++ky) {
              for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const long idx = in_index(g, b, ci, oy, ox, ky, kx);
                const long long xv = idx < 0 ? pad_value : x[idx];
                s += xv * wk[(ci * g.kh + ky) * g.kw + kx];
                if (std::llabs(s) >= limit) return false;
              }
            }
          }
          acc[(b * g.cout + co) * hw + oy * g.wo + ox] = s;
        }
      }
    }
  }
  return true;
}

bool depthwise_int(const ConvGeom& g, const int* x, const int* w, int pad_value,
                   const long long* bias, long long limit, long long* acc) {
  const std::size_t hw = g.ho * g.wo;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t c = 0; c < g.cin; ++c) {
      const int* wk = w + c * g.kh * g.kw;
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          long long s = bias[c];
          if (std::llabs(s) >= limit) return false;
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const long idx = in_index(g, b, c, oy, ox, ky, kx);
              const long long xv = idx < 0 ? pad_value : x[idx];
              s += xv * wk[ky * g.kw + kx];
              if (std::llabs(s) >= limit) return false;
            }
          }
          acc[(b * g.cin + c) * hw + oy * g.wo + ox] = s;
        }
      }
    }
  }
  return true;
}

}  // namespace qft::kernels
