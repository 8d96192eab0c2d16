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

#pragma once

#include <cstddef>
#include <vector>

#include "qft/tensor.hpp"

namespace qft::kernels {

struct ConvGeom {
  std::size_t batch = 0, cin = 0, h = 0, w = 0;
  std::size_t cout = 0, kh = 0, kw = 0;
  std::size_t stride = 1, pad = 0;
  std::size_t ho = 0, wo = 0;

  std::size_t patch() const { return cin * kh * kw; }
  std::size_t positions() const { return batch * ho * wo; }
};

ConvGeom conv_geom(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad,
                   bool depthwise);

/// Dense convolution through an im2col buffer of shape [patch, positions];
/// the buffer is kept for the backward pass.
void conv2d_forward(const ConvGeom& g, const float* x, const float* w, float pad_value,
                    float* y, std::vector<float>& col);
void conv2d_backward(const ConvGeom& g, const std::vector<float>& col, const float* w,
                     const float* dy, float* dx, float* dw);

void depthwise_forward(const ConvGeom& g, const float* x, const float* w, float pad_value,
                       float* y);
void depthwise_backward(const ConvGeom& g, const float* x, const float* w, float pad_value,
                        const float* dy, float* dx, float* dw);

/// c[m,n] = sum_k a[m,k] b[k,n]
void matmul(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
            std::size_t n);
/// da[m,k] += sum_n dc[m,n] b[k,n];  db[k,n] += sum_m a[m,k] dc[m,n]
void matmul_backward(const float* a, const float* b, const float* dc, float* da, float* db,
                     std::size_t m, std::size_t k, std::size_t n);

/// Integer reference convolution used by the deployment pipeline.
/// Returns false (and stops) if any partial sum leaves (-limit, limit).
bool conv2d_int(const ConvGeom& g, const int* x, const int* w, int pad_value,
                const long long* bias, long long limit, long long* acc);
bool depthwise_int(const ConvGeom& g, const int* x, const int* w, int pad_value,
                   const long long* bias, long long limit, long long* acc);

}  // namespace qft::kernels
