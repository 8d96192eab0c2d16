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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "qft/error.hpp"
#include "qft/tensor.hpp"

namespace qft {
namespace {

TEST(Tensor, ShapeAndFill) {
  Tensor t({2, 3, 4}, 1.5f);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_EQ(t[23], 1.5f);
  t.fill(-2.0f);
  EXPECT_EQ(t[0], -2.0f);
  EXPECT_EQ(shape_str(t.shape()), "[2,3,4]");
}

TEST(Tensor, DataLengthMustMatchShape) {
  try {
    Tensor t({2, 2}, std::vector<float>{1, 2, 3});
    FAIL() << "expected shape mismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
}

TEST(Tensor, ExternalDataRejectsNonFinite) {
  EXPECT_NO_THROW(Tensor::from_external({2}, {1.0f, 2.0f}));
  try {
    Tensor::from_external({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
    FAIL() << "expected non-finite error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFinite);
  }
  EXPECT_THROW(Tensor::from_external({1}, {std::numeric_limits<float>::infinity()}), Error);
}

TEST(Tensor, ReshapeKeepsPayload) {
  const Tensor t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.values(), t.values());
  EXPECT_THROW(t.reshaped({4, 2}), Error);
}

TEST(Tensor, ItemAndAxisChecks) {
  EXPECT_EQ(Tensor::scalar(3.0f).item(), 3.0f);
  EXPECT_THROW(Tensor::vector({1.0f, 2.0f}).item(), Error);
  EXPECT_THROW(Tensor({2}).dim(1), Error);
}

TEST(Tensor, BitEqualDistinguishesSignedZero) {
  const Tensor a = Tensor::vector({0.0f, 1.0f});
  const Tensor b = Tensor::vector({-0.0f, 1.0f});
  EXPECT_TRUE(bit_equal(a, a));
  EXPECT_FALSE(bit_equal(a, b));
  EXPECT_FALSE(bit_equal(a, a.reshaped({2, 1})));
}

TEST(Rounding, HalfAwayFromZero) {
  EXPECT_EQ(round_half_away(2.5f), 3.0f);
  EXPECT_EQ(round_half_away(-2.5f), -3.0f);
  EXPECT_EQ(round_half_away(-0.5f), -1.0f);
  EXPECT_EQ(round_half_away(0.49999997f), 0.0f);
  EXPECT_EQ(round_half_away(2.6), 3.0);
}

}  // namespace
}  // namespace qft
