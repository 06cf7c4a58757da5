#include <gtest/gtest.h>

#include "dpn/tensor.hpp"
#include "oracles.hpp"

using dpn::Shape;
using dpn::Tensor;

TEST(Shape, NumelAndRank) {
    Shape s{2, 3, 4, 5};
    EXPECT_EQ(s.rank(), 4u);
    EXPECT_EQ(s.numel(), 120u);
    EXPECT_EQ(s.str(), "(2,3,4,5)");
    EXPECT_EQ(Shape{7}.numel(), 7u);
    EXPECT_EQ(Shape{}.numel(), 1u);
}

TEST(Tensor, DataLengthMustMatchShape) {
    EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>(3)), dpn::ShapeError);
    Tensor<float> t(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
    EXPECT_EQ(t.size(), 4u);
}

TEST(Tensor, RowMajorNchwOffsets) {
    auto t = Tensor<double>::nchw(2, 3, 4, 5);
    EXPECT_EQ(t.offset(0, 0, 0, 1), 1u);
    EXPECT_EQ(t.offset(0, 0, 1, 0), 5u);
    EXPECT_EQ(t.offset(0, 1, 0, 0), 20u);
    EXPECT_EQ(t.offset(1, 0, 0, 0), 60u);
}

TEST(Tensor, CropCopiesWindow) {
    auto t = Tensor<float>::nchw(1, 1, 4, 4);
    for (std::size_t i = 0; i < 16; ++i) t[i] = static_cast<float>(i);
    auto c = dpn::crop(t, 1, 2, 2, 2);
    EXPECT_EQ(c.shape(), Shape::nchw(1, 1, 2, 2));
    EXPECT_EQ(c[0], 6.0f);
    EXPECT_EQ(c[3], 11.0f);
    EXPECT_THROW(dpn::crop(t, 3, 3, 2, 2), dpn::ShapeError);
}

TEST(Reflect, IndexFoldsWithoutRepeatingEdge) {
    // 0 1 2 3 | 2 1 0 1 2 3 ...
    EXPECT_EQ(dpn::reflect_index(-1, 4), 1u);
    EXPECT_EQ(dpn::reflect_index(-3, 4), 3u);
    EXPECT_EQ(dpn::reflect_index(4, 4), 2u);
    EXPECT_EQ(dpn::reflect_index(6, 4), 0u);
    EXPECT_EQ(dpn::reflect_index(7, 4), 1u);
    EXPECT_EQ(dpn::reflect_index(-50, 1), 0u);
}

TEST(Reflect, WindowInsideIsPlainCrop) {
    auto t = oracle::random_tensor<float>(Shape::nchw(2, 3, 8, 8), 5);
    EXPECT_EQ(dpn::reflect_window(t, 2, 1, 4, 5), dpn::crop(t, 2, 1, 4, 5));
}

TEST(Reflect, LargePadIsFoldedPeriodically) {
    auto t = oracle::random_tensor<float>(Shape::nchw(1, 1, 3, 3), 9);
    auto w = dpn::reflect_window(t, -20, -20, 50, 50);
    for (std::size_t y = 0; y < 50; ++y)
        for (std::size_t x = 0; x < 50; ++x)
            ASSERT_EQ(w.at(0, 0, y, x), t.at(0, 0, dpn::reflect_index(static_cast<long long>(y) - 20, 3),
                                             dpn::reflect_index(static_cast<long long>(x) - 20, 3)));
}
