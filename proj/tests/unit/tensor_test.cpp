#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <sstream>

#include "helpers.hpp"
#include "sparseattn/errors.hpp"
#include "sparseattn/tensor.hpp"

namespace sa = sparseattn;

TEST(Tensor, ShapeAndDataLengthAgree) {
  sa::Tensor t({2, 3, 4}, 1.5);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(2), 4u);
  EXPECT_THROW(sa::Tensor({2, 2}, std::vector<double>{1, 2, 3}), sa::DimensionError);
  EXPECT_THROW(t.dim(3), sa::DimensionError);
}

TEST(Tensor, ScalarHoldsOneValue) {
  const auto s = sa::Tensor::scalar(2.5);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s.item(), 2.5);
  EXPECT_THROW(sa::Tensor({2}).item(), sa::DimensionError);
}

TEST(Tensor, MatrixIsRowMajor) {
  const auto m = sa::Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.shape(), (sa::Shape{2, 3}));
  EXPECT_DOUBLE_EQ(m.at(1, 0), 4.0);
  EXPECT_DOUBLE_EQ(m[5], 6.0);
}

TEST(Tensor, ReshapeKeepsData) {
  const auto m = sa::Tensor::matrix({{1, 2}, {3, 4}});
  const auto r = m.reshaped({4});
  EXPECT_EQ(r.shape(), (sa::Shape{4}));
  EXPECT_DOUBLE_EQ(r[3], 4.0);
  EXPECT_THROW(m.reshaped({3}), sa::DimensionError);
}

TEST(Tensor, FinitenessCheck) {
  sa::Tensor t({3}, 0.0);
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(TensorIo, BinaryRoundTripIsBitExact) {
  const auto t = sa::testing::random_tensor({3, 5, 2}, 11, -1e6, 1e6);
  std::stringstream ss;
  sa::write_tensor(ss, t);
  const sa::Tensor back = sa::read_tensor(ss);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(std::memcmp(back.data().data(), t.data().data(), t.size() * sizeof(double)), 0);
}

TEST(TensorIo, HeaderLayout) {
  std::stringstream ss;
  sa::write_tensor(ss, sa::Tensor({2, 3}, 1.0));
  const std::string bytes = ss.str();
  ASSERT_EQ(bytes.size(), 4u + 4u + 2u * 4u + 6u * 8u);
  EXPECT_EQ(bytes.substr(0, 4), "SATN");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u);  // little-endian rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 3u);
}

TEST(TensorIo, RejectsBadMagicAndTruncation) {
  std::stringstream bad("XXXX\x01\x00\x00\x00");
  EXPECT_THROW(sa::read_tensor(bad), sa::DataError);

  std::stringstream ss;
  sa::write_tensor(ss, sa::Tensor({4}, 2.0));
  std::string bytes = ss.str();
  bytes.resize(bytes.size() - 3);
  std::stringstream cut(bytes);
  EXPECT_THROW(sa::read_tensor(cut), sa::DataError);
}

TEST(TensorIo, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "sparseattn_tensor_io.satn";
  const auto t = sa::testing::random_tensor({7}, 3);
  sa::save_tensor(path.string(), t);
  EXPECT_EQ(sa::load_tensor(path.string()), t);
  std::filesystem::remove(path);
  EXPECT_THROW(sa::load_tensor(path.string()), sa::DataError);
}

TEST(TensorIo, CsvExport) {
  std::stringstream ss;
  sa::write_csv(ss, sa::Tensor::matrix({{1, 2}, {3, 4.5}}));
  EXPECT_EQ(ss.str(), "1,2\n3,4.5\n");
}
