#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <vector>

#include "ssinfer/data.hpp"

using namespace ssinfer;

namespace {

std::vector<int> fold_sizes(const FoldPartition& p) {
  std::vector<int> sizes(static_cast<std::size_t>(p.k()), 0);
  for (int a : p.assignment()) ++sizes[static_cast<std::size_t>(a)];
  return sizes;
}

}  // namespace

TEST_CASE("make_partition balances folds") {
  auto p1 = make_partition(4, 2, 7);
  auto s1 = fold_sizes(p1);
  CHECK(s1 == std::vector<int>{2, 2});

  auto p2 = make_partition(5, 2, 1);
  auto s2 = fold_sizes(p2);
  std::sort(s2.begin(), s2.end());
  CHECK(s2 == std::vector<int>{2, 3});

  auto p3 = make_partition(48, 48, 0);
  auto s3 = fold_sizes(p3);
  CHECK(std::all_of(s3.begin(), s3.end(), [](int s) { return s == 1; }));
}

TEST_CASE("make_partition is deterministic in the seed") {
  const auto a = make_partition(101, 7, 991);
  const auto b = make_partition(101, 7, 991);
  CHECK(a.assignment() == b.assignment());
  const auto c = make_partition(101, 7, 992);
  CHECK(a.assignment() != c.assignment());
}

TEST_CASE("make_partition fold balance holds across shapes") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const Index n = 1 + static_cast<Index>(rng.below(200));
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const auto p = make_partition(n, k, rng.next_u64());
    const auto sizes = fold_sizes(p);
    const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
    CHECK(*lo >= 1);
    CHECK(*hi - *lo <= 1);
  }
}

TEST_CASE("make_partition rejects bad shapes") {
  CHECK_THROWS_AS(make_partition(4, 5, 0), std::invalid_argument);
  CHECK_THROWS_AS(make_partition(4, 0, 0), std::invalid_argument);
}

TEST_CASE("augment prepends an exact ones column") {
  MatrixXd m(1, 2);
  m << 2, 3;
  const MatrixXd a = augment(m);
  CHECK(a.rows() == 1);
  CHECK(a.cols() == 3);
  CHECK(a(0, 0) == 1.0);
  CHECK(a(0, 1) == 2.0);
  CHECK(a(0, 2) == 3.0);

  MatrixXd z(1, 2);
  z << 0, 0;
  const MatrixXd az = augment(z);
  CHECK(az(0, 0) == 1.0);
  CHECK(az(0, 1) == 0.0);

  const MatrixXd empty = augment(MatrixXd(0, 2));
  CHECK(empty.rows() == 0);
  CHECK(empty.cols() == 3);
}

TEST_CASE("augment drops back to the original matrix") {
  Rng rng(11);
  MatrixXd m(6, 4);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() * 10 - 5;
  const MatrixXd a = augment(m);
  CHECK((a.rightCols(4) - m).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dataset types validate their invariants") {
  CHECK_THROWS_AS(LabeledSet(VectorXd::Zero(3), MatrixXd::Zero(2, 2)),
                  std::invalid_argument);
  VectorXd bad(2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(LabeledSet(bad, MatrixXd::Zero(2, 2)), std::invalid_argument);
  CHECK_THROWS_AS(UnlabeledSet(MatrixXd::Zero(1, 2)), std::invalid_argument);

  VectorXd ones = VectorXd::Ones(3);
  CHECK_THROWS_AS(CausalLabeledSet(VectorXd::Zero(3), ones, MatrixXd::Zero(3, 2)),
                  std::invalid_argument);  // single arm
  VectorXd frac(3);
  frac << 0.0, 0.5, 1.0;
  CHECK_THROWS_AS(CausalLabeledSet(VectorXd::Zero(3), frac, MatrixXd::Zero(3, 2)),
                  std::invalid_argument);
}

TEST_CASE("manual partitions reject empty or unbalanced folds") {
  CHECK_THROWS_AS(FoldPartition(2, {0, 0, 0}, 0), std::invalid_argument);
  CHECK_THROWS_AS(FoldPartition(2, {0, 0, 0, 1}, 0), std::invalid_argument);
  const FoldPartition ok(2, {0, 1, 0, 1}, 0);
  CHECK(ok.fold_rows(0) == std::vector<Index>{0, 2});
  CHECK(ok.complement_rows(0) == std::vector<Index>{1, 3});
}
