#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "flowgnn/expressivity.hpp"
#include "helpers.hpp"

using namespace flowgnn;

TEST_CASE("tree canonical form distinguishes structure and features") {
  Dag c1 = helpers::chain(3);
  CHECK(trees_isomorphic(c1, c1));

  // relabeled chain with the same features is isomorphic
  Matrix f(3, 1);
  f(0, 0) = 3;
  f(1, 0) = 2;
  f(2, 0) = 1;
  Dag relabeled = make_dag(3, {{2, 1}, {1, 0}}, f);
  CHECK(trees_isomorphic(c1, relabeled));

  // same structure, different feature on one node
  Matrix g(3, 1);
  g(0, 0) = 1;
  g(1, 0) = 99;
  g(2, 0) = 3;
  CHECK_FALSE(trees_isomorphic(c1, make_dag(3, {{0, 1}, {1, 2}}, g)));

  // sibling order must not matter
  Matrix h(3, 2);
  h(0, 0) = 1;
  h(1, 1) = 2;
  Dag t1 = make_dag(3, {{0, 2}, {1, 2}}, h);
  Matrix h2(3, 2);
  h2(0, 1) = 2;
  h2(1, 0) = 1;
  Dag t2 = make_dag(3, {{0, 2}, {1, 2}}, h2);
  CHECK(trees_isomorphic(t1, t2));

  CHECK_THROWS_AS(tree_canonical_form(helpers::diamond()), std::invalid_argument);
}

TEST_CASE("gen_fig1_pair builds the shared-node / duplicated-branch pair") {
  GraphPair pair = gen_fig1_pair({1, 0, 0}, {0, 1, 0}, {0, 0, 1});
  CHECK(pair.d1.num_nodes() == 5);
  CHECK(pair.d2.num_nodes() == 6);
  // both are true DAGs: A shares the first operation node, B shares the input
  CHECK_FALSE(pair.d1.is_tree());
  CHECK_FALSE(pair.d2.is_tree());
  CHECK(trees_isomorphic(computation_tree(pair.d1), computation_tree(pair.d2)));
  // non-isomorphic by node count alone
  CHECK(pair.d1.num_nodes() != pair.d2.num_nodes());
}

TEST_CASE("gen_pair_family produces true DAGs paired with their trees") {
  CHECK(gen_pair_family(0, 8, 1).empty());

  const auto pairs = gen_pair_family(12, 8, 42);
  REQUIRE(pairs.size() == 12);
  for (const auto& pair : pairs) {
    CHECK_FALSE(pair.d1.is_tree());
    CHECK(pair.d2.is_tree());
    CHECK(trees_isomorphic(computation_tree(pair.d1), pair.d2));
  }

  // deterministic under seed
  const auto again = gen_pair_family(12, 8, 42);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(pairs[i].d1.edges() == again[i].d1.edges());
    CHECK(pairs[i].d1.features() == again[i].d1.features());
  }
}

TEST_CASE("discrimination_report certifies Corollary 1 and Theorem 1") {
  const auto pairs = gen_pair_family(8, 8, 7);

  SECTION("standard DAGNN never separates same-computation-tree pairs") {
    DiscriminationReport rep =
        discrimination_report(DagModelKind::dagnn, 4, 2, pairs, 3, 1000);
    CHECK(rep.overall_separated_fraction == 0.0);
    CHECK(rep.max_distance < 1e-7);
  }

  SECTION("D-VAE never separates them either") {
    DiscriminationReport rep = discrimination_report(DagModelKind::dvae, 4, 2, pairs, 3, 1000);
    CHECK(rep.overall_separated_fraction == 0.0);
  }

  SECTION("FlowDAGNN separates the Fig. 1 pair in every seed") {
    GraphPair fig1 = gen_fig1_pair({1, 0, 0}, {0, 1, 0}, {0, 0, 1});
    DiscriminationReport rep =
        discrimination_report(DagModelKind::flowdagnn, 4, 2, {fig1}, 10, 500);
    CHECK(rep.pairs[0].separated_fraction == 1.0);
    CHECK(rep.pairs[0].min_distance > 1e-6);
  }

  SECTION("identical graphs have distance exactly zero") {
    GraphPair same{pairs[0].d1, pairs[0].d1, PairRelation::same_computation_tree, "a", "a"};
    DiscriminationReport rep =
        discrimination_report(DagModelKind::flowdagnn, 4, 1, {same}, 2, 3);
    CHECK(rep.pairs[0].mean_distance == 0.0);
    CHECK(rep.overall_separated_fraction == 0.0);
  }
}
