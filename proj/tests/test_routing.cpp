#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "moelab/random.hpp"
#include "moelab/routing.hpp"

using namespace moelab;

namespace {

LayerActivationRecord record_of(const std::vector<std::vector<int>>& selected, Index e, Index layer = 0) {
    LayerActivationRecord r;
    r.layer = layer;
    r.selected = selected;
    const Index n = static_cast<Index>(selected.size());
    const Index k = selected.empty() ? 0 : static_cast<Index>(selected.front().size());
    r.distribution = Matrix::Constant(n, e, 1.0 / static_cast<double>(e));
    r.gates = Matrix::Constant(n, k, 0.5);
    return r;
}

RoutingTrace trace_of(const std::vector<std::vector<int>>& selected, Index e, Index k) {
    return make_trace("s", {record_of(selected, e)}, k, e);
}

// Sample assignments whose frequencies equal `weights` exactly (k = 1).
RoutingTrace trace_with_counts(const std::vector<int>& counts) {
    std::vector<std::vector<int>> sel;
    for (size_t j = 0; j < counts.size(); ++j)
        for (int c = 0; c < counts[j]; ++c) sel.push_back({static_cast<int>(j)});
    return trace_of(sel, static_cast<Index>(counts.size()), 1);
}

}  // namespace

TEST_CASE("h_utilization examples") {
    std::vector<RoutingTrace> uniform{trace_with_counts({5, 5, 5, 5, 5, 5, 5, 5})};
    CHECK(std::abs(h_utilization(uniform, 0) - 1.0) <= 1e-12);

    std::vector<RoutingTrace> single{trace_with_counts({0, 9, 0, 0})};
    CHECK(h_utilization(single, 0) == 0.0);

    // one bit of entropy over log2(4) bits
    std::vector<RoutingTrace> half{trace_with_counts({3, 3, 0, 0})};
    CHECK(h_utilization(half, 0) == doctest::Approx(0.5).epsilon(1e-14));

    CHECK_THROWS_AS(h_utilization(std::span<const RoutingTrace>{}, 0), InputError);
    CHECK_THROWS_AS(h_utilization(half, 3), InputError);
}

TEST_CASE("h_sparsity examples") {
    const Index e = 4;
    RoutingTrace t = trace_with_counts({1, 1, 1, 1});
    auto& dist = t.layers[0].distribution;

    dist.setZero();
    for (Index i = 0; i < 4; ++i) dist(i, i) = 1.0;
    CHECK(h_sparsity(std::span<const RoutingTrace>(&t, 1), 0) == 0.0);

    dist.setConstant(1.0 / static_cast<double>(e));
    CHECK(std::abs(h_sparsity(std::span<const RoutingTrace>(&t, 1), 0) - 1.0) <= 1e-12);

    dist.setZero();
    dist.col(0).setConstant(0.5);
    dist.col(1).setConstant(0.5);
    CHECK(h_sparsity(std::span<const RoutingTrace>(&t, 1), 0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("entropy metrics are invariant under expert relabeling") {
    Rng rng(3);
    const Index e = 6, n = 40;
    std::vector<std::vector<int>> sel;
    Matrix dist(n, e);
    for (Index t = 0; t < n; ++t) {
        sel.push_back({static_cast<int>(rng.below(3))});
        for (Index j = 0; j < e; ++j) dist(t, j) = rng.uniform(0.01, 1.0);
        dist.row(t) /= dist.row(t).sum();
    }
    RoutingTrace a = trace_of(sel, e, 1);
    a.layers[0].distribution = dist;

    const std::vector<int> perm = {4, 2, 5, 0, 1, 3};
    RoutingTrace b = a;
    for (auto& s : b.layers[0].selected) s[0] = perm[static_cast<size_t>(s[0])];
    for (Index j = 0; j < e; ++j) b.layers[0].distribution.col(perm[static_cast<size_t>(j)]) = dist.col(j);

    std::vector<RoutingTrace> ta{a}, tb{b};
    CHECK(h_utilization(ta, 0) == doctest::Approx(h_utilization(tb, 0)).epsilon(1e-14));
    CHECK(h_sparsity(ta, 0) == doctest::Approx(h_sparsity(tb, 0)).epsilon(1e-14));
}

TEST_CASE("stats merge is count based") {
    RoutingTrace a = trace_with_counts({2, 0, 1});
    RoutingTrace b = trace_with_counts({0, 4, 1});
    LayerRoutingStats sa(3), sb(3), whole(3);
    sa.add(a.layers[0]);
    sb.add(b.layers[0]);
    whole.add(a.layers[0]);
    whole.add(b.layers[0]);
    sa.merge(sb);
    CHECK(sa.assignments == whole.assignments);
    CHECK(sa.tokens == whole.tokens);
    CHECK(h_utilization(sa) == h_utilization(whole));
}

TEST_CASE("collapse detection") {
    std::vector<RoutingTrace> uniform{trace_with_counts({10, 10, 10, 10})};
    CHECK(detect_collapse(uniform).empty());

    std::vector<RoutingTrace> missing{trace_with_counts({10, 0, 10, 10})};
    auto found = detect_collapse(missing);
    REQUIRE(found.size() == 1);
    CHECK(found[0].expert == 1);

    // e = 8, k = 1, planted expert at 1% of 800 tokens
    std::vector<RoutingTrace> planted{trace_with_counts({8, 113, 113, 113, 113, 113, 114, 113})};
    auto flagged = detect_collapse(planted, 0.0125);
    REQUIRE(flagged.size() == 1);
    CHECK(flagged[0].expert == 0);
    CHECK(flagged[0].fraction == doctest::Approx(0.01));
}

TEST_CASE("routing embedding examples") {
    const Index e = 8;
    RoutingEmbedding one = routing_embedding(trace_of({{3, 5}}, e, 2));
    CHECK(one.values(0, 3) == 1.0);
    CHECK(one.values(0, 5) == 1.0);
    CHECK(one.row_sum(0) == 2.0);
    CHECK(one.values.sum() == 2.0);

    RoutingEmbedding two = routing_embedding(trace_of({{3, 5}, {3, 5}}, e, 2));
    CHECK(two.values == one.values);

    RoutingEmbedding counted = routing_embedding(trace_of({{0}, {0}, {1}, {2}}, e, 1));
    CHECK(counted.values(0, 0) == 0.5);
    CHECK(counted.values(0, 1) == 0.25);
    CHECK(counted.values(0, 2) == 0.25);
    CHECK(counted.values.row(0).tail(5).isZero(0.0));

    RoutingTrace empty;
    empty.top_k = 1;
    empty.n_experts = 2;
    CHECK_THROWS_AS(routing_embedding(empty), InputError);
    CHECK_THROWS_AS(trace_of({{1, 1, 2}}, e, 2), InputError);
}

TEST_CASE("routing embedding rows sum to top_k exactly") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const Index e = 8, k = 2;
        const Index n = 1 + static_cast<Index>(rng.below(997));
        std::vector<LayerActivationRecord> layers;
        for (Index l = 0; l < 3; ++l) {
            std::vector<std::vector<int>> sel;
            for (Index t = 0; t < n; ++t) {
                const int a = static_cast<int>(rng.below(e));
                int b = static_cast<int>(rng.below(e - 1));
                if (b >= a) ++b;
                sel.push_back({std::min(a, b), std::max(a, b)});
            }
            layers.push_back(record_of(sel, e, l));
        }
        RoutingEmbedding emb = routing_embedding(make_trace("t", layers, k, e));
        for (Index l = 0; l < 3; ++l) CHECK(emb.row_sum(l) == 2.0);
        CHECK(emb.values.minCoeff() >= 0.0);
        CHECK(emb.values.maxCoeff() <= 2.0);
    }
}

TEST_CASE("domain embedding") {
    const Index e = 4;
    RoutingEmbedding a = routing_embedding(trace_of({{0, 1}, {0, 2}}, e, 2));
    RoutingEmbedding b = routing_embedding(trace_of({{2, 3}}, e, 2));
    std::vector<RoutingEmbedding> single{a};
    CHECK(domain_embedding(single).values == a.values);

    std::vector<RoutingEmbedding> both{a, b};
    RoutingEmbedding mid = domain_embedding(both);
    CHECK(mid.values == (a.values + b.values) / 2.0);
    CHECK(std::abs(mid.row_sum(0) - 2.0) <= 1e-12);

    // uniform expert permutation commutes with averaging
    const std::vector<int> perm = {2, 0, 3, 1};
    auto permute = [&](const RoutingEmbedding& x) {
        RoutingEmbedding y = x;
        for (Index j = 0; j < e; ++j) y.values.col(perm[static_cast<size_t>(j)]) = x.values.col(j);
        return y;
    };
    std::vector<RoutingEmbedding> permuted{permute(a), permute(b)};
    CHECK(domain_embedding(permuted).values == permute(mid).values);

    RoutingEmbedding wide = routing_embedding(trace_of({{0, 1}}, 6, 2));
    std::vector<RoutingEmbedding> mismatched{a, wide};
    CHECK_THROWS_AS(domain_embedding(mismatched), InputError);
    CHECK_THROWS_AS(domain_embedding(std::span<const RoutingEmbedding>{}), InputError);
}

TEST_CASE("filter at three times the uniform share") {
    RoutingEmbedding emb;
    emb.values = Matrix::Zero(1, 64);
    emb.values(0, 0) = 0.04;
    emb.values(0, 1) = 0.05;
    emb.values(0, 2) = 0.046875;
    RoutingEmbedding f = filter_embedding(emb, 64);
    CHECK(f.values(0, 0) == 0.0);
    CHECK(f.values(0, 1) == 0.05);
    CHECK(f.values(0, 2) == 0.046875);
    CHECK(filter_embedding(f, 64).values == f.values);

    RoutingEmbedding zero;
    zero.values = Matrix::Zero(2, 8);
    CHECK(filter_embedding(zero, 8).values.isZero(0.0));
    CHECK_THROWS_AS(filter_embedding(zero, 4), InputError);
}

TEST_CASE("steering bias") {
    RoutingEmbedding f;
    f.values = Matrix::Zero(2, 4);
    f.values(1, 2) = 0.8;
    Vector b = steering_bias(f, 1, 10.0);
    CHECK(b.size() == 4);
    CHECK(b(2) == 8.0);
    CHECK(b(0) == 0.0);
    CHECK(steering_bias(f, 0, 5.0).isZero(0.0));
    CHECK_THROWS_AS(steering_bias(f, 2, 1.0), InputError);
    CHECK_THROWS_AS(steering_bias(f, 0, -1.0), InputError);
    CHECK(steering_biases(f, 1.0).size() == 2);
}

TEST_CASE("clustering") {
    const Index e = 8, layers = 2;
    auto embedding_for = [&](const std::vector<int>& experts, Rng& rng, double noise) {
        RoutingEmbedding emb;
        emb.values = Matrix::Zero(layers, e);
        for (Index l = 0; l < layers; ++l) {
            for (int x : experts) emb.values(l, x) = 1.0;
            for (Index j = 0; j < e; ++j) emb.values(l, j) += noise * rng.uniform(-1.0, 1.0);
        }
        return emb;
    };

    Rng rng(9);
    std::vector<RoutingEmbedding> groups;
    for (int i = 0; i < 5; ++i) groups.push_back(embedding_for({0, 1}, rng, 0.0));
    for (int i = 0; i < 5; ++i) groups.push_back(embedding_for({6, 7}, rng, 0.0));
    ClusterResult two = cluster_embeddings(groups, 2, 1);
    for (int i = 1; i < 5; ++i) CHECK(two.labels[static_cast<size_t>(i)] == two.labels[0]);
    for (int i = 6; i < 10; ++i) CHECK(two.labels[static_cast<size_t>(i)] == two.labels[5]);
    CHECK(two.labels[0] != two.labels[5]);

    ClusterResult one = cluster_embeddings(groups, 1, 1);
    CHECK(std::all_of(one.labels.begin(), one.labels.end(), [](int l) { return l == 0; }));

    std::vector<RoutingEmbedding> same(4, groups[0]);
    ClusterResult degenerate = cluster_embeddings(same, 3, 1);
    CHECK(degenerate.degenerate);
    CHECK(std::all_of(degenerate.labels.begin(), degenerate.labels.end(), [](int l) { return l == 0; }));

    CHECK_THROWS_AS(cluster_embeddings(groups, 11, 1), InputError);
}

TEST_CASE("clustering recovers three usage patterns") {
    const std::vector<std::vector<int>> patterns = {{0, 1}, {3, 4}, {6, 7}};
    const Index e = 8, layers = 3, k = 2, tokens = 64;
    Rng rng(2025);
    std::vector<RoutingEmbedding> embs;
    std::vector<int> truth;
    for (int s = 0; s < 90; ++s) {
        const int p = s % 3;
        std::vector<LayerActivationRecord> recs;
        for (Index l = 0; l < layers; ++l) {
            std::vector<std::vector<int>> sel;
            for (Index t = 0; t < tokens; ++t) {
                int a, b;
                if (rng.uniform() < 0.7) {
                    a = patterns[static_cast<size_t>(p)][0];
                    b = patterns[static_cast<size_t>(p)][1];
                } else {
                    a = static_cast<int>(rng.below(e));
                    b = static_cast<int>(rng.below(e - 1));
                    if (b >= a) ++b;
                }
                sel.push_back({std::min(a, b), std::max(a, b)});
            }
            recs.push_back(record_of(sel, e, l));
        }
        embs.push_back(routing_embedding(make_trace("s" + std::to_string(s), recs, k, e)));
        truth.push_back(p);
    }
    ClusterResult r = cluster_embeddings(embs, 3, 4);
    std::map<int, std::map<int, int>> table;
    for (size_t i = 0; i < embs.size(); ++i) ++table[r.labels[i]][truth[i]];
    int pure = 0;
    for (auto& [label, counts] : table) {
        int best = 0;
        for (auto& [t, c] : counts) best = std::max(best, c);
        pure += best;
    }
    CHECK(static_cast<double>(pure) / static_cast<double>(embs.size()) >= 0.95);
    CHECK(cluster_embeddings(embs, 3, 4).labels == r.labels);
}

TEST_CASE("emissions estimate") {
    CHECK(co2_estimate({1.0, 1000.0, 1000.0}) == 1000.0);
    CHECK(co2_estimate({1.4, 0.0, 350.0}) == 0.0);
    CHECK(co2_estimate({1.1, 2.0, 500.0}) == doctest::Approx(1.1));
    CHECK_THROWS_AS(co2_estimate({1.0, -1.0, 1.0}), InputError);
}

TEST_CASE("trace and embedding file formats round trip") {
    Rng rng(4);
    const Index e = 4, k = 2;
    std::vector<LayerActivationRecord> recs;
    for (Index l = 0; l < 2; ++l) {
        LayerActivationRecord r = record_of({{0, 3}, {1, 2}, {0, 1}}, e, l);
        for (Index i = 0; i < r.distribution.size(); ++i) r.distribution.data()[i] = rng.uniform();
        r.gates(1, 0) = 0.123456789012345678;
        recs.push_back(r);
    }
    RoutingTrace t = make_trace("doc-1", recs, k, e);
    std::stringstream ss;
    write_trace_jsonl(ss, t);
    std::vector<RoutingTrace> back = read_trace_jsonl(ss, k);
    REQUIRE(back.size() == 1);
    CHECK(back[0].sample_id == "doc-1");
    CHECK(back[0].token_count == 3);
    CHECK(back[0].layers.size() == 2);
    CHECK(back[0].layers[1].selected == t.layers[1].selected);
    CHECK(back[0].layers[1].distribution == t.layers[1].distribution);
    CHECK(back[0].layers[0].gates == t.layers[0].gates);

    RoutingEmbedding emb = routing_embedding(t);
    emb.values(0, 0) = 1.0 / 3.0;
    RoutingEmbedding parsed = embedding_from_text(embedding_to_text(emb));
    CHECK(parsed.values == emb.values);
    CHECK(parsed.top_k == k);
    CHECK(parsed.token_count == 3);
    CHECK(embedding_to_text(emb).rfind("routing-embedding 2 4 2 3\n", 0) == 0);
    CHECK_THROWS_AS(embedding_from_text("routing-embedding 2 4 2 3\n0 0"), InputError);

    std::stringstream bad("{\"sample\": 1}\n");
    CHECK_THROWS_AS(read_trace_jsonl(bad, k), InputError);
}
