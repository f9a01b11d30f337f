"""User graph topology and the two context extractors."""

import numpy as np
import pytest

from digat import tensor as T
from digat.channels import (TopicTable, UserGraph, build_user_graph,
                            init_channel_params, news_graph_context,
                            sequence_sa_context, user_graph_context)
from digat.data import EMPTY_TOPIC, NewsItem
from digat.errors import ContractError
from digat.params import ParamStore
from digat.trace import AttentionTrace
from oracles import assert_gradients_match, finite_difference

D = 6


def item(news_id, topic):
    return NewsItem(news_id, topic, (0,) * 4)


def channel_store(seed=0, d=D):
    store = ParamStore()
    table = TopicTable(["a", "b", "c"])
    init_channel_params(store, d, table, np.random.default_rng(seed))
    return store


class TestUserGraphTopology:
    def test_single_topic_triangle(self):
        graph = build_user_graph([item("N1", "sports"), item("N2", "sports"),
                                  item("N3", "sports")])
        assert len(graph.news_news_edges) == 3
        assert graph.topic_names == ("sports",)
        assert len(graph.news_topic_edges) == 3
        assert len(graph.topic_topic_edges) == 0

    def test_two_topics(self):
        graph = build_user_graph([item("N1", "A"), item("N2", "A"),
                                  item("N3", "B")])
        assert len(graph.news_news_edges) == 1
        assert len(graph.news_topic_edges) == 3
        assert len(graph.topic_topic_edges) == 1

    def test_each_news_one_topic_edge(self):
        graph = build_user_graph([item(f"N{i}", t) for i, t in
                                  enumerate("AABCBA")])
        for i in range(6):
            assert sum(1 for n, _ in graph.news_topic_edges if n == i) == 1

    def test_topic_clique_size(self):
        graph = build_user_graph([item(f"N{i}", t) for i, t in
                                  enumerate("ABCD")])
        assert len(graph.topic_topic_edges) == 4 * 3 // 2

    def test_placeholders_form_own_group(self):
        graph = build_user_graph([item("N1", "A"), item("E1", EMPTY_TOPIC),
                                  item("E2", EMPTY_TOPIC)])
        assert EMPTY_TOPIC in graph.topic_names
        assert (1, 2) in graph.news_news_edges

    def test_adjacency_symmetric_no_diagonal(self):
        graph = build_user_graph([item(f"N{i}", t) for i, t in
                                  enumerate("AAB")])
        adj = graph.adjacency_matrix()
        assert adj.shape == (5, 5)
        np.testing.assert_array_equal(adj, adj.T)
        assert not adj.diagonal().any()
        # N0-N1 same topic, N0-topicA, topicA-topicB
        assert adj[0, 1] and adj[0, 3] and adj[3, 4]
        assert not adj[0, 2] and not adj[0, 4]

    def test_group_mask(self):
        graph = build_user_graph([item(f"N{i}", t) for i, t in
                                  enumerate("ABA")])
        mask = graph.group_mask()
        np.testing.assert_array_equal(
            mask, [[True, False, True], [False, True, False]])

    def test_empty_history_rejected(self):
        with pytest.raises(ContractError):
            build_user_graph([])


class TestTopicTable:
    def test_known_and_fallback(self):
        table = TopicTable(["sports", "finance"])
        assert table.index("sports") != table.index("finance")
        assert table.index("never-seen") == table.index("also-never-seen")
        assert len(table) == 4

    def test_reserved_labels_present(self):
        names = TopicTable([]).names()
        assert EMPTY_TOPIC in names
        assert len(names) == 2


class TestNewsContext:
    def test_root_only_passthrough(self):
        store = channel_store()
        root = np.random.default_rng(1).normal(size=(1, D))
        out = news_graph_context(store, T.Tensor(root))
        np.testing.assert_array_equal(out.data, root[0])

    def test_attention_normalized(self):
        store = channel_store()
        trace = AttentionTrace()
        embs = np.random.default_rng(2).normal(size=(5, D))
        news_graph_context(store, T.Tensor(embs), trace=trace)
        alpha = trace.records["news_ctx.alpha"][0]
        assert alpha.shape == (1, 4)
        assert alpha.sum() == pytest.approx(1.0, abs=1e-9)

    def test_identical_neighbors_collapse(self):
        # same root and shared neighbor value in two different counts
        store = channel_store()
        rng = np.random.default_rng(3)
        root = rng.normal(size=(1, D))
        v = rng.normal(size=D)
        few = np.vstack([root, np.tile(v, (2, 1))])
        many = np.vstack([root, np.tile(v, (7, 1))])
        out_few = news_graph_context(store, T.Tensor(few)).data
        out_many = news_graph_context(store, T.Tensor(many)).data
        np.testing.assert_allclose(out_few, out_many, atol=1e-12)

    def test_gate_saturation_keeps_root(self):
        store = channel_store()
        store["channels.gate_b"].data[:] = 20.0
        rng = np.random.default_rng(4)
        embs = rng.normal(size=(4, D))
        out = news_graph_context(store, T.Tensor(embs)).data
        assert np.linalg.norm(out - embs[0]) < 1e-6

    def test_gate_saturation_negative_keeps_global(self):
        store = channel_store()
        store["channels.gate_b"].data[:] = -20.0
        rng = np.random.default_rng(5)
        root = rng.normal(size=(1, D))
        v = rng.normal(size=D)
        embs = np.vstack([root, np.tile(v, (3, 1))])
        out = news_graph_context(store, T.Tensor(embs)).data
        assert np.linalg.norm(out - v) < 1e-6

    def test_non_root_permutation_invariant(self):
        store = channel_store()
        rng = np.random.default_rng(6)
        embs = rng.normal(size=(6, D))
        base = news_graph_context(store, T.Tensor(embs)).data
        for _ in range(3):
            perm = np.concatenate([[0], 1 + rng.permutation(5)])
            out = news_graph_context(store, T.Tensor(embs[perm])).data
            np.testing.assert_allclose(out, base, atol=1e-9)

    def test_width_mismatch_rejected(self):
        store = channel_store()
        with pytest.raises(ContractError):
            news_graph_context(store, T.Tensor(np.zeros((3, D + 1))))

    def test_sequence_variant_matches_graph_math(self):
        store = channel_store()
        embs = np.random.default_rng(7).normal(size=(2, D))
        graph_out = news_graph_context(store, T.Tensor(embs)).data
        seq_out = sequence_sa_context(store, T.Tensor(embs)).data
        np.testing.assert_array_equal(graph_out, seq_out)


class TestUserContext:
    def test_single_topic_single_news_identity(self):
        rng = np.random.default_rng(0)
        emb = rng.normal(size=(1, D))
        c_n = rng.normal(size=D)
        out = user_graph_context(T.Tensor(emb), T.Tensor(c_n),
                                 np.array([[True]]))
        np.testing.assert_allclose(out.data, emb[0], atol=1e-12)

    def test_equal_embeddings_collapse(self):
        rng = np.random.default_rng(1)
        v = rng.normal(size=D)
        embs = np.tile(v, (5, 1))
        mask = np.array([[True, True, False, False, False],
                         [False, False, True, True, True]])
        out = user_graph_context(T.Tensor(embs),
                                 T.Tensor(rng.normal(size=D)), mask)
        np.testing.assert_allclose(out.data, v, atol=1e-12)

    def test_both_levels_normalized(self):
        rng = np.random.default_rng(2)
        trace = AttentionTrace()
        mask = np.array([[True, False, True], [False, True, False]])
        user_graph_context(T.Tensor(rng.normal(size=(3, D))),
                           T.Tensor(rng.normal(size=D)), mask, trace=trace)
        within = trace.records["user_ctx.within_topic"][0]
        across = trace.records["user_ctx.across_topics"][0]
        np.testing.assert_allclose(within.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(across.sum(axis=1), 1.0, atol=1e-9)
        assert within[0, 1] == 0.0

    def test_invariant_to_news_permutation_within_topic(self):
        rng = np.random.default_rng(3)
        embs = rng.normal(size=(4, D))
        c_n = rng.normal(size=D)
        mask = np.array([[True, True, True, False],
                         [False, False, False, True]])
        base = user_graph_context(T.Tensor(embs), T.Tensor(c_n), mask).data
        # permuting rows 0..2 stays inside topic 0, so the mask is unchanged
        perm = [2, 0, 1, 3]
        out = user_graph_context(T.Tensor(embs[perm]), T.Tensor(c_n), mask).data
        np.testing.assert_allclose(out, base, atol=1e-9)

    def test_invariant_to_topic_order(self):
        rng = np.random.default_rng(4)
        embs = rng.normal(size=(5, D))
        c_n = rng.normal(size=D)
        mask = np.array([[True, True, False, False, False],
                         [False, False, True, False, False],
                         [False, False, False, True, True]])
        base = user_graph_context(T.Tensor(embs), T.Tensor(c_n), mask).data
        out = user_graph_context(T.Tensor(embs), T.Tensor(c_n),
                                 mask[[2, 0, 1]]).data
        np.testing.assert_allclose(out, base, atol=1e-9)

    def test_empty_group_rejected(self):
        with pytest.raises(ContractError):
            user_graph_context(T.Tensor(np.zeros((2, D))),
                               T.Tensor(np.zeros(D)),
                               np.array([[True, True], [False, False]]))


class TestChannelGradients:
    def test_composite_gradcheck(self):
        store = channel_store()
        rng = np.random.default_rng(8)
        sag_embs = rng.normal(size=(4, D))
        hist_embs = rng.normal(size=(3, D))
        mask = np.array([[True, False, True], [False, True, False]])
        probe = rng.normal(size=D)

        def forward(sag_x, hist_x):
            c_n = news_graph_context(store, sag_x)
            c_u = user_graph_context(hist_x, c_n, mask)
            return T.add(T.dot(c_n, T.Tensor(probe)),
                         T.dot(c_u, T.Tensor(probe)))

        with T.GradientTape():
            sag_t = T.Tensor(sag_embs.copy(), requires_grad=True)
            hist_t = T.Tensor(hist_embs.copy(), requires_grad=True)
            T.backward(forward(sag_t, hist_t))
        analytic = {name: g.copy() for name, g in store.gradients().items()}
        sag_grad, hist_grad = sag_t.grad.copy(), hist_t.grad.copy()
        store.zero_grad()

        numeric = finite_difference(
            lambda x: forward(T.Tensor(x), T.Tensor(hist_embs)).item(),
            sag_embs.copy())
        assert_gradients_match(sag_grad, numeric, label="sag_embs")
        numeric = finite_difference(
            lambda x: forward(T.Tensor(sag_embs), T.Tensor(x)).item(),
            hist_embs.copy())
        assert_gradients_match(hist_grad, numeric, label="hist_embs")

        for name in ("channels.news_wq", "channels.news_wk",
                     "channels.gate_w", "channels.gate_b"):
            original = store[name].data.copy()

            def value(x, _name=name, _orig=original):
                store[_name].data = x
                try:
                    return forward(T.Tensor(sag_embs),
                                   T.Tensor(hist_embs)).item()
                finally:
                    store[_name].data = _orig

            numeric = finite_difference(value, original.copy())
            assert_gradients_match(analytic[name], numeric, label=name)
