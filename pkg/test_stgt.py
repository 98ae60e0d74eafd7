#!/usr/bin/env python3
"""
Tests for the spatio-temporal graph, graph transformer, head and checkpoints
"""

import os
import sys
import math
import tempfile

import torch

from errors import CheckpointError, ConfigurationError, ShapeError, ValidationError
from gesture_dataset import CLASS_NAMES
from gradient_check import module_check
from stgt import (DiGNet, GraphTransformerLayer, ModelConfig, STGLayer, build_graph, load_checkpoint, mean_pool,
                  node_index, pool_volume, save_checkpoint)


def tiny_config(**kw):
    base = dict(stem_channels=4, stem_stride=4, dada_channels=(8,), dada_strides=(2,), ray_samples=1,
                offset_hidden=4, weight_hidden=4, stg_layers=1, transformer_layers=1, transformer_heads=2)
    base.update(kw)
    return ModelConfig(**base)


def _batch(b=2, t=4, size=32, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(b, 5, t, size, size, generator=g)
    depth = 2.0 + 10.0 * torch.rand(b, t, size, size, generator=g)
    return x, depth


def test_graph_counts_spatial_and_temporal_edges():
    graph = build_graph((2, 3, 4))
    assert graph.num_nodes == 24
    assert graph.spatial_edges == 2 * (3 * 3 + 4 * 2)
    assert graph.temporal_edges == 12
    assert len(graph.edges) == graph.spatial_edges + graph.temporal_edges
    assert (graph.edges[:, 0] < graph.edges[:, 1]).all()


def test_graph_adjacency_is_symmetric_with_expected_neighbours():
    shape = (2, 3, 3)
    adj = build_graph(shape).adjacency()
    assert torch.equal(adj, adj.t())
    centre = node_index(0, 1, 1, shape)
    corner = node_index(1, 0, 0, shape)
    assert int(adj[centre].sum()) == 5
    assert int(adj[corner].sum()) == 3
    assert adj[centre, node_index(1, 1, 1, shape)] == 1
    assert adj[centre, node_index(0, 0, 0, shape)] == 0


def test_single_cell_volume_has_no_graph():
    try:
        build_graph((1, 1, 1))
        assert False
    except ValidationError:
        pass
    try:
        build_graph(torch.zeros(1, 2, 3, 4))
        assert False
    except ShapeError:
        pass
    assert build_graph((1, 1, 2)).spatial_edges == 1


def test_stg_mean_operator_rows_sum_to_one():
    mean_op = build_graph((2, 2, 2)).mean_operator()
    assert torch.allclose(mean_op.sum(dim=1), torch.ones(8))
    out = STGLayer(6)(torch.randn(1, 8, 6), mean_op)
    assert out.shape == (1, 8, 6)


def test_edge_bias_steers_attention_to_neighbours():
    layer = GraphTransformerLayer(8, heads=2)
    adj = build_graph((1, 3, 3)).adjacency()
    with torch.no_grad():
        layer.edge_bias.fill_(50.0)
    layer(torch.randn(1, 9, 8), adj)
    mass = (layer.last_attention[0] * adj).sum(dim=-1)
    assert torch.allclose(mass, torch.ones_like(mass), atol=1e-4)


def _gelu(v):
    return 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))


def test_stg_layer_on_two_nodes():
    layer = STGLayer(1).double()
    with torch.no_grad():
        layer.self_proj.weight.fill_(2.0)
        layer.self_proj.bias.fill_(0.5)
        layer.nbr_proj.weight.fill_(-1.0)
    mean_op = build_graph((1, 1, 2)).mean_operator(torch.float64)
    out = layer(torch.tensor([[[1.0], [3.0]]], dtype=torch.float64), mean_op)
    assert abs(float(out[0, 0, 0]) - _gelu(2.0 * 1.0 + 0.5 - 3.0)) < 1e-12
    assert abs(float(out[0, 1, 0]) - _gelu(2.0 * 3.0 + 0.5 - 1.0)) < 1e-12


def _layer_norm(row, norm):
    mean = sum(row) / len(row)
    var = sum((v - mean) ** 2 for v in row) / len(row)
    weight, bias = norm.weight.tolist(), norm.bias.tolist()
    return [(v - mean) / math.sqrt(var + norm.eps) * weight[i] + bias[i] for i, v in enumerate(row)]


def _linear(row, linear):
    weight, bias = linear.weight.tolist(), linear.bias.tolist()
    return [sum(w * v for w, v in zip(weight[o], row)) + bias[o] for o in range(len(weight))]


def _reference_layer(layer, nodes, adjacency):
    n, heads, head_dim = len(nodes), layer.heads, layer.head_dim
    normed = [_layer_norm(row, layer.norm1) for row in nodes]
    q = [_linear(row, layer.Wq) for row in normed]
    k = [_linear(row, layer.Wk) for row in normed]
    v = [_linear(row, layer.Wv) for row in normed]
    bias = layer.edge_bias.tolist()
    mixed = [[0.0] * (heads * head_dim) for _ in range(n)]
    for hd in range(heads):
        part = slice(hd * head_dim, (hd + 1) * head_dim)
        for i in range(n):
            logits = [sum(a * b for a, b in zip(q[i][part], k[j][part])) / math.sqrt(head_dim)
                      + bias[hd] * adjacency[i][j] for j in range(n)]
            top = max(logits)
            weights = [math.exp(z - top) for z in logits]
            total = sum(weights)
            for j in range(n):
                for d in range(head_dim):
                    mixed[i][hd * head_dim + d] += weights[j] / total * v[j][hd * head_dim + d]
    out = []
    for i in range(n):
        h = [a + b for a, b in zip(nodes[i], _linear(mixed[i], layer.Wo))]
        hidden = [_gelu(z) for z in _linear(_layer_norm(h, layer.norm2), layer.ffn[0])]
        out.append([a + b for a, b in zip(h, _linear(hidden, layer.ffn[2]))])
    return out


def test_graph_transformer_layer_on_three_nodes():
    torch.manual_seed(3)
    layer = GraphTransformerLayer(4, heads=2).double()
    with torch.no_grad():
        layer.edge_bias.copy_(torch.tensor([0.7, -0.4], dtype=torch.float64))
    adj = build_graph((1, 1, 3)).adjacency(torch.float64)
    h = torch.randn(1, 3, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(11))
    out = layer(h, adj)
    expected = torch.tensor(_reference_layer(layer, h[0].tolist(), adj.tolist()), dtype=torch.float64)
    assert (out[0] - expected).abs().max() < 1e-10
    assert torch.allclose(layer.last_attention.sum(dim=-1), torch.ones(1, 2, 3, dtype=torch.float64))


def test_graph_transformer_layer_on_a_single_node():
    layer = GraphTransformerLayer(4, heads=2).double()
    h = torch.randn(1, 1, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(12))
    out = layer(h)
    assert out.shape == (1, 1, 4) and torch.isfinite(out).all()
    assert torch.equal(layer.last_attention, torch.ones(1, 2, 1, 1, dtype=torch.float64))
    expected = torch.tensor(_reference_layer(layer, h[0].tolist(), [[0.0]]), dtype=torch.float64)
    assert (out[0] - expected).abs().max() < 1e-10

    model = DiGNet(tiny_config()).eval()
    x, depth = _batch(b=1, t=2, size=8)
    with torch.no_grad():
        result = model(x, depth)
    assert result.volume_shape == (1, 8, 1, 1, 1)
    assert torch.isfinite(result.logits).all()


def test_pooling_matches_triple_sum():
    volume = torch.randn(2, 3, 2, 3, 4, dtype=torch.float64)
    pooled = pool_volume(volume)
    for b in range(2):
        for c in range(3):
            total = sum(float(volume[b, c, t, h, w]) for t in range(2) for h in range(3) for w in range(4))
            assert abs(float(pooled[b, c]) - total / 24) < 1e-12
    nodes = volume.flatten(2).transpose(1, 2)
    assert torch.allclose(mean_pool(nodes), pooled)


def test_model_config_validation_and_dict_round_trip():
    cfg = tiny_config()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.embed_dim == 8
    for bad in (dict(head_mode='arcface'), dict(dada_strides=(2, 2)), dict(transformer_heads=3)):
        try:
            tiny_config(**bad)
            assert False, f"accepted {bad}"
        except ConfigurationError:
            pass
    try:
        ModelConfig.from_dict({**cfg.to_dict(), 'width': 3})
        assert False
    except ConfigurationError:
        pass


def test_forward_shapes_unit_embeddings_and_probabilities():
    model = DiGNet(tiny_config()).eval()
    x, depth = _batch()
    with torch.no_grad():
        out = model(x, depth)
    assert out.volume_shape == (2, 8, 2, 4, 4)
    assert out.logits.shape == (2, len(CLASS_NAMES))
    assert torch.allclose(out.embedding.norm(dim=1), torch.ones(2), atol=1e-5)
    assert torch.allclose(out.probabilities.sum(dim=1), torch.ones(2), atol=1e-5)
    assert (out.logits.abs() <= model.cfg.scale + 1e-4).all()


def test_ablated_variants_still_classify():
    x, depth = _batch(b=1)
    for kw in (dict(use_dada=False), dict(use_stg=False), dict(use_transformer=False),
               dict(head_mode='linear'), dict(use_dada=False, use_stg=False, use_transformer=False)):
        model = DiGNet(tiny_config(**kw)).eval()
        with torch.no_grad():
            out = model(x, depth)
        assert out.logits.shape == (1, 13), kw


def test_same_seed_builds_same_weights():
    a, b = DiGNet(tiny_config(seed=4)), DiGNet(tiny_config(seed=4))
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(pa, pb), name
    c = DiGNet(tiny_config(seed=5))
    assert not torch.equal(a.head.prototypes, c.head.prototypes)


def test_batch_permutation_permutes_outputs():
    model = DiGNet(tiny_config()).eval()
    x, depth = _batch(b=3)
    order = torch.tensor([2, 0, 1])
    with torch.no_grad():
        out = model(x, depth)
        permuted = model(x[order], depth[order])
    assert torch.allclose(permuted.logits, out.logits[order], atol=1e-5)
    assert torch.allclose(permuted.embedding, out.embedding[order], atol=1e-6)


def test_model_gradients_match_finite_differences():
    model = DiGNet(tiny_config()).eval()
    x, depth = _batch(b=1, t=2, size=16, seed=5)
    direction = torch.randn(len(CLASS_NAMES), dtype=torch.float64, generator=torch.Generator().manual_seed(6))
    result = module_check(model, [x.double(), depth.double()], loss=lambda out: (out.logits * direction).sum(),
                          draws=20)
    assert result.passed(1e-4), result.max_relative_error

    out = model(x.double(), depth.double())
    (out.logits * direction).sum().backward()
    assert model.stem.conv.weight.grad is not None and model.stem.conv.weight.grad.abs().sum() > 0


def test_building_a_model_leaves_the_global_rng_alone():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    DiGNet(tiny_config(seed=4))
    assert torch.equal(torch.rand(3), expected)


def test_bad_input_shapes_raise():
    model = DiGNet(tiny_config()).eval()
    x, depth = _batch(b=1)
    for bad_x, bad_depth in ((x[:, :4], depth), (x, depth[:, :2])):
        try:
            model(bad_x, bad_depth)
            assert False
        except ShapeError:
            pass


def test_checkpoint_round_trip_reproduces_outputs():
    model = DiGNet(tiny_config()).eval()
    x, depth = _batch(b=1)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'model.pt')
        save_checkpoint(path, model, CLASS_NAMES, margin={'alpha': 0.1}, epoch=3, val_loss=1.25)
        loaded, payload = load_checkpoint(path, expected=tiny_config(seed=9))
        assert payload['epoch'] == 3 and payload['val_loss'] == 1.25
        assert payload['class_names'] == CLASS_NAMES
        with torch.no_grad():
            assert torch.equal(model(x, depth).logits, loaded(x, depth).logits)


def test_checkpoint_errors():
    model = DiGNet(tiny_config())
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'model.pt')
        save_checkpoint(path, model, CLASS_NAMES)
        try:
            load_checkpoint(path, expected=tiny_config(use_dada=False))
            assert False, "mismatched config accepted"
        except CheckpointError:
            pass

        junk = os.path.join(tmp, 'junk.pt')
        with open(junk, 'wb') as f:
            f.write(b'not a checkpoint')
        for bad in (junk, os.path.join(tmp, 'missing.pt')):
            try:
                load_checkpoint(bad)
                assert False
            except CheckpointError:
                pass


if __name__ == "__main__":
    print("Graph Transformer Tests")
    print("=" * 30)
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith('test_') and callable(fn):
            try:
                fn()
                print(f"✓ {name}")
            except Exception as e:
                failed += 1
                print(f"❌ {name}: {e!r}")
    sys.exit(1 if failed else 0)
