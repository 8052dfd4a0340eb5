import numpy as np
import pytest
import torch

from sasvkit.exceptions import ConfigError
from sasvkit.pooling import MQMHAConfig, MQMHAPooling, statistics_pooling


def naive_stats(x):
    """Mean and population std per channel, one channel at a time."""
    out_mean, out_std = [], []
    for row in x:
        m = sum(row) / len(row)
        out_mean.append(m)
        out_std.append(max((sum((v - m) ** 2 for v in row) / len(row)) ** 0.5, 1e-5))
    return out_mean + out_std


def test_stats_pooling_hand_example():
    out = statistics_pooling(torch.tensor([[[1.0, 3.0]]]))
    assert out.tolist() == [[2.0, 1.0]]


def test_stats_pooling_matches_naive():
    x = torch.randn(3, 5, 7, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    out = statistics_pooling(x)
    for b in range(3):
        np.testing.assert_allclose(out[b].numpy(), naive_stats(x[b].tolist()), atol=1e-12)


def test_stats_pooling_std_floor():
    out = statistics_pooling(torch.ones(1, 2, 4, dtype=torch.float64))
    np.testing.assert_allclose(out[0, 2:].numpy(), 1e-5, rtol=1e-12)


def make_pool(channels, q, h, uniform=False, seed=0):
    torch.manual_seed(seed)
    pool = MQMHAPooling(channels, MQMHAConfig(n_queries=q, n_heads=h, hidden_dim=6), uniform_init=uniform).double()
    return pool.requires_grad_(False)


def test_output_dim_and_shape():
    pool = make_pool(8, 2, 4)
    out = pool(torch.randn(3, 8, 11, dtype=torch.float64))
    assert out.shape == (3, 2 * 8 * 2) and pool.output_dim == 32


def test_uniform_single_query_equals_stats_pooling():
    pool = make_pool(6, 1, 1, uniform=True)
    x = torch.randn(4, 6, 9, dtype=torch.float64)
    torch.testing.assert_close(pool(x), statistics_pooling(x), atol=1e-6, rtol=0)


def test_output_order_mean_then_std_per_query():
    # uniform attention for every (query, head): each query block is [means | stds]
    pool = make_pool(4, 2, 2, uniform=True)
    x = torch.randn(1, 4, 10, dtype=torch.float64)
    out = pool(x)[0]
    ref = statistics_pooling(x)[0]
    torch.testing.assert_close(out[:8], ref, atol=1e-12, rtol=0)
    torch.testing.assert_close(out[8:], ref, atol=1e-12, rtol=0)


def test_attention_sums_to_one():
    pool = make_pool(8, 2, 4)
    a = pool.attention(torch.randn(2, 8, 13, dtype=torch.float64))
    assert a.shape == (2, 2, 4, 13)
    torch.testing.assert_close(a.sum(-1), torch.ones(2, 2, 4, dtype=torch.float64))
    assert torch.all(a >= 0)


def test_time_permutation_invariance():
    pool = make_pool(8, 2, 2)
    x = torch.randn(2, 8, 15, dtype=torch.float64)
    perm = torch.randperm(15)
    torch.testing.assert_close(pool(x[..., perm]), pool(x), atol=1e-12, rtol=0)


def test_weighted_stats_against_explicit_weights():
    pool = make_pool(4, 1, 2)
    x = torch.randn(1, 4, 7, dtype=torch.float64)
    a = pool.attention(x)[0, 0]  # [heads, T]
    out = pool(x)[0]
    means, stds = [], []
    for c in range(4):
        w = a[c // 2]
        m = float((w * x[0, c]).sum())
        means.append(m)
        stds.append(max(float((w * (x[0, c] - m) ** 2).sum()) ** 0.5, 1e-5))
    np.testing.assert_allclose(out.numpy(), means + stds, atol=1e-12)


def test_constant_input_std_is_floored():
    pool = make_pool(4, 1, 2)
    out = pool(torch.full((1, 4, 5), 2.0, dtype=torch.float64))
    np.testing.assert_allclose(out[0, 4:].numpy(), 1e-5, rtol=1e-6)


def test_head_divisibility_checked():
    with pytest.raises(ConfigError):
        MQMHAPooling(6, MQMHAConfig(n_heads=4))


@pytest.mark.parametrize("kwargs", [dict(n_queries=0), dict(n_heads=0), dict(output="mean")])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        MQMHAConfig(**kwargs)
