"""Selective scan against a scalar-loop oracle, discretization, Mamba blocks
and the bidirectional global context encoder."""

import copy
import math

import numpy as np
import pytest
import torch

from helpers import parameter_gradcheck, scan_oracle
from s2tx.config import ExperimentConfig
from s2tx.errors import InvalidSpecError, NumericError
from s2tx.patching import PatchTensor, make_multiscale
from s2tx.ssm import (
    GlobalContextEncoder,
    MambaBlock,
    SelectiveSSM,
    discretize,
    global_context,
    selective_scan,
)


def random_instance(rng, length, channels, state, dtype=torch.float64):
    u = torch.tensor(rng.normal(size=(length, channels)), dtype=dtype)
    delta = torch.tensor(rng.uniform(1e-3, 1.0, size=(length, channels)), dtype=dtype)
    A = -torch.tensor(rng.uniform(0.1, 4.0, size=(channels, state)), dtype=dtype)
    B = torch.tensor(rng.normal(size=(length, state)), dtype=dtype)
    C = torch.tensor(rng.normal(size=(length, state)), dtype=dtype)
    D = torch.tensor(rng.normal(size=channels), dtype=dtype)
    return u, delta, A, B, C, D


class TestDiscretize:
    def test_zero_step(self):
        A_bar, B_bar = discretize(torch.tensor([-1.0]), torch.tensor([3.0]), torch.tensor(0.0))
        assert A_bar.item() == 1.0
        assert B_bar.item() == 0.0

    def test_half_decay(self):
        A_bar, B_bar = discretize(
            torch.tensor([-1.0], dtype=torch.float64),
            torch.tensor([1.0], dtype=torch.float64),
            torch.tensor(math.log(2.0), dtype=torch.float64),
        )
        assert A_bar.item() == pytest.approx(0.5, rel=1e-12)
        assert B_bar.item() == pytest.approx(0.5, rel=1e-12)

    @pytest.mark.parametrize("a", [-1e-12, -0.0, 0.0])
    def test_vanishing_A_limit(self, a):
        _, B_bar = discretize(
            torch.tensor([a], dtype=torch.float64),
            torch.tensor([2.0], dtype=torch.float64),
            torch.tensor(0.1, dtype=torch.float64),
        )
        assert B_bar.item() == pytest.approx(0.2, rel=1e-9)

    def test_decay_in_unit_interval(self):
        A = -torch.rand(8, 4) * 10 - 1e-3
        delta = torch.rand(8, 1) + 1e-4
        A_bar, _ = discretize(A, torch.ones(4), delta)
        assert ((A_bar > 0) & (A_bar < 1)).all()


class TestSelectiveScan:
    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            length, channels, state = rng.integers(1, 33), rng.integers(1, 9), rng.integers(1, 9)
            u, delta, A, B, C, D = random_instance(rng, length, channels, state)
            got = selective_scan(u, delta, A, B, C, D).numpy()
            want = scan_oracle(u, delta, A, B, C, D)
            np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_batched_matches_per_sequence(self):
        rng = np.random.default_rng(1)
        rows = [random_instance(rng, 70, 3, 4) for _ in range(3)]
        A, D = rows[0][2], rows[0][5]
        stacked = [torch.stack([r[i] for r in rows]) for i in (0, 1, 3, 4)]
        batched = selective_scan(stacked[0], stacked[1], A, stacked[2], stacked[3], D)
        for i, r in enumerate(rows):
            single = selective_scan(r[0], r[1], A, r[3], r[4], D)
            torch.testing.assert_close(batched[i], single, rtol=1e-12, atol=1e-12)

    def test_long_sequence_crosses_chunks(self):
        rng = np.random.default_rng(2)
        u, delta, A, B, C, D = random_instance(rng, 150, 2, 3)
        np.testing.assert_allclose(
            selective_scan(u, delta, A, B, C, D).numpy(), scan_oracle(u, delta, A, B, C, D), rtol=1e-10, atol=1e-12
        )

    def test_zero_inputs(self):
        rng = np.random.default_rng(3)
        u, delta, A, B, C, D = random_instance(rng, 12, 3, 4)
        assert torch.count_nonzero(selective_scan(torch.zeros_like(u), delta, A, B, C, D)) == 0

    def test_single_step(self):
        rng = np.random.default_rng(4)
        u, delta, A, B, C, D = random_instance(rng, 1, 3, 4)
        _, B_bar = discretize(A, B[0], delta[0].unsqueeze(-1))
        expected = (C[0] * B_bar).sum(-1) * u[0] + D * u[0]
        torch.testing.assert_close(selective_scan(u, delta, A, B, C, D)[0], expected)

    def test_non_finite_reports_step(self):
        rng = np.random.default_rng(5)
        u, delta, A, B, C, D = random_instance(rng, 10, 2, 3)
        B[6, 1] = math.inf
        with pytest.raises(NumericError) as info:
            selective_scan(u, delta, A, B, C, D)
        assert info.value.step == 6

    def test_bounded_state(self):
        rng = np.random.default_rng(6)
        u, delta, A, B, _, _ = random_instance(rng, 40, 3, 4)
        A_bar, B_bar = discretize(A, B.unsqueeze(-2), delta.unsqueeze(-1))
        drive = (B_bar * u.unsqueeze(-1)).abs().max()
        bound = drive / (1 - A_bar.max())
        for n in range(4):
            readout = torch.zeros(40, 4, dtype=torch.float64)
            readout[:, n] = 1.0
            states = selective_scan(u, delta, A, B, readout)
            assert states.abs().max() <= bound


class TestSelectiveSSM:
    def test_invariants(self):
        ssm = SelectiveSSM(channels=8, state_dim=4)
        x = torch.randn(2, 10, 8)
        assert (ssm.step_sizes(x) > 0).all()
        A_bar, _ = discretize(ssm.A, torch.ones(4), ssm.step_sizes(x).unsqueeze(-1))
        assert ((A_bar > 0) & (A_bar < 1)).all()

    def test_initial_timescales(self):
        ssm = SelectiveSSM(channels=3, state_dim=16)
        torch.testing.assert_close(-ssm.A[0], torch.arange(1.0, 17.0))


class TestMambaBlock:
    @pytest.mark.parametrize("shape", [(5, 8), (2, 7, 8), (2, 3, 4, 8)])
    def test_shape(self, shape):
        block = MambaBlock(8, state_dim=4)
        assert block(torch.randn(shape)).shape == shape

    def test_residual_pass_through(self):
        block = MambaBlock(8, state_dim=4)
        with torch.no_grad():
            block.out_proj.weight.zero_()
            block.out_proj.bias.zero_()
        x = torch.randn(5, 8)
        assert torch.equal(block(x), x)

    def test_gradients(self):
        block = MambaBlock(8, state_dim=4, expand=2, conv_kernel=3).double().eval()
        assert parameter_gradcheck(block, torch.randn(5, 8, dtype=torch.float64))


class TestGlobalContext:
    @pytest.fixture
    def encoder(self):
        return GlobalContextEncoder(patch_len=8, d_model=8, n_layers=1, state_dim=4).double().eval()

    def test_single_variate_shape(self, encoder):
        patches = PatchTensor(torch.randn(1, 6, 8, dtype=torch.float64), "global", (0, 28))
        assert global_context(patches, encoder).values.shape == (1, 6, 8)

    def test_rejects_local_patches(self, encoder):
        with pytest.raises(InvalidSpecError):
            global_context(PatchTensor(torch.randn(1, 6, 8), "local", (0, 28)), encoder)

    def test_default_scan_length(self):
        cfg = ExperimentConfig()
        encoder = GlobalContextEncoder(cfg.patch_len_global, cfg.d_model, 1, cfg.state_dim)
        seen = []
        encoder.forward_layers.register_forward_hook(lambda m, i, o: seen.append(i[0].shape))
        global_patches, _ = make_multiscale(torch.randn(7, 336), cfg)
        out = global_context(global_patches, encoder)
        assert seen == [torch.Size([1, 126, cfg.d_model])]
        assert out.values.shape == (7, 18, cfg.d_model)

    def test_variate_permutation_changes_values(self, encoder):
        values = torch.randn(3, 6, 8, dtype=torch.float64)
        perm = [2, 0, 1]
        base = global_context(PatchTensor(values, "global", (0, 28)), encoder).values
        swapped = global_context(PatchTensor(values[perm], "global", (0, 28)), encoder).values
        assert swapped.shape == base.shape
        assert not torch.allclose(swapped, base[perm])

    def test_per_variate_scan_is_permutation_equivariant(self):
        encoder = GlobalContextEncoder(8, 8, 1, 4, cross_variate=False).double().eval()
        values = torch.randn(1, 3, 6, 8, dtype=torch.float64)
        perm = [2, 0, 1]
        torch.testing.assert_close(encoder(values[:, perm]), encoder(values)[:, perm])

    def test_reversal_consistency(self, encoder):
        values = torch.randn(1, 6, 8, dtype=torch.float64)
        mirrored = copy.deepcopy(encoder)
        mirrored.forward_layers, mirrored.backward_layers = encoder.backward_layers, encoder.forward_layers
        original = global_context(PatchTensor(values, "global", (0, 28)), encoder).values
        reversed_ = global_context(PatchTensor(values.flip(-2), "global", (0, 28)), mirrored).values
        torch.testing.assert_close(reversed_, original.flip(-2), rtol=1e-12, atol=1e-12)

    def test_gradients(self, encoder):
        assert parameter_gradcheck(encoder, torch.randn(1, 2, 4, 8, dtype=torch.float64))
