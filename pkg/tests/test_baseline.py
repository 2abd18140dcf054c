"""Recurrent counting baseline: recurrences, packing, adaptation partition."""

import math

import numpy as np
import pytest
import torch

from sylcount.baseline_nets import (
    BlstmCount,
    BlstmCountConfig,
    blstm_adapt_partition,
    blstm_forward,
    init_params,
)
from sylcount.nnops import seeded_generator

TINY = BlstmCountConfig(
    cells_per_direction=1, n_bidirectional_layers=1, dropout_rate=0.0, feature_dim=2
)


def rand_features(t, d, seed=0):
    return np.random.default_rng(seed).normal(size=(t, d))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            BlstmCountConfig(cells_per_direction=0)
        with pytest.raises(ValueError):
            BlstmCountConfig(dropout_rate=1.0)
        with pytest.raises(ValueError):
            BlstmCountConfig(feature_dim=0)


class TestStructure:
    def test_layer_widths_double_after_first(self):
        model = init_params(BlstmCountConfig(cells_per_direction=3, feature_dim=5), seed=0)
        assert model.bidirectional[0].input_size == 5
        assert model.bidirectional[1].input_size == 6  # 2 x 3 from the previous layer
        assert model.output_lstm.input_size == 6
        assert model.output_lstm.bidirectional is False
        assert model.head_dense.out_features == 1

    def test_init_determinism(self):
        a = init_params(TINY, seed=4)
        b = init_params(TINY, seed=4)
        for (_, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert torch.equal(pa, pb)


class TestForward:
    def test_trace_shape_and_final(self):
        model = init_params(BlstmCountConfig(cells_per_direction=3, feature_dim=4), seed=1)
        trace = blstm_forward(model, rand_features(9, 4))
        assert trace.per_frame_head.shape == (9, 1)
        assert trace.final_estimate == pytest.approx(trace.per_frame_head[-1, 0])

    def test_feature_width_checked(self):
        model = init_params(TINY, seed=1)
        with pytest.raises(ValueError, match="width"):
            blstm_forward(model, rand_features(5, 3))

    def test_dropout_generator_reproducible(self):
        cfg = BlstmCountConfig(cells_per_direction=3, feature_dim=4, dropout_rate=0.5)
        model = init_params(cfg, seed=1)
        x = rand_features(9, 4)
        a = blstm_forward(model, x, train_mode=True, generator=seeded_generator(3))
        b = blstm_forward(model, x, train_mode=True, generator=seeded_generator(3))
        c = blstm_forward(model, x, train_mode=True, generator=seeded_generator(4))
        assert np.array_equal(a.per_frame_head, b.per_frame_head)
        assert not np.array_equal(a.per_frame_head, c.per_frame_head)

    def test_eval_mode_ignores_dropout(self):
        cfg = BlstmCountConfig(cells_per_direction=3, feature_dim=4, dropout_rate=0.9)
        model = init_params(cfg, seed=1)
        x = rand_features(9, 4)
        a = blstm_forward(model, x)
        b = blstm_forward(model, x, train_mode=False, generator=seeded_generator(1))
        assert np.array_equal(a.per_frame_head, b.per_frame_head)


class TestHandComputedRecurrence:
    """1 cell per direction, 1 bidirectional layer, 2 frames, by hand."""

    @staticmethod
    def lstm_cell(w_ih, w_hh, b, x_t, h, c):
        gates = w_ih @ x_t + w_hh[:, 0] * h + b  # torch gate order: i, f, g, o
        i, f = 1 / (1 + math.exp(-gates[0])), 1 / (1 + math.exp(-gates[1]))
        g, o = math.tanh(gates[2]), 1 / (1 + math.exp(-gates[3]))
        c = f * c + i * g
        return o * math.tanh(c), c

    def test_two_frame_composition(self):
        model = init_params(TINY, seed=7, dtype=torch.float64)
        p = {n: q.detach().numpy() for n, q in model.named_parameters()}
        x = rand_features(2, 2, seed=3)

        fw_b = p["bidirectional.0.bias_ih_l0"] + p["bidirectional.0.bias_hh_l0"]
        bw_b = p["bidirectional.0.bias_ih_l0_reverse"] + p["bidirectional.0.bias_hh_l0_reverse"]
        h, c = 0.0, 0.0
        fw = []
        for t in range(2):
            h, c = self.lstm_cell(
                p["bidirectional.0.weight_ih_l0"], p["bidirectional.0.weight_hh_l0"], fw_b, x[t], h, c
            )
            fw.append(h)
        h, c = 0.0, 0.0
        bw = [0.0, 0.0]
        for t in (1, 0):  # backward direction consumes frames in reverse
            h, c = self.lstm_cell(
                p["bidirectional.0.weight_ih_l0_reverse"],
                p["bidirectional.0.weight_hh_l0_reverse"],
                bw_b,
                x[t],
                h,
                c,
            )
            bw[t] = h

        out_b = p["output_lstm.bias_ih_l0"] + p["output_lstm.bias_hh_l0"]
        h, c = 0.0, 0.0
        estimates = []
        for t in range(2):
            h, c = self.lstm_cell(
                p["output_lstm.weight_ih_l0"],
                p["output_lstm.weight_hh_l0"],
                out_b,
                np.array([fw[t], bw[t]]),
                h,
                c,
            )
            estimates.append(float(p["head_dense.weight"][0, 0] * h + p["head_dense.bias"][0]))

        trace = blstm_forward(model, x)
        assert trace.per_frame_head[:, 0] == pytest.approx(estimates, abs=1e-12)


class TestPaddingInvariance:
    def test_packed_batch_matches_single_forwards(self):
        # the backward direction is the sensitive one: packing must stop it
        # from reading padding as if it were the utterance's end
        cfg = BlstmCountConfig(cells_per_direction=3, feature_dim=4, dropout_rate=0.0)
        model = init_params(cfg, seed=2, dtype=torch.float64)
        lengths = [11, 5, 8]
        seqs = [rand_features(t, 4, seed=t) for t in lengths]
        feats = torch.zeros(len(seqs), max(lengths), 4, dtype=torch.float64)
        for i, s in enumerate(seqs):
            feats[i, : s.shape[0]] = torch.as_tensor(s)
        with torch.no_grad():
            batched = model.forward_batch(feats, torch.tensor(lengths))
        for i, s in enumerate(seqs):
            single = blstm_forward(model, s).per_frame_head
            assert np.allclose(batched[i, : lengths[i]].numpy(), single, atol=1e-12)


class TestAdaptPartition:
    def test_union_and_disjointness(self):
        model = init_params(BlstmCountConfig(cells_per_direction=3, feature_dim=4), seed=0)
        frozen, tunable = blstm_adapt_partition(model)
        names = {n for n, _ in model.named_parameters()}
        assert set(frozen) | set(tunable) == names
        assert not set(frozen) & set(tunable)

    def test_tunable_is_output_side(self):
        model = init_params(BlstmCountConfig(cells_per_direction=3, feature_dim=4), seed=0)
        frozen, tunable = blstm_adapt_partition(model)
        assert all(n.startswith(("output_lstm.", "head_dense.")) for n in tunable)
        assert all(n.startswith("bidirectional.") for n in frozen)

    def test_tunable_smaller_than_frozen_for_default(self):
        model = init_params(BlstmCountConfig(), seed=0)
        frozen, tunable = blstm_adapt_partition(model)
        assert sum(p.numel() for p in tunable.values()) < sum(p.numel() for p in frozen.values())
