import math

import numpy as np
import pytest

from fttn.engine import absorb_features, contract_sequential
from fttn.features import embed_image
from fttn.model import (
    CheckpointFormatError,
    effective_sites,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from fttn.training import logits_single


class TestInit:
    def test_deterministic(self):
        a = init_model(10, 3, 4, seed=42)
        b = init_model(10, 3, 4, seed=42)
        for x, y in zip(a.sites, b.sites):
            np.testing.assert_array_equal(x, y)

    def test_bounded_noise(self):
        noiseless = init_model(8, 3, 2, seed=1, noise_scale=0.0)
        noisy = init_model(8, 3, 2, seed=1, noise_scale=0.01)
        for x, y in zip(noiseless.sites, noisy.sites):
            assert np.max(np.abs(x - y)) <= 0.01

    def test_shapes(self):
        m = init_model(5, 3, 4, seed=0, label_site=2)
        assert m.sites[0].shape == (2, 3)
        assert m.sites[1].shape == (3, 2, 3)
        assert m.sites[2].shape == (3, 2, 3, 4)
        assert m.sites[4].shape == (3, 2)

    def test_label_site_defaults_to_center(self):
        assert init_model(9, 2, 2, seed=0).label_site == 4

    def test_single_site_model(self):
        m = init_model(1, 1, 3, seed=0)
        assert m.sites[0].shape == (2, 3)

    def test_chi_one_closed_form(self):
        """At chi=1 the class scores are products of per-site sums."""
        m = init_model(4, 1, 2, seed=3, noise_scale=0.0)
        img = np.array([0.2, 0.9, 0.4, 0.7])
        psi = embed_image(img)
        expected = np.ones(2)
        for c in range(2):
            for s, site in enumerate(m.sites):
                vec = site.reshape(2, -1)[:, c] if s == m.label_site else site.reshape(2)
                expected[c] *= float(vec @ psi[s])
        got = contract_sequential(absorb_features(m.sites, psi), m.label_site)
        np.testing.assert_allclose(got.true_values(), expected, rtol=1e-12)


class TestEffectiveSites:
    def test_beta_zero_is_bitwise_identity(self):
        m = init_model(6, 2, 3, seed=4, noise_scale=0.5)
        for raw, eff in zip(m.sites, effective_sites(m, 0.0)):
            np.testing.assert_array_equal(raw, eff)

    def test_zero_entry_stays_zero(self):
        m = init_model(4, 2, 2, seed=5, noise_scale=0.0)
        m.sites[1][0, 0, 1] = 0.0
        for beta in (0.0, 0.4, 2.0):
            assert effective_sites(m, beta)[1][0, 0, 1] == 0.0

    def test_unit_entry_value(self):
        m = init_model(4, 2, 2, seed=6, noise_scale=0.0)
        m.sites[1][0, 0, 0] = 1.0
        got = effective_sites(m, 0.4)[1][0, 0, 0]
        assert got == pytest.approx(0.670320, abs=1e-6)
        assert got == pytest.approx(math.exp(-0.4), rel=1e-15)

    def test_shapes_preserved(self):
        m = init_model(7, 3, 4, seed=7)
        for beta in (0.0, 0.3, 1.7):
            for raw, eff in zip(m.sites, effective_sites(m, beta)):
                assert raw.shape == eff.shape

    def test_monotone_damping_for_positive_entries(self):
        beta = 0.5
        rng = np.random.default_rng(8)
        m = init_model(4, 2, 2, seed=8, noise_scale=0.0)
        for s in m.sites:
            s[:] = rng.uniform(0.01, 1.0 / beta, size=s.shape)
        for raw, eff in zip(m.sites, effective_sites(m, beta)):
            assert np.all(np.abs(eff) <= np.abs(raw))

    def test_label_site_exclusion_flag(self):
        m = init_model(5, 2, 3, seed=9)
        eff = effective_sites(m, 0.7, temper_label=False)
        np.testing.assert_array_equal(eff[m.label_site], m.sites[m.label_site])
        assert not np.array_equal(eff[0], m.sites[0])

    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError):
            effective_sites(init_model(3, 1, 2, seed=0), -0.1)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        m = init_model(6, 3, 4, seed=10, label_site=1)
        path = tmp_path / "model.fttn"
        save_checkpoint(m, path)
        back = load_checkpoint(path)
        assert (back.n_sites, back.bond_dim, back.local_dim) == (6, 3, 2)
        assert (back.num_classes, back.label_site) == (4, 1)
        for x, y in zip(m.sites, back.sites):
            np.testing.assert_array_equal(x, y)

    def test_round_trip_preserves_logits(self, tmp_path):
        m = init_model(12, 3, 3, seed=11, noise_scale=0.2)
        path = tmp_path / "model.fttn"
        save_checkpoint(m, path)
        back = load_checkpoint(path)
        img = np.random.default_rng(12).uniform(0, 1, 12)
        psi = embed_image(img)
        a = logits_single(m, psi, 0.3)
        b = logits_single(back, psi, 0.3)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.log_scale == b.log_scale

    def test_truncated_file_reports_offset(self, tmp_path):
        m = init_model(4, 2, 2, seed=13)
        path = tmp_path / "model.fttn"
        save_checkpoint(m, path)
        blob = path.read_bytes()
        clipped = tmp_path / "clipped.fttn"
        clipped.write_bytes(blob[: len(blob) - 7])
        with pytest.raises(CheckpointFormatError) as err:
            load_checkpoint(clipped)
        assert err.value.offset > 0
        assert "offset" in str(err.value)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.fttn"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(CheckpointFormatError) as err:
            load_checkpoint(path)
        assert err.value.offset == 0

    def test_trailing_garbage_rejected(self, tmp_path):
        m = init_model(3, 2, 2, seed=14)
        path = tmp_path / "model.fttn"
        save_checkpoint(m, path)
        padded = tmp_path / "padded.fttn"
        padded.write_bytes(path.read_bytes() + b"\x00\x01")
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(padded)
