import numpy as np
import pytest
import torch

from airfoilgen.dataset import build_dataset
from airfoilgen.errors import DivergedLoss
from airfoilgen.training import (
    TrainConfig,
    correlation_diagnostics,
    count_active_latents,
    grid_search,
    mean_abs_correlation,
    train,
)
from airfoilgen.vae import BranchConfig
from conftest import write_naca_corpus

SMOKE_CODES = tuple(
    f"{m}{p}{t:02d}"
    for m, p, t in [
        (0, 0, 9), (0, 0, 12), (0, 0, 15), (0, 0, 18), (0, 0, 21), (0, 0, 24),
        (1, 4, 8), (1, 4, 12), (2, 3, 10), (2, 4, 12), (2, 4, 15), (2, 4, 18),
        (2, 5, 12), (2, 6, 14), (3, 4, 10), (3, 4, 14), (3, 5, 16), (4, 3, 12),
        (4, 4, 12), (4, 4, 15), (4, 4, 18), (4, 5, 13), (4, 6, 11), (5, 4, 15),
        (5, 5, 12), (6, 4, 9), (6, 4, 12), (6, 5, 15), (1, 3, 20), (3, 6, 22),
        (5, 3, 17), (2, 5, 24),
    ]
)

SMALL_BRANCH = BranchConfig(n_filter=4, n_kernel=3, n_latent_total=4,
                            n_latent_physical=2, decoder_hidden=(16, 32))


@pytest.fixture(scope="module")
def smoke_dataset(tmp_path_factory):
    d = write_naca_corpus(tmp_path_factory.mktemp("smoke32"), codes=SMOKE_CODES)
    return build_dataset(d)


def smoke_config(**kw):
    base = dict(epochs=10, seed=0, n_resample=16,
                camber_cfg=SMALL_BRANCH, thickness_cfg=SMALL_BRANCH)
    base.update(kw)
    return TrainConfig(**base)


class TestTrain:
    def test_ten_epoch_smoke_loss_decreases(self, smoke_dataset):
        assert len(smoke_dataset.train_idx) >= 30
        _, report = train(smoke_dataset, smoke_config())
        history = report.history
        assert history.shape[0] == 10
        assert history[-1, 5] < history[0, 5]

    def test_determinism(self, smoke_dataset):
        cfg = smoke_config(epochs=6, seed=11)
        ckpt1, rep1 = train(smoke_dataset, cfg)
        ckpt2, rep2 = train(smoke_dataset, cfg)
        assert rep1.history[-1, 5] == pytest.approx(rep2.history[-1, 5], abs=1e-10)
        for k, v in ckpt1.model.state_dict().items():
            assert torch.equal(v, ckpt2.model.state_dict()[k])

    def test_history_csv(self, smoke_dataset, tmp_path):
        _, report = train(smoke_dataset, smoke_config(epochs=3))
        out = tmp_path / "history.csv"
        report.write_history_csv(out)
        lines = out.read_text().splitlines()
        assert lines[0] == "epoch,recon,kld,phys_train,phys_random,total,lr"
        assert len(lines) == 4

    def test_diverged_loss_carries_checkpoint(self, smoke_dataset, monkeypatch):
        import airfoilgen.training as training_mod
        from airfoilgen.vae import compute_loss as real_loss

        calls = {"n": 0}

        def flaky_loss(*args, **kw):
            calls["n"] += 1
            total, br = real_loss(*args, **kw)
            if calls["n"] > 2:
                br.total = float("nan")
            return total, br

        monkeypatch.setattr(training_mod, "compute_loss", flaky_loss)
        with pytest.raises(DivergedLoss) as err:
            train(smoke_dataset, smoke_config(epochs=10))
        # one lr-halving retry happened before the abort
        assert calls["n"] >= 4
        assert hasattr(err.value, "checkpoint")
        t, _ = err.value.checkpoint.model.decode_numpy(np.zeros((1, 8)))
        assert np.all(np.isfinite(t))


class TestLrSchedule:
    def test_exact_decay(self):
        cfg = TrainConfig()
        for epoch in (0, 1, 2499, 2500, 4999, 5000, 24999):
            assert cfg.learning_rate(epoch) == 1e-2 * 0.7 ** (epoch // 2500)


class TestActiveLatents:
    def test_untrained_upper_bound(self, smoke_dataset):
        ckpt, _ = train(smoke_dataset, smoke_config(epochs=2))
        count, scores = count_active_latents(ckpt)
        assert 0 <= count <= ckpt.model.n_latent
        assert scores.size == ckpt.model.n_latent

    def test_forced_inactive_dim(self, smoke_dataset):
        ckpt, _ = train(smoke_dataset, smoke_config(epochs=2))
        model = ckpt.model
        # zero the decoder input weights of camber latent dim 2 in both layers
        with torch.no_grad():
            model.camber.decoder[0].weight[:, 2] = 0.0
        count, scores = count_active_latents(ckpt)
        assert scores[2] < 1e-12

    def test_count_invariant_to_recomputation(self, smoke_dataset):
        ckpt, _ = train(smoke_dataset, smoke_config(epochs=2))
        a = count_active_latents(ckpt)
        b = count_active_latents(ckpt)
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])


class TestCorrelation:
    def test_identical_dims_full_correlation(self):
        rng = np.random.default_rng(0)
        col = rng.normal(size=500)
        pearson = np.corrcoef(np.stack([col, col], axis=1), rowvar=False)
        assert pearson[1, 0] == pytest.approx(1.0, abs=1e-12)

    def test_independent_gaussians_low_correlation(self):
        rng = np.random.default_rng(1)
        latents = rng.standard_normal((10_000, 6))
        pearson = np.corrcoef(latents, rowvar=False)
        off = pearson[np.tril_indices(6, k=-1)]
        assert np.max(np.abs(off)) < 0.05  # 3/sqrt(n) bound

    def test_cbar_matches_brute_force(self):
        rng = np.random.default_rng(2)
        m = rng.uniform(-1, 1, size=(5, 5))
        m = (m + m.T) / 2
        np.fill_diagonal(m, 1.0)
        total = 0.0
        count = 0
        for i in range(1, 5):
            for j in range(i):
                total += abs(m[i, j])
                count += 1
        assert mean_abs_correlation(m) == pytest.approx(total / count, abs=1e-12)

    def test_diagnostics_on_checkpoint(self, smoke_dataset):
        ckpt, _ = train(smoke_dataset, smoke_config(epochs=2))
        pearson, cbar, dims = correlation_diagnostics(ckpt, smoke_dataset)
        assert pearson.shape[0] == pearson.shape[1] == dims.size
        np.testing.assert_allclose(np.diag(pearson), 1.0, atol=1e-12)
        np.testing.assert_allclose(pearson, pearson.T, atol=1e-12)
        assert 0.0 <= cbar <= 1.0


class TestGridSearch:
    def test_two_cell_toy(self, smoke_dataset):
        grid = {"n_filter": (2, 4), "n_kernel": (3,), "n_latent": (8,),
                "activation": ("relu",)}
        result = grid_search(smoke_dataset, stage1_grid=grid, beta_grid=(1e-9, 1e-8),
                             budget_epochs=4, base=smoke_config())
        assert len(result.stage1) == 2
        losses = [c.final_loss for c in result.stage1]
        assert losses[0] <= losses[1]
        assert len(result.stage2) == 2
        assert result.best_params["n_filter"] in (2, 4)

    def test_all_cells_diverge(self, smoke_dataset, monkeypatch):
        import airfoilgen.training as training_mod

        def nan_loss(*args, **kw):
            import torch as _torch

            from airfoilgen.vae import LossBreakdown

            nan = float("nan")
            return _torch.tensor(nan), LossBreakdown(nan, nan, nan, nan, nan, 0.0, 0.0)

        monkeypatch.setattr(training_mod, "compute_loss", nan_loss)
        grid = {"n_filter": (2,), "n_kernel": (3,), "n_latent": (8,),
                "activation": ("relu",)}
        result = grid_search(smoke_dataset, stage1_grid=grid, beta_grid=(),
                             budget_epochs=5, base=smoke_config())
        assert result.best_params == {}
        assert all(c.error is not None for c in result.stage1)
        assert result.stage2 == []
