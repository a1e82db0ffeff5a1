import numpy as np
import pytest
import torch

from airfoilgen import curves
from airfoilgen.errors import CorruptFile, ShapeMismatch, TooFewSamples, VersionMismatch
from airfoilgen.geometry import cosine_grid
from airfoilgen.vae import (
    AirfoilGenerator,
    BranchConfig,
    BranchLatent,
    Checkpoint,
    LatentBox,
    _branch_kld,
    compute_loss,
    load_checkpoint,
    save_checkpoint,
    update_latent_box,
)

TINY = BranchConfig(n_filter=2, n_kernel=3, n_latent_total=4, n_latent_physical=2,
                    conv_layers=3, decoder_hidden=(8, 8))


@pytest.fixture(scope="module")
def tiny_model():
    return AirfoilGenerator(TINY, TINY, x_grid=cosine_grid(8), init_seed=3)


@pytest.fixture(scope="module")
def default_model():
    return AirfoilGenerator(init_seed=5)


class TestEncode:
    def test_zero_input_finite(self, default_model):
        zeros = np.zeros((2, 101))
        code = default_model.encode(zeros, zeros)
        for branch in (code.camber, code.thickness):
            assert torch.all(torch.isfinite(branch.mu_p))
            assert torch.all(torch.isfinite(branch.mu_f))
            assert torch.all(torch.isfinite(branch.logvar_f))

    def test_deterministic(self, default_model, rng):
        t = np.abs(rng.normal(0.05, 0.02, (3, 101)))
        c = rng.normal(0, 0.01, (3, 101))
        a = default_model.encode(t, c)
        b = default_model.encode(t, c)
        assert torch.equal(a.camber.mu_f, b.camber.mu_f)
        assert torch.equal(a.thickness.logvar_f, b.thickness.logvar_f)

    def test_shape_mismatch(self, default_model):
        with pytest.raises(ShapeMismatch):
            default_model.encode(np.zeros((2, 50)), np.zeros((2, 50)))

    def test_latent_layout(self, default_model):
        np.testing.assert_array_equal(default_model.physical_indices(), [0, 1, 6, 7])
        assert default_model.feature_dim_map() == {
            "m_max": 0, "gamma_te": 1, "t_max": 6, "r_le": 7}


class TestReparameterize:
    def _code(self, model, mu_f, logvar_f):
        b = mu_f.shape[0]
        zeros_p = torch.zeros(b, 2, dtype=torch.float64)
        branch = BranchLatent(mu_p=zeros_p, mu_f=mu_f, logvar_f=logvar_f)
        from airfoilgen.vae import LatentCode

        return LatentCode(camber=branch, thickness=branch)

    def test_clamped_logvar_collapses_to_mean(self, default_model):
        mu = torch.full((4, 4), 0.3, dtype=torch.float64)
        logvar = torch.full((4, 4), -20.0, dtype=torch.float64)
        code = self._code(default_model, mu, logvar)
        z = default_model.reparameterize(code, torch.Generator().manual_seed(0))
        np.testing.assert_allclose(z[:, 2:6].numpy(), 0.3, atol=1e-3)

    def test_seeded_stream_reproducible(self, default_model):
        mu = torch.zeros(5, 4, dtype=torch.float64)
        logvar = torch.zeros(5, 4, dtype=torch.float64)
        code = self._code(default_model, mu, logvar)
        z1 = default_model.reparameterize(code, torch.Generator().manual_seed(9))
        z2 = default_model.reparameterize(code, torch.Generator().manual_seed(9))
        assert torch.equal(z1, z2)

    def test_physical_part_untouched(self, default_model):
        mu = torch.zeros(5, 4, dtype=torch.float64)
        logvar = torch.zeros(5, 4, dtype=torch.float64)
        code = self._code(default_model, mu, logvar)
        z = default_model.reparameterize(code, torch.Generator().manual_seed(2))
        assert torch.equal(z[:, :2], torch.zeros(5, 2, dtype=torch.float64))

    def test_monte_carlo_mean(self, default_model):
        n = 100_000
        mu = torch.full((n, 4), 0.7, dtype=torch.float64)
        logvar = torch.zeros(n, 4, dtype=torch.float64)  # sigma = 1
        code = self._code(default_model, mu, logvar)
        z = default_model.reparameterize(code, torch.Generator().manual_seed(11))
        sample_mean = z[:, 2:6].mean().item()
        assert abs(sample_mean - 0.7) < 3.0 / np.sqrt(n * 4)


class TestDecode:
    def test_feasibility_fuzz_10k(self, default_model, rng):
        box = LatentBox(lo=-3 * np.ones(12), hi=3 * np.ones(12))
        z = box.sample(10_000, torch.Generator().manual_seed(4)).numpy()
        t, _ = default_model.decode_numpy(z)
        assert t.min() >= -1e-9

    def test_deterministic(self, default_model, rng):
        z = rng.normal(size=(4, 12))
        t1, c1 = default_model.decode_numpy(z)
        t2, c2 = default_model.decode_numpy(z)
        np.testing.assert_array_equal(t1, t2)
        np.testing.assert_array_equal(c1, c2)

    def test_matches_numpy_pipeline(self, default_model, rng):
        z = rng.normal(size=(3, 12))
        zt = torch.as_tensor(z, dtype=torch.float64)
        dec = default_model.decode(zt)
        z_c, z_t = default_model.split_latent(zt)
        free_t = default_model.thickness.decode_free_vars(z_t).detach().numpy()
        for i in range(3):
            net = curves.realize_control_net("thickness", free_t[i])
            ref = curves.net_to_distribution(net, default_model.x_grid)
            np.testing.assert_allclose(dec.t[i].detach().numpy(), ref, atol=1e-11)


class TestLoss:
    def _batches(self, rng, n=6, g=101):
        t = np.abs(rng.normal(0.08, 0.03, (n, g)))
        t[:, 0] = t[:, -1] = 0
        c = rng.normal(0, 0.01, (n, g))
        c[:, 0] = c[:, -1] = 0
        return t, c

    def test_plain_autoencoder_reduction(self, default_model, rng):
        t, c = self._batches(rng)
        total, br = compute_loss(default_model, t, c, beta=0.0, lam=0.0,
                                 latent_box=None, generator=torch.Generator().manual_seed(1))
        assert br.total == br.recon_mse
        assert float(total.detach()) == br.recon_mse

    def test_kld_zero_at_prior(self):
        branch = BranchLatent(
            mu_p=torch.zeros(3, 2, dtype=torch.float64),
            mu_f=torch.zeros(3, 4, dtype=torch.float64),
            logvar_f=torch.zeros(3, 4, dtype=torch.float64),
        )
        assert float(_branch_kld(branch)) == 0.0

    def test_kld_nonnegative(self, rng):
        for _ in range(50):
            branch = BranchLatent(
                mu_p=torch.zeros(2, 2, dtype=torch.float64),
                mu_f=torch.as_tensor(rng.normal(size=(2, 4))),
                logvar_f=torch.as_tensor(rng.normal(size=(2, 4))),
            )
            assert float(_branch_kld(branch)) >= 0.0

    def test_total_decomposition_identity(self, default_model, rng):
        t, c = self._batches(rng)
        box = LatentBox(lo=-np.ones(12), hi=np.ones(12))
        beta, lam = 2.5e-8, 1e-5
        total, br = compute_loss(default_model, t, c, beta=beta, lam=lam,
                                 latent_box=box,
                                 generator=torch.Generator().manual_seed(3),
                                 n_resample=8)
        reconstructed = br.recon_mse + beta * br.kld + lam * (
            br.mse_phys_train + br.mse_phys_random)
        assert br.total == pytest.approx(reconstructed, abs=1e-10)
        assert min(br.recon_mse, br.kld, br.mse_phys_train, br.mse_phys_random) >= 0


class TestLatentBox:
    def test_degenerate_box(self):
        latents = np.tile([1.0, 2.0], (200, 1))
        box = update_latent_box(latents)
        np.testing.assert_array_equal(box.lo, box.hi)
        z = box.sample(5, torch.Generator().manual_seed(0)).numpy()
        np.testing.assert_allclose(z, np.tile([1.0, 2.0], (5, 1)))

    def test_standard_normal_oracle(self):
        rng = np.random.default_rng(0)
        latents = rng.standard_normal((100_000, 3))
        box = update_latent_box(latents)
        # Phi^-1(0.997) = 2.748
        np.testing.assert_allclose(box.hi, 2.748, atol=0.1)
        np.testing.assert_allclose(box.lo, -2.748, atol=0.1)

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            update_latent_box(np.zeros((50, 4)))

    def test_appending_tail_samples_widens(self):
        rng = np.random.default_rng(1)
        base = rng.standard_normal((500, 2))
        grown = np.vstack([base, [[9.0, -9.0], [-9.0, 9.0]]])
        small = update_latent_box(base)
        big = update_latent_box(grown)
        assert np.all(big.hi >= small.hi - 1e-12)
        assert np.all(big.lo <= small.lo + 1e-12)


class TestCheckpoint:
    def _ckpt(self, model):
        d = model.n_latent
        return Checkpoint(
            model=model,
            latent_box=LatentBox(lo=-np.ones(d), hi=np.ones(d)),
            latent_center=np.zeros(d),
            metadata={"epochs_run": 0, "seed": 3},
        )

    def test_bit_exact_round_trip(self, tiny_model, tmp_path, rng):
        path = tmp_path / "m.agck"
        save_checkpoint(self._ckpt(tiny_model), path)
        back = load_checkpoint(path)
        z = rng.normal(size=(4, 8))
        t1, c1 = tiny_model.decode_numpy(z)
        t2, c2 = back.model.decode_numpy(z)
        assert np.array_equal(t1, t2) and np.array_equal(c1, c2)
        for k, v in tiny_model.state_dict().items():
            assert torch.equal(v, back.model.state_dict()[k])

    def test_truncated_corrupt(self, tiny_model, tmp_path):
        path = tmp_path / "m.agck"
        save_checkpoint(self._ckpt(tiny_model), path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CorruptFile):
            load_checkpoint(path)

    def test_version_mismatch_names_both(self, tiny_model, tmp_path):
        import hashlib
        import struct

        path = tmp_path / "m.agck"
        save_checkpoint(self._ckpt(tiny_model), path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        payload = bytes(blob[:-32])
        path.write_bytes(payload + hashlib.sha256(payload).digest())
        with pytest.raises(VersionMismatch) as err:
            load_checkpoint(path)
        assert "99" in str(err.value) and "1" in str(err.value)


class TestGradients:
    def test_loss_terms_match_finite_differences(self, rng):
        # decimated model: 8 grid points, subsample of parameters
        model = AirfoilGenerator(TINY, TINY, x_grid=cosine_grid(8), init_seed=7)
        t = np.abs(rng.normal(0.05, 0.02, (3, 8)))
        t[:, 0] = t[:, -1] = 0
        c = rng.normal(0, 0.02, (3, 8))
        c[:, 0] = c[:, -1] = 0
        box = LatentBox(lo=-np.ones(8), hi=np.ones(8))

        def all_terms():
            total, br = compute_loss(
                model, t, c, beta=1.0, lam=1.0, latent_box=box,
                generator=torch.Generator().manual_seed(17), n_resample=3)
            return total, br

        params = list(model.parameters())
        model.zero_grad()
        total, _ = all_terms()
        total.backward()
        flat_grad = torch.cat([p.grad.flatten() for p in params]).numpy()
        flat = torch.cat([p.detach().flatten() for p in params]).numpy()

        def set_flat(vec):
            i = 0
            with torch.no_grad():
                for p in params:
                    n = p.numel()
                    p.copy_(torch.as_tensor(vec[i : i + n]).view(p.shape))
                    i += n

        h = 1e-5
        check = rng.choice(flat.size, size=60, replace=False)
        for j in check:
            v = flat.copy()
            v[j] += h
            set_flat(v)
            up, _ = all_terms()
            v[j] -= 2 * h
            set_flat(v)
            down, _ = all_terms()
            set_flat(flat)
            fd = (float(up) - float(down)) / (2 * h)
            scale = max(abs(fd), 1e-6)
            assert abs(flat_grad[j] - fd) / scale < 1e-4
