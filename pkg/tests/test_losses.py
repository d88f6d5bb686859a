import math

import numpy as np
import pytest

from texweave import filterbank as fb
from texweave import losses
from texweave import ndtensor as nd

from conftest import fd_gradcheck
from test_filterbank import tiny_bank
from test_ndtensor import conv_oracle


def normalize_oracle(x):
    centered = x - x.mean()
    return centered / math.sqrt((centered ** 2).mean() + 1e-16)


def scalar_loop_sum(values):
    total = 0.0
    for v in np.asarray(values).reshape(-1):
        total += v
    return total


@pytest.fixture(scope="module")
def bank():
    return fb.build_lm_bank()


class TestL2:
    def test_zero_at_equal(self):
        x = np.random.default_rng(0).uniform(size=(4, 4, 3))
        assert losses.l2_loss(nd.Tensor(x), nd.Tensor(x.copy())).item() == 0.0

    def test_analytic(self):
        out = losses.l2_loss(nd.Tensor([1.0, 0.0]), nd.Tensor([0.0, 0.0]))
        assert out.item() == 1.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(1)
        y = rng.uniform(size=(28, 28, 3))
        y_hat = rng.uniform(size=(28, 28, 3))
        expected = scalar_loop_sum((y - y_hat) ** 2)
        np.testing.assert_allclose(losses.l2_loss(nd.Tensor(y), nd.Tensor(y_hat)).item(),
                                   expected, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(nd.ShapeError):
            losses.l2_loss(nd.Tensor(np.zeros((2, 2))), nd.Tensor(np.zeros((2, 3))))


class TestCrossEntropy:
    def test_saturated_match_near_zero(self):
        n = 12
        ones = nd.Tensor(np.ones((n,)))
        loss = losses.cross_entropy_loss(ones, nd.Tensor(np.ones((n,))))
        assert 0.0 <= loss.item() <= 2e-8 * n

    def test_half_half_is_ln2(self):
        loss = losses.cross_entropy_loss(nd.Tensor([0.5]), nd.Tensor([0.5]))
        np.testing.assert_allclose(loss.item(), math.log(2.0), atol=1e-12)

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(2)
        y = rng.uniform(size=(6, 6, 3))
        y_hat = rng.uniform(size=(6, 6, 3))
        c = np.clip(y_hat, 1e-8, 1 - 1e-8)
        expected = -scalar_loop_sum(y * np.log(c) + (1 - y) * np.log(1 - c))
        got = losses.cross_entropy_loss(nd.Tensor(y), nd.Tensor(y_hat)).item()
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            losses.cross_entropy_loss(nd.Tensor([1.5]), nd.Tensor([0.5]))
        with pytest.raises(ValueError):
            losses.cross_entropy_loss(nd.Tensor([0.5]), nd.Tensor([-0.1]))


class TestFilterBankLoss:
    def test_zero_at_equal(self, bank):
        x = np.random.default_rng(3).uniform(size=(9, 9, 3))
        assert losses.fb_loss(nd.Tensor(x), nd.Tensor(x.copy()), bank).item() == 0.0

    def test_affine_intensity_invariance(self, bank):
        rng = np.random.default_rng(4)
        y = rng.uniform(size=(9, 9, 3))
        loss = losses.fb_loss(nd.Tensor(y), nd.Tensor(1.7 * y + 0.2), bank)
        assert loss.item() <= 1e-10

    def test_matches_conv_plus_loop_oracle(self):
        rng = np.random.default_rng(5)
        kernels = rng.normal(size=(3, 3, 3))
        small = tiny_bank(kernels, ["edge", "bar", "log"])
        y = rng.uniform(size=(9, 9, 1))
        y_hat = rng.uniform(size=(9, 9, 1))
        ry = conv_oracle(normalize_oracle(y), kernels)
        rh = conv_oracle(normalize_oracle(y_hat), kernels)
        expected = scalar_loop_sum((ry - rh) ** 2)
        got = losses.fb_loss(nd.Tensor(y), nd.Tensor(y_hat), small).item()
        np.testing.assert_allclose(got, expected, atol=1e-10)


class TestTotalVariation:
    def test_constant_is_zero(self):
        assert losses.tv_loss(nd.Tensor(np.full((5, 5, 3), 0.3))).item() == 0.0

    def test_two_horizontal_steps(self):
        img = np.array([[0.0, 1.0], [0.0, 1.0]])[:, :, None]
        assert losses.tv_loss(nd.Tensor(img)).item() == 2.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(size=(7, 5, 3))
        expected = 0.0
        for c in range(3):
            for i in range(7):
                for j in range(4):
                    expected += (x[i, j + 1, c] - x[i, j, c]) ** 2
            for i in range(6):
                for j in range(5):
                    expected += (x[i + 1, j, c] - x[i, j, c]) ** 2
        np.testing.assert_allclose(losses.tv_loss(nd.Tensor(x)).item(),
                                   expected, atol=1e-12)

    def test_degenerate_single_row(self):
        x = np.array([[0.0, 1.0, 3.0]])[:, :, None]
        # Only horizontal differences exist: 1 + 4.
        assert losses.tv_loss(nd.Tensor(x)).item() == 5.0
        assert losses.tv_loss(nd.Tensor(np.ones((1, 1, 3)))).item() == 0.0


class TestColorRegularizer:
    def test_equal_means_different_content(self):
        y = np.zeros((2, 2, 3))
        y[0, 0] = 1.0
        y_hat = np.zeros((2, 2, 3))
        y_hat[1, 1] = 1.0
        assert losses.color_reg(nd.Tensor(y), nd.Tensor(y_hat)).item() == 0.0

    def test_uniform_shift(self):
        rng = np.random.default_rng(7)
        y = rng.uniform(0.0, 0.5, size=(6, 6, 3))
        loss = losses.color_reg(nd.Tensor(y), nd.Tensor(y + 0.1))
        np.testing.assert_allclose(loss.item(), 0.03, atol=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(8)
        y = rng.uniform(size=(5, 4, 3))
        y_hat = rng.uniform(size=(5, 4, 3))
        expected = 0.0
        for c in range(3):
            expected += (y[:, :, c].mean() - y_hat[:, :, c].mean()) ** 2
        np.testing.assert_allclose(losses.color_reg(nd.Tensor(y), nd.Tensor(y_hat)).item(),
                                   expected, atol=1e-12)


class TestFltbnk:
    def test_zero_on_equal_constant(self, bank):
        x = np.full((9, 9, 3), 0.5)
        loss = losses.fltbnk_loss(nd.Tensor(x), nd.Tensor(x.copy()), bank)
        assert loss.item() == 0.0

    def test_zero_weights_reduce_to_fb(self, bank):
        rng = np.random.default_rng(9)
        y = rng.uniform(size=(9, 9, 3))
        y_hat = rng.uniform(size=(9, 9, 3))
        full = losses.fltbnk_loss(nd.Tensor(y), nd.Tensor(y_hat), bank, 0.0, 0.0)
        base = losses.fb_loss(nd.Tensor(y), nd.Tensor(y_hat), bank)
        assert full.item() == base.item()

    def test_is_sum_of_components(self, bank):
        rng = np.random.default_rng(10)
        y = rng.uniform(size=(9, 9, 3))
        y_hat = rng.uniform(size=(9, 9, 3))
        lt, lc = 0.02, 3.0
        combined = losses.fltbnk_loss(nd.Tensor(y), nd.Tensor(y_hat), bank, lt, lc)
        parts = (losses.fb_loss(nd.Tensor(y), nd.Tensor(y_hat), bank).item()
                 + lt * losses.tv_loss(nd.Tensor(y_hat)).item()
                 + lc * losses.color_reg(nd.Tensor(y), nd.Tensor(y_hat)).item())
        np.testing.assert_allclose(combined.item(), parts, atol=1e-12)

    def test_fb_term_affine_invariant_color_term_not(self, bank):
        rng = np.random.default_rng(11)
        y = rng.uniform(0.2, 0.8, size=(9, 9, 3))
        scaled = 1.5 * y + 0.05
        assert losses.fb_loss(nd.Tensor(y), nd.Tensor(scaled), bank).item() <= 1e-10
        assert losses.color_reg(nd.Tensor(y), nd.Tensor(scaled)).item() > 1e-3


def gram_oracle(mat):
    n, m = mat.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            for k in range(m):
                out[i, j] += mat[i, k] * mat[j, k]
    return out


class TestGram:
    def test_single_all_ones_map(self):
        m = 6
        out = losses.gram(nd.Tensor(np.ones((1, m))))
        np.testing.assert_array_equal(out.data, [[float(m)]])

    def test_orthonormal_rows(self):
        out = losses.gram(nd.Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, np.eye(2))

    def test_matches_double_loop(self):
        rng = np.random.default_rng(12)
        mat = rng.normal(size=(3, 7))
        out = losses.gram(nd.Tensor(mat))
        np.testing.assert_allclose(out.data, gram_oracle(mat), atol=1e-12)

    def test_symmetric_and_psd(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            mat = rng.normal(size=(4, 6))
            g = losses.gram(nd.Tensor(mat)).data
            np.testing.assert_array_equal(g, g.T)
            assert np.linalg.eigvalsh(g).min() >= -1e-10

    def test_stack_layer_selection(self, bank):
        rng = np.random.default_rng(14)
        stack = fb.respond(bank, nd.Tensor(rng.uniform(size=(6, 6, 3))))
        g = losses.gram(stack, layer=0)
        assert g.shape == (18 * 3, 18 * 3)
        with pytest.raises(ValueError):
            losses.gram(stack)

    def test_invalid_layer(self, bank):
        stack = fb.respond(bank, nd.Tensor(np.zeros((6, 6, 3))))
        with pytest.raises(ValueError):
            losses.gram(stack, layer=9)


class TestGramLoss:
    @staticmethod
    def fixed_extractor(mats):
        def extract(image):
            # Feature rows are linear in the image so the loss stays differentiable.
            return [nd.matmul(nd.Tensor(m), nd.reshape(image, (image.size, 1))) for m in mats]
        return extract

    def test_zero_at_equal(self, bank):
        rng = np.random.default_rng(15)
        x = rng.uniform(size=(9, 9, 3))
        loss = losses.gram_loss(nd.Tensor(x), nd.Tensor(x.copy()),
                                losses.lm_extractor(bank), losses.DEFAULT_GRAM_WEIGHTS)
        assert loss.item() == 0.0

    def test_zero_weights_give_zero(self, bank):
        rng = np.random.default_rng(16)
        x = rng.uniform(size=(9, 9, 3))
        x_hat = rng.uniform(size=(9, 9, 3))
        loss = losses.gram_loss(nd.Tensor(x), nd.Tensor(x_hat),
                                losses.lm_extractor(bank), (0.0,) * 4)
        assert loss.item() == 0.0

    def test_formula_oracle_single_layer(self):
        # 2 maps x 4 positions, features = M @ vec(image) for a fixed M.
        rng = np.random.default_rng(17)
        m = rng.normal(size=(8, 4))

        def extract(image):
            flat = nd.reshape(image, (4, 1))
            return [nd.reshape(nd.matmul(nd.Tensor(m), flat), (2, 4))]

        x = rng.uniform(size=(2, 2, 1))
        x_hat = rng.uniform(size=(2, 2, 1))
        fx = (m @ x.reshape(4, 1)).reshape(2, 4)
        fh = (m @ x_hat.reshape(4, 1)).reshape(2, 4)
        g, gh = gram_oracle(fx), gram_oracle(fh)
        n_l, m_l = 2, 4
        expected = 0.7 * ((g - gh) ** 2).sum() / (4 * n_l ** 2 * m_l ** 2)
        got = losses.gram_loss(nd.Tensor(x), nd.Tensor(x_hat), extract, [0.7]).item()
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_weight_count_mismatch(self, bank):
        x = nd.Tensor(np.zeros((9, 9, 3)))
        with pytest.raises(ValueError):
            losses.gram_loss(x, x, losses.lm_extractor(bank), (1.0, 1.0))


def kl_mc_oracle(means, stds, n_samples, rng):
    """Monte-Carlo KL estimate; returns (estimate, standard_error)."""
    log_ratios = np.zeros(n_samples)
    for mu, sigma in zip(means, stds):
        eps = rng.standard_normal((n_samples, mu.size))
        z = mu + sigma * eps
        log_q = -np.log(sigma) - (z - mu) ** 2 / (2 * sigma ** 2)
        log_p = -z ** 2 / 2
        log_ratios += (log_q - log_p).sum(axis=1)
    return log_ratios.mean(), log_ratios.std(ddof=1) / math.sqrt(n_samples)


class TestKlLatent:
    def make_state(self, means, stds):
        state = losses.LatentState()
        for mu, sigma in zip(means, stds):
            state.append(nd.Tensor(mu), nd.Tensor(sigma), nd.Tensor(mu))
        return state

    def test_standard_normal_posterior_is_zero(self):
        state = self.make_state([np.zeros(4)] * 3, [np.ones(4)] * 3)
        assert losses.kl_latent(state).item() == 0.0

    def test_unit_mean_single_step(self):
        state = self.make_state([np.array([1.0])], [np.array([1.0])])
        assert losses.kl_latent(state).item() == 0.5

    def test_matches_monte_carlo(self):
        rng = np.random.default_rng(18)
        mu = [rng.normal(scale=0.8, size=2) for _ in range(2)]
        sigma = [rng.uniform(0.5, 1.6, size=2) for _ in range(2)]
        closed = losses.kl_latent(self.make_state(mu, sigma)).item()
        estimate, se = kl_mc_oracle(mu, sigma, 10 ** 6, rng)
        assert abs(closed - estimate) <= 3 * se

    def test_rejects_nonpositive_std(self):
        state = self.make_state([np.zeros(2)], [np.array([1.0, 0.0])])
        with pytest.raises(ValueError):
            losses.kl_latent(state)


class TestTotalLoss:
    def test_values(self):
        assert losses.total_loss(nd.Tensor(0.0), nd.Tensor(0.0)).item() == 0.0
        assert losses.total_loss(nd.Tensor(1.5), nd.Tensor(0.25)).item() == 1.75
        rng = np.random.default_rng(19)
        a, b = rng.uniform(size=2)
        got = losses.total_loss(nd.Tensor(a), nd.Tensor(b)).item()
        np.testing.assert_allclose(got, a + b, atol=1e-15)


class TestLossSpecDispatch:
    def test_kind_validation(self):
        with pytest.raises(ValueError):
            losses.LossSpec(kind="huber")
        with pytest.raises(ValueError):
            losses.LossSpec(tv_weight=-1.0)

    @pytest.mark.parametrize("kind", losses.LOSS_KINDS)
    def test_dispatch_runs_each_kind(self, kind, bank):
        rng = np.random.default_rng(20)
        y = nd.Tensor(rng.uniform(size=(9, 9, 3)))
        y_hat = nd.Tensor(rng.uniform(size=(9, 9, 3)))
        loss = losses.reconstruction_loss(losses.LossSpec(kind=kind), y, y_hat, bank)
        assert loss.item() >= 0.0

    def test_bank_required_for_bank_losses(self):
        y = nd.Tensor(np.zeros((4, 4, 3)))
        with pytest.raises(ValueError):
            losses.reconstruction_loss(losses.LossSpec(kind="fb"), y, y)


class TestGradients:
    """Every loss gradient w.r.t. y_hat (and mu/sigma for the KL) vs central differences."""

    def test_cheap_losses_full_coordinates(self):
        for seed in range(5):
            rng = np.random.default_rng(30 + seed)
            y = nd.Tensor(rng.uniform(0.1, 0.9, size=(28, 28, 3)))
            y_hat = nd.Tensor(rng.uniform(0.1, 0.9, size=(28, 28, 3)))
            for build in (lambda: losses.l2_loss(y, y_hat),
                          lambda: losses.cross_entropy_loss(y, y_hat),
                          lambda: losses.tv_loss(y_hat),
                          lambda: losses.color_reg(y, y_hat)):
                fd_gradcheck(build, [y_hat], rng, max_coords=40)

    def test_bank_losses(self, bank):
        for seed in range(5):
            rng = np.random.default_rng(40 + seed)
            y = nd.Tensor(rng.uniform(0.1, 0.9, size=(28, 28, 3)))
            y_hat = nd.Tensor(rng.uniform(0.1, 0.9, size=(28, 28, 3)))
            for build in (lambda: losses.fb_loss(y, y_hat, bank),
                          lambda: losses.fltbnk_loss(y, y_hat, bank),
                          lambda: losses.gram_loss(y, y_hat, losses.lm_extractor(bank),
                                                   losses.DEFAULT_GRAM_WEIGHTS)):
                fd_gradcheck(build, [y_hat], rng, max_coords=6)

    def test_kl_gradient(self):
        for seed in range(5):
            rng = np.random.default_rng(50 + seed)
            mus = [nd.Tensor(rng.normal(size=3)) for _ in range(2)]
            sigmas = [nd.Tensor(rng.uniform(0.5, 1.5, size=3)) for _ in range(2)]

            def build():
                state = losses.LatentState()
                for mu, sigma in zip(mus, sigmas):
                    state.append(mu, sigma, mu)
                return losses.kl_latent(state)

            fd_gradcheck(build, mus + sigmas, rng)
