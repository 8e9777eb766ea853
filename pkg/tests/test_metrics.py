import json
import math

import numpy as np
import pytest
from scipy import linalg

from lumen.errors import ContractError, DomainError, NumericError
from lumen.image import ImageBuffer
from lumen.imageio import write_image, write_vector
from lumen.metrics import (
    DefaultEmbedder, FileEmbedder, MetricReport, RandomEmbedder, cosine, evaluate, frechet_distance,
    gaussian_fit, id_score, kernel_distance, mmd2_unbiased, polynomial_kernel, psnr,
)
from lumen.rng import SeededRng
from lumen.toy import ToyIdentity


def img(value, shape=(4, 4, 3)):
    return ImageBuffer(np.full(shape, value))


def closed_form_fd(mu1, s1, mu2, s2):
    root = linalg.sqrtm(s1 @ s2).real
    return float(np.sum((mu1 - mu2) ** 2) + np.trace(s1 + s2 - 2 * root))


def test_psnr_trivial_cases():
    assert psnr(img(0.3), img(0.3)) == math.inf
    assert psnr(img(0.0), img(1.0)) == 0.0
    assert psnr(img(0.0), img(0.1)) == pytest.approx(20.0)


def test_psnr_two_pass_reference():
    r = np.random.default_rng(0)
    a, b = ImageBuffer(r.random((9, 7, 3))), ImageBuffer(r.random((9, 7, 3)))
    x, y = a.data.astype(np.float64).ravel(), b.data.astype(np.float64).ravel()
    total = 0.0
    for u, v in zip(x, y):
        total += (u - v) ** 2
    ref = 10 * math.log10(1 / (total / x.size))
    assert abs(psnr(a, b) - ref) < 1e-10


def test_psnr_contracts():
    with pytest.raises(ContractError):
        psnr(img(0.1), img(0.1, (4, 5, 3)))
    with pytest.raises(ContractError):
        psnr(ImageBuffer(np.zeros((2, 2)), range="dn", bits=8), ImageBuffer(np.zeros((2, 2)), range="dn", bits=8))


def test_fd_identical_sets():
    a = SeededRng(0).gaussian((500, 6))
    assert abs(frechet_distance(a, a)) < 1e-8


def test_fd_symmetric():
    a = SeededRng(1).gaussian((300, 5))
    b = 0.5 + 2 * SeededRng(2).gaussian((200, 5))
    assert abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8


def test_fd_constant_sets():
    assert frechet_distance(np.zeros(50), np.ones(50)) == pytest.approx(1.0, abs=1e-12)


S1 = np.array([[1.0, 0.5], [0.5, 2.0]])
S2 = np.array([[2.0, -0.3], [-0.3, 0.5]])


def test_fd_exact_moments_closed_form():
    from lumen.metrics import frechet_from_moments

    mu1, mu2 = np.zeros(2), np.array([2.0, 1.0])
    assert frechet_from_moments(mu1, S1, mu2, S2) == pytest.approx(closed_form_fd(mu1, S1, mu2, S2), rel=1e-10)


def test_fd_two_gaussians_closed_form():
    # sampling spread of the estimate at n = 1e4 is about 0.3% for this mean separation
    mu1, mu2 = np.zeros(2), np.array([6.0, 8.0])
    r = SeededRng(3, "fd")
    a = mu1 + r.split("a").gaussian((10**4, 2)) @ np.linalg.cholesky(S1).T
    b = mu2 + r.split("b").gaussian((10**4, 2)) @ np.linalg.cholesky(S2).T
    assert frechet_distance(a, b) == pytest.approx(closed_form_fd(mu1, S1, mu2, S2), rel=0.01)


def test_fd_small_sets_use_shrinkage():
    a = SeededRng(4).gaussian((3, 10))
    b = SeededRng(5).gaussian((4, 10))
    mu, cov = gaussian_fit(a)
    assert np.all(np.linalg.eigvalsh(cov) > 0)
    assert frechet_distance(a, b) >= 0


def test_fd_errors():
    with pytest.raises(DomainError):
        frechet_distance(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ContractError):
        frechet_distance(np.zeros((3, 2)), np.zeros((3, 4)))
    with pytest.raises(NumericError):
        frechet_distance(np.array([[np.nan, 1.0]]), np.zeros((3, 2)))


def test_kernel_definition():
    x = SeededRng(6).gaussian((5, 4))
    k = polynomial_kernel(x, x)
    for i in range(5):
        assert k[i, i] == pytest.approx((x[i] @ x[i] / 4 + 1) ** 3, rel=1e-14)


def test_mmd_brute_force():
    x = SeededRng(7).gaussian((6, 3))
    y = SeededRng(8).gaussian((5, 3))
    k = lambda u, v: (u @ v / 3 + 1) ** 3
    sxx = sum(k(x[i], x[j]) for i in range(6) for j in range(6) if i != j) / 30
    syy = sum(k(y[i], y[j]) for i in range(5) for j in range(5) if i != j) / 20
    sxy = sum(k(x[i], y[j]) for i in range(6) for j in range(5)) / 30
    assert mmd2_unbiased(x, y) == pytest.approx(sxx + syy - 2 * sxy, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_kid_null_same_samples(seed):
    a = SeededRng(seed, "null").gaussian((1000, 8))
    mean, se = kernel_distance(a, a, 100, 100, SeededRng(seed), return_std=True)
    assert abs(mean) < 3 * se


def test_kid_null_independent_draws():
    a = SeededRng(0, "a").gaussian((1000, 8))
    b = SeededRng(0, "b").gaussian((1000, 8))
    mean, se = kernel_distance(a, b, 100, 100, SeededRng(1), return_std=True)
    assert abs(mean) < 3 * se


def test_kid_separation():
    a = SeededRng(1, "a").gaussian((500, 4))
    b = SeededRng(1, "b").gaussian((500, 4)) + 10 / np.sqrt(4)
    mean, se = kernel_distance(a, b, 100, 50, SeededRng(2), return_std=True)
    assert mean > 5 * se


def test_kid_deterministic_and_guarded():
    a = SeededRng(2).gaussian((120, 3))
    b = SeededRng(3).gaussian((120, 3))
    assert kernel_distance(a, b, 50, 10, SeededRng(4)) == kernel_distance(a, b, 50, 10, SeededRng(4))
    with pytest.raises(DomainError):
        kernel_distance(a, b, 1, 10)
    with pytest.raises(DomainError):
        kernel_distance(a, b, 200, 10)
    with pytest.raises(DomainError):
        kernel_distance(a, a, 80, 10)


class Flipping:
    """Negates the embedding of one marked image."""

    def __init__(self, base, marked):
        self.base, self.marked, self.dim = base, marked, base.dim

    def embed(self, im):
        e = self.base.embed(im)
        return -e if im is self.marked else e


def test_id_score_self_term():
    g = [ToyIdentity.from_seed(0, 0).render(SeededRng(0, k)) for k in range(3)]
    e = DefaultEmbedder()
    assert id_score(g[1], [g[1]], e) == pytest.approx(1.0, abs=1e-12)
    others = id_score(g[1], [g[0], g[2]], e)
    assert id_score(g[1], g, e) == pytest.approx((1.0 + 2 * others) / 3, abs=1e-12)


def test_id_score_negation():
    g = [ToyIdentity.from_seed(0, i).render(SeededRng(1, i)) for i in range(4)]
    e = DefaultEmbedder()
    assert id_score(g[0], g[1:], Flipping(e, g[0])) == pytest.approx(-id_score(g[0], g[1:], e), abs=1e-12)


def test_random_embedder_null():
    e = RandomEmbedder(64, seed=0)
    scores = []
    for i in range(100):
        a = ImageBuffer(np.random.default_rng(2 * i).random((8, 8, 3)))
        b = ImageBuffer(np.random.default_rng(2 * i + 1).random((8, 8, 3)))
        scores.append(id_score(a, [b], e))
    assert np.mean(np.abs(scores)) < 0.3
    assert all(-1 <= s <= 1 for s in scores)


def test_zero_embedding_is_numeric_error():
    with pytest.raises(NumericError):
        cosine(np.zeros(3), np.ones(3))
    with pytest.raises(DomainError):
        id_score(img(0.5), [], DefaultEmbedder())


def test_default_embedder_gain_invariant():
    e = DefaultEmbedder()
    base = ToyIdentity.from_seed(0, 5).albedo(16) * 0.8
    a, b = ImageBuffer(base), ImageBuffer(base * 0.5)
    assert e.embed(a).shape == (e.dim,)
    np.testing.assert_allclose(e.embed(a), e.embed(b), atol=1e-6)


def test_file_embedder(tmp_path):
    im = img(0.2)
    write_image(im, tmp_path / "imgs" / "face.pfm")
    write_vector(np.arange(1, 6, dtype=np.float32), tmp_path / "emb" / "face.pfm")
    from lumen.imageio import read_image

    loaded = read_image(tmp_path / "imgs" / "face.pfm")
    e = FileEmbedder(tmp_path / "emb")
    assert e.dim == 5
    np.testing.assert_array_equal(e.embed(loaded), np.arange(1, 6))
    with pytest.raises(ContractError):
        e.embed(im)
    with pytest.raises(DomainError):
        FileEmbedder(tmp_path / "imgs2")


def test_report_floor_and_json():
    with pytest.raises(NumericError):
        MetricReport(None, -1e-3, 0.0, None)
    r = MetricReport(math.inf, -1e-9, 0.01, 0.5, {"restored": 2})
    assert r.fid == 0.0
    d = json.loads(r.to_json())
    assert d["psnr"] == "inf" and d["n_samples"] == {"restored": 2}


def test_evaluate_identical_sets():
    ims = [ToyIdentity.from_seed(0, i).render(SeededRng(2, i)) for i in range(8)]
    rep = evaluate(ims, ims, [[x] for x in ims], DefaultEmbedder())
    assert rep.psnr == math.inf
    assert rep.fid < 1e-6
    assert rep.id_score == pytest.approx(1.0)
    assert math.isfinite(rep.kid)
    rep = evaluate(ims)
    assert math.isnan(rep.fid) and rep.psnr is None and rep.id_score is None
    with pytest.raises(ContractError):
        evaluate(ims, ims[:3])
