import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from recolor_fad.classifiers import (CLASSIFIERS, MFM, build_classifier, fuse, image_to_frames,
                                     scores_from_logits)


def test_fuse_identities():
    o = torch.rand(2, 3, 256, 256)
    r = torch.rand(2, 3, 256, 256)
    assert torch.equal(fuse(o, torch.zeros_like(o), "add"), o)
    assert torch.all(fuse(o, o, "sub") == 0)
    assert fuse(o, r, "only_rec") is r
    assert fuse(o, r, "original") is o


def test_fuse_errors():
    with pytest.raises(ValueError):
        fuse(torch.rand(3, 4, 4), torch.rand(3, 4, 5), "add")
    with pytest.raises(ValueError):
        fuse(torch.rand(3, 4, 4), torch.rand(3, 4, 4), "mul")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_add_minus_sub_is_twice_recon(seed):
    g = torch.Generator().manual_seed(seed)
    o = torch.rand(3, 16, 16, generator=g, dtype=torch.float64)
    r = torch.rand(3, 16, 16, generator=g, dtype=torch.float64)
    assert torch.max(torch.abs(fuse(o, r, "add") - fuse(o, r, "sub") - 2 * r)) <= 1e-12


def test_mfm_keeps_max_half():
    m = MFM(2, 3, fc=True)
    x = torch.randn(4, 2)
    full = m.filter(x)
    assert torch.equal(m(x), torch.maximum(full[:, :3], full[:, 3:]))


def test_frame_reshape_index_arithmetic():
    x = torch.arange(3 * 256 * 256, dtype=torch.float64).reshape(1, 3, 256, 256)
    f = image_to_frames(x)
    assert f.shape == (1, 256, 768)
    for c, q, t in [(0, 0, 0), (2, 255, 255), (1, 17, 200), (2, 3, 9)]:
        assert f[0, t, c * 256 + q] == x[0, c, q, t]


@pytest.fixture(scope="module", params=CLASSIFIERS)
def clf(request):
    return build_classifier(request.param, 4).eval()


def test_output_contract(clf):
    x = torch.rand(2, 3, 256, 256) * 2 - 1
    out = clf(x)
    assert out.shape == (2, 2)
    assert torch.isfinite(out).all()
    assert torch.equal(out, clf(x.clone()))
    assert scores_from_logits(out).shape == (2,)


def test_rejects_wrong_shape(clf):
    with pytest.raises(ValueError):
        clf(torch.rand(2, 3, 128, 256))


def test_constant_input_is_finite(clf):
    assert torch.isfinite(clf(torch.full((1, 3, 256, 256), 0.5))).all()


def test_build_unknown():
    with pytest.raises(ValueError):
        build_classifier("vgg")


def test_seeded_build_is_reproducible():
    a, b = build_classifier("aasist", 4, seed=3), build_classifier("aasist", 4, seed=3)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
