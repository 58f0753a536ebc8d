import time

import numpy as np
import pytest

from sketchsearch.phantoms import (
    Dataset,
    PhantomSpec,
    ValidationError,
    dataset_hash,
    generate_dataset,
    generate_volume,
    load_dataset,
    save_dataset,
)


def small_spec(**kw):
    base = dict(image_size=32, n_slices=8, seed=123)
    base.update(kw)
    return PhantomSpec(**base)


def _components(mask):
    """8-connected components of a boolean grid, as boolean masks."""
    mask = mask.copy()
    comps = []
    while mask.any():
        seed_idx = tuple(np.argwhere(mask)[0])
        comp = np.zeros_like(mask)
        stack = [seed_idx]
        while stack:
            y, x = stack.pop()
            if not (0 <= y < mask.shape[0] and 0 <= x < mask.shape[1]):
                continue
            if not mask[y, x]:
                continue
            mask[y, x] = False
            comp[y, x] = True
            stack.extend(
                (y + dy, x + dx)
                for dy in (-1, 0, 1)
                for dx in (-1, 0, 1)
                if (dy, dx) != (0, 0)
            )
        comps.append(comp)
    return comps


class TestGenerateVolume:
    def test_lesion_prob_zero_gives_all_zero_labels(self):
        vol = generate_volume(small_spec(lesion_prob=0.0), 5)
        for s in vol.slices:
            assert not s.label.any()
        assert vol.semantics == "healthy"

    def test_determinism_bit_identical(self):
        spec = small_spec(lesion_prob=0.7)
        a = generate_volume(spec, 9)
        b = generate_volume(spec, 9)
        for sa, sb in zip(a.slices, b.slices):
            assert sa.pixels.tobytes() == sb.pixels.tobytes()
            assert sa.label.tobytes() == sb.label.tobytes()

    def test_lesion_prob_one_always_produces_lesions(self):
        spec = small_spec(lesion_prob=1.0)
        for seed in range(20):
            vol = generate_volume(spec, seed)
            total = sum(int((s.label > 0).sum()) for s in vol.slices)
            assert total > 0, f"volume_seed={seed} rendered no lesion pixels"

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValidationError):
            generate_volume(small_spec(image_size=8), 0)
        with pytest.raises(ValidationError):
            generate_volume(small_spec(lesion_prob=1.5), 0)
        with pytest.raises(ValidationError):
            generate_volume(small_spec(lesion_size_range=(3.0, 30.0)), 0)
        with pytest.raises(ValidationError):
            generate_volume(small_spec(n_classes=1), 0)

    def test_pixels_in_unit_range_and_finite(self):
        vol = generate_volume(small_spec(lesion_prob=1.0), 3)
        for s in vol.slices:
            assert s.pixels.dtype == np.float32
            assert np.isfinite(s.pixels).all()
            assert s.pixels.min() >= 0.0 and s.pixels.max() <= 1.0
            assert s.label.max() < small_spec().n_classes

    def test_labeled_pixels_are_perturbed_vs_lesion_free_render(self):
        spec = small_spec(lesion_prob=1.0)
        for seed in (0, 4, 11):
            vol = generate_volume(spec, seed, force_semantics="diseased")
            clean = generate_volume(spec, seed, force_semantics="healthy")
            for s, c in zip(vol.slices, clean.slices):
                mask = s.label > 0
                if mask.any():
                    diff = np.abs(s.pixels[mask] - c.pixels[mask])
                    assert diff.min() > 0.0

    def test_lesion_classes_are_concentric(self):
        # within one lesion blob, higher class ids sit closer to the centroid
        spec = small_spec(lesion_prob=1.0, n_classes=4)
        seen_multi = 0
        for seed in range(30):
            vol = generate_volume(spec, seed)
            for s in vol.slices:
                for comp in _components(s.label > 0):
                    classes = sorted(set(s.label[comp].tolist()))
                    if len(classes) < 2:
                        continue
                    seen_multi += 1
                    ys, xs = np.nonzero(comp)
                    cy, cx = ys.mean(), xs.mean()
                    radii = []
                    for cls in classes:
                        ysc, xsc = np.nonzero(comp & (s.label == cls))
                        radii.append(np.hypot(ysc - cy, xsc - cx).mean())
                    assert radii == sorted(radii, reverse=True)
        assert seen_multi > 5


class TestGenerateDataset:
    def test_exactly_one_all_healthy_template(self):
        ds = generate_dataset(small_spec(lesion_prob=0.9), 12)
        templates = [v for v in ds.volumes if v.is_template]
        assert len(templates) == 1
        assert templates[0].semantics == "healthy"
        assert ds.template_id == templates[0].volume_id

    def test_diseased_count_reproducible(self):
        spec = small_spec(lesion_prob=0.5)
        count = lambda ds: sum(v.semantics == "diseased" for v in ds.volumes)
        a, b = generate_dataset(spec, 10), generate_dataset(spec, 10)
        assert count(a) == count(b)
        assert 0 < count(a) < 10

    def test_too_few_volumes_rejected(self):
        with pytest.raises(ValidationError):
            generate_dataset(small_spec(), 1)

    def test_default_suite_size_and_speed(self):
        spec = PhantomSpec(image_size=32, n_slices=16, seed=7)
        t0 = time.monotonic()
        ds = generate_dataset(spec, 100)
        elapsed = time.monotonic() - t0
        nbytes = sum(s.pixels.nbytes + s.label.nbytes for v in ds.volumes for s in v.slices)
        assert nbytes < 100 * 2**20
        assert elapsed < 10.0


class TestRoundTrip:
    def test_save_load_is_lossless(self, tmp_path):
        ds = generate_dataset(small_spec(lesion_prob=0.6), 6)
        save_dataset(ds, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        assert back.spec == ds.spec
        assert back.template_id == ds.template_id
        for va, vb in zip(ds.volumes, back.volumes):
            assert va.volume_id == vb.volume_id
            assert va.semantics == vb.semantics
            for sa, sb in zip(va.slices, vb.slices):
                assert sa.pixels.tobytes() == sb.pixels.tobytes()
                assert sa.label.tobytes() == sb.label.tobytes()

    def test_hash_is_stable_and_content_sensitive(self, tmp_path):
        ds = generate_dataset(small_spec(), 4)
        save_dataset(ds, tmp_path / "a")
        save_dataset(ds, tmp_path / "b")
        assert dataset_hash(tmp_path / "a") == dataset_hash(tmp_path / "b")
        ds2 = generate_dataset(small_spec(seed=999), 4)
        save_dataset(ds2, tmp_path / "c")
        assert dataset_hash(tmp_path / "a") != dataset_hash(tmp_path / "c")
