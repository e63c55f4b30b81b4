import dataclasses

import numpy as np
import pytest

from projselect.detectability import (
    FlatMtf,
    FlatNps,
    FluenceNps,
    GaussianApertureMtf,
    PoseContext,
    build_task,
    compute_pdi,
    export_pdi_csv,
    pdi_vector,
    pose_context,
    read_pdi_csv,
)
from projselect.errors import InvalidInputError
from projselect.geometry import ScanPosition, SystemGeometry, fibonacci_sphere, pose_from_position
from projselect.phantom import GridSpec, Specimen, cube_grid_for_specimen, make_specimen


def _grid(n=16):
    s = make_specimen(defect_centre=(0.0, 0.0, 0.0))
    return cube_grid_for_specimen(s, n)


def _voxel_centre(grid, ijk):
    return np.array([grid.centers(a)[ijk[a]] for a in range(3)])


def test_single_voxel_roi_has_flat_unit_spectrum():
    grid = _grid(16)
    centre = _voxel_centre(grid, (8, 8, 8))
    task = build_task(grid, centre, grid.voxel_size * 0.4)
    assert task.mask.sum() == 1
    assert np.allclose(task.spectrum, 1.0, atol=1e-12)


def test_empty_roi_rejected():
    grid = _grid(8)
    centre = _voxel_centre(grid, (4, 4, 4)) + grid.voxel_size / 2.0  # between centres
    with pytest.raises(InvalidInputError):
        build_task(grid, centre, grid.voxel_size * 0.1)


def test_roi_outside_grid_rejected():
    grid = _grid(8)
    with pytest.raises(InvalidInputError):
        build_task(grid, (grid.bbox_max[0], 0.0, 0.0), 0.01)


def test_parseval_identity():
    grid = _grid(16)
    task = build_task(grid, (0.0, 0.0, 0.0), 0.02)
    m = task.n_frequency_bins
    assert np.isclose(np.sum(task.spectrum**2), m * task.mask.sum(), rtol=1e-12)


def test_spectrum_verification():
    grid = _grid(8)
    task = build_task(grid, (0.0, 0.0, 0.0), 0.02)
    task.verify_spectrum()
    broken = dataclasses.replace(task, spectrum=task.spectrum + 1.0)
    with pytest.raises(InvalidInputError):
        broken.verify_spectrum()


def _flat_setup(roi_radius=0.02, nps_value=2.0, n=16):
    s = make_specimen(defect_centre=(0.0, 0.0, 0.0))
    grid = cube_grid_for_specimen(s, n)
    task = build_task(grid, (0.0, 0.0, 0.0), roi_radius)
    g = SystemGeometry()
    pose = pose_from_position(ScanPosition(0.0, 0.0), g)
    return s, task, pose


def test_flat_models_reduce_analytically():
    s, task, pose = _flat_setup(nps_value=2.0)
    d2 = compute_pdi(pose, task, FlatMtf(1.0), FlatNps(2.0), s)
    expected = np.sum(task.spectrum**2) / 4.0
    assert np.isclose(d2, expected, rtol=1e-12)


def test_single_voxel_flat_reduction():
    grid = _grid(16)
    centre = _voxel_centre(grid, (8, 8, 8))
    task = build_task(grid, centre, grid.voxel_size * 0.4)
    s = make_specimen(defect_centre=(0.0, 0.0, 0.0))
    pose = pose_from_position(ScanPosition(0.0, 0.0), SystemGeometry())
    d2 = compute_pdi(pose, task, FlatMtf(1.0), FlatNps(3.0), s)
    assert np.isclose(d2, task.n_frequency_bins / 9.0, rtol=1e-12)


def test_shorter_attenuation_path_wins_with_fluence_nps():
    s = make_specimen(defect_centre=(0.03, 0.0, 0.0))
    grid = cube_grid_for_specimen(s, 16)
    task = build_task(grid, (0.03, 0.0, 0.0), 0.008)
    g = SystemGeometry()
    near = pose_from_position(ScanPosition(0.0, 0.0), g)  # source on the defect side
    far = pose_from_position(ScanPosition(np.pi, 0.0), g)
    mtf, nps = GaussianApertureMtf(0.1), FluenceNps(1.0)
    assert compute_pdi(near, task, mtf, nps, s) > compute_pdi(far, task, mtf, nps, s)


def test_nps_scale_covariance():
    s, task, pose = _flat_setup()
    mtf = GaussianApertureMtf(0.15)
    base = compute_pdi(pose, task, mtf, FlatNps(1.0), s)
    scaled = compute_pdi(pose, task, mtf, FlatNps(3.0), s)
    assert np.isclose(scaled, base / 9.0, rtol=1e-12)


def test_task_scale_covariance():
    s, task, pose = _flat_setup()
    mtf, nps = GaussianApertureMtf(0.2), FlatNps(1.5)
    base = compute_pdi(pose, task, mtf, nps, s)
    bigger = dataclasses.replace(task, spectrum=2.0 * task.spectrum)
    assert np.isclose(compute_pdi(pose, bigger, mtf, nps, s), 4.0 * base, rtol=1e-12)


def test_bin_relabelling_invariance():
    # d2 is a plain sum over bins: shuffling the spectrum together with the
    # frequency grid cannot change it
    s, task, pose = _flat_setup()
    rng = np.random.default_rng(0)
    perm = rng.permutation(task.spectrum.size)
    shuffled = dataclasses.replace(
        task,
        spectrum=task.spectrum.ravel()[perm].reshape(task.spectrum.shape),
        freq_magnitude=task.freq_magnitude.ravel()[perm].reshape(task.spectrum.shape),
    )
    mtf, nps = GaussianApertureMtf(0.2), FluenceNps(1.0)
    assert np.isclose(
        compute_pdi(pose, shuffled, mtf, nps, s), compute_pdi(pose, task, mtf, nps, s), rtol=1e-12
    )


def test_degenerate_zero_mtf_rejected():
    s, task, pose = _flat_setup()
    with pytest.raises(InvalidInputError):
        compute_pdi(pose, task, FlatMtf(0.0), FlatNps(1.0), s)


def test_magnification_from_pose():
    g = SystemGeometry()
    pose = pose_from_position(ScanPosition(0.3, 0.4), g)
    s = make_specimen(defect_centre=(0.0, 0.0, 0.0))
    grid = cube_grid_for_specimen(s, 8)
    task = build_task(grid, (0.0, 0.0, 0.0), 0.02)
    ctx = pose_context(pose, task, s)
    assert np.isclose(ctx.magnification, 4.0)
    assert ctx.path_attenuation > 0.0


def test_pdi_vector_matches_scalar_and_flat_models_are_pose_independent():
    s, task, _ = _flat_setup()
    g = SystemGeometry()
    poses = [pose_from_position(p, g) for p in fibonacci_sphere(16)]
    vec = pdi_vector(poses, task, FlatMtf(1.0), FlatNps(2.0), s)
    assert vec.shape == (16,)
    assert np.allclose(vec, vec[0], rtol=1e-12)
    single = pdi_vector([poses[3]], task, FlatMtf(1.0), FlatNps(2.0), s)
    assert single[0] == compute_pdi(poses[3], task, FlatMtf(1.0), FlatNps(2.0), s)


def test_pdi_vector_rejects_empty():
    s, task, _ = _flat_setup()
    with pytest.raises(InvalidInputError):
        pdi_vector([], task, FlatMtf(1.0), FlatNps(1.0), s)


def test_paper_scale_sweep_nonnegative():
    s = make_specimen(defect_centre=(0.02, 0.01, 0.0))
    grid = cube_grid_for_specimen(s, 16)
    task = build_task(grid, (0.02, 0.01, 0.0), 0.01)
    g = SystemGeometry(detector_pixels=(8, 8))
    poses = [pose_from_position(p, g) for p in fibonacci_sphere(1000)]
    vec = pdi_vector(poses, task, GaussianApertureMtf(0.1), FluenceNps(1.0), s)
    assert vec.shape == (1000,)
    assert np.all(vec >= 0.0)
    assert np.all(np.isfinite(vec))


def test_models_validate_parameters():
    with pytest.raises(InvalidInputError):
        FlatMtf(1.5)
    with pytest.raises(InvalidInputError):
        GaussianApertureMtf(0.0)
    with pytest.raises(InvalidInputError):
        FlatNps(0.0)
    with pytest.raises(InvalidInputError):
        FluenceNps(-1.0)


def test_mtf_bounded_and_nps_positive():
    ctx = PoseContext(magnification=4.0, path_attenuation=2.0)
    f = np.linspace(0.0, 0.9, 50)
    mtf = GaussianApertureMtf(0.05).evaluate(f, ctx)
    assert np.all((0.0 <= mtf) & (mtf <= 1.0))
    nps = FluenceNps(0.5).evaluate(f, ctx)
    assert np.all(nps > 0.0)


def test_pdi_csv_round_trip(tmp_path):
    positions = fibonacci_sphere(9)
    d2 = np.linspace(1.0, 2.0, 9)
    path = tmp_path / "pdi.csv"
    export_pdi_csv(path, positions, d2)
    loaded_pos, loaded_d2 = read_pdi_csv(path)
    assert loaded_pos == positions
    assert np.array_equal(loaded_d2, d2)
    header = path.read_text().splitlines()[0]
    assert header == "index,azimuth,elevation,d2"
