"""Synthetic scenes shared by the solver and acceptance tests."""

from masked_rpca.data_io import Shape, SyntheticSceneSpec, generate_scene

BLOCK = Shape("rect", (8, 8), (3, 2), (0.6, 0.5), 0.95)
# same area fraction as BLOCK for 16x16 frames
SMALL_BLOCK = Shape("rect", (4, 4), (2, 1), (0.6, 0.5), 0.95)


def overlay_spec(dims=(32, 32, 40), snr_db=None, salt_pepper_density=0.0, seed=0, shapes=None):
    return SyntheticSceneSpec(
        dims=dims,
        rank=2,
        factor_magnitudes=(0.5, 0.2),
        shapes=(BLOCK,) if shapes is None else shapes,
        salt_pepper_density=salt_pepper_density,
        snr_db=snr_db,
        seed=seed,
    )


def overlay_scene(**kwargs):
    spec = overlay_spec(**kwargs)
    X, truth = generate_scene(spec)
    return spec, X, truth
