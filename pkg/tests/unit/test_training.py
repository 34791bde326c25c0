"""
Unit tests for the training loop and test-time adaptation.
"""
import csv
import math

import numpy as np
import pytest

from lgdc.core.exceptions import DegenerateSupportError, EmptyInput, ShapeMismatch
from lgdc.density import DensityMap, PointAnnotation, RoiMask
from lgdc.models.mldl import PrototypeSet
from lgdc.models.network import LGDCNetwork
from lgdc.models.parameters import ParameterStore
from lgdc.models.scene import Scene, SceneImage
from lgdc.ndcore import Tensor, backward
from lgdc.repositories.checkpoint_repository import CheckpointRepository
from lgdc.services.training_service import (
    Adam,
    Trainer,
    adapt_and_predict,
    clip_grad_norm,
    euclidean_loss,
    poly_lr,
    train_base,
)


def density(values) -> DensityMap:
    return DensityMap(Tensor(np.asarray(values, dtype=np.float64)[None], requires_grad=True))


class TestEuclideanLoss:
    """Tests for the squared-error objective."""

    def test_equal_maps(self, rng):
        """Identical maps have zero loss."""
        values = rng.random((3, 3))

        assert euclidean_loss(density(values), density(values)).item() == 0.0

    def test_unit_difference(self):
        """A uniform difference of one over 2 x 2 cells costs 2.0."""
        loss = euclidean_loss(density(np.ones((2, 2))), density(np.zeros((2, 2))))

        assert loss.item() == 2.0

    def test_gradient_is_difference(self, rng):
        """d loss / d pred equals pred - gt."""
        pred, gt = density(rng.random((4, 5))), density(rng.random((4, 5)))

        backward(euclidean_loss(pred, gt))

        np.testing.assert_allclose(pred.grid.grad, pred.grid.data - gt.grid.data, atol=1e-12)

    def test_shape_mismatch(self):
        """Maps must share a shape."""
        with pytest.raises(ShapeMismatch):
            euclidean_loss(density(np.zeros((2, 2))), density(np.zeros((2, 3))))


class TestPolyLr:
    """Tests for the poly learning-rate policy."""

    def test_endpoints(self):
        """Starts at the base rate and ends at zero."""
        assert poly_lr(0, 100, 1e-3, 0.9) == 1e-3
        assert poly_lr(100, 100, 1e-3, 0.9) == 0.0

    def test_midpoint(self):
        """Halfway with power 0.9 gives 0.5 ** 0.9 of the base rate."""
        assert poly_lr(50, 100, 1.0, 0.9) == pytest.approx(0.5359, abs=1e-4)

    def test_zero_total(self):
        """With no scheduled steps the base rate is returned."""
        assert poly_lr(0, 0, 3e-4, 0.9) == 3e-4


class TestOptimizer:
    """Tests for Adam and gradient clipping."""

    def test_zero_gradient_is_noop(self, rng):
        """Adam leaves parameters unchanged under zero gradients."""
        store = ParameterStore()
        store.add("w", rng.normal(size=(3, 2)))
        before = store.state_dict()
        adam = Adam(store)

        adam.step({"w": np.zeros((3, 2))}, lr=0.1)

        np.testing.assert_array_equal(store["w"].data, before["w"])
        assert adam.state.step == 1

    def test_first_step_magnitude(self):
        """The bias-corrected first step moves each weight by about lr."""
        store = ParameterStore()
        store.add("w", np.zeros(3))
        adam = Adam(store)

        adam.step({"w": np.array([2.0, -0.5, 1e-3])}, lr=0.01)

        np.testing.assert_allclose(store["w"].data, [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_moment_shapes(self, rng):
        """Moment accumulators match parameter shapes."""
        store = ParameterStore()
        store.add("a", rng.normal(size=(2, 3, 3)))
        store.add("b", rng.normal(size=(4,)))

        adam = Adam(store)

        assert {k: v.shape for k, v in adam.state.first_moment.items()} == {"a": (2, 3, 3), "b": (4,)}

    def test_clip(self):
        """Gradients above the norm are rescaled; below it they pass through."""
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}

        clipped, norm = clip_grad_norm(grads, 1.0)
        kept, _ = clip_grad_norm(grads, 10.0)

        assert norm == 5.0
        assert math.sqrt(sum(float(g @ g) for g in clipped.values())) == pytest.approx(1.0)
        assert kept is grads


class TestTrainBase:
    """Tests for base-model training."""

    def test_zero_iterations_saves_init(self, tiny_config, tiny_scenes, tmp_path):
        """Without steps the checkpoint is the initialisation."""
        config = tiny_config.with_overrides(iterations=0)

        result = train_base(tiny_scenes, config, checkpoint_path=tmp_path / "init.lgdc")

        state = CheckpointRepository(result.checkpoint).load()
        fresh = LGDCNetwork.from_config(config).store.state_dict()
        assert list(state) == list(fresh)
        for name in fresh:
            np.testing.assert_array_equal(state[name], fresh[name])

    def test_deterministic(self, tiny_config, tiny_scenes, tmp_path):
        """Equal seeds give bit-identical checkpoints."""
        a = train_base(tiny_scenes, tiny_config, checkpoint_path=tmp_path / "a.lgdc")
        b = train_base(tiny_scenes, tiny_config, checkpoint_path=tmp_path / "b.lgdc")

        assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
        assert a.losses == b.losses

    def test_parameters_move(self, tiny_config, tiny_scenes):
        """A few steps change the weights."""
        initial = LGDCNetwork.from_config(tiny_config).store.digest()

        result = train_base(tiny_scenes, tiny_config)

        assert result.network.store.digest() != initial
        assert len(result.losses) == tiny_config.iterations
        assert all(math.isfinite(loss) for loss in result.losses)

    def test_trace_file(self, tiny_config, tiny_scenes, tmp_path):
        """The CSV trace has one row per iteration."""
        trace = tmp_path / "trace.csv"

        train_base(tiny_scenes, tiny_config, trace_path=trace)

        with open(trace, newline="", encoding="utf-8") as handle:
            rows = list(csv.DictReader(handle))
        assert [int(row["iter"]) for row in rows] == list(range(tiny_config.iterations))
        assert float(rows[0]["lr"]) == tiny_config.learning_rate
        assert all(int(row["skipped"]) == 0 for row in rows)

    def test_degenerate_episodes_skipped(self, tiny_config):
        """Episodes whose support shows no crowd are skipped and counted."""
        empty = PointAnnotation(np.zeros((0, 2)), (16, 16))
        images = [SceneImage(f"blank_{i}", np.full((3, 16, 16), 0.5), empty) for i in range(3)]
        config = tiny_config.with_overrides(iterations=2, batch_size=2)
        initial = LGDCNetwork.from_config(config).store.digest()

        result = Trainer(config).train([Scene("blank", images)])

        assert result.skipped == 4
        assert all(math.isnan(loss) for loss in result.losses)
        assert result.network.store.digest() == initial

    def test_intermediate_checkpoints(self, tiny_config, tiny_scenes, tmp_path):
        """checkpoint_every writes numbered snapshots next to the final file."""
        config = tiny_config.with_overrides(iterations=2, checkpoint_every=1)

        train_base(tiny_scenes, config, checkpoint_path=tmp_path / "run.lgdc")

        assert (tmp_path / "run.lgdc.1").is_file()
        assert (tmp_path / "run.lgdc.2").is_file()
        assert (tmp_path / "run.lgdc").is_file()

    def test_no_scenes(self, tiny_config):
        """Training needs data."""
        with pytest.raises(EmptyInput):
            train_base([], tiny_config)


class TestAdaptAndPredict:
    """Tests for test-time adaptation."""

    def test_parameters_frozen(self, tiny_config, tiny_scene):
        """Adaptation changes no weight and leaves no gradient."""
        network = LGDCNetwork.from_config(tiny_config)
        digest = network.store.digest()
        support, *queries = tiny_scene.images

        result = adapt_and_predict(network, support.pixels, support.annotation, [q.pixels for q in queries], support.name)

        assert network.store.digest() == digest
        assert all(tensor.grad is None for _, tensor in network.store.items())
        assert len(result.counts) == len(queries)
        assert result.state.support_name == support.name

    def test_supplied_prototypes_skip_em(self, tiny_config, tiny_scene, monkeypatch):
        """Saved prototypes are used as they are; EM never runs."""
        network = LGDCNetwork.from_config(tiny_config)
        support, query = tiny_scene.images[:2]
        first = adapt_and_predict(network, support.pixels, support.annotation, [query.pixels])

        def no_em(*args, **kwargs):
            raise AssertionError("EM ran despite saved prototypes")

        monkeypatch.setattr("lgdc.models.network.fit_prototypes", no_em)
        again = adapt_and_predict(
            network, support.pixels, support.annotation, [query.pixels], prototypes=first.state.prototypes
        )

        assert again.state.prototypes is first.state.prototypes
        assert again.counts == first.counts

    def test_other_prototypes_change_counts(self, tiny_config, tiny_scene):
        """Prototypes from another adaptation steer the same query differently."""
        network = LGDCNetwork.from_config(tiny_config)
        support, query = tiny_scene.images[:2]
        fitted = adapt_and_predict(network, support.pixels, support.annotation, [query.pixels])
        swapped = PrototypeSet(Tensor(fitted.state.prototypes.mu.numpy()[::-1].copy()), tiny_config.concentration)

        reused = adapt_and_predict(network, support.pixels, support.annotation, [query.pixels], prototypes=swapped)

        assert reused.counts != fitted.counts

    def test_saved_prototypes_on_empty_support(self, tiny_config, tiny_scene):
        """A support without heads is rejected even when EM is skipped."""
        network = LGDCNetwork.from_config(tiny_config)
        support, query = tiny_scene.images[:2]
        fitted = adapt_and_predict(network, support.pixels, support.annotation, [query.pixels])
        empty = PointAnnotation(np.zeros((0, 2)), (32, 32))

        with pytest.raises(DegenerateSupportError):
            adapt_and_predict(network, support.pixels, empty, [query.pixels], prototypes=fitted.state.prototypes)

    def test_saved_prototypes_wrong_shape(self, tiny_config, tiny_scene):
        """Prototypes must match the network's count and channel width."""
        network = LGDCNetwork.from_config(tiny_config)
        support, query = tiny_scene.images[:2]
        three = PrototypeSet(Tensor(np.eye(3, tiny_config.channels[-1])), tiny_config.concentration)

        with pytest.raises(ShapeMismatch):
            adapt_and_predict(network, support.pixels, support.annotation, [query.pixels], prototypes=three)

    def test_prototype_count_shapes_output(self, tiny_config, tiny_scene):
        """One and three prototypes give different counts on a three-band view."""
        support, query = tiny_scene.images[:2]
        counts = {}
        for count in (1, 3):
            network = LGDCNetwork.from_config(tiny_config.with_overrides(num_prototypes=count))
            result = adapt_and_predict(network, support.pixels, support.annotation, [query.pixels])
            assert len(result.predictions[0].ldsm.planes) == count
            counts[count] = result.counts[0]

        assert counts[1] != counts[3]

    def test_roi_limits_count(self, tiny_config, tiny_scene):
        """Cells outside the ROI contribute nothing to the count."""
        network = LGDCNetwork.from_config(tiny_config)
        support, query = tiny_scene.images[:2]
        inside = np.zeros((32, 32))
        inside[:, :16] = 1
        half = RoiMask.from_array(inside)

        masked = adapt_and_predict(network, support.pixels, support.annotation, [query.pixels], roi=half)

        assert masked.counts[0] == pytest.approx(float(masked.predictions[0].density.numpy().sum()))
        assert masked.predictions[0].density.numpy()[:, 8:].sum() == 0.0
