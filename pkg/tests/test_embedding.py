import numpy as np
import pytest

from actseg.embedding import (EmbeddingModel, FrameSequence,
                              build_embedding_model, embed_frames,
                              time_targets, train_frame_embedding)
from actseg.neural import DenseLayer, grad_check, mlp_apply, mlp_backward

from oracles import draw_away_from_kinks


def make_video(video_id, features):
    return FrameSequence(video_id, np.asarray(features, dtype=float))


class TestTimeTargets:
    def test_range_and_last_frame(self):
        for n in (1, 2, 7, 50):
            t = time_targets(n)
            assert np.all(t > 0) and np.all(t <= 1)
            assert t[-1] == 1.0

    def test_values(self):
        assert time_targets(4) == pytest.approx([0.25, 0.5, 0.75, 1.0])


class TestTrainFrameEmbedding:
    def test_learnable_time_mapping(self):
        # feature = t/T replicated: the target is a linear function of input
        rng = np.random.default_rng(0)
        videos = []
        for i in range(6):
            n = int(rng.integers(30, 60))
            videos.append(make_video(f"v{i}", np.tile(time_targets(n)[:, None], (1, 6))))
        model = train_frame_embedding(videos, epochs=200, learning_rate=0.05, seed=1)
        assert model.loss_history[-1] < 1e-3

    def test_constant_features_collapse_to_mean(self):
        videos = [make_video(f"v{i}", np.ones((40, 4))) for i in range(3)]
        model = train_frame_embedding(videos, epochs=300, learning_rate=0.05, seed=2)
        targets = np.concatenate([time_targets(40)] * 3)
        # best constant predictor is the target mean; its mse is the variance
        assert model.loss_history[-1] == pytest.approx(np.var(targets), rel=0.05)

    def test_seed_determinism_bitwise(self):
        rng = np.random.default_rng(3)
        videos = [make_video(f"v{i}", rng.normal(size=(25, 5))) for i in range(4)]
        a = train_frame_embedding(videos, epochs=5, learning_rate=0.01, seed=9)
        b = train_frame_embedding(videos, epochs=5, learning_rate=0.01, seed=9)
        for la, lb in zip(a.trunk + [a.head], b.trunk + [b.head]):
            assert np.array_equal(la.weight, lb.weight)
            assert np.array_equal(la.bias, lb.bias)

    def test_loss_decreases_over_training(self):
        rng = np.random.default_rng(4)
        videos = [make_video(f"v{i}", rng.normal(size=(30, 5)) + i) for i in range(4)]
        model = train_frame_embedding(videos, epochs=30, learning_rate=0.01, seed=0)
        assert model.loss_history[-1] <= model.loss_history[0]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_frame_embedding([])

    def test_single_frame_video_rejected(self):
        with pytest.raises(ValueError):
            train_frame_embedding([make_video("v", np.ones((1, 3)))])


class TestEmbedFrames:
    def identity_model(self, dim):
        trunk = [DenseLayer(np.eye(dim), np.zeros(dim), "identity"),
                 DenseLayer(np.eye(dim), np.zeros(dim), "identity")]
        head = DenseLayer(np.zeros((1, dim)), np.zeros(1), "identity")
        return EmbeddingModel(trunk=trunk, head=head)

    def test_identity_configuration(self):
        model = self.identity_model(20)
        video = make_video("v", np.random.default_rng(0).normal(size=(7, 20)))
        assert embed_frames(model, video) == pytest.approx(video.features)

    def test_constant_video_constant_rows(self):
        rng = np.random.default_rng(1)
        videos = [make_video(f"v{i}", rng.normal(size=(20, 5))) for i in range(3)]
        model = train_frame_embedding(videos, epochs=3, learning_rate=0.01, seed=0)
        constant = make_video("c", np.tile(rng.normal(size=5), (6, 1)))
        out = embed_frames(model, constant)
        assert np.allclose(out, out[0])

    def test_shape_contract(self):
        rng = np.random.default_rng(2)
        videos = [make_video(f"v{i}", rng.normal(size=(20, 5))) for i in range(3)]
        model = train_frame_embedding(videos, epochs=2, learning_rate=0.01, seed=0)
        out = embed_frames(model, videos[0])
        assert out.shape == (20, 20)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        videos = [make_video(f"v{i}", rng.normal(size=(20, 5))) for i in range(3)]
        model = train_frame_embedding(videos, epochs=2, learning_rate=0.01, seed=0)
        video = videos[0]
        perm = rng.permutation(video.n_frames)
        direct = embed_frames(model, make_video("p", video.features[perm]))
        assert direct == pytest.approx(embed_frames(model, video)[perm])

    def test_dimension_mismatch(self):
        model = self.identity_model(4)
        with pytest.raises(ValueError):
            embed_frames(model, make_video("v", np.ones((3, 5))))


class TestRegressionGradients:
    @pytest.mark.parametrize("seed", range(20))
    def test_mse_path_matches_finite_differences(self, seed):
        rng = np.random.default_rng([31, seed])
        model = build_embedding_model(4, rng, hidden=8, embed_dim=6)
        layers = model.trunk + [model.head]
        x = draw_away_from_kinks(layers, rng, 4)
        target = float(rng.random())
        params = [p for layer in layers for p in layer.params()]

        def closure(_):
            pred = float(mlp_apply(layers, x)[0])
            loss = (pred - target) ** 2
            grads, _ = mlp_backward(layers, x, np.array([2.0 * (pred - target)]))
            return loss, [g for pair in grads for g in pair]

        assert grad_check(closure, params) < 1e-4
