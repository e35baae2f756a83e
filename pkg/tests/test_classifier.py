import numpy as np
import pytest

from dctscene.classifier import CREATE_NEW, ClassifierModel, DecisionGrid, LambdaTable, MatchWeights, \
    classify_block, classify_frame, count_similar_neighbors, format_model, kappa, load_model, parse_model, \
    save_model, score_modes, spatial_iterate, spatial_step
from dctscene.config import ModelConfig
from dctscene.scene import ModeModel, SceneModel


def mode(value, creation=0, hits=1, last=0):
    coeffs = value if isinstance(value, tuple) else (value,) * 8
    return ModeModel(coeffs, creation, hits, last, 1000)


def uniform_scene(rows, cols, config=None, current=10):
    scene = SceneModel(rows, cols, config)
    for r in range(rows):
        for c in range(cols):
            scene.set_modes(r, c, [mode(0, creation=0, hits=20, last=current - 1)])
    scene.current_frame = current
    return scene


def random_scene(rng, rows, cols, config, current=40):
    scene = SceneModel(rows, cols, config)
    for r in range(rows):
        for c in range(cols):
            n = int(rng.integers(0, config.max_modes + 1))
            modes = []
            for _ in range(n):
                creation = int(rng.integers(0, current))
                last = int(rng.integers(creation, current))
                modes.append(ModeModel(tuple(int(v) for v in rng.integers(-40, 40, 8)), creation,
                                       int(rng.integers(1, 4)), last, current + 50))
            scene.set_modes(r, c, modes)
    scene.current_frame = current
    return scene


def test_kappa_matches_direct_sum(rng):
    for _ in range(1000):
        block = rng.normal(0, 100, 8)
        coeffs = rng.integers(-300, 300, 8)
        weights = MatchWeights(rng.normal(-0.1, 0.05, 8), -10.0)
        expected = float(np.sum(weights.a * np.abs(block - coeffs)))
        assert kappa(block, coeffs, weights) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_block_without_modes_creates(model):
    decision = classify_block(np.zeros(8), [], model.weights, current_frame=7)
    assert decision.mode_index == CREATE_NEW
    assert not decision.matched
    assert decision.score == -np.inf
    assert decision.matched_creation_frame == 7


def test_identical_mode_matches(model):
    decision = classify_block(np.full(8, 5.0), [mode(5, creation=2, last=2)], model.weights, current_frame=20)
    assert decision.mode_index == 0
    assert decision.score == 0.0
    assert decision.matched_creation_frame == 2


def test_distant_mode_is_rejected(model):
    # score -0.1 * 8 * 20 = -16 < -12
    decision = classify_block(np.full(8, 20.0), [mode(0, creation=2, last=2)], model.weights, current_frame=20)
    assert decision.mode_index == CREATE_NEW
    assert decision.score == pytest.approx(-16.0)
    assert decision.matched_creation_frame == 20


def test_active_mode_bonus_changes_choice(model):
    config = ModelConfig(bonus_value=0.5, bonus_window=2)
    block = np.full(8, 1.0)
    # mode 0 scores -0.8, mode 1 -1.6 + 0.5 when matched within the window
    modes = [mode(0, creation=1, last=5), mode(3, creation=3, last=18)]
    assert classify_block(block, modes, model.weights, 20, config).mode_index == 0
    modes = [mode(0, creation=1, last=5), mode((1, 1, 1, 1, 1, 1, 1, 11), creation=3, last=18)]
    decision = classify_block(block, modes, model.weights, 20, config)
    assert decision.mode_index == 1
    assert decision.score == pytest.approx(-0.5)
    assert classify_block(block, modes, model.weights, 21, config).mode_index == 0


def test_ties_prefer_hits_then_earlier_creation(model):
    block = np.zeros(8)
    modes = [mode(2, creation=5, hits=1), mode(-2, creation=9, hits=3), mode(2, creation=1, hits=3)]
    assert classify_block(block, modes, model.weights, 50).mode_index == 2
    modes = [mode(2, creation=5, hits=3), mode(-2, creation=5, hits=3)]
    assert classify_block(block, modes, model.weights, 50).mode_index == 0


def test_threshold_is_inclusive():
    weights = MatchWeights(np.full(8, -1.0), -8.0)
    assert classify_block(np.ones(8), [mode(0, last=0)], weights, 10).mode_index == 0
    assert classify_block(np.full(8, 1.5), [mode(0, last=0)], weights, 10).mode_index == CREATE_NEW


def test_frame_agrees_with_block_classification(rng, model):
    config = ModelConfig(max_modes=4)
    scene = random_scene(rng, 6, 7, config)
    features = rng.normal(0, 40, (6, 7, 8))
    grid = classify_frame(scene, features, model.weights, config)
    for r in range(6):
        for c in range(7):
            expected = classify_block(features[r, c], scene.modes(r, c), model.weights, scene.current_frame,
                                      config, row=r, col=c)
            actual = grid.decision(r, c)
            assert actual.mode_index == expected.mode_index
            assert actual.matched_creation_frame == expected.matched_creation_frame
            assert actual.score == pytest.approx(expected.score)


def test_unused_slots_score_minus_infinity(model):
    config = ModelConfig(max_modes=3)
    scene = SceneModel(1, 2, config)
    scene.set_modes(0, 0, [mode(0)])
    scores = score_modes(scene, np.zeros((1, 2, 8)), model.weights, config)
    assert scores.shape == (1, 2, 3)
    assert np.isfinite(scores[0, 0, 0])
    assert np.all(scores[0, 0, 1:] == -np.inf)
    assert np.all(scores[0, 1] == -np.inf)


def test_count_similar_neighbors():
    creation = np.array([[0, 0, 9],
                         [0, 5, 0],
                         [3, 0, 0]])
    assert count_similar_neighbors(1, 1, 0, creation, 3) == 4
    assert count_similar_neighbors(1, 1, 6, creation, 3) == 0
    assert count_similar_neighbors(0, 0, 0, creation, 3) == 2
    assert count_similar_neighbors(0, 2, 9, creation, 3) == 0
    assert count_similar_neighbors(0, 2, 5, creation, 5) == 2
    assert count_similar_neighbors(2, 0, 5, creation, 2) == 0
    assert count_similar_neighbors(0, 0, 0, np.zeros((1, 1)), 3) == 0


def test_zero_iterations_is_a_no_op(rng, model):
    config = ModelConfig()
    scene = random_scene(rng, 5, 5, config)
    features = rng.normal(0, 40, (5, 5, 8))
    base = score_modes(scene, features, model.weights, config)
    initial = classify_frame(scene, features, model.weights, config, base)
    refined = spatial_iterate(scene, initial, model.lambdas, model.weights, 0, base, config.t_similar)
    assert refined.same_outcome(initial)


def test_zero_lambdas_keep_decisions(rng, model):
    config = ModelConfig()
    scene = random_scene(rng, 5, 6, config)
    features = rng.normal(0, 40, (5, 6, 8))
    base = score_modes(scene, features, model.weights, config)
    initial = classify_frame(scene, features, model.weights, config, base)
    refined = spatial_iterate(scene, initial, LambdaTable.zeros(3), model.weights, 3, base, config.t_similar)
    assert refined.same_outcome(initial)


def reference_step(scene, base, previous, lambda_row, t_match, t_similar, order, raw):
    mode_index = np.full(scene.grid_shape, CREATE_NEW, dtype=np.int16)
    for r, c in order:
        best = None
        for m, stored in enumerate(scene.modes(r, c)):
            similar = count_similar_neighbors(r, c, stored.creation_frame, previous.creation_frame, t_similar)
            key = (base[r, c, m] + lambda_row[similar], stored.hit_count, -stored.creation_frame)
            if best is None or key > best[0]:
                best = (key, m)
        if best is not None and (raw.mode_index[r, c] >= 0 or best[0][0] >= t_match):
            mode_index[r, c] = best[1]
    return mode_index


def test_synchronous_update_is_order_independent(rng, model):
    config = ModelConfig(max_modes=3, t_similar=5)
    scene = random_scene(rng, 6, 6, config)
    features = rng.normal(0, 30, (6, 6, 8))
    base = score_modes(scene, features, model.weights, config)
    initial = classify_frame(scene, features, model.weights, config, base)
    lambda_row = model.lambdas.row(1)
    step = spatial_step(scene, base, initial, lambda_row, model.weights.t_match, config.t_similar)
    blocks = [(r, c) for r in range(6) for c in range(6)]
    for _ in range(5):
        order = [blocks[i] for i in rng.permutation(len(blocks))]
        expected = reference_step(scene, base, initial, lambda_row, model.weights.t_match, config.t_similar, order,
                                   initial)
        np.testing.assert_array_equal(step.mode_index, expected)


def test_similar_neighbours_flip_a_noisy_block(model):
    config = ModelConfig()
    scene = uniform_scene(5, 5, config)
    features = np.zeros((5, 5, 8))
    # centre scores -12.8 + 0.5 bonus, just below the threshold
    features[2, 2] = 16.0
    base = score_modes(scene, features, model.weights, config)
    initial = classify_frame(scene, features, model.weights, config, base)
    assert initial.mode_index[2, 2] == CREATE_NEW
    assert initial.creation_frame[2, 2] == 10
    assert np.count_nonzero(initial.created) == 1
    refined = spatial_iterate(scene, initial, model.lambdas, model.weights, 1, base, config.t_similar)
    assert refined.mode_index[2, 2] == 0
    assert refined.creation_frame[2, 2] == 0
    assert refined.score[2, 2] == pytest.approx(-12.3 + 3.0)
    assert not refined.created.any()


def test_isolated_block_keeps_its_match(model):
    config = ModelConfig()
    scene = uniform_scene(3, 3, config)
    scene.set_modes(1, 1, [mode(0, creation=0, hits=20, last=9), mode(100, creation=8, hits=2, last=9)])
    features = np.full((3, 3, 8), 100.0)
    # centre matches its young mode at -12 + 0.5 > -12, its neighbours create new modes
    features[1, 1] = 85.0
    base = score_modes(scene, features, model.weights, config)
    initial = classify_frame(scene, features, model.weights, config, base)
    assert initial.mode_index[1, 1] == 1
    refined = spatial_iterate(scene, initial, model.lambdas, model.weights, 1, base, config.t_similar)
    # four similar neighbours: the centre's creation frame 8 is within 3 frames of the new modes at 10
    assert refined.mode_index[1, 1] == 1
    far = ModelConfig(t_similar=1)
    refined = spatial_iterate(scene, initial, model.lambdas, model.weights, 3, base, far.t_similar)
    # no similar neighbour drops the total to -14.5, yet a raw match is never turned into a new mode
    assert refined.mode_index[1, 1] == 1
    assert refined.creation_frame[1, 1] == 8
    assert refined.score[1, 1] == pytest.approx(-14.5)


def test_matched_block_switches_to_the_supported_mode(model):
    config = ModelConfig()
    scene = uniform_scene(3, 3, config)
    scene.set_modes(1, 1, [mode(0, creation=0, hits=20, last=9), mode(20, creation=8, hits=2, last=9)])
    features = np.zeros((3, 3, 8))
    features[1, 1] = 12.0
    base = score_modes(scene, features, model.weights, config)
    initial = classify_frame(scene, features, model.weights, config, base)
    # -5.9 for the young mode against -9.1 for the background mode
    assert initial.mode_index[1, 1] == 1
    refined = spatial_iterate(scene, initial, model.lambdas, model.weights, 1, base, config.t_similar)
    assert refined.mode_index[1, 1] == 0
    assert refined.creation_frame[1, 1] == 0
    assert refined.score[1, 1] == pytest.approx(-9.1 + 3.0)


def test_scaling_weights_and_threshold_keeps_decisions(rng, model):
    config = ModelConfig(bonus_value=0.5)
    scene = random_scene(rng, 5, 5, config)
    features = rng.normal(0, 30, (5, 5, 8))
    decisions = classify_frame(scene, features, model.weights, config)
    for factor in (0.5, 4.0):
        scaled = MatchWeights(model.weights.a * factor, model.weights.t_match * factor)
        scaled_config = ModelConfig(bonus_value=0.5 * factor)
        assert classify_frame(scene, features, scaled, scaled_config).same_outcome(decisions)


def test_scaling_lambdas_with_weights_keeps_spatial_decisions(rng, model):
    config = ModelConfig(bonus_value=0.5, t_similar=5)
    scene = random_scene(rng, 6, 6, config)
    features = rng.normal(0, 30, (6, 6, 8))
    base = score_modes(scene, features, model.weights, config)
    initial = classify_frame(scene, features, model.weights, config, base)
    refined = spatial_iterate(scene, initial, model.lambdas, model.weights, 3, base, config.t_similar)
    for factor in (0.5, 4.0):
        scaled = ClassifierModel(MatchWeights(model.weights.a * factor, model.weights.t_match * factor),
                                 LambdaTable(model.lambdas.values * factor))
        scaled_config = ModelConfig(bonus_value=0.5 * factor, t_similar=5)
        scaled_base = score_modes(scene, features, scaled.weights, scaled_config)
        scaled_initial = classify_frame(scene, features, scaled.weights, scaled_config, scaled_base)
        assert scaled_initial.same_outcome(initial)
        result = spatial_iterate(scene, scaled_initial, scaled.lambdas, scaled.weights, 3, scaled_base,
                                 scaled_config.t_similar)
        assert result.same_outcome(refined)


def test_decision_grid_helpers():
    grid = DecisionGrid(np.array([[0, -1]], dtype=np.int16), np.array([[1.0, -np.inf]]), np.array([[3, 9]]))
    assert grid.shape == (1, 2)
    assert grid.created.tolist() == [[False, True]]
    copy = grid.copy()
    copy.mode_index[0, 0] = 1
    assert grid.mode_index[0, 0] == 0
    assert not copy.same_outcome(grid)
    assert grid.decision(0, 1).mode_index == CREATE_NEW


def test_lambda_table():
    table = LambdaTable(np.arange(10.0))
    assert table.iterations == 2
    assert table(2, 4) == 9.0
    assert table.row(3).tolist() == [0.0] * 5
    with pytest.raises(ValueError):
        table.row(0)
    padded = table.for_iterations(4)
    assert padded.values.shape == (4, 5)
    assert padded.values[3].tolist() == [0.0] * 5
    assert table.for_iterations(1).values.tolist() == [[0.0, 1.0, 2.0, 3.0, 4.0]]
    assert LambdaTable.zeros(0).for_iterations(0).iterations == 0
    with pytest.raises(ValueError):
        LambdaTable(np.arange(7.0))


def test_match_weights_validation():
    with pytest.raises(ValueError):
        MatchWeights(np.zeros(7), 0.0)
    weights = MatchWeights([1, 2, 3, 4, 5, 6, 7, 8], -3)
    assert weights.a.dtype == np.float64
    assert isinstance(weights.t_match, float)


def test_model_text_round_trip(tmp_path, model):
    parsed = parse_model(format_model(model))
    np.testing.assert_array_equal(parsed.weights.a, model.weights.a)
    assert parsed.weights.t_match == model.weights.t_match
    np.testing.assert_array_equal(parsed.lambdas.values, model.lambdas.values)
    path = tmp_path / "model.txt"
    save_model(model, path)
    assert load_model(path).lambdas.iterations == 3


def test_parse_model_comments_and_errors():
    text = "# weights\n-1 -1 -1 -1 -1 -1 -1 -1  # inline\n-5\n"
    parsed = parse_model(text)
    assert parsed.weights.t_match == -5.0
    assert parsed.lambdas.iterations == 0
    with pytest.raises(ValueError):
        parse_model("1 2 3")
    with pytest.raises(ValueError):
        parse_model(text + "1 2 3\n")


def test_shipped_model():
    shipped = load_model()
    assert isinstance(shipped, ClassifierModel)
    assert shipped.weights.a.shape == (8,)
    assert np.all(shipped.weights.a < 0)
    assert shipped.lambdas.iterations == 3
