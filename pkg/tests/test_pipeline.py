import logging
import math

import numpy as np
import pytest

from dctscene.blobs import connected_components
from dctscene.classifier import CREATE_NEW
from dctscene.config import ModelConfig
from dctscene.pipeline import DetectionWriter, FrameResult, Pipeline, load_pgm, scale_age_image
from dctscene.synthetic import SyntheticConfig, generate_sequence


def run_sequence(model, config, sequence):
    return list(Pipeline(model, config).run(sequence.frames))


def test_static_scene_has_no_foreground(model, config):
    sequence = generate_sequence("static", SyntheticConfig(n_frames=60), seed=5)
    results = run_sequence(model, config, sequence)
    assert all(not result.skipped for result in results)
    assert all(result.blobs == [] for result in results)
    assert results[-1].age.max() == 0


def test_walk_stop_leave(model, config):
    sequence = generate_sequence("walk_stop_leave", SyntheticConfig(n_frames=120), seed=3)
    results = run_sequence(model, config, sequence)
    for result in results[:config.n_bg]:
        assert result.blobs == []
    # moving in, then standing still in the middle
    for frame in list(range(42, 58)) + list(range(61, 72)):
        result = results[frame]
        assert result.blobs, f"no foreground in frame {frame}"
        foreground = result.foreground()
        rows, cols = np.nonzero(sequence.masks[frame][::8, ::8])
        assert foreground[rows, cols].mean() > 0.5
    # the revealed background matches its retained mode
    for result in results[100:]:
        assert result.blobs == []


def test_abandoned_bag_is_between_background_and_person(model):
    config = ModelConfig(n_bg=30)
    sequence = generate_sequence("abandoned_bag", SyntheticConfig(n_frames=100), seed=7)
    results = run_sequence(model, config, sequence)
    result = results[80]
    assert result.scene_frame == 80
    by_block = {block: blob for blob in result.components for block in blob.blocks()}
    bag = by_block[(12, 11)]
    person = by_block[(2, 12)]
    assert bag is not person
    assert bag.young and person.young
    assert any(blob is bag for blob in result.blobs)
    assert any(blob is person for blob in result.blobs)
    assert bag.min_creation > 80 - config.n_bg
    assert bag.max_creation < person.min_creation
    background = by_block[(7, 2)]
    assert not background.young
    assert background.max_creation <= 80 - config.n_bg


def test_undecodable_frame_is_skipped(model, config, textured_image, encode, caplog):
    pipeline = Pipeline(model, config)
    frame = encode(textured_image(24, 32), quality=90)
    pipeline.process_frame(frame)
    counts = pipeline.scene.mode_counts()
    result = pipeline.process_frame(frame[:len(frame) // 2])
    assert result.skipped
    assert result.index == 1
    assert result.scene_frame == -1
    assert "Skipping frame 1" in caplog.text
    assert pipeline.scene.current_frame == 1
    np.testing.assert_array_equal(pipeline.scene.mode_counts(), counts)
    with pytest.raises(ValueError):
        result.foreground()
    following = pipeline.process_frame(frame)
    assert following.index == 2
    assert following.scene_frame == 1


def test_frame_size_change_resets_scene(model, config, textured_image, encode, caplog):
    pipeline = Pipeline(model, config)
    first = pipeline.process_frame(encode(textured_image(24, 32), quality=90))
    assert first.reset
    assert not pipeline.process_frame(encode(textured_image(24, 32), quality=90)).reset
    with caplog.at_level(logging.WARNING):
        changed = pipeline.process_frame(encode(textured_image(24, 48), quality=90))
    assert changed.reset
    assert changed.scene_frame == 0
    assert pipeline.scene.grid_shape == (3, 6)
    assert "resetting" in caplog.text


def test_detection_is_deterministic(model, config):
    sequence = generate_sequence("random", SyntheticConfig(width=64, height=48, n_frames=40), seed=9)
    first = run_sequence(model, config, sequence)
    second = run_sequence(model, config, sequence)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.decisions.mode_index, b.decisions.mode_index)
        np.testing.assert_array_equal(a.age, b.age)
        assert [blob.blocks() for blob in a.blobs] == [blob.blocks() for blob in b.blobs]


def test_scene_invariants_hold(model, config):
    sequence = generate_sequence("random", SyntheticConfig(width=64, height=48, n_frames=40, block_noise=0.05),
                                 seed=2)
    pipeline = Pipeline(model, config)
    for frame in sequence.frames:
        pipeline.process_frame(frame)
        pipeline.scene.check_invariants()
        assert 1 <= pipeline.scene.mode_counts().min()
        assert pipeline.scene.mode_counts().max() <= config.max_modes


class ReferenceModel:
    """Straight-line re-implementation of one block grid's scene model and matching."""

    def __init__(self, rows, cols, model, config):
        self.rows, self.cols = rows, cols
        self.a = model.weights.a.tolist()
        self.t_match = model.weights.t_match
        self.lambdas = [model.lambdas.row(i).tolist() for i in range(1, config.iterations + 1)]
        self.config = config
        self.modes = [[[] for _ in range(cols)] for _ in range(rows)]
        self.frame = 0

    def score(self, features, mode):
        score = 0.0
        for i in range(8):
            score += self.a[i] * abs(features[i] - mode["coeffs"][i])
        if self.frame - mode["last"] <= self.config.bonus_window:
            score += self.config.bonus_value
        return score

    def select(self, r, c, totals, keep_match=False):
        best = None
        for m, mode in enumerate(self.modes[r][c]):
            key = (totals[m], mode["hits"], -mode["creation"])
            if best is None or key > best[0]:
                best = (key, m)
        if best is not None and (keep_match or best[0][0] >= self.t_match):
            return best[1], self.modes[r][c][best[1]]["creation"]
        return CREATE_NEW, self.frame

    def similar(self, r, c, candidate, creation):
        count = 0
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            inside = 0 <= nr < self.rows and 0 <= nc < self.cols
            if inside and abs(creation[nr][nc] - candidate) <= self.config.t_similar:
                count += 1
        return count

    def step(self, features):
        base = [[[self.score(features[r][c], mode) for mode in self.modes[r][c]] for c in range(self.cols)]
                for r in range(self.rows)]
        decisions = [[self.select(r, c, base[r][c]) for c in range(self.cols)] for r in range(self.rows)]
        raw = [[decisions[r][c][0] != CREATE_NEW for c in range(self.cols)] for r in range(self.rows)]
        for lambda_row in self.lambdas:
            creation = [[decisions[r][c][1] for c in range(self.cols)] for r in range(self.rows)]
            decisions = [[self.select(r, c, [base[r][c][m] + lambda_row[self.similar(r, c, mode["creation"], creation)]
                                             for m, mode in enumerate(self.modes[r][c])], raw[r][c])
                          for c in range(self.cols)] for r in range(self.rows)]
        for r in range(self.rows):
            for c in range(self.cols):
                self.update(r, c, decisions[r][c][0], features[r][c])
                self.expire(r, c)
        self.frame += 1
        return decisions

    def removal(self, hits):
        return math.floor(self.frame + self.config.c_s + self.config.c_v * hits)

    def update(self, r, c, index, features):
        modes = self.modes[r][c]
        values = [int(v) for v in features]
        alpha = self.config.alpha_amf
        if index != CREATE_NEW:
            mode = modes[index]
            coeffs = []
            for x, y in zip(values, mode["coeffs"]):
                coeffs.append(y + alpha if x > y + alpha else y - alpha if x < y - alpha else x)
            mode.update(coeffs=coeffs, hits=mode["hits"] + 1, last=self.frame)
            mode["removal"] = self.removal(mode["hits"])
            return
        if len(modes) == self.config.max_modes:
            victim = min(range(len(modes)), key=lambda m: (modes[m]["removal"], modes[m]["hits"], modes[m]["creation"]))
            del modes[victim]
        modes.append(dict(coeffs=values, creation=self.frame, hits=1, last=self.frame, removal=self.removal(1)))

    def expire(self, r, c):
        modes = self.modes[r][c]
        alive = [mode for mode in modes if mode["removal"] > self.frame]
        if not alive and modes:
            alive = [max(modes, key=lambda mode: mode["removal"])]
        self.modes[r][c] = alive


def reference_partition(age, t_age):
    rows, cols = age.shape
    label = -np.ones(age.shape, dtype=int)
    groups = []
    for r in range(rows):
        for c in range(cols):
            if label[r, c] >= 0:
                continue
            young = age[r, c] > t_age
            stack, members = [(r, c)], set()
            label[r, c] = len(groups)
            while stack:
                br, bc = stack.pop()
                members.add((br, bc))
                for nr, nc in ((br - 1, bc), (br + 1, bc), (br, bc - 1), (br, bc + 1)):
                    if 0 <= nr < rows and 0 <= nc < cols and label[nr, nc] < 0 and (age[nr, nc] > t_age) == young:
                        label[nr, nc] = len(groups)
                        stack.append((nr, nc))
            groups.append((frozenset(members), bool(young)))
    return groups


def scripted_features(rng, n_frames, rows=3, cols=3):
    palette = rng.integers(-60, 61, size=(rows, cols, 1, 8)) + rng.integers(-30, 31, size=(rows, cols, 3, 8))
    choice = rng.integers(0, 3, size=(rows, cols))
    frames = []
    for _ in range(n_frames):
        change = rng.random((rows, cols)) < 0.3
        choice = np.where(change, rng.integers(0, 3, size=(rows, cols)), choice)
        content = np.take_along_axis(palette, choice[:, :, None, None], axis=2)[:, :, 0]
        frames.append((content + rng.integers(-3, 4, size=(rows, cols, 8))).astype(np.float64))
    return frames


def test_small_instances_match_reference(rng, model):
    config = ModelConfig(iterations=2, max_modes=3, c_s=5, n_bg=5)
    for _ in range(100):
        pipeline = Pipeline(model, config)
        reference = ReferenceModel(3, 3, model, config)
        for frame, features in enumerate(scripted_features(rng, 20)):
            expected = reference.step(features.tolist())
            result = pipeline.process_features(features)
            expected_index = np.array([[d[0] for d in row] for row in expected])
            expected_age = np.array([[d[1] for d in row] for row in expected])
            np.testing.assert_array_equal(result.decisions.mode_index, expected_index)
            np.testing.assert_array_equal(result.age, expected_age)
            partition = reference_partition(expected_age, frame - config.n_bg)
            assert {(frozenset(blob.blocks()), blob.young) for blob in result.components} == set(partition)
            young = {group for group, is_young in partition if is_young} if frame >= config.n_bg else set()
            assert {frozenset(blob.blocks()) for blob in result.blobs} == young
            for r in range(3):
                for c in range(3):
                    stored = [(list(m.coeffs), m.creation_frame, m.hit_count, m.last_matched_frame, m.removal_frame)
                              for m in pipeline.scene.modes(r, c)]
                    assert stored == [(m["coeffs"], m["creation"], m["hits"], m["last"], m["removal"])
                                      for m in reference.modes[r][c]]


def test_keep_scores(model, config, textured_image, encode):
    pipeline = Pipeline(model, config, keep_scores=True)
    frame = encode(textured_image(24, 32), quality=90)
    first = pipeline.process_frame(frame)
    assert np.all(first.scores == -np.inf)
    second = pipeline.process_frame(frame)
    assert second.scores.shape == (3, 4)
    assert np.all(np.isfinite(second.scores))
    assert Pipeline(model, config).process_frame(frame).scores is None


def test_scale_age_image():
    age = np.array([[0, 10], [51, 60]])
    assert scale_age_image(age, 51).tolist() == [[0, 50], [255, 255]]
    assert scale_age_image(np.zeros((1, 1), dtype=np.int64), 0).tolist() == [[0]]


def test_detection_writer(tmp_path, model):
    sequence = generate_sequence("walk_stop_leave", SyntheticConfig(width=64, height=48, n_frames=30), seed=1)
    pipeline = Pipeline(model, ModelConfig(n_bg=5), keep_scores=True)
    results = list(pipeline.run(sequence.frames[:20]))
    results.append(FrameResult(20, error="truncated"))
    with DetectionWriter(tmp_path, emit_age_images=True, emit_scores=True) as writer:
        for result in results:
            writer.write(result)
    lines = (tmp_path / "blobs.txt").read_text().splitlines()
    assert lines[0].startswith("#")
    records = [line.split() for line in lines[1:]]
    assert len(records) == sum(len(result.blobs) for result in results)
    assert all(len(record) == 10 and record[-1] == "young" for record in records)
    assert len(list((tmp_path / "foreground").glob("*.pgm"))) == 21
    assert len(list((tmp_path / "ages").glob("*.pgm"))) == 20
    assert len(list((tmp_path / "scores").glob("*.npy"))) == 20
    assert not load_pgm(tmp_path / "foreground" / "000020.pgm").any()
    for result in results[:20]:
        mask = load_pgm(tmp_path / "foreground" / f"{result.index:06d}.pgm") > 127
        np.testing.assert_array_equal(mask, result.foreground())
        np.testing.assert_array_equal(np.load(tmp_path / "scores" / f"{result.index:06d}.npy"), result.scores)


def test_writer_needs_context(tmp_path):
    writer = DetectionWriter(tmp_path)
    with pytest.raises(RuntimeError):
        writer.write(FrameResult(0, error="x"))


def test_connected_components_of_result_cover_grid(model, config):
    sequence = generate_sequence("random", SyntheticConfig(width=48, height=40, n_frames=10), seed=0)
    for result in run_sequence(model, config, sequence):
        assert sum(blob.count for blob in result.components) == 30
        expected = connected_components(result.age, result.scene_frame - config.n_bg)
        assert [blob.blocks() for blob in expected] == [blob.blocks() for blob in result.components]
