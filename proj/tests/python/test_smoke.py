import json
import os
from pathlib import Path

import numpy as np
import pytest

import trajmine

CONFIGS = Path(os.environ.get("TRAJMINE_CONFIG_DIR", Path(__file__).resolve().parents[2] / "configs"))


def test_bin_cell_floors_coordinates():
    assert trajmine.bin_cell(17, 9, 0) == (2, 1, 0)
    assert trajmine.bin_cell(0, 0, 3) == (0, 0, 3)
    with pytest.raises(ValueError):
        trajmine.bin_cell(-1, 0, 0)


def test_epsilon_and_dbscan_on_two_groups():
    assert trajmine.select_epsilon(list(range(1, 101)), 0.5) == pytest.approx(50.5)
    pts = np.array([[0.25 * i, 0.0] for i in range(6)] + [[100 + 0.25 * i, 0.0] for i in range(6)] + [[50, 50]],
                   dtype=np.float32)
    labels = trajmine.dbscan(pts, 1.0, 4)
    assert labels == [0] * 6 + [1] * 6 + [trajmine.NOISE]
    d = trajmine.knn_distances(pts, 4)
    assert len(d) == 4 * len(pts)
    labels_q, eps = trajmine.cluster(pts, 0.5)
    assert eps == pytest.approx(trajmine.select_epsilon(d, 0.5))
    assert len(labels_q) == len(pts)


def test_time_jaccard_identity_and_disjoint():
    a = np.full(trajmine.MINUTES_PER_DAY, 3, dtype=np.int64)
    b = np.full(trajmine.MINUTES_PER_DAY, 4, dtype=np.int64)
    offline = np.full(trajmine.MINUTES_PER_DAY, -1, dtype=np.int64)
    assert trajmine.time_jaccard(a, a) == 1.0
    assert trajmine.time_jaccard(a, b) == 0.0
    assert trajmine.time_jaccard(offline, offline) == 0.0
    with pytest.raises(ValueError):
        trajmine.time_jaccard(a[:10], a)


def test_q_key():
    assert trajmine.q_key(0.05) == "0.05"
    assert trajmine.q_key(0.2) == "0.2"


def test_pipeline_and_api(tmp_path):
    run = tmp_path / "run"
    assert not trajmine.simulate(str(run), scenario=str(CONFIGS / "small_scenario.cfg"), seed=3)["skipped"]
    trajmine.prep(str(run / "logs"), str(run / "world.cfg"), str(run))
    trajmine.train(str(run), str(run), preset="custom", model_config=str(CONFIGS / "tiny_model.cfg"), epochs=2,
                   samples_per_epoch=32, batch_size=16)
    out = trajmine.embed(str(run / "model.ckpt"), str(run), str(run / "reps.bin"))
    assert str(run / "reps.bin") in out["outputs"]
    assert trajmine.embed(str(run / "model.ckpt"), str(run), str(run / "reps.bin"))["skipped"]

    keys, vectors = trajmine.load_representations(str(run / "reps.bin"))
    assert vectors.dtype == np.float32
    assert vectors.shape == (len(keys), 16)
    assert keys == sorted(keys)

    api = trajmine.ApiClient(str(run))
    status, ctype, body = api.request("GET", "/v1/runs")
    assert status == 200 and ctype == "application/json"
    runs = json.loads(body)["runs"]
    assert runs[0]["id"] == "run" and runs[0]["player_days"] == len(keys)

    status, _, body = api.request("GET", "/v1/runs/run/clusters", {"q": "0.3"})
    assert status == 200
    listing = json.loads(body)
    assert listing["detecting_count"] + listing["noise_count"] == len(keys)

    status, _, body = api.request("GET", "/v1/runs/run/clusters", {"q": "2"})
    assert status == 400
    assert json.loads(body)["error"]["code"] == "invalid_input"
    assert api.request("GET", "/v1/runs/other")[0] == 404

    with pytest.raises(OSError):
        trajmine.load_representations(str(tmp_path / "missing.bin"))
