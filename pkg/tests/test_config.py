import math

import pytest

from handeye import config as C
from handeye import data as D


def test_defaults_without_file():
    cfg = C.parse_config("")
    assert cfg == C.PipelineConfig()
    assert cfg.schedule == D.CollectionSchedule.default()
    assert cfg.cem.n_samples == 64 and cfg.cem.n_elite == 6 and cfg.cem.n_iterations == 3


def test_sections_parse_typed_values():
    cfg = C.parse_config("""
[run]
seed = 12
workers = 2
[scene]
n_objects = 5
shape_weights = disc:1, box:0.5
[cem]
initial_sigma = 0.05, 0.05, 0.05, 0.5
[eval]
policies = random, servo
[collection]
objects_range = 4, 7
warm_start = no
""")
    assert cfg.run.seed == 12 and cfg.run.workers == 2
    assert cfg.scene.shape_weights == (("disc", 1.0), ("box", 0.5))
    assert cfg.cem.initial_sigma == (0.05, 0.05, 0.05, 0.5)
    assert cfg.eval.policies == ("random", "servo")
    assert cfg.collection.objects_range == (4, 7) and cfg.collection.warm_start is False


def test_phases_in_numeric_order():
    cfg = C.parse_config("""
[phase.10]
episodes = 5
policy = eps_greedy
T = 4
[phase.2]
episodes = 10
policy = random
T = 2
refit_after = true
""")
    assert [(p.episodes, p.policy) for p in cfg.schedule.phases] == [(10, "random"), (5, "eps_greedy")]
    assert cfg.schedule.phases[0].refit_after


@pytest.mark.parametrize("text,key", [
    ("[phase.1]\nepisodes = 10\npolicy = eps_greedy\nT = 4\nepsilon = 1.5\n", "phase.1.epsilon"),
    ("[cem]\nn_samples = 4\nn_elite = 6\n", "cem.n_elite"),
    ("[scene]\ncolour = red\n", "scene.colour"),
    ("[nonsense]\na = 1\n", "nonsense"),
    ("[train]\nlr = fast\n", "train.lr"),
    ("[train]\nseed = 3\n", "train.seed"),
    ("[run]\nworkers = 0\n", "run.workers"),
    ("[eval]\npolicies = random, magic\n", "eval.policies"),
    ("[ablation]\nfractions = 0.5, 1.5\n", "ablation.fractions"),
    ("[phase.1]\npolicy = random\nT = 2\n", "phase.1.episodes"),
    ("[network]\nimage_size = 80\n", "network.image_size"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(C.ConfigError, match=key.replace(".", r"\.")):
        C.parse_config(text)


def test_malformed_file():
    with pytest.raises(C.ConfigError):
        C.parse_config("no section header\n")


def test_views():
    cfg = C.parse_config("[run]\nseed = 4\n[eval]\nn_objects = 6\n[servo]\nmax_rotation = 1.0\n")
    assert cfg.train_config().seed == 4
    assert cfg.eval_config().scene.split == "eval" and cfg.eval_config().scene.n_objects == 6
    assert cfg.collection_config().scene.split == "train"
    assert cfg.servo_config().max_rotation == 1.0 and cfg.eval_config().open_loop.max_rotation == 1.0
    assert dict(cfg.eval_config().detector)["aperture_threshold"] == 0.01


def test_shipped_example_config_matches_defaults():
    import pathlib
    path = pathlib.Path(__file__).resolve().parents[1] / "configs" / "default.ini"
    cfg = C.load_config(path)
    assert cfg.schedule.total_episodes == 6000
    assert cfg.servo.max_rotation == pytest.approx(math.pi)
    assert cfg == C.PipelineConfig()
