import math

import numpy as np
import pytest

from airsq.data.scenarios import ObjectType, is_corrupt
from airsq.data.synth import SynthConfig, synth_generate, travelled


def test_same_seed_same_scenes():
    assert synth_generate(5, seed=7) == synth_generate(5, seed=7)


def test_different_seeds_differ():
    assert synth_generate(3, seed=1) != synth_generate(3, seed=2)


def test_scenes_have_a_pair_and_roads():
    for s in synth_generate(20, seed=0):
        assert s.pair == (0, 1)
        assert 2 <= len(s.agents) <= 2 + SynthConfig().max_context
        assert len(s.roads) == 2
        assert not s.pair_agent(1).is_sdc


def test_exactly_one_pair_agent_stops_before_the_conflict_point():
    for s in synth_generate(30, seed=3):
        conflict = s.roads[0][1]
        before = 0
        for slot in (0, 1):
            agent = s.pair_agent(slot)
            h = agent.past.current[4]
            direction = np.array([math.cos(h), math.sin(h)])
            if np.dot(agent.future.points[-1] - conflict, direction) < 0:
                before += 1
        assert before == 1


def test_travelled_constant_speed():
    d = travelled(2.0)
    assert d[0] == pytest.approx(0.2)
    assert d[-1] == pytest.approx(16.0)


def test_travelled_stops_and_stays():
    d = travelled(10.0, stop_at=20.0)
    assert np.all(np.diff(d) >= 0)
    assert d[-1] == pytest.approx(20.0)
    assert d.max() <= 20.0 + 1e-9


def test_corruption_makes_every_agent_corrupt():
    cfg = SynthConfig(corrupt_rate=1.0)
    for s in synth_generate(10, seed=5, config=cfg):
        assert all(is_corrupt(a.future) for a in s.agents)


def test_default_scenes_are_clean():
    for s in synth_generate(30, seed=5):
        assert not any(is_corrupt(a.future) for a in s.agents)


def test_type_mix_can_exclude_a_type():
    cfg = SynthConfig(type_probs=(0.5, 0.5, 0.0))
    types = {a.type for s in synth_generate(30, seed=0, config=cfg) for a in s.agents}
    assert ObjectType.CYCLIST not in types


def test_negative_count_rejected():
    with pytest.raises(ValueError):
        synth_generate(-1, seed=0)
