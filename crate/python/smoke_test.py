"""Smoke test for the Python bindings.

Build and install first:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/robust_aht_py-*.whl
"""

import os
import tempfile

import robust_aht_py as aht


def main():
    game = aht.Game.prisoners_dilemma(3)
    assert game.players == 2 and game.actions == ["C", "D"] and game.horizon == 3
    assert game.rewards(game.encode([1, 0])) == [5.0, 0.0]
    assert aht.Game.from_json(game.to_json()).to_json() == game.to_json()

    population = aht.Population.canonical(game)
    assert len(population) == 9
    arena = aht.Arena.training(game, population)
    assert len(arena) == 10

    uniform = aht.Policy.uniform(game)
    m = arena.evaluate(uniform)
    assert abs(m["u_avg"] - 7.5) < 1e-9, m
    assert abs(m["u_min"] - 1.5) < 1e-9, m
    assert abs(m["r_max"] - 5.5) < 1e-9, m
    assert max(arena.best_response_values()) == 15.0

    w = aht.project_simplex([0.2, 0.9, -0.3])
    assert abs(sum(w) - 1.0) < 1e-12 and min(w) >= 0.0

    result = aht.train(arena, "mu", iterations=2000, seed=0)
    robust = arena.evaluate(result.policy)
    assert robust["u_min"] > 2.9, robust
    assert len(result.trace()) == 2001
    assert abs(sum(result.prior) - 1.0) < 1e-9

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "policy.json")
        result.policy.save(path)
        assert aht.Policy.load(game, path).probs() == result.policy.probs()

    partners = population.perturbed(game, 0.25, 64, 0)
    test = aht.Arena.test(game, partners)
    assert test.evaluate(result.policy)["u_min"] > 2.0

    report = aht.check_non_degenerative(game, population)
    assert report["non_degenerative"]

    try:
        aht.train(arena, "mu", eta_theta=-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative step size accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
