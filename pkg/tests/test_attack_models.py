import numpy as np
import pytest

from shilldetect.attack_models import (AttackConfig, AttackIntent,
                                       AttackParams, dump_labels,
                                       generate, generate_power_attack,
                                       generate_profiles, generate_standard,
                                       inject_profiles, load_labels,
                                       select_power_items, select_power_users)
from shilldetect.dataset import (RatingMatrix, ValidationError, global_stats,
                                 item_stats, popularity_rank)

from _oracles import power_selection_oracle


def _config(model, attack_size=0.011, filler_size=0.012, seed=7, **params):
    return AttackConfig(model=model, intent=AttackIntent.NUKE,
                        attack_size=attack_size, filler_size=filler_size,
                        seed=seed, params=AttackParams(**params))


def _toy(seed=0, n_users=30, n_items=40, density=0.5):
    rng = np.random.default_rng(seed)
    entries = []
    for u in range(1, n_users + 1):
        count = max(2, int(density * n_items))
        items = rng.choice(np.arange(1, n_items + 1), size=count, replace=False)
        for i in items:
            entries.append((u, int(i), int(rng.integers(1, 6))))
    return RatingMatrix.from_entries(entries)


def test_attacker_count_matches_published_sizes(ml100k):
    counts = [_config("random", attack_size=a).attacker_count(ml100k)
              for a in (0.011, 0.064, 0.117, 0.17, 0.223, 0.276)]
    assert counts == [10, 60, 110, 160, 210, 260]


def test_config_validation():
    with pytest.raises(ValidationError):
        _config("nonsense")
    with pytest.raises(ValidationError):
        _config("random", attack_size=0.0)
    with pytest.raises(ValidationError):
        _config("random", filler_size=1.0)


def test_love_hate_nuke_shape(ml100k):
    config = _config("love_hate", filler_size=20 / 1682)
    profiles = generate_standard("love_hate", config, ml100k)
    assert len(profiles) == 10
    for p in profiles:
        assert p.target_rating == 1
        assert p.selected == {}
        assert len(p.fillers) == 20
        assert set(p.fillers.values()) == {5}


def test_segment_nuke_shape(ml100k):
    segment = (50, 183, 185, 200, 234, 443)
    config = _config("segment", filler_size=0.012, segment_item_ids=segment)
    profiles = generate_standard("segment", config, ml100k)
    for p in profiles:
        assert p.target_rating == 1
        assert set(p.selected) == set(segment)
        assert set(p.selected.values()) == {1}
        assert set(p.fillers.values()) == {5}


def test_random_nuke_filler_mean_near_global_mean(ml100k):
    config = _config("random", attack_size=0.17, filler_size=0.103, seed=11)
    profiles = generate_standard("random", config, ml100k)
    assert len(profiles) == 160
    values = np.concatenate([list(p.fillers.values()) for p in profiles])
    assert abs(values.mean() - global_stats(ml100k).mean) <= 0.15


def test_bandwagon_average_selected_at_extreme(ml100k):
    popular = (50, 56, 100, 127, 174, 181, 258, 286, 288, 294)
    config = _config("bandwagon_average", popular_item_ids=popular)
    for p in generate_standard("bandwagon_average", config, ml100k):
        assert set(p.selected) == set(popular)
        assert set(p.selected.values()) == {1}     # nuke: extreme is r_min


def test_bandwagon_requires_popular_items(ml100k):
    with pytest.raises(ValidationError, match="popular_item_ids"):
        generate_standard("bandwagon_random", _config("bandwagon_random"), ml100k)


def test_reverse_bandwagon_selects_rarely_rated(ml100k):
    config = _config("reverse_bandwagon", seed=3)
    st = item_stats(ml100k)
    for p in generate(config, ml100k):
        assert len(p.selected) == 10
        assert set(p.selected.values()) == {5}     # opposite of nuke extreme
        for item in p.selected:
            assert st.count(item) == 1


def test_aop_fillers_from_popular_pool(ml100k):
    config = _config("aop", filler_size=0.05, aop_top_fraction=0.1)
    rank = popularity_rank(ml100k)
    top = set(int(i) for i in rank.ordering[:round(0.1 * ml100k.n_items)])
    for p in generate(config, ml100k):
        assert p.selected == {}
        assert set(p.fillers) <= top


def test_aop_pool_too_small_fails(ml100k):
    config = _config("aop", filler_size=0.133, aop_top_fraction=0.1)
    with pytest.raises(ValidationError, match="exceeds"):
        generate(config, ml100k)


def test_filler_count_infeasible_fails():
    matrix = _toy(n_items=10, density=0.9)
    config = _config("love_hate", attack_size=0.2, filler_size=0.99)
    with pytest.raises(ValidationError):
        generate(config, matrix)


def test_generation_is_deterministic(ml100k):
    config = _config("average", attack_size=0.064, filler_size=0.042, seed=99)
    assert generate(config, ml100k) == generate(config, ml100k)


def test_partition_disjoint_and_scale(ml100k):
    params = dict(popular_item_ids=(50, 56, 100), segment_item_ids=(183, 185))
    for model in ("random", "average", "bandwagon_average", "bandwagon_random",
                  "segment", "reverse_bandwagon", "love_hate", "aop"):
        config = _config(model, filler_size=0.02, **params)
        for p in generate(config, ml100k):
            assert p.target not in p.selected
            assert p.target not in p.fillers
            assert not set(p.selected) & set(p.fillers)
            for r in p.ratings().values():
                assert 1 <= r <= 5


def test_target_rating_under_both_intents(ml100k):
    for intent, expected in ((AttackIntent.NUKE, 1), (AttackIntent.PUSH, 5)):
        config = AttackConfig(model="random", intent=intent, attack_size=0.011,
                              filler_size=0.012, seed=5)
        for p in generate(config, ml100k):
            assert p.target_rating == expected


def test_push_nuke_rating_symmetry(ml100k):
    """r -> 6 - r maps the constant-rated parts of nuke onto push profiles."""
    for model, params in (("segment", dict(segment_item_ids=(183, 185))),
                          ("love_hate", {}),
                          ("bandwagon_random", dict(popular_item_ids=(50, 56)))):
        nuke = AttackConfig(model=model, intent=AttackIntent.NUKE,
                            attack_size=0.011, filler_size=0.012, seed=21,
                            params=AttackParams(**params))
        push = AttackConfig(model=model, intent=AttackIntent.PUSH,
                            attack_size=0.011, filler_size=0.012, seed=21,
                            params=AttackParams(**params))
        for pn, pp in zip(generate(nuke, ml100k), generate(push, ml100k)):
            assert pn.target_rating == 6 - pp.target_rating
            assert all(6 - v == pp.selected[i] for i, v in pn.selected.items())
            if model in ("segment", "love_hate"):
                assert set(pn.fillers.values()) == {6 - v for v in pp.fillers.values()}


# -- power selections -------------------------------------------------------


def test_power_items_nr_simple():
    m = RatingMatrix.from_entries(
        [(u, 1, 3) for u in range(1, 6)]
        + [(u, 2, 3) for u in range(1, 4)]
        + [(1, 3, 4)])
    assert select_power_items(m, "NR", 2) == [1, 2]


def test_power_items_nr_matches_counts(ml100k):
    top = select_power_items(ml100k, "NR", 20)
    counts = item_stats(ml100k).counts
    ranked = sorted(ml100k.item_ids.tolist(),
                    key=lambda i: (-counts[ml100k.item_index(i)], i))
    assert top == ranked[:20]


def test_power_items_as_ignores_sparse_pairs():
    # items 1 and 2 share only 4 raters: no AS contribution anywhere
    entries = []
    for u in range(1, 5):
        entries += [(u, 1, u), (u, 2, u)]
    entries += [(5, 1, 3), (6, 2, 4), (5, 3, 1), (6, 3, 2)]
    m = RatingMatrix.from_entries(entries)
    oracle = power_selection_oracle(m_entries(m), "item", "AS", 3)
    assert select_power_items(m, "AS", 3) == oracle


def m_entries(matrix):
    return list(matrix.iter_entries())


@pytest.mark.parametrize("strategy", ["AS", "ID", "NR"])
def test_power_items_match_oracle(strategy):
    m = _toy(seed=5, n_users=12, n_items=6, density=0.8)
    got = select_power_items(m, strategy, 4)
    assert got == power_selection_oracle(m_entries(m), "item", strategy, 4)


@pytest.mark.parametrize("strategy", ["AS", "ID", "NR"])
def test_power_users_match_oracle(strategy):
    m = _toy(seed=8, n_users=8, n_items=14, density=0.7)
    got = select_power_users(m, strategy, count=5)
    assert got == power_selection_oracle(m_entries(m), "user", strategy, 5)


def test_power_users_nr_picks_longest_profile():
    m = RatingMatrix.from_entries(
        [(1, 1, 3), (2, 1, 3), (2, 2, 3), (3, 1, 3), (3, 2, 3), (3, 3, 3)])
    assert select_power_users(m, "NR", count=1) == [3]


def test_power_users_default_count(ml100k):
    assert len(select_power_users(ml100k, "NR")) == 50


def test_power_user_as_sparse_overlap_scores_zero():
    # users 1..8 rate identically (pairwise rho 1 over 8 co-rated items);
    # user 9 shares < 5 items with everyone, so its AS score stays 0
    entries = []
    for u in range(1, 9):
        for i in range(1, 9):
            entries.append((u, i, (i % 5) + 1))
    entries += [(9, 1, 2), (9, 2, 3)]
    m = RatingMatrix.from_entries(entries)
    ranked = select_power_users(m, "AS", count=9)
    assert ranked[-1] == 9


def test_power_selection_bounds(ml100k):
    with pytest.raises(ValidationError):
        select_power_items(ml100k, "NR", 0)
    with pytest.raises(ValidationError):
        select_power_items(ml100k, "NR", ml100k.n_items + 1)
    with pytest.raises(ValidationError):
        select_power_users(ml100k, "NR", count=ml100k.n_users + 1)


# -- power attacks ----------------------------------------------------------


def test_pia_nr_profile_shape(ml100k):
    config = _config("pia_nr", filler_size=20 / 1682)
    power = select_power_items(ml100k, "NR", 20)
    for p in generate_power_attack("pia_nr", config, ml100k):
        assert set(p.selected) == set(power)
        assert p.fillers == {}
        assert p.target_rating == 1
        assert p.target not in p.selected


def test_pia_zero_items_fails(ml100k):
    config = _config("pia_nr", filler_size=0.012, power_n=0)
    with pytest.raises(ValidationError):
        generate_power_attack("pia_nr", config, ml100k)


def test_pua_nr_clones_power_users(ml100k):
    config = _config("pua_nr", filler_size=0.05, seed=13)
    power = select_power_users(ml100k, "NR", 50)
    profiles = generate_power_attack("pua_nr", config, ml100k)
    for k, p in enumerate(profiles):
        source = dict(zip(*[arr.tolist() for arr in
                            ml100k.profile_arrays(power[k % 50])]))
        assert set(p.selected).issubset(source)
        assert all(source[i] == v for i, v in p.selected.items())
        assert len(p.selected) == min(round(0.05 * 1682), len(source))
        assert p.target_rating == 1


def test_pua_cycles_when_attackers_exceed_power_users():
    m = _toy(seed=2, n_users=20, n_items=30, density=0.6)
    profiles = generate_profiles(m, "pua_nr", AttackIntent.NUKE,
                                 [5] * 7, seed=4,
                                 params=AttackParams(power_user_count=3))
    assert len(profiles) == 7


# -- injection and labels ---------------------------------------------------


def test_inject_appends_after_max_id(ml100k):
    config = _config("random", attack_size=0.17, filler_size=0.012)
    profiles = generate(config, ml100k)
    dataset = inject_profiles(ml100k, profiles)
    assert dataset.matrix.n_users == 943 + 160
    assert sum(dataset.labels.values()) == 160
    max_genuine = int(ml100k.user_ids.max())
    assert sorted(dataset.attacker_ids) == list(
        range(max_genuine + 1, max_genuine + 161))
    # genuine entries unchanged
    for u in (1, 42, 943):
        a = ml100k.profile_arrays(u)
        b = dataset.matrix.profile_arrays(u)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_inject_empty_profile_list(ml100k):
    dataset = inject_profiles(ml100k, [])
    assert dataset.matrix == ml100k
    assert sum(dataset.labels.values()) == 0


def test_inject_twice_is_additive(ml100k):
    config = _config("random", attack_size=0.17, filler_size=0.012)
    first = inject_profiles(ml100k, generate(config, ml100k))
    again = generate(_config("random", attack_size=0.17, filler_size=0.012,
                             seed=8), ml100k)
    second = inject_profiles(first.matrix, again, base_labels=first.labels)
    assert sum(second.labels.values()) == 320
    assert len(second.labels) == 943 + 320


def test_label_round_trip(tmp_path):
    labels = {1: 0, 2: 1, 3: 0}
    path = tmp_path / "labels.tsv"
    dump_labels(labels, path)
    assert load_labels(path) == labels
    assert dump_labels(labels).decode().splitlines() == ["1\t0", "2\t1", "3\t0"]


def test_load_labels_rejects_garbage():
    with pytest.raises(ValidationError):
        load_labels(b"1\t2\n")
