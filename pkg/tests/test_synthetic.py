"""Synthetic corpus generator tests."""

import pytest

from topicsum.synthetic import (SyntheticSpec, SyntheticSpecError,
                                generate_synthetic, group_words,
                                load_truth_sidecar, noise_words,
                                write_truth_sidecar)


def small_spec(**kw):
    base = dict(num_groups=3, words_per_group=4, noise_pool_size=4,
                num_dialogues=20, utterances_per_dialogue=4, active_groups=1,
                noise_rate=0.3, tokens_per_utterance=6, summary_tokens=3,
                seed=11)
    base.update(kw)
    return SyntheticSpec(**base)


class TestSpecValidation:
    def test_zero_groups_rejected(self):
        with pytest.raises(SyntheticSpecError):
            small_spec(num_groups=0).validate()

    def test_active_exceeding_groups_rejected(self):
        with pytest.raises(SyntheticSpecError):
            small_spec(active_groups=4).validate()

    def test_noise_rate_one_rejected(self):
        with pytest.raises(SyntheticSpecError):
            small_spec(noise_rate=1.0).validate()

    def test_negative_rate_rejected(self):
        with pytest.raises(SyntheticSpecError):
            small_spec(noise_rate=-0.1).validate()


class TestGeneration:
    def test_disjoint_pools(self):
        spec = small_spec()
        flat = [w for g in group_words(spec) for w in g]
        assert set(flat).isdisjoint(noise_words(spec))
        assert len(set(flat)) == len(flat)

    def test_noise_rate_zero_all_informative(self):
        spec = small_spec(noise_rate=0.0)
        dialogues, truth = generate_synthetic(spec)
        groups = group_words(spec)
        for d in dialogues:
            active_pool = {w for g in truth[d.id] for w in groups[g]}
            for tok in d.all_tokens():
                assert tok in active_pool

    def test_determinism(self):
        a, ta = generate_synthetic(small_spec())
        b, tb = generate_synthetic(small_spec())
        assert a == b and ta == tb

    def test_different_seeds_differ(self):
        a, _ = generate_synthetic(small_spec(seed=1))
        b, _ = generate_synthetic(small_spec(seed=2))
        assert a != b

    def test_summary_only_active_group_words(self):
        spec = small_spec()
        dialogues, truth = generate_synthetic(spec)
        groups = group_words(spec)
        for d in dialogues:
            active_pool = {w for g in truth[d.id] for w in groups[g]}
            assert set(d.summary) <= active_pool

    def test_noise_present_in_every_dialogue(self):
        spec = small_spec(noise_rate=0.05)  # low rate still guarantees noise
        dialogues, _ = generate_synthetic(spec)
        pool = set(noise_words(spec))
        for d in dialogues:
            assert any(t in pool for t in d.all_tokens())

    def test_sidecar_covers_every_dialogue(self, tmp_path):
        dialogues, truth = generate_synthetic(small_spec())
        assert set(truth) == {d.id for d in dialogues}
        path = tmp_path / "truth.json"
        write_truth_sidecar(truth, path)
        assert load_truth_sidecar(path) == truth

    def test_roles_alternate(self):
        dialogues, _ = generate_synthetic(small_spec())
        for d in dialogues:
            roles = [u.role for u in d.utterances]
            assert roles[0] == "customer"
            assert all(r in ("customer", "agent") for r in roles)
