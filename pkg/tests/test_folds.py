import pytest

from layerprobe.errors import TooFewSpeakers, UnknownSpeaker
from layerprobe.folds import Role, load_fold_plan, make_folds, recordings_for, save_fold_plan
from layerprobe.manifest import Label

from conftest import build_manifest


def assert_fold_invariants(plan, manifest):
    all_speakers = {s.speaker_id for s in manifest.speakers}
    seen_in_test = set()
    for fold in plan.folds:
        assert not fold.train_speakers & fold.val_speakers
        assert not fold.train_speakers & fold.test_speakers
        assert not fold.val_speakers & fold.test_speakers
        assert fold.train_speakers | fold.val_speakers | fold.test_speakers == all_speakers
        assert not seen_in_test & fold.test_speakers
        seen_in_test |= fold.test_speakers
    assert seen_in_test == all_speakers


class TestMakeFolds:
    def test_hundred_speakers_exact_80_10_10(self):
        manifest = build_manifest(n_speakers=100, recordings_per_speaker=1, healthy=50)
        plan = make_folds(manifest, k=10, seed=0)
        labels = {s.speaker_id: s.label for s in manifest.speakers}
        for fold in plan.folds:
            assert len(fold.train_speakers) == 80
            assert len(fold.val_speakers) == 10
            assert len(fold.test_speakers) == 10
            # balanced corpus: every role is exactly class-balanced
            for role_set in (fold.train_speakers, fold.val_speakers, fold.test_speakers):
                healthy = sum(1 for s in role_set if labels[s] is Label.HEALTHY)
                assert healthy == len(role_set) // 2
        assert_fold_invariants(plan, manifest)

    def test_ten_speakers_rotation_8_1_1(self):
        # hand enumeration: 10 speakers over 10 folds leaves one test and one
        # validation speaker per fold, rotating so every speaker tests once
        manifest = build_manifest(n_speakers=10, recordings_per_speaker=1, healthy=5)
        plan = make_folds(manifest, k=10, seed=123)
        for i, fold in enumerate(plan.folds):
            assert len(fold.train_speakers) == 8
            assert len(fold.val_speakers) == 1
            assert len(fold.test_speakers) == 1
            assert fold.val_speakers == plan.folds[(i + 1) % 10].test_speakers
        assert_fold_invariants(plan, manifest)

    def test_too_few_speakers(self):
        manifest = build_manifest(n_speakers=5, recordings_per_speaker=1)
        with pytest.raises(TooFewSpeakers):
            make_folds(manifest, k=10, seed=0)

    def test_k_below_two_rejected(self):
        manifest = build_manifest(n_speakers=4, recordings_per_speaker=1)
        with pytest.raises(ValueError):
            make_folds(manifest, k=1, seed=0)

    def test_determinism_and_seed_sensitivity(self):
        manifest = build_manifest(n_speakers=20, recordings_per_speaker=1)
        a = make_folds(manifest, k=5, seed=7)
        b = make_folds(manifest, k=5, seed=7)
        c = make_folds(manifest, k=5, seed=8)
        assert a == b
        assert a != c

    def test_invariants_over_many_seeds(self):
        manifest = build_manifest(n_speakers=100, recordings_per_speaker=1, healthy=50)
        for seed in range(200):
            plan = make_folds(manifest, k=10, seed=seed)
            assert_fold_invariants(plan, manifest)

    def test_stratification_with_remainders(self):
        # 23 speakers (12 healthy / 11 pathological), k = 5: per role, class
        # counts stay within one of proportional
        manifest = build_manifest(n_speakers=23, recordings_per_speaker=1, healthy=12)
        labels = {s.speaker_id: s.label for s in manifest.speakers}
        plan = make_folds(manifest, k=5, seed=3)
        assert_fold_invariants(plan, manifest)
        sizes = sorted(len(f.test_speakers) for f in plan.folds)
        assert max(sizes) - min(sizes) <= 1
        for fold in plan.folds:
            for role_set in (fold.train_speakers, fold.val_speakers, fold.test_speakers):
                healthy = sum(1 for s in role_set if labels[s] is Label.HEALTHY)
                proportional = len(role_set) * 12 / 23
                assert abs(healthy - proportional) <= 1.0 + 1e-9


class TestRecordingsFor:
    def test_all_recordings_of_test_speaker(self):
        manifest = build_manifest(n_speakers=4, recordings_per_speaker=3)
        plan = make_folds(manifest, k=4, seed=0)
        fold = plan.folds[0]
        recs = recordings_for(fold, Role.TEST, manifest)
        assert len(recs) == 3 * len(fold.test_speakers)
        assert all(r.speaker_id in fold.test_speakers for r in recs)
        assert recs == sorted(recs, key=lambda r: r.recording_id)

    def test_two_test_speakers_eleven_recordings_each(self):
        # 10 sentences + read speech per speaker; 2 test speakers -> 22
        manifest = build_manifest(n_speakers=4, recordings_per_speaker=11, healthy=2)
        plan = make_folds(manifest, k=2, seed=0)
        recs = recordings_for(plan.folds[0], Role.TEST, manifest)
        assert len(plan.folds[0].test_speakers) == 2
        assert len(recs) == 22

    def test_empty_role_gives_empty_list(self):
        # k = 2 leaves no training speakers: both test sets cover everyone
        manifest = build_manifest(n_speakers=4, recordings_per_speaker=2)
        plan = make_folds(manifest, k=2, seed=0)
        assert recordings_for(plan.folds[0], Role.TRAIN, manifest) == []

    def test_unknown_speaker(self):
        from layerprobe.folds import Fold

        manifest = build_manifest(n_speakers=2, recordings_per_speaker=1)
        ghost_fold = Fold(
            train_speakers=frozenset({"spk000"}),
            val_speakers=frozenset({"spk001"}),
            test_speakers=frozenset({"ghost"}),
        )
        with pytest.raises(UnknownSpeaker):
            recordings_for(ghost_fold, Role.TEST, manifest)


class TestFoldPlanSerialization:
    def test_round_trip(self, tmp_path):
        manifest = build_manifest(n_speakers=12, recordings_per_speaker=1)
        plan = make_folds(manifest, k=4, seed=99)
        path = tmp_path / "plan.yaml"
        save_fold_plan(plan, path)
        assert load_fold_plan(path) == plan
