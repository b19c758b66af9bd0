import json
import math
from types import SimpleNamespace

import numpy as np
import pytest

from sipredict import tensor as T
from sipredict.data import Clip, Manifest, make_folds
from sipredict.errors import (
    ConfigError,
    ContractError,
    PredictionError,
    PredictorError,
    TrainingDiverged,
    UndefinedCorrelationError,
)
from sipredict.enhancers import EnhancerSpec
from sipredict.featfile import write_feature_file
from sipredict.model import ModelConfig
from sipredict.tensor import Tensor
from sipredict.train import (
    AdamState,
    EvalReport,
    TrainConfig,
    TrainedEnsemble,
    adam_init,
    adam_step,
    curve_to_csv,
    evaluate,
    huber,
    huber_term,
    layer_sweep,
    ncc,
    predict_ensemble,
    rmse,
    sweep_to_csv,
    train_ensemble,
    train_fold,
)

from helpers import write_sweep_fixture


def tiny_model_cfg(**kw):
    base = dict(
        d_model=8,
        n_heads=2,
        ff_mult=2,
        sfm_feature_dim=4,
        downsample_factor=4,
        dropout=0.0,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_train_cfg(**kw):
    base = dict(epochs=5, batch_size=8, lr=1e-2, seed=1, n_folds=2)
    base.update(kw)
    return TrainConfig(**base)


def toy_dataset(n=36, seed=0, frames=6, dim=4):
    """Clips whose score is a monotone function of a constant feature level."""
    rng = np.random.default_rng(seed)
    clips, feats = [], {}
    for i in range(n):
        v = float(rng.uniform(-1.0, 1.0))
        cid = f"c{i:03d}"
        clips.append(
            Clip(
                clip_id=cid,
                listener_id=f"L{i % 4}",
                audiogram=(10, 15, 20, 30, 40, 50),
                score=50.0 + 45.0 * v,
                wav=f"{cid}.wav",
            )
        )
        arr = np.full((frames, dim), v, dtype=np.float32)
        arr += rng.normal(0.0, 0.05, size=arr.shape).astype(np.float32)
        feats[cid] = {
            "noisy_l": arr,
            "enhanced_l": arr,
            "noisy_r": arr,
            "enhanced_r": arr,
        }
    return Manifest("toy", clips), (lambda clip: feats[clip.clip_id])


class TestTrainConfig:
    def test_defaults_follow_protocol(self):
        cfg = TrainConfig()
        assert cfg.epochs == 50
        assert cfg.lr == 4e-5
        assert (cfg.beta1, cfg.beta2) == (0.9, 0.98)
        cfg.validate()

    def test_bad_values(self):
        for kw in (
            {"epochs": 0},
            {"lr": -1.0},
            {"beta1": 1.0},
            {"beta2": -0.1},
            {"huber_delta": 0.0},
            {"adam_eps": 0.0},
            {"n_folds": 0},
            {"grad_clip": 0.0},
        ):
            with pytest.raises(ConfigError):
                TrainConfig(**kw).validate()

    def test_round_trip_rejects_unknown(self):
        cfg = tiny_train_cfg()
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError, match="unknown"):
            TrainConfig.from_dict({"lr": 1e-3, "momentum": 0.9})


class TestHuber:
    def test_zero_error(self):
        assert huber(50.0, 50.0, delta=1.0) == 0.0

    def test_quadratic_branch(self):
        assert huber(10.5, 10.0, delta=1.0) == 0.125

    def test_linear_branch(self):
        assert huber(13.0, 10.0, delta=1.0) == 2.5

    def test_continuous_and_smooth_at_seam(self):
        d = 3.0
        for side in (-1.0, 1.0):
            e = side * d
            below = huber(e * (1 - 1e-9), 0.0, d)
            above = huber(e * (1 + 1e-9), 0.0, d)
            assert below == pytest.approx(above, abs=1e-7)
            # derivative from both branches: e vs delta*sign(e)
            h = 1e-6
            slope = (huber(e + h, 0.0, d) - huber(e - h, 0.0, d)) / (2 * h)
            assert slope == pytest.approx(e, abs=1e-4)

    def test_large_delta_equals_half_mse(self):
        rng = np.random.default_rng(0)
        for e in rng.uniform(-50, 50, size=20):
            assert huber(e, 0.0, delta=1000.0) == 0.5 * e * e

    def test_non_finite_rejected(self):
        with pytest.raises(ContractError):
            huber(float("nan"), 0.0, 1.0)

    def test_bad_delta(self):
        with pytest.raises(ConfigError):
            huber(1.0, 0.0, delta=-1.0)

    def test_term_matches_scalar_form(self):
        for pred, target in ((50.3, 50.0), (80.0, 10.0), (10.0, 80.0)):
            with T.using_dtype(np.float64):
                x = Tensor(np.array([[pred]]), requires_grad=True)
                loss = huber_term(x, target, 10.0)
            assert loss.item() == pytest.approx(huber(pred, target, 10.0), abs=1e-12)

    def test_term_gradient_finite_difference(self):
        with T.using_dtype(np.float64):
            for pred in (50.2, 75.0, 20.0):
                x = Tensor(np.array([[pred]]), requires_grad=True)
                huber_term(x, 50.0, 10.0).backward()
                h = 1e-6
                num = (huber(pred + h, 50.0, 10.0) - huber(pred - h, 50.0, 10.0)) / (2 * h)
                assert x.grad[0, 0] == pytest.approx(num, abs=1e-5)


class TestAdam:
    @staticmethod
    def one_param(value, requires_grad=True):
        p = Tensor(np.array([value], dtype=np.float64), requires_grad=requires_grad)
        return {"w": p}

    def test_first_step_is_minus_lr(self):
        cfg = TrainConfig(lr=4e-5, adam_eps=1e-8)
        params = self.one_param(1.0)
        state = adam_init(params)
        adam_step(params, {"w": np.array([0.3])}, state, cfg)
        # bias correction makes step 1 move by ~lr regardless of |g|
        assert params["w"].data[0] == pytest.approx(1.0 - 4e-5, abs=1e-9)
        assert state.t == 1

    def test_zero_gradient_is_noop(self):
        cfg = tiny_train_cfg()
        params = self.one_param(0.7)
        state = adam_init(params)
        adam_step(params, {"w": np.zeros(1)}, state, cfg)
        adam_step(params, {}, state, cfg)  # missing grad treated as zero
        assert params["w"].data[0] == 0.7
        assert state.t == 2

    def test_matches_reference_loop(self):
        cfg = TrainConfig(lr=1e-2, beta1=0.9, beta2=0.98, adam_eps=1e-8)
        rng = np.random.default_rng(5)
        grads = [rng.standard_normal(4) for _ in range(25)]

        params = {"w": Tensor(np.zeros(4), requires_grad=True)}
        state = adam_init(params)
        for g in grads:
            adam_step(params, {"w": g}, state, cfg)

        # independent textbook recurrence
        theta = np.zeros(4)
        m = np.zeros(4)
        v = np.zeros(4)
        for t, g in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.98 * v + 0.02 * g * g
            mhat = m / (1 - 0.9**t)
            vhat = v / (1 - 0.98**t)
            theta -= 1e-2 * mhat / (np.sqrt(vhat) + 1e-8)
        np.testing.assert_allclose(params["w"].data, theta, atol=1e-12)

    def test_sign_equivariance(self):
        cfg = tiny_train_cfg()
        g = np.array([0.4, -1.2, 0.03])
        a = {"w": Tensor(np.zeros(3), requires_grad=True)}
        b = {"w": Tensor(np.zeros(3), requires_grad=True)}
        sa, sb = adam_init(a), adam_init(b)
        for _ in range(7):
            adam_step(a, {"w": g}, sa, cfg)
            adam_step(b, {"w": -g}, sb, cfg)
        np.testing.assert_array_equal(a["w"].data, -b["w"].data)

    def test_determinism(self):
        cfg = tiny_train_cfg()
        runs = []
        for _ in range(2):
            params = {"w": Tensor(np.ones(3), requires_grad=True)}
            state = adam_init(params)
            for k in range(5):
                adam_step(params, {"w": np.full(3, 0.1 * (k + 1))}, state, cfg)
            runs.append((params["w"].data.tobytes(), state.m["w"].tobytes(), state.v["w"].tobytes()))
        assert runs[0] == runs[1]

    def test_shape_mismatch(self):
        params = self.one_param(0.0)
        state = adam_init(params)
        with pytest.raises(ContractError, match="shape"):
            adam_step(params, {"w": np.zeros((2, 2))}, state, tiny_train_cfg())


class TestMetrics:
    def test_rmse_direct_formula(self):
        assert rmse([13, 24, 27], [10, 20, 30]) == pytest.approx(math.sqrt(34.0 / 3.0), abs=1e-12)

    def test_anticorrelated_pair(self):
        assert rmse([0, 100], [100, 0]) == 100.0
        assert ncc([0, 100], [100, 0]) == pytest.approx(-1.0, abs=1e-12)

    def test_identical_vectors(self):
        v = [3.0, 9.0, 27.0]
        assert rmse(v, v) == 0.0
        assert ncc(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_constant_vector_is_undefined_not_zero(self):
        with pytest.raises(UndefinedCorrelationError):
            ncc([5.0, 5.0, 5.0], [1.0, 2.0, 3.0])
        with pytest.raises(UndefinedCorrelationError):
            ncc([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])

    def test_against_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            p = rng.uniform(0, 100, n)
            t = rng.uniform(0, 100, n)
            brute_rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(p, t)) / n)
            assert rmse(p, t) == pytest.approx(brute_rmse, abs=1e-9)
            pm, tm = p.mean(), t.mean()
            num = sum((a - pm) * (b - tm) for a, b in zip(p, t))
            den = math.sqrt(sum((a - pm) ** 2 for a in p)) * math.sqrt(sum((b - tm) ** 2 for b in t))
            assert ncc(p, t) == pytest.approx(num / den, abs=1e-9)

    def test_ncc_affine_invariance(self):
        rng = np.random.default_rng(3)
        p = rng.uniform(0, 100, 60)
        t = rng.uniform(0, 100, 60)
        assert ncc(2.5 * p + 7.0, t) == pytest.approx(ncc(p, t), abs=1e-9)
        assert ncc(p, 0.1 * t - 40.0) == pytest.approx(ncc(p, t), abs=1e-9)

    def test_length_contracts(self):
        with pytest.raises(ContractError):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(ContractError):
            rmse([], [])


@pytest.fixture(scope="module")
def fitted():
    manifest, feature_fn = toy_dataset()
    plan = make_folds(manifest, seed=1, n_folds=1)
    train_ids, val_ids = plan.folds[0]
    return train_fold(
        tiny_model_cfg(), manifest, train_ids, val_ids, feature_fn, tiny_train_cfg(epochs=8)
    )


@pytest.fixture(scope="module")
def trained():
    manifest, feature_fn = toy_dataset(n=30)
    stores = {"identity": feature_fn, "alt": feature_fn}
    enhancers = {"identity": EnhancerSpec("identity"), "alt": EnhancerSpec("identity")}
    ens = train_ensemble(
        manifest, enhancers, tiny_model_cfg(), tiny_train_cfg(epochs=3), stores=stores
    )
    return manifest, feature_fn, stores, ens


@pytest.fixture(scope="module")
def eval_setup():
    manifest, feature_fn = toy_dataset(n=24)
    stores = {"identity": feature_fn}
    ens = train_ensemble(
        manifest,
        {"identity": EnhancerSpec("identity")},
        tiny_model_cfg(),
        tiny_train_cfg(epochs=6),
        stores=stores,
    )
    return manifest, stores, ens


class TestTrainFold:
    def test_learning_beats_first_epoch(self, fitted):
        assert fitted.val_rmse < fitted.curve[0].val_rmse
        assert fitted.val_rmse == min(s.val_rmse for s in fitted.curve)

    def test_best_epoch_points_into_curve(self, fitted):
        assert fitted.curve[fitted.best_epoch].val_rmse == fitted.val_rmse
        # ties (and the minimum itself) resolve to the earliest epoch
        first_min = next(i for i, s in enumerate(fitted.curve) if s.val_rmse == fitted.val_rmse)
        assert fitted.best_epoch == first_min

    def test_model_carries_best_parameters(self, fitted):
        manifest, feature_fn = toy_dataset()
        plan = make_folds(manifest, seed=1, n_folds=1)
        _, val_ids = plan.folds[0]
        cmap = manifest.clip_map()
        from sipredict.features import clip_input

        preds = [fitted.model.predict(clip_input(cmap[i], feature_fn)) for i in val_ids]
        targets = [cmap[i].score for i in val_ids]
        assert rmse(preds, targets) == pytest.approx(fitted.val_rmse, abs=1e-9)

    def test_zero_lr_changes_nothing(self):
        manifest, feature_fn = toy_dataset(n=12)
        plan = make_folds(manifest, seed=0, n_folds=1)
        train_ids, val_ids = plan.folds[0]
        result = train_fold(
            tiny_model_cfg(), manifest, train_ids, val_ids, feature_fn,
            tiny_train_cfg(epochs=3, lr=0.0),
        )
        rmses = [s.val_rmse for s in result.curve]
        assert rmses[0] == rmses[1] == rmses[2]
        assert result.best_epoch == 0

    def test_same_seed_identical_curves(self):
        manifest, feature_fn = toy_dataset(n=16)
        plan = make_folds(manifest, seed=2, n_folds=1)
        train_ids, val_ids = plan.folds[0]
        curves = []
        for _ in range(2):
            r = train_fold(
                tiny_model_cfg(), manifest, train_ids, val_ids, feature_fn,
                tiny_train_cfg(epochs=3),
            )
            curves.append([(s.train_loss, s.val_rmse) for s in r.curve])
        assert curves[0] == curves[1]

    def test_dropout_training_still_deterministic(self):
        manifest, feature_fn = toy_dataset(n=16)
        plan = make_folds(manifest, seed=2, n_folds=1)
        train_ids, val_ids = plan.folds[0]
        cfg = tiny_model_cfg(dropout=0.2)
        runs = [
            train_fold(cfg, manifest, train_ids, val_ids, feature_fn, tiny_train_cfg(epochs=2))
            for _ in range(2)
        ]
        assert [s.train_loss for s in runs[0].curve] == [s.train_loss for s in runs[1].curve]

    @pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:invalid value encountered:RuntimeWarning")
    def test_divergence_aborts_with_diagnostics(self):
        manifest, feature_fn = toy_dataset(n=12)
        plan = make_folds(manifest, seed=0, n_folds=1)
        train_ids, val_ids = plan.folds[0]
        with pytest.raises(TrainingDiverged, match=r"epoch \d+, batch \d+"):
            train_fold(
                tiny_model_cfg(), manifest, train_ids, val_ids, feature_fn,
                tiny_train_cfg(epochs=4, lr=1e18),
            )

    def test_empty_fold_rejected(self):
        manifest, feature_fn = toy_dataset(n=8)
        with pytest.raises(ContractError):
            train_fold(tiny_model_cfg(), manifest, [], ["c000"], feature_fn, tiny_train_cfg())

    def test_curve_csv_parses(self, fitted):
        text = curve_to_csv(fitted.curve)
        lines = text.strip().split("\n")
        assert lines[0] == "epoch,train_loss,val_rmse"
        assert len(lines) == 1 + len(fitted.curve)
        epoch, loss, vr = lines[1].split(",")
        assert int(epoch) == 0
        assert float(vr) == fitted.curve[0].val_rmse


class TestEnsemble:
    def test_member_count(self, trained):
        _, _, _, ens = trained
        assert len(ens.members) == 2 * 2
        assert ens.enhancers == ("identity", "alt")
        for name in ens.enhancers:
            assert sorted(m.fold for m in ens.members if m.enhancer == name) == [0, 1]

    def test_single_enhancer_reduces_to_kfold(self):
        manifest, feature_fn = toy_dataset(n=20)
        ens = train_ensemble(
            manifest,
            {"identity": EnhancerSpec("identity")},
            tiny_model_cfg(),
            tiny_train_cfg(epochs=2),
            stores={"identity": feature_fn},
        )
        assert len(ens.members) == 2

    def test_recorded_val_rmse_recomputable(self, trained):
        manifest, feature_fn, _, ens = trained
        cmap = manifest.clip_map()
        from sipredict.features import clip_input

        for m in ens.members:
            _, val_ids = ens.plan.folds[m.fold]
            preds = [m.model.predict(clip_input(cmap[i], feature_fn)) for i in val_ids]
            targets = [cmap[i].score for i in val_ids]
            assert rmse(preds, targets) == pytest.approx(m.val_rmse, abs=1e-6)

    def test_fold_seeds_are_independent(self, trained):
        _, _, _, ens = trained
        ident = [m for m in ens.members if m.enhancer == "identity"]
        a = ident[0].model.parameters()["head.weight"].data
        b = ident[1].model.parameters()["head.weight"].data
        assert not np.array_equal(a, b)

    def test_failure_names_enhancer_and_fold(self):
        manifest, feature_fn = toy_dataset(n=12)

        def broken(clip):
            raise OSError("no such feature blob")

        with pytest.raises(PredictorError, match="enhancer 'oracle' fold 0"):
            train_ensemble(
                manifest,
                {"oracle": EnhancerSpec("oracle_clean")},
                tiny_model_cfg(),
                tiny_train_cfg(epochs=1),
                stores={"oracle": broken},
            )

    def test_prediction_is_brute_force_mean(self, trained):
        manifest, feature_fn, stores, ens = trained
        from sipredict.features import clip_input

        clip = manifest.clips[0]
        inp = clip_input(clip, feature_fn)
        members = [m.model.predict(inp) for m in ens.members]
        assert predict_ensemble(ens, clip, stores) == pytest.approx(
            sum(members) / len(members), abs=1e-9
        )

    def test_prediction_member_order_invariant(self, trained):
        manifest, _, stores, ens = trained
        clip = manifest.clips[1]
        base = predict_ensemble(ens, clip, stores)
        shuffled = TrainedEnsemble(
            list(reversed(ens.members)), ens.plan, ens.model_config, ens.train_config
        )
        assert predict_ensemble(shuffled, clip, stores) == base

    def test_missing_store_names_member(self, trained):
        manifest, _, stores, ens = trained
        with pytest.raises(PredictionError, match="enhancer='alt'"):
            predict_ensemble(ens, manifest.clips[0], {"identity": stores["identity"]})

    def test_stub_members_average(self):
        members = [
            SimpleNamespace(enhancer="identity", fold=k, model=SimpleNamespace(predict=lambda inp, v=v: v))
            for k, v in enumerate((40.0, 50.0, 60.0))
        ]
        manifest, feature_fn = toy_dataset(n=6)
        plan = make_folds(manifest, seed=0, n_folds=1)
        ens = TrainedEnsemble(members, plan, tiny_model_cfg(), tiny_train_cfg())
        score = predict_ensemble(ens, manifest.clips[0], {"identity": feature_fn})
        assert score == 50.0

    def test_save_load_round_trip(self, trained, tmp_path):
        manifest, feature_fn, stores, ens = trained
        ens.save(tmp_path / "ens")
        back = TrainedEnsemble.load(tmp_path / "ens")
        assert [(m.enhancer, m.fold, m.val_rmse, m.best_epoch) for m in back.members] == [
            (m.enhancer, m.fold, m.val_rmse, m.best_epoch) for m in ens.members
        ]
        assert back.plan.folds == ens.plan.folds
        clip = manifest.clips[2]
        assert predict_ensemble(back, clip, stores) == predict_ensemble(ens, clip, stores)

    def test_identical_runs_save_identical_bytes(self, tmp_path):
        manifest, feature_fn = toy_dataset(n=14)
        for d in ("a", "b"):
            ens = train_ensemble(
                manifest,
                {"identity": EnhancerSpec("identity")},
                tiny_model_cfg(),
                tiny_train_cfg(epochs=2),
                stores={"identity": feature_fn},
            )
            ens.save(tmp_path / d)
        files_a = sorted((tmp_path / "a").iterdir())
        files_b = sorted((tmp_path / "b").iterdir())
        assert [f.name for f in files_a] == [f.name for f in files_b]
        for fa, fb in zip(files_a, files_b):
            assert fa.read_bytes() == fb.read_bytes(), fa.name

    def test_missing_index_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            TrainedEnsemble.load(tmp_path)


class TestLayerSweep:
    def test_informative_layer_wins(self, tmp_path):
        manifest = write_sweep_fixture(tmp_path)
        rows = layer_sweep(manifest, tiny_model_cfg(), tiny_train_cfg(epochs=2), sweep_epochs=4)
        assert len(rows) == 4
        assert [r.layer for r in rows] == [0, 1, 2, 3]
        best = [r.layer for r in rows if r.best]
        assert best == [2]
        assert rows[2].val_rmse == min(r.val_rmse for r in rows)

    def test_inconsistent_layer_counts(self, tmp_path):
        manifest = write_sweep_fixture(tmp_path, n_clips=6)
        rogue = np.zeros((7, 6, 4), dtype=np.float32)
        write_feature_file(tmp_path / "s000.sifb", rogue)
        with pytest.raises(ContractError, match="inconsistent layer counts"):
            layer_sweep(manifest, tiny_model_cfg(), tiny_train_cfg(), sweep_epochs=1)

    def test_audio_clip_rejected(self, tmp_path):
        manifest = write_sweep_fixture(tmp_path, n_clips=6)
        manifest.clips[0].features = {}
        with pytest.raises(ContractError, match="feature files"):
            layer_sweep(manifest, tiny_model_cfg(), tiny_train_cfg(), sweep_epochs=1)

    def test_csv_shape(self, tmp_path):
        manifest = write_sweep_fixture(tmp_path, n_clips=8, n_layers=2, signal_layer=1)
        rows = layer_sweep(manifest, tiny_model_cfg(), tiny_train_cfg(epochs=1), sweep_epochs=1)
        text = sweep_to_csv(rows)
        lines = text.strip().split("\n")
        assert lines[0] == "layer,val_rmse,best"
        assert len(lines) == 3


class TestEvaluate:
    def test_beats_mean_predictor_on_train_set(self, eval_setup):
        manifest, stores, ens = eval_setup
        report = evaluate(ens, manifest, stores)
        targets = np.array([c.score for c in manifest.clips])
        baseline = rmse(np.full_like(targets, targets.mean()), targets)
        assert report.rmse < baseline

    def test_report_recomputes_from_rows(self, eval_setup):
        manifest, stores, ens = eval_setup
        report = evaluate(ens, manifest, stores)
        assert report.n == len(manifest)
        preds = [r["prediction"] for r in report.rows]
        targets = [r["target"] for r in report.rows]
        assert report.rmse == pytest.approx(rmse(preds, targets), abs=1e-9)
        assert report.ncc == pytest.approx(ncc(preds, targets), abs=1e-9)

    def test_json_and_csv_shapes(self, eval_setup):
        manifest, stores, ens = eval_setup
        report = evaluate(ens, manifest, stores, model_id="m0")
        doc = json.loads(report.to_json())
        assert doc["model_id"] == "m0"
        assert doc["n"] == len(doc["rows"])
        lines = report.to_csv().strip().split("\n")
        assert lines[0] == "clip_id,target,prediction"
        assert len(lines) == 1 + report.n
        cid, target, pred = lines[1].split(",")
        assert cid == report.rows[0]["clip_id"]
        assert float(pred) == report.rows[0]["prediction"]

    def test_deterministic_output(self, eval_setup):
        manifest, stores, ens = eval_setup
        a = evaluate(ens, manifest, stores).to_json()
        b = evaluate(ens, manifest, stores).to_json()
        assert a == b

    def test_per_clip_failures_collected(self, eval_setup):
        manifest, stores, ens = eval_setup
        good = stores["identity"]

        def flaky(clip):
            if clip.clip_id == manifest.clips[3].clip_id:
                raise OSError("unreadable")
            return good(clip)

        report = evaluate(ens, manifest, {"identity": flaky})
        assert len(report.failures) == 1
        assert report.failures[0]["clip_id"] == manifest.clips[3].clip_id
        assert "OSError" in report.failures[0]["error"]
        assert report.n == len(manifest) - 1
        assert report.rmse is not None

    def test_empty_manifest_rejected(self, eval_setup):
        _, stores, ens = eval_setup
        with pytest.raises(ContractError, match="empty"):
            evaluate(ens, Manifest("none", []), stores)
