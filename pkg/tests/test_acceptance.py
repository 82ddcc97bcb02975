"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The synthetic experiment (criteria 6 and 7) uses a fixed cohort recipe:
10 subjects, 2 imagery classes, 8 trials per class, 4 electrodes x 64 steps,
snr 0.8, subject shift 0.3, subjects {3, 7} noisy, evaluated over master
seeds 1..5 with the default training recipe (tau=0.2, t_k=10, 30 epochs,
b=8, Adam at lr 0.01 with cosine annealing).
"""

import itertools
import math

import numpy as np

from ctss.cli import main
from ctss.coteaching import (
    CoteachConfig,
    SubjectBatcher,
    cross_update_step,
    init_coteach_state,
    per_subject_loss_sums,
    remember_rate,
    select_small_loss_subjects,
    train_coteaching,
)
from ctss.data import (
    GeneratorConfig,
    augment_rest_class,
    generate_cohort,
    loso_split,
    train_val_split,
)
from ctss.evaluate import (
    final_epoch_window,
    run_loso,
    selection_frequency_report,
    train_baseline,
)
from ctss.metrics import balanced_accuracy, confusion_matrix
from ctss.models import ModelConfig, build_mini_resnet1d
from ctss.seeding import derive_seed
from ctss.tensor import (
    Tape,
    adaptive_avg_pool1d,
    add,
    conv1d,
    elu,
    linear,
    maxpool1d,
    reshape,
    softmax_cross_entropy,
)
from gradcheck import probe_gradients, random_tensor

MASTER_SEEDS = (1, 2, 3, 4, 5)


def experiment_generator(master_seed: int) -> GeneratorConfig:
    return GeneratorConfig(
        n_subjects=10, n_imagery_classes=2, trials_per_class=8,
        n_electrodes=4, n_timesteps=64, snr=0.8, subject_shift_scale=0.3,
        noisy_subject_ids=(3, 7), seed=derive_seed(master_seed, "cohort"),
    )


def experiment_model_config() -> ModelConfig:
    return ModelConfig(n_electrodes=4, n_timesteps=64, n_classes=3,
                       width_base=4, n_blocks=1, seed=0)


def default_training(seed: int = 0) -> CoteachConfig:
    return CoteachConfig(tau=0.2, t_k=10, t_max=30, b=8, lr=0.01, seed=seed)


def report(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[acceptance {number:02d}] {name}: {status}{suffix}", flush=True)
    assert ok, f"criterion {number} failed{suffix}"


def test_c01_schedule_exactness():
    worst = 0.0
    for t in range(51):
        expected = 1.0 - min(t / 10 * 0.2, 0.2)
        worst = max(worst, abs(remember_rate(t, 10, 0.2) - expected))
    at_plateau = remember_rate(10, 10, 0.2)
    ok = worst <= 1e-12 and abs(at_plateau - 0.8) <= 1e-12
    report(1, "schedule exactness", ok, f"max deviation {worst:.2e}, R(10)={at_plateau}")


def test_c02_selection_matches_bruteforce():
    rng = np.random.default_rng(20240817)
    failures = 0
    for trial in range(1000):
        n = int(rng.integers(1, 13))
        sums = rng.normal(size=n) * float(rng.uniform(0.5, 20.0))
        if trial % 7 == 0 and n >= 3:
            sums[1] = sums[0]  # exercise the tie rule
        r = float(rng.uniform(0.01, 1.0))
        k = min(math.ceil(r * n), n)
        best = min(itertools.combinations(range(n), k),
                   key=lambda c: (sum(sums[i] for i in c), c))
        if select_small_loss_subjects(sums, r) != sorted(best):
            failures += 1
    report(2, "small-loss selection equals exhaustive subset search",
           failures == 0, f"{failures}/1000 mismatches")


def test_c03_gradient_correctness():
    rng = np.random.default_rng(31337)
    worst_primitive = 0.0

    def run_check(value_fn, out, tape, tensors):
        tape.backward(np.ones_like(out.data), output=out)
        grads = [tape.grad(t) for t in tensors]
        return probe_gradients(value_fn, tensors, grads, rng, n_probes=20)

    x = random_tensor(rng, (2, 3, 14))
    k = random_tensor(rng, (4, 3, 5))
    kb = random_tensor(rng, (4,))
    tape = Tape()
    out = conv1d(x, k, kb, stride=2, padding=2, tape=tape)
    worst_primitive = max(worst_primitive, run_check(
        lambda: float(conv1d(x, k, kb, stride=2, padding=2).data.sum()), out, tape, [x, k, kb]))

    x = random_tensor(rng, (6, 9))
    tape = Tape()
    out = elu(x, tape=tape)
    worst_primitive = max(worst_primitive, run_check(
        lambda: float(elu(x).data.sum()), out, tape, [x]))

    x = random_tensor(rng, (2, 3, 17))
    tape = Tape()
    out = maxpool1d(x, 4, 3, tape=tape)
    worst_primitive = max(worst_primitive, run_check(
        lambda: float(maxpool1d(x, 4, 3).data.sum()), out, tape, [x]))

    x = random_tensor(rng, (2, 3, 13))
    tape = Tape()
    out = adaptive_avg_pool1d(x, 5, tape=tape)
    worst_primitive = max(worst_primitive, run_check(
        lambda: float(adaptive_avg_pool1d(x, 5).data.sum()), out, tape, [x]))

    x = random_tensor(rng, (5, 7))
    w = random_tensor(rng, (4, 7))
    wb = random_tensor(rng, (4,))
    tape = Tape()
    out = linear(x, w, wb, tape=tape)
    worst_primitive = max(worst_primitive, run_check(
        lambda: float(linear(x, w, wb).data.sum()), out, tape, [x, w, wb]))

    a = random_tensor(rng, (3, 6))
    b = random_tensor(rng, (3, 6))
    tape = Tape()
    out = add(a, b, tape=tape)
    worst_primitive = max(worst_primitive, run_check(
        lambda: float(add(a, b).data.sum()), out, tape, [a, b]))

    x = random_tensor(rng, (2, 3, 4))
    tape = Tape()
    out = reshape(x, (2, 12), tape=tape)
    worst_primitive = max(worst_primitive, run_check(
        lambda: float(reshape(x, (2, 12)).data.sum()), out, tape, [x]))

    logits = random_tensor(rng, (6, 4))
    labels = rng.integers(0, 4, size=6)
    _, grad = softmax_cross_entropy(logits, labels)

    def ce_value():
        losses, _ = softmax_cross_entropy(logits, labels)
        return float(losses.data.sum())

    worst_primitive = max(worst_primitive,
                          probe_gradients(ce_value, [logits], [grad.data], rng, n_probes=20))

    # full backbone, all four stages including both max pools
    cfg = ModelConfig(n_electrodes=2, n_timesteps=512, n_classes=3,
                      width_base=2, n_blocks=4, seed=77)
    model = build_mini_resnet1d(cfg)
    xin = random_tensor(rng, (2, 2, 512))
    batch_labels = np.array([0, 2])

    def net_value():
        losses, _ = softmax_cross_entropy(model.forward(xin), batch_labels)
        return float(losses.data.mean())

    tape = Tape()
    logits = model.forward(xin, tape)
    _, grad = softmax_cross_entropy(logits, batch_labels)
    tape.backward(grad.data / 2, output=logits)
    params = model.parameters()
    grads = [tape.grad(p) for p in params]
    worst_net = probe_gradients(net_value, params, grads, rng, n_probes=25)

    ok = worst_primitive < 1e-4 and worst_net < 1e-3
    report(3, "finite-difference gradient checks", ok,
           f"primitives {worst_primitive:.2e} < 1e-4, backbone {worst_net:.2e} < 1e-3")


def test_c04_full_retention_reduces_to_baseline():
    gen = GeneratorConfig(n_subjects=3, n_imagery_classes=2, trials_per_class=6,
                          n_electrodes=2, n_timesteps=32, snr=1.0,
                          subject_shift_scale=0.3, noisy_subject_ids=(), seed=404)
    cohort = [augment_rest_class(ds, gen) for ds in generate_cohort(gen)]
    train, val = train_val_split(cohort, 0.9, seed=1)
    mc = ModelConfig(n_electrodes=2, n_timesteps=32, n_classes=3,
                     width_base=2, n_blocks=1, seed=0)
    cc = CoteachConfig(tau=0.0, t_k=10, t_max=3, b=8, lr=0.01, seed=55)

    snaps: dict[str, list] = {"f": [], "baseline": []}
    train_coteaching(train, val, mc, cc, epoch_callback=lambda t, models:
                     snaps["f"].append([p.data.copy() for p in models["f"].parameters()]))
    train_baseline(train, val, mc, cc, epoch_callback=lambda t, models:
                   snaps["baseline"].append([p.data.copy() for p in models["baseline"].parameters()]))

    identical = len(snaps["f"]) == len(snaps["baseline"]) == 3 and all(
        np.array_equal(p, q)
        for sf, sb in zip(snaps["f"], snaps["baseline"])
        for p, q in zip(sf, sb)
    )
    report(4, "R=1 co-teaching trajectory is bitwise the plain baseline",
           identical, "3 epochs, 3-subject cohort")


def test_c05_sgd_single_step_oracle():
    gen = GeneratorConfig(n_subjects=4, n_imagery_classes=2, trials_per_class=5,
                          n_electrodes=2, n_timesteps=32, snr=1.0,
                          subject_shift_scale=0.3, noisy_subject_ids=(), seed=505)
    cohort = [augment_rest_class(ds, gen) for ds in generate_cohort(gen)]
    mc = ModelConfig(n_electrodes=2, n_timesteps=32, n_classes=3,
                     width_base=2, n_blocks=1, seed=0)
    cc = CoteachConfig(optimizer="sgd", seed=66)
    state = init_coteach_state(mc, cc)
    batch = SubjectBatcher(cohort, 3, np.random.default_rng(9)).next_batch()
    lr, r = 0.05, 0.5

    before = [p.data.copy() for p in state.model_f.parameters()]
    pos_g = select_small_loss_subjects(per_subject_loss_sums(state.model_g, batch), r)
    trials_g, labels_g = batch.subset(pos_g)
    probe = state.model_f.clone()
    tape = Tape()
    logits = probe.forward(trials_g, tape)
    _, grad = softmax_cross_entropy(logits, labels_g)
    tape.backward(grad.data / labels_g.shape[0], output=logits)
    expected = [b - lr * tape.grad(p) for b, p in zip(before, probe.parameters())]

    cross_update_step(state, batch, lr, r)
    worst = max(float(np.max(np.abs(p.data - e)))
                for p, e in zip(state.model_f.parameters(), expected))
    report(5, "single SGD cross-update equals -lr times the peer-batch gradient",
           worst <= 1e-10, f"max deviation {worst:.2e}")


def run_exclusion_experiment(master_seed: int):
    gen = experiment_generator(master_seed)
    cohort = [augment_rest_class(ds, gen) for ds in generate_cohort(gen)]
    train, val = train_val_split(cohort, 0.9, derive_seed(master_seed, "split"))
    cc = default_training(seed=derive_seed(master_seed, "train"))
    result = train_coteaching(train, val, experiment_model_config(), cc)
    rep = selection_frequency_report(result.logs.selection_records,
                                     final_epoch_window(cc.t_max))
    noisy = float(np.mean([rep[s]["pooled"] for s in gen.noisy_subject_ids]))
    clean = float(np.mean([rep[s]["pooled"] for s in rep
                           if s not in gen.noisy_subject_ids]))
    return noisy, clean


def test_c06_noisy_subjects_get_dropped():
    gaps = []
    for seed in MASTER_SEEDS:
        noisy, clean = run_exclusion_experiment(seed)
        gaps.append(clean - noisy)
    hits = sum(gap >= 0.25 for gap in gaps)
    detail = ", ".join(f"seed {s}: gap {g:+.3f}" for s, g in zip(MASTER_SEEDS, gaps))
    report(6, "noisy subjects selected far less often in the final window",
           hits >= 4, f"{hits}/5 seeds with gap >= 0.25; {detail}")


def test_c07_generalization_improvement():
    diffs = []
    for seed in MASTER_SEEDS:
        gen = experiment_generator(seed)
        cohort = generate_cohort(gen)
        mc = experiment_model_config()
        cc = default_training(seed=0)
        scores = {}
        for method in ("coteach", "baseline"):
            run = run_loso(cohort, method, mc, cc, gen, master_seed=seed)
            scores[method] = run.summary.mean_balanced_accuracy
        diffs.append(scores["coteach"] - scores["baseline"])
    wins = sum(d >= 0 for d in diffs)
    pooled = float(np.mean(diffs))
    detail = ", ".join(f"seed {s}: {d:+.4f}" for s, d in zip(MASTER_SEEDS, diffs))
    report(7, "co-teaching beats the plain baseline on held-out subjects",
           wins >= 4 and pooled > 0, f"{wins}/5 wins, pooled {pooled:+.4f}; {detail}")


def test_c08_protocol_counting():
    gen = GeneratorConfig(n_subjects=15, n_imagery_classes=3, trials_per_class=50,
                          n_electrodes=2, n_timesteps=32, snr=1.0,
                          subject_shift_scale=0.3, noisy_subject_ids=(), seed=808)
    cohort = generate_cohort(gen)
    ds = cohort[0]
    aug = augment_rest_class(ds, gen)
    counts_ok = (ds.n_trials == 150 and aug.n_trials == 300
                 and len(np.unique(ds.labels)) == 3 and len(np.unique(aug.labels)) == 4)

    folds_ok = True
    for target in range(15):
        source, test = loso_split(cohort, target)
        folds_ok &= len(source) == 14 and test.subject_id == target

    small_gen = GeneratorConfig(n_subjects=4, n_imagery_classes=2, trials_per_class=6,
                                n_electrodes=2, n_timesteps=32, snr=1.0,
                                subject_shift_scale=0.3, noisy_subject_ids=(), seed=81)
    small = [augment_rest_class(d, small_gen) for d in generate_cohort(small_gen)]
    train, val = train_val_split(small, 0.9, seed=0)
    mc = ModelConfig(n_electrodes=2, n_timesteps=32, n_classes=3,
                     width_base=2, n_blocks=1, seed=0)
    cc = CoteachConfig(t_max=2, b=4, seed=3)
    result = train_coteaching(train, val, mc, cc)
    n = len(train)
    batches_ok = bool(result.logs.selection_records) and all(
        len(rec.loss_sums) == n for rec in result.logs.selection_records)
    batcher = SubjectBatcher(train, 4, np.random.default_rng(0))
    for _ in range(5):
        batch = batcher.next_batch()
        batches_ok &= batch.total_samples == 4 * n

    ok = counts_ok and folds_ok and batches_ok
    report(8, "augmentation, fold, and batch counting protocol",
           ok, "150/3 -> 300/4; 15 folds x 14 sources; B = b*N")


def test_c09_rerun_determinism(tmp_path):
    config = tmp_path / "experiment.ini"
    config.write_text("""
[generator]
n_subjects = 3
n_imagery_classes = 2
trials_per_class = 5
n_electrodes = 2
n_timesteps = 32
snr = 0.8
subject_shift_scale = 0.3
noisy_subject_ids = 1
seed = 99

[model]
width_base = 2
n_blocks = 1

[coteach]
t_max = 3
b = 4

[run]
method = coteach
master_seed = 17
""")
    out1, out2 = tmp_path / "first", tmp_path / "second"
    rc1 = main(["run", "--config", str(config), "--out", str(out1)])
    rc2 = main(["run", "--config", str(config), "--out", str(out2)])

    same = rc1 == rc2 == 0
    same &= (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()
    logs1 = sorted(out1.glob("fold_*/selections.jsonl"))
    same &= len(logs1) == 3
    for log in logs1:
        twin = out2 / log.relative_to(out1)
        same &= log.read_bytes() == twin.read_bytes()
    report(9, "repeated runs produce byte-identical results and logs", same)


def test_c10_metric_oracle():
    rng = np.random.default_rng(1010)
    worst = 0.0
    for _ in range(1000):
        c = int(rng.integers(2, 8))
        cm = rng.integers(0, 40, size=(c, c))
        cm[np.arange(c), rng.integers(0, c, size=c)] += 1  # positive row sums
        recalls = [cm[i, i] / cm[i].sum() for i in range(c)]
        worst = max(worst, abs(balanced_accuracy(cm) - sum(recalls) / c))

    y_true = np.repeat(np.arange(5), 200)
    y_pred = np.random.default_rng(3).integers(0, 5, size=y_true.size)
    cm = confusion_matrix(y_true, y_pred, 5)
    balanced_vs_plain = abs(balanced_accuracy(cm) - float(np.mean(y_true == y_pred)))

    ok = worst <= 1e-12 and balanced_vs_plain <= 1e-12
    report(10, "balanced accuracy equals independent per-class recall mean",
           ok, f"max deviation {worst:.2e}; balanced-vs-plain {balanced_vs_plain:.2e}")
