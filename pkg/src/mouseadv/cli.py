"""Command-line entry points.

Every command takes ``--config`` (JSON), ``--seed`` and ``--out``; explicit
flags override config-file values, which override defaults. The effective
configuration is written next to the outputs as ``<command>.config.json``.
Failures exit non-zero after printing one line ``error[<category>]: <msg>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import auth, evalrig, ingest, pipeline
from .attacks import imitation as im
from .attacks import surrogate as su
from .gradcore import read_checkpoint, write_checkpoint
from .ingest import VEL

logger = logging.getLogger("mouseadv")

EXIT_INTERNAL, EXIT_MISSING, EXIT_INVALID, EXIT_MODEL = 1, 2, 3, 4


@dataclass
class RunConfig:
    # data
    root: str | None = None
    format: str = "canonical"
    dataset: str = ""
    users: list[str] | None = None
    seqlen: int = 50
    gap: float = ingest.DEFAULT_GAP_S
    augment_n: int = 10
    augment_deg: float = 5.0
    # synthesis
    n_users: int = 5
    sessions: int = 10
    moves: int = 40
    # authenticators
    model: str = "1DCNN"
    cnn_lr: float = 3e-3
    cnn_epochs: int = 30
    svm_epochs: int = 400
    # attacks
    n_samples: int = 1000
    dv_bins: list[int] = field(default_factory=lambda: [64, 64])
    start_bins: list[int] = field(default_factory=lambda: [32, 32])
    rep: str = im.DV
    reg: str = im.REG_NONE
    reg_weight: float = 0.1
    method: str = "start_point"
    gen_lr: float = 1e-3
    gen_epochs: int = 60
    arch: str = su.FC
    sur_lr: float = su.SurHyper.lr
    sur_epochs: int = 60
    epsilon: float = 0.001
    iterations: int = su.FgsmConfig.iterations
    # evaluation
    margin: float = 0.2
    shift_margin: float = 0.0
    # run
    seed: int = 0
    out: str = "out"

    def prep_config(self) -> pipeline.PrepConfig:
        return pipeline.PrepConfig(self.seqlen, self.gap, self.augment_n, self.augment_deg)

    def cnn_hyper(self) -> auth.CnnHyper:
        return auth.CnnHyper(lr=self.cnn_lr, epochs=self.cnn_epochs)


CONFIG_KEYS = {f.name for f in fields(RunConfig)}


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int):
        super().__init__(message)
        self.category = category
        self.code = code


def effective_config(args: argparse.Namespace) -> RunConfig:
    values = asdict(RunConfig())
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file {path} not found")
        loaded = json.loads(path.read_text(encoding="utf-8"))
        unknown = set(loaded) - CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        values.update(loaded)
    for k in CONFIG_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    return RunConfig(**values)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _echo_config(cfg: RunConfig, command: str, extra: dict | None = None) -> None:
    _write_json(Path(cfg.out) / f"{command}.config.json", {"command": command, **asdict(cfg), **(extra or {})})


def _users(p: pipeline.Prepared, cfg: RunConfig) -> list[str]:
    if not cfg.users:
        return p.users
    missing = sorted(set(cfg.users) - set(p.users))
    if missing:
        raise ValueError(f"users not in the prepared data: {missing}")
    return [u for u in p.users if u in cfg.users]


def _dataset_label(p_root: str | Path, cfg: RunConfig) -> str:
    if cfg.dataset:
        return cfg.dataset
    m = Path(p_root) / "manifest.json"
    if m.is_file():
        return json.loads(m.read_text(encoding="utf-8")).get("dataset") or Path(p_root).name
    return Path(p_root).name


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise ValueError(f"missing required --{what}")
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} {p} not found")
    return p


def _report(cfg: RunConfig, name: str, records: Sequence[evalrig.EvalRecord]) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    evalrig.write_report(records, out / f"{name}.json", out / f"{name}.csv")


def _seed_for(master: int, index: int) -> int:
    """Independent sub-run seed from (master seed, setting index)."""
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


# -- commands ----------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> None:
    sessions = ingest.synth_users(cfg.n_users, cfg.sessions, cfg.seed, cfg.moves, cfg.dataset or "synth")
    ingest.save_dataset(sessions, cfg.out)
    _echo_config(cfg, "synth")


def cmd_prep(cfg: RunConfig, args: argparse.Namespace) -> None:
    root = _require(cfg.root, "root")
    sessions = ingest.load_dataset(root, cfg.format, cfg.dataset or root.name)
    if not sessions:
        raise ValueError(f"no sessions under {root}")
    if cfg.users:
        sessions = [s for s in sessions if s.user_id in cfg.users]
    p = pipeline.prepare(sessions, cfg.seed, cfg.prep_config())
    pipeline.save_prepared(p, cfg.out, cfg.seed, cfg.dataset or root.name)
    _echo_config(cfg, "prep")


def _model_path(models: Path, kind: str, user: str) -> Path:
    return models / kind / f"{user}.json"


def _load_model(models: Path, kind: str, user: str):
    path = _model_path(models, kind, user)
    if not path.is_file():
        raise FileNotFoundError(f"no {kind} checkpoint for {user} at {path}")
    return auth.load_model(read_checkpoint(path))


def cmd_train_auth(cfg: RunConfig, args: argparse.Namespace) -> None:
    prep = _require(args.prep, "prep")
    p = pipeline.load_prepared(prep)
    ds = _dataset_label(prep, cfg)
    records = []
    for i, user in enumerate(_users(p, cfg)):
        ua = pipeline.train_user_authenticator(
            p, user, cfg.model, seed=_seed_for(cfg.seed, i), cnn_hyper=cfg.cnn_hyper(), svm_epochs=cfg.svm_epochs, evaluate_on=None
        )
        write_checkpoint(ua.model.to_checkpoint(), _model_path(Path(cfg.out), cfg.model, user))
        for metric in ("auc", "eer"):
            records.append(evalrig.record(ds, user, cfg.model, "none", {"part": "validation"}, f"val_{metric}", getattr(ua.val_roc, metric), cfg.seed))
    _report(cfg, f"train_auth_{cfg.model}", records)
    _echo_config(cfg, "train-auth")


def cmd_eval_auth(cfg: RunConfig, args: argparse.Namespace) -> None:
    prep = _require(args.prep, "prep")
    models = _require(args.models, "models")
    p = pipeline.load_prepared(prep)
    ds = _dataset_label(prep, cfg)
    records = []
    out = Path(cfg.out)
    for user in _users(p, cfg):
        m = _load_model(models, cfg.model, user)
        roc = auth.evaluate(m, p.of_user("auth_test", user), p.of_others("auth_test", user))
        d = out / "roc" / cfg.model
        d.mkdir(parents=True, exist_ok=True)
        roc.write_csv(d / f"{user}.csv")
        roc.write_json(d / f"{user}.json")
        for metric in ("auc", "eer"):
            records.append(evalrig.record(ds, user, cfg.model, "none", {"part": "auth_test"}, metric, getattr(roc, metric), cfg.seed))
    _report(cfg, f"eval_auth_{cfg.model}", records)
    evalrig.write_table(records, "I", out / f"table_I_{cfg.model}.csv")
    _echo_config(cfg, "eval-auth")


def _write_samples(root: Path, attack: str, setting: str, samples_by_user: dict[str, list], settings: dict) -> Path:
    d = root / attack / setting
    for user, samples in samples_by_user.items():
        ingest.save_dataset(samples, d)
    _write_json(d.parent / f"{setting}.settings.json", {"attack": attack, **settings})
    return d


def cmd_attack_stats(cfg: RunConfig, args: argparse.Namespace) -> None:
    prep = _require(args.prep, "prep")
    p = pipeline.load_prepared(prep)
    by_user = {}
    for i, user in enumerate(_users(p, cfg)):
        by_user[user] = pipeline.run_stats_attack(
            p, user, cfg.n_samples, _seed_for(cfg.seed, i), dv_bins=tuple(cfg.dv_bins), start_bins=tuple(cfg.start_bins)
        )
    settings = {"length": cfg.seqlen + 1, "dv_bins": cfg.dv_bins, "start_bins": cfg.start_bins, "n": cfg.n_samples, "seed": cfg.seed}
    _write_samples(Path(cfg.out), "stats", f"len{cfg.seqlen + 1}", by_user, settings)
    _echo_config(cfg, "attack-stats")


def cmd_attack_imitate(cfg: RunConfig, args: argparse.Namespace) -> None:
    prep = _require(args.prep, "prep")
    p = pipeline.load_prepared(prep)
    gcfg = im.GeneratorConfig(rep_kind=cfg.rep, reg_kind=cfg.reg, seqlen=cfg.seqlen, reg_weight=cfg.reg_weight)
    hyper = im.GenHyper(lr=cfg.gen_lr, epochs=cfg.gen_epochs)
    setting = f"{cfg.rep}-{cfg.reg}-{cfg.seqlen}-{cfg.method}"
    pool = None
    if cfg.reg == im.REG_CLUSTER:
        # the k-means population: every user's attacker-side windows
        pool = [r for t in p.parts["attacker_train"] for r in ingest.to_rep(t, VEL, cfg.seqlen)]
    by_user = {}
    for i, user in enumerate(_users(p, cfg)):
        samples, g = pipeline.run_imitation_attack(p, user, gcfg, cfg.n_samples, _seed_for(cfg.seed, i), cfg.method, hyper, pool)
        by_user[user] = samples
        write_checkpoint(g.to_checkpoint(), Path(cfg.out) / "generators" / setting / f"{user}.json")
    settings = {"rep": cfg.rep, "reg": cfg.reg, "seqlen": cfg.seqlen, "method": cfg.method, "n": cfg.n_samples, "seed": cfg.seed}
    _write_samples(Path(cfg.out), "imitation", setting, by_user, settings)
    _echo_config(cfg, "attack-imitate")


def cmd_attack_surrogate(cfg: RunConfig, args: argparse.Namespace) -> None:
    prep = _require(args.prep, "prep")
    neg = _require(args.neg, "neg")
    p = pipeline.load_prepared(prep)
    other = pipeline.load_prepared(neg)
    ds = _dataset_label(prep, cfg)
    hyper = su.SurHyper(lr=cfg.sur_lr, epochs=cfg.sur_epochs)
    setting = f"{cfg.arch}-eps{cfg.epsilon:g}-it{cfg.iterations}"
    by_user, records = {}, []
    for i, user in enumerate(_users(p, cfg)):
        pos = pipeline.attacker_reps(p, user, VEL, augmented=True)
        fg = su.FgsmConfig.from_data(pos, epsilon=cfg.epsilon, iterations=cfg.iterations)
        adv, s, trace = pipeline.run_surrogate_attack(p, other, user, cfg.arch, cfg.n_samples, _seed_for(cfg.seed, i), fg, hyper)
        by_user[user] = [_relabel(ingest.from_rep(r), user, f"sur{k:05d}") for k, r in enumerate(adv)]
        self_asr = float(np.mean(trace.logp[-1] >= np.log(0.5))) if len(adv) else 0.0
        st = {"arch": cfg.arch, "epsilon": cfg.epsilon, "iterations": cfg.iterations}
        records.append(evalrig.record(ds, user, cfg.arch, "surrogate", st, "self_asr", self_asr, cfg.seed))
        records.append(evalrig.record(ds, user, cfg.arch, "surrogate", st, "heldout_accuracy", s.heldout_accuracy or 0.0, cfg.seed))
    settings = {"arch": cfg.arch, "epsilon": cfg.epsilon, "iterations": cfg.iterations, "n": cfg.n_samples, "seed": cfg.seed, "neg": str(neg)}
    _write_samples(Path(cfg.out), "surrogate", setting, by_user, settings)
    _report(cfg, f"surrogate_{setting}", records)
    evalrig.write_table(records, "VI", Path(cfg.out) / f"table_VI_{setting}.csv")
    _echo_config(cfg, "attack-surrogate")


def _relabel(t: ingest.Trajectory, user: str, session: str) -> ingest.Trajectory:
    return ingest.Trajectory(t.ts, t.xy, user, session, dict(t.meta))


def _sample_settings(samples: Path) -> dict:
    side = samples.parent / f"{samples.name}.settings.json"
    if not side.is_file():
        raise FileNotFoundError(f"settings sidecar {side} not found")
    return json.loads(side.read_text(encoding="utf-8"))


def cmd_asr(cfg: RunConfig, args: argparse.Namespace) -> None:
    models = _require(args.models, "models")
    samples = _require(args.samples, "samples")
    settings = _sample_settings(samples)
    attack = settings.pop("attack")
    gen = ingest.load_dataset(samples)
    users = sorted({t.user_id for t in gen})
    if cfg.users:
        users = [u for u in users if u in cfg.users]
    records = []
    for user in users:
        m = _load_model(models, cfg.model, user)
        res = evalrig.asr(m, [t for t in gen if t.user_id == user], cfg.n_samples, cfg.seed)
        records.append(evalrig.record(cfg.dataset or "", user, cfg.model, attack, settings, "asr", res.asr, cfg.seed))
    name = f"asr_{attack}_{samples.name}_{cfg.model}"
    _report(cfg, name, records)
    table_id = {"stats": "III", "imitation": "IV", "surrogate": "VII"}[attack]
    evalrig.write_table(records, table_id, Path(cfg.out) / f"table_{table_id}_{samples.name}_{cfg.model}.csv")
    _echo_config(cfg, "asr", {"samples": str(samples), "models": str(models)})


def cmd_wilcoxon(cfg: RunConfig, args: argparse.Namespace) -> None:
    if args.pairs:
        rows = np.loadtxt(_require(args.pairs, "pairs"), delimiter=",", ndmin=2)
        pairs = [(float(a), float(b)) for a, b in rows[:, :2]]
    else:
        if not args.a or not args.b:
            raise ValueError("give --pairs or both --a and --b reports")
        ra = {_pair_key(r): r.value for r in evalrig.read_report(_require(args.a, "a")) if r.metric == "asr"}
        rb = {_pair_key(r): r.value for r in evalrig.read_report(_require(args.b, "b")) if r.metric == "asr"}
        keys = sorted(set(ra) & set(rb))
        if not keys:
            raise ValueError("the two reports share no (dataset, user, model, seed) cells")
        pairs = [(ra[k], rb[k]) for k in keys]
    res = evalrig.wilcoxon(pairs)
    comparison = args.comparison or "a vs b"
    out = Path(cfg.out)
    _write_json(out / "wilcoxon.json", {"comparison": comparison, **asdict(res)})
    rec = [evalrig.record(cfg.dataset, "", "", "none", {"comparison": comparison, "n_pairs": res.n_pairs}, "wilcoxon_z", res.z, cfg.seed)]
    _report(cfg, "wilcoxon_report", rec)
    evalrig.write_table(rec, "V", out / "table_V.csv")
    _echo_config(cfg, "wilcoxon")


def _pair_key(r: evalrig.EvalRecord) -> tuple:
    return (r.dataset, r.user, r.model, r.seed)


def cmd_detect(cfg: RunConfig, args: argparse.Namespace) -> None:
    prep = _require(args.prep, "prep")
    models = _require(args.models, "models")
    p = pipeline.load_prepared(prep)
    ds = _dataset_label(prep, cfg)
    kinds = [k.strip() for k in args.ensemble.split(",") if k.strip()]
    if len(kinds) < 2:
        raise ValueError("--ensemble needs at least two model kinds")
    users = _users(p, cfg)
    ensembles = {u: {k: _load_model(models, k, u) for k in kinds} for u in users}
    clean = {u: p.of_user("auth_test", u) for u in users}
    if args.shift:
        streams = {u: evalrig.covariate_shift(clean[u], (args.shift_min, args.shift_max), _seed_for(cfg.seed, i)) for i, u in enumerate(users)}
        setting = "Covariate shift"
    else:
        samples = _require(args.stream, "stream")
        loaded = ingest.load_dataset(samples)
        streams = {u: [t for t in loaded if t.user_id == u] for u in users}
        setting = args.label or samples.name
    base = evalrig.pooled_alert_rates(ensembles, clean)
    rep = evalrig.detection_run_pooled(ensembles, streams, _seed_for(cfg.seed, 1000), cfg.margin, base, cfg.shift_margin)
    records = []
    for k in kinds:
        records.append(evalrig.record(ds, "all", k, "detect", {"setting": setting}, "alert_rate", rep.rates[k], cfg.seed))
        records.append(evalrig.record(ds, "all", k, "detect", {"setting": "Clean baseline"}, "alert_rate", base[k], cfg.seed))
    out = Path(cfg.out)
    _write_json(out / "detection.json", {"users": users, **rep.to_dict()})
    _report(cfg, "detect_report", records)
    evalrig.write_table(records, "VIII", out / "table_VIII.csv")
    _echo_config(cfg, "detect")


def cmd_report(cfg: RunConfig, args: argparse.Namespace) -> None:
    records = []
    for path in args.reports:
        records += evalrig.read_report(_require(path, "reports"))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for tid in evalrig.TABLES:
        rows = evalrig.table(records, tid)
        if len(rows) > 1:
            evalrig.write_table(records, tid, out / f"table_{tid}.csv")
            written.append(tid)
    evalrig.write_report(records, out / "report.json", out / "report.csv")
    _echo_config(cfg, "report", {"tables": written})


COMMANDS = {
    "synth": cmd_synth,
    "prep": cmd_prep,
    "train-auth": cmd_train_auth,
    "eval-auth": cmd_eval_auth,
    "attack-stats": cmd_attack_stats,
    "attack-imitate": cmd_attack_imitate,
    "attack-surrogate": cmd_attack_surrogate,
    "asr": cmd_asr,
    "wilcoxon": cmd_wilcoxon,
    "detect": cmd_detect,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mouseadv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", help="JSON file with RunConfig values")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--users", type=lambda s: [u for u in s.split(",") if u], help="comma-separated user ids")
        sp.add_argument("--dataset", help="dataset label used in reports")

    sp = sub.add_parser("synth", help="write a synthetic dataset")
    common(sp)
    sp.add_argument("--n-users", dest="n_users", type=int)
    sp.add_argument("--sessions", type=int)
    sp.add_argument("--moves", type=int)

    sp = sub.add_parser("prep", help="clean, split, normalize, window and augment a dataset")
    common(sp)
    sp.add_argument("--root")
    sp.add_argument("--format", choices=sorted(ingest.FORMATS))
    sp.add_argument("--seqlen", type=int)
    sp.add_argument("--gap", type=float)
    sp.add_argument("--augment-n", dest="augment_n", type=int)
    sp.add_argument("--augment-deg", dest="augment_deg", type=float)

    for name, hlp in (("train-auth", "train per-user authenticators"), ("eval-auth", "evaluate authenticators on auth_test")):
        sp = sub.add_parser(name, help=hlp)
        common(sp)
        sp.add_argument("--prep", required=True)
        sp.add_argument("--model", choices=["SVM", "1DCNN"])
        if name == "eval-auth":
            sp.add_argument("--models", required=True)
        else:
            sp.add_argument("--cnn-lr", dest="cnn_lr", type=float)
            sp.add_argument("--cnn-epochs", dest="cnn_epochs", type=int)
            sp.add_argument("--svm-epochs", dest="svm_epochs", type=int)

    sp = sub.add_parser("attack-stats", help="statistics-based attack samples")
    common(sp)
    sp.add_argument("--prep", required=True)
    sp.add_argument("--n-samples", dest="n_samples", type=int)
    sp.add_argument("--dv-bins", dest="dv_bins", type=int, nargs=2)
    sp.add_argument("--start-bins", dest="start_bins", type=int, nargs=2)

    sp = sub.add_parser("attack-imitate", help="imitation-based attack samples")
    common(sp)
    sp.add_argument("--prep", required=True)
    sp.add_argument("--n-samples", dest="n_samples", type=int)
    sp.add_argument("--rep", choices=list(ingest.REP_KINDS))
    sp.add_argument("--reg", choices=list(im.REG_KINDS))
    sp.add_argument("--reg-weight", dest="reg_weight", type=float)
    sp.add_argument("--method", choices=["start_point", "start_sequence"])
    sp.add_argument("--gen-lr", dest="gen_lr", type=float)
    sp.add_argument("--gen-epochs", dest="gen_epochs", type=int)

    sp = sub.add_parser("attack-surrogate", help="surrogate-based FGSM attack samples")
    common(sp)
    sp.add_argument("--prep", required=True)
    sp.add_argument("--neg", required=True, help="prepared dataset supplying negatives")
    sp.add_argument("--n-samples", dest="n_samples", type=int)
    sp.add_argument("--arch", choices=[a for a in su.ARCHS if a != su.LINEAR])
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--sur-lr", dest="sur_lr", type=float)
    sp.add_argument("--sur-epochs", dest="sur_epochs", type=int)

    sp = sub.add_parser("asr", help="attack success rate of samples against authenticators")
    common(sp)
    sp.add_argument("--models", required=True)
    sp.add_argument("--samples", required=True, help="an <out>/<attack>/<setting> directory")
    sp.add_argument("--model", choices=["SVM", "1DCNN"])
    sp.add_argument("--n-samples", dest="n_samples", type=int)

    sp = sub.add_parser("wilcoxon", help="signed-rank test between two ASR reports or a pairs CSV")
    common(sp)
    sp.add_argument("--a")
    sp.add_argument("--b")
    sp.add_argument("--pairs", help="CSV with two numeric columns, no header")
    sp.add_argument("--comparison")

    sp = sub.add_parser("detect", help="randomized-ensemble alert rates")
    common(sp)
    sp.add_argument("--prep", required=True)
    sp.add_argument("--models", required=True)
    sp.add_argument("--ensemble", default="SVM,1DCNN")
    sp.add_argument("--stream", help="attack sample directory")
    sp.add_argument("--label")
    sp.add_argument("--shift", action="store_true", help="use rotated clean data as the stream")
    sp.add_argument("--shift-min", dest="shift_min", type=float, default=45.0)
    sp.add_argument("--shift-max", dest="shift_max", type=float, default=90.0)
    sp.add_argument("--margin", type=float)
    sp.add_argument("--shift-margin", dest="shift_margin", type=float)

    sp = sub.add_parser("report", help="merge reports and emit all table layouts")
    common(sp)
    sp.add_argument("reports", nargs="+")
    return parser


def _categorize(exc: BaseException) -> tuple[str, int]:
    if isinstance(exc, CliError):
        return exc.category, exc.code
    if isinstance(exc, FileNotFoundError):
        return "missing-input", EXIT_MISSING
    if isinstance(exc, (auth.NotCalibratedError, auth.ModalityError)):
        return "model", EXIT_MODEL
    if isinstance(exc, (ValueError, KeyError, json.JSONDecodeError)):
        return "invalid-input", EXIT_INVALID
    return "internal", EXIT_INTERNAL


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        COMMANDS[args.command](cfg, args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one line
        category, code = _categorize(exc)
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error[{category}]: {msg}", file=sys.stderr)
        if args.verbose:
            logger.exception("command failed")
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
