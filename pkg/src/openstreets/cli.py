"""Command-line entry points binding the pipeline together: corpus synthesis,
ingestion, traffic assignment, model training, evaluation, ranking, policy
comparison, map export, and the what-if HTTP service."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path

from . import collision, manifest, qagent, routing, synthcity
from .collision import CollisionError, CollisionModel, TrainConfig, build_corpus, build_dataset
from .neural import describe_checkpoint
from .openenv import Environment
from .qagent import QAgentError, QConfig, QModel
from .roadnet import RoadNetError, export_geojson, ingest_segments
from .routing import RoutingError
from .synthcity import SynthConfig, TrueRiskModel

LOG = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INTERNAL = 2

VALIDATION_ERRORS = (
    RoadNetError, RoutingError, CollisionError, QAgentError,
    FileNotFoundError, ValueError, KeyError,
)


def data_path(raw: str) -> str:
    """Resolve a path against OPENSTREETS_DATA_DIR when it is relative and
    does not exist from the working directory."""
    p = Path(raw)
    if p.is_absolute() or p.exists():
        return str(p)
    root = os.environ.get("OPENSTREETS_DATA_DIR")
    if root and (Path(root) / p).exists():
        return str(Path(root) / p)
    return str(p)


def add_corpus_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--net", default="segments.csv", help="segments CSV")
    parser.add_argument("--trips", default="trips.csv", help="trips CSV")
    parser.add_argument("--weather", default="weather.csv", help="weather CSV")
    parser.add_argument("--collisions", default="collisions.csv", help="collisions CSV")


def load_network(args):
    return ingest_segments(data_path(args.net))


def load_corpus(args):
    net = load_network(args)
    trips = routing.load_trips(data_path(args.trips), net)
    weather = collision.load_weather(data_path(args.weather))
    collisions = collision.load_collisions(data_path(args.collisions), net)
    return net, build_corpus(net, trips, weather, collisions)


def load_risk_model(args, net):
    if getattr(args, "model", None):
        path = data_path(args.model)
        if not Path(path).exists():
            raise FileNotFoundError(f"collision model checkpoint not found: {path}")
        return CollisionModel.load(path)
    if getattr(args, "answer_key", None):
        key = json.loads(Path(data_path(args.answer_key)).read_text())
        return TrueRiskModel.from_answer_key(key)
    raise ValueError("need --model (trained checkpoint) or --answer-key (generator rule)")


def build_env(args, corpus, risk_model):
    return Environment(
        corpus,
        risk_model,
        k=args.k,
        share_rule=args.share_rule,
        normalizer_seed=args.seed,
        horizon=args.horizon,
    )


def add_env_flags(parser):
    parser.add_argument("--k", type=int, default=3, help="alternative paths per reroute")
    parser.add_argument("--share-rule", choices=("inverse", "literal"), default="inverse")
    parser.add_argument("--horizon", type=int, default=None,
                        help="episode length in days (default: days in the start month)")
    parser.add_argument("--seed", type=int, default=0)


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        rows=args.rows, cols=args.cols, days=args.days,
        trips_per_day=args.trips_per_day, seed=args.seed, scenario=args.scenario,
    )
    outdir = Path(args.out)
    synth = synthcity.write_corpus(cfg, outdir)
    outputs = [outdir / name for name in
               ("segments.csv", "trips.csv", "weather.csv", "collisions.csv", "answer_key.json")]
    manifest.write_manifest(
        outdir / "manifest.json", "synth",
        config={"rows": cfg.rows, "cols": cfg.cols, "days": cfg.days,
                "trips_per_day": cfg.trips_per_day, "scenario": cfg.scenario},
        seeds={"seed": cfg.seed}, inputs=[], outputs=outputs,
    )
    print(json.dumps({
        "out": str(outdir),
        "segments": len(synth.net.segments),
        "days": cfg.days,
        "positive_rate": synth.answer_key["positive_rate"],
        "magnet_segment": synth.answer_key["magnet_segment"],
    }))
    return EXIT_OK


def cmd_ingest(args) -> int:
    net = load_network(args)
    summary = {
        "segments": len(net.segments),
        "intersections": len(net.node_coords),
        "primal_arcs": net.primal.arc_count,
        "connected": net.connected,
    }
    if Path(data_path(args.trips)).exists():
        summary["trips"] = len(routing.load_trips(data_path(args.trips), net))
    if Path(data_path(args.weather)).exists():
        summary["weather_days"] = len(collision.load_weather(data_path(args.weather)))
    if Path(data_path(args.collisions)).exists():
        labels = collision.load_collisions(data_path(args.collisions), net)
        summary["collision_days"] = len(labels)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_assign(args) -> int:
    net, corpus = load_corpus(args)
    volumes = {d.isoformat(): {str(s): v for s, v in corpus.volumes[d].items()}
               for d in corpus.dates}
    out = Path(args.out)
    out.write_text(json.dumps(volumes, sort_keys=True))
    report_path = out.with_suffix(out.suffix + ".unroutable.jsonl")
    with open(report_path, "w") as fh:
        for day in corpus.dates:
            result = routing.assign_trips(net, corpus.trips.get(day, []))
            for item in result.unroutable:
                fh.write(json.dumps(item, sort_keys=True) + "\n")
    manifest.write_manifest(
        str(out) + ".manifest.json", "assign",
        config={}, seeds={},
        inputs=[data_path(args.net), data_path(args.trips)],
        outputs=[out, report_path],
    )
    print(json.dumps({"out": str(out), "days": len(corpus.dates)}))
    return EXIT_OK


def cmd_train_collision(args) -> int:
    net, corpus = load_corpus(args)
    dataset = build_dataset(corpus, window=args.window, test_fraction=args.test_fraction)
    config = TrainConfig(hidden_dim=args.hidden, conv_layers=args.conv_layers,
                         epochs=args.epochs, lr=args.lr)
    model, history = collision.train_collision(dataset, net, config, seed=args.seed)
    model.save(args.out)
    history_path = args.out + ".history.json"
    Path(history_path).write_text(json.dumps(history))
    report = collision.evaluate(model, dataset.test, net, threshold=args.threshold) \
        if dataset.test else None
    manifest.write_manifest(
        args.out + ".manifest.json", "train-collision",
        config={"window": args.window, "epochs": args.epochs, "hidden": args.hidden,
                "conv_layers": args.conv_layers, "lr": args.lr,
                "test_fraction": args.test_fraction},
        seeds={"seed": args.seed},
        inputs=[data_path(args.net), data_path(args.trips),
                data_path(args.weather), data_path(args.collisions)],
        outputs=[args.out, history_path],
    )
    summary = {"out": args.out, "final_loss": history[-1]}
    if report:
        summary["test"] = report.to_dict()
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval_collision(args) -> int:
    net, corpus = load_corpus(args)
    model = load_risk_model(args, net)
    if not isinstance(model, CollisionModel):
        raise ValueError("eval-collision needs a trained --model checkpoint")
    dataset = build_dataset(corpus, window=model.window, test_fraction=args.test_fraction)
    report = collision.evaluate(model, dataset.test, net, threshold=args.threshold)
    text = json.dumps(report.to_dict(), sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_train_q(args) -> int:
    net, corpus = load_corpus(args)
    risk_model = load_risk_model(args, net)
    env = build_env(args, corpus, risk_model)
    cfg = QConfig(
        gamma=args.gamma,
        epsilon_start=args.epsilon_start,
        epsilon_end=args.epsilon_end,
        epsilon_decay_steps=args.epsilon_decay_steps,
        replay_capacity=args.replay_capacity,
        batch_size=args.batch_size,
        target_sync=args.target_sync,
        episodes=args.episodes,
        lr=args.lr,
        hidden_dim=args.hidden,
        conv_layers=args.conv_layers,
    )
    qmodel, history = qagent.train_q(env, cfg, seed=args.seed)
    qmodel.save(args.out)
    history_path = args.out + ".history.json"
    Path(history_path).write_text(json.dumps(history))
    manifest.write_manifest(
        args.out + ".manifest.json", "train-q",
        config={"gamma": cfg.gamma, "episodes": cfg.episodes, "batch_size": cfg.batch_size,
                "target_sync": cfg.target_sync, "lr": cfg.lr, "hidden": cfg.hidden_dim,
                "conv_layers": cfg.conv_layers, "k": args.k, "share_rule": args.share_rule,
                "horizon": args.horizon},
        seeds={"seed": args.seed, "normalizer_day": env.normalizer_date.isoformat()},
        inputs=[data_path(args.net), data_path(args.trips),
                data_path(args.weather), data_path(args.collisions)],
        outputs=[args.out, history_path],
    )
    print(json.dumps({"out": args.out, "episodes": len(history),
                      "mean_reward_last_fifth": sum(history[-max(1, len(history)//5):])
                      / max(1, len(history)//5)}))
    return EXIT_OK


def _load_qmodel(args) -> QModel:
    path = data_path(args.qmodel)
    if not Path(path).exists():
        raise FileNotFoundError(f"Q model checkpoint not found: {path}")
    return QModel.load(path)


def cmd_rank(args) -> int:
    net, corpus = load_corpus(args)
    risk_model = load_risk_model(args, net)
    env = build_env(args, corpus, risk_model)
    qmodel = _load_qmodel(args)
    starts = env.eligible_starts()
    if args.date:
        day = datetime.strptime(args.date, "%Y-%m-%d").date()
    else:
        day = starts[-1]
    state = env.reset(day)
    ranked = qagent.rank_segments(qmodel, state, net, top=args.top)
    doc = [{"segment_id": sid, "q_value": q, "rank": i + 1}
           for i, (sid, q) in enumerate(ranked)]
    Path(args.out).write_text(json.dumps(doc))
    manifest.write_manifest(
        args.out + ".manifest.json", "rank",
        config={"top": args.top, "date": day.isoformat()},
        seeds={"seed": args.seed},
        inputs=[data_path(args.qmodel)],
        outputs=[args.out],
    )
    print(json.dumps({"out": args.out, "top": len(doc), "date": day.isoformat()}))
    return EXIT_OK


def cmd_compare(args) -> int:
    net, corpus = load_corpus(args)
    risk_model = load_risk_model(args, net)
    env = build_env(args, corpus, risk_model)
    qmodel = _load_qmodel(args) if args.qmodel else None
    designated = None
    if args.designated:
        designated = json.loads(Path(data_path(args.designated)).read_text())
    results = qagent.compare_policies(env, qmodel, designated=designated,
                                      episodes=args.episodes, seed=args.seed)
    Path(args.out).write_text(json.dumps(results, sort_keys=True))
    manifest.write_manifest(
        args.out + ".manifest.json", "compare",
        config={"episodes": args.episodes},
        seeds={"seed": args.seed, "normalizer_day": env.normalizer_date.isoformat()},
        inputs=[p for p in (data_path(args.qmodel) if args.qmodel else None,) if p],
        outputs=[args.out],
    )
    print(json.dumps(results, sort_keys=True))
    return EXIT_OK


def cmd_export_map(args) -> int:
    net = load_network(args)
    overlay = {}
    if args.overlay:
        doc = json.loads(Path(data_path(args.overlay)).read_text())
        if isinstance(doc, list):
            overlay = {int(item["segment_id"]): float(item["q_value"]) for item in doc}
        elif args.date and args.date in doc:
            overlay = {int(k): float(v) for k, v in doc[args.date].items()}
        elif isinstance(doc, dict):
            overlay = {int(k): float(v) for k, v in doc.items()}
    text = export_geojson(net, overlay)
    Path(args.out).write_text(text)
    manifest.write_manifest(
        args.out + ".manifest.json", "export-map",
        config={"overlay": args.overlay, "date": args.date},
        seeds={},
        inputs=[data_path(args.net)] + ([data_path(args.overlay)] if args.overlay else []),
        outputs=[args.out],
    )
    print(json.dumps({"out": args.out, "features": len(net.segments)}))
    return EXIT_OK


def cmd_describe(args) -> int:
    print(json.dumps(describe_checkpoint(data_path(args.model)), sort_keys=True))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    net, corpus = load_corpus(args)
    risk_model = load_risk_model(args, net)
    env = build_env(args, corpus, risk_model)
    qmodel = _load_qmodel(args) if args.qmodel else None
    app = create_app(net, env, qmodel)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openstreets",
        description="Street-opening planner: collision risk over a road network "
                    "and Q-learned street-opening policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--cols", type=int, default=12)
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--trips-per-day", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenario", choices=synthcity.SCENARIOS, default="plain")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("ingest", help="validate input CSVs")
    add_corpus_flags(p)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("assign", help="assign trips to segments per day")
    add_corpus_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_assign)

    p = sub.add_parser("train-collision", help="train the collision classifier")
    add_corpus_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=7)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--conv-layers", type=int, default=2)
    p.add_argument("--lr", type=float, default=8e-3)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train_collision)

    p = sub.add_parser("eval-collision", help="evaluate a trained collision model")
    add_corpus_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval_collision)

    p = sub.add_parser("train-q", help="train the street-opening Q network")
    add_corpus_flags(p)
    add_env_flags(p)
    p.add_argument("--model", default=None, help="trained collision checkpoint")
    p.add_argument("--answer-key", default=None, help="generator answer key JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--epsilon-start", type=float, default=1.0)
    p.add_argument("--epsilon-end", type=float, default=0.05)
    p.add_argument("--epsilon-decay-steps", type=int, default=None)
    p.add_argument("--replay-capacity", type=int, default=50_000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--target-sync", type=int, default=250)
    p.add_argument("--episodes", type=int, default=60)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--conv-layers", type=int, default=2)
    p.set_defaults(fn=cmd_train_q)

    p = sub.add_parser("rank", help="rank segments by Q-value")
    add_corpus_flags(p)
    add_env_flags(p)
    p.add_argument("--model", default=None)
    p.add_argument("--answer-key", default=None)
    p.add_argument("--qmodel", required=True)
    p.add_argument("--date", default=None)
    p.add_argument("--top", type=int, default=121)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("compare", help="compare opening policies")
    add_corpus_flags(p)
    add_env_flags(p)
    p.add_argument("--model", default=None)
    p.add_argument("--answer-key", default=None)
    p.add_argument("--qmodel", default=None)
    p.add_argument("--designated", default=None, help="JSON file with segment ids")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("export-map", help="export network GeoJSON with an overlay")
    p.add_argument("--net", default="segments.csv")
    p.add_argument("--overlay", default=None, help="rankings.json or {segment: value} map")
    p.add_argument("--date", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_map)

    p = sub.add_parser("describe", help="dump checkpoint shapes as JSON")
    p.add_argument("--model", required=True)
    p.set_defaults(fn=cmd_describe)

    p = sub.add_parser("serve", help="run the what-if HTTP service")
    add_corpus_flags(p)
    add_env_flags(p)
    p.add_argument("--model", default=None)
    p.add_argument("--answer-key", default=None)
    p.add_argument("--qmodel", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - internal failures
        LOG.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
